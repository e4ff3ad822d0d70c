"""Element geometry and the change-of-variable rules.

Walks through the affine reference map of a triangle, the six transform
kinds (primal/dual, volume scalar/vector, boundary trace), and the operator
identities that make the dual rules the right ones: divergence, gradient,
and normal trace each send primally transformed fields to dually
transformed ones.
"""

import numpy as np

from hybridfem.mesh import build_reference_map
from hybridfem.piola import TransformKind, pull_back, push_forward, verify_operator_identities

np.set_printoptions(precision=4, suppress=True)

# An affine map is fixed by where the three reference vertices land.
vertices = [[0.2, 0.1], [1.4, 0.3], [0.5, 1.2]]
em = build_reference_map(vertices)
print("B  =\n", em.B)
print("b  =", em.b)
print("|J| =", em.detJ, " (triangle area:", 0.5 * em.detJ, ")")
print("edge lengths:", em.edge_lengths)
print("edge tangential jacobians |a|:", em.edge_jacobians)

# Pull a physical flux back to the reference element and push it forward
# again: the primal vector rule preserves normal traces, which is why every
# H(div) space in this library lives in these coordinates.
q = lambda x: np.stack([np.sin(x[:, 0]), x[:, 1] ** 2], axis=-1)
qhat = pull_back(q, TransformKind.PRIMAL_VECTOR, em)
back = push_forward(qhat, TransformKind.PRIMAL_VECTOR, em)
pts = em.forward(np.array([[0.25, 0.25], [0.1, 0.6]]))
print("\nround trip error:", np.abs(back(pts) - q(pts)).max())

# The three operator identities, checked with exact polynomial calculus on
# random cubic fields: the only floating-point content is round-off.
res = max(verify_operator_identities(em, degree=3, rng=s) for s in range(10))
print("operator identity residual over 10 random cubics:", res)

# The scaling relations behind every error estimate: on a family of scaled
# copies of one triangle, ||u||_K / (h_K ||uhat||) is pinned between
# constants of the aspect ratio.
import hybridfem.polyspaces as ps

rule = ps.triangle_rule(10)
u = lambda x: np.cos(3 * x[:, 0]) + x[:, 1]
print("\nscale   ||u||_K / (h ||uhat||)")
for scale in (1.0, 0.5, 0.25, 0.125):
    ems = build_reference_map(np.asarray(vertices) * scale)
    uhat = pull_back(u, TransformKind.PRIMAL_SCALAR, ems)(rule.points)
    phys = u(ems.forward(rule.points))
    ratio = np.sqrt(ems.detJ * (rule.weights @ phys**2)) / (
        ems.h * np.sqrt(rule.weights @ uhat**2)
    )
    print(f"{scale:5.3f}   {ratio:.6f}")
