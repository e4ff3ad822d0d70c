"""Polynomial spaces on the reference triangle.

Shows the dimension bookkeeping of the three vector families (full,
Raviart-Thomas, rotated), the orthogonal-complement construction, and the
orthogonal splitting of the boundary space into scalar traces and normal
traces of the complement spaces.
"""

import numpy as np

import hybridfem.polyspaces as ps

print("k   dim P_k   dim RT_k   dim P_k^2   dim rotated_k   3(k+1)")
for k in range(4):
    print(
        f"{k}   {ps.scalar_dim(k):7d}   {ps.rt_dim(k):8d}   {ps.vector_dim('P', k):9d}"
        f"   {ps.vector_dim('N', k):13d}   {ps.face_space_dim(k):6d}"
    )

# The scalar basis is orthonormal and graded: the trailing block of degree k
# spans the complement of P_{k-1}.
rule = ps.triangle_rule(12)
b = ps.scalar_basis(3)
V = b.eval(rule.points)
G = V.T @ (rule.weights[:, None] * V)
print("\northonormality defect at k=3:", np.abs(G - np.eye(b.dim)).max())

comp = ps.orthocomplement_basis(2)
low = ps.scalar_basis(1)
cross = low.eval(rule.points).T @ (rule.weights[:, None] * comp.eval(rule.points))
print("complement orthogonality against P_1:", np.abs(cross).max())

# Divergence maps RT_k onto all of P_k: every scalar has a preimage.
for k in range(4):
    print(f"divergence surjectivity defect, k={k}:", ps.divergence_surjectivity_check(k))

# The boundary space splits orthogonally into scalar-complement traces and
# vector-complement normal traces; the combined square matrix is regular.
print("\nk   smallest singular value   cross-Gram")
for k in range(4):
    sigma, cross = ps.boundary_decomposition_check(k)
    print(f"{k}   {sigma:22.6f}   {cross:.2e}")

# The rotated space really is the quarter turn of RT in 2D.
pts = np.random.default_rng(0).random((4, 2)) * 0.4
vr = ps.vector_basis("RT", 1).eval(pts)
vn = ps.vector_basis("N", 1).eval(pts)
print("\nrotation identity defect:", np.abs(np.stack([-vr[..., 1], vr[..., 0]], axis=-1) - vn).max())
