"""Element-local postprocessing of the potential into degree k+1.

Both schemes solve a local Neumann-style problem on the zero-mean subspace
of P_{k+1}(K) and then fix the element mean to that of the computed
potential.  The zero-mean subspace is literal in coefficients: the
orthonormal scalar basis is hierarchical in the constant, so dropping the
first function realizes it exactly, and the mean constraint only sets the
constant coefficient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import polyspaces as ps
from . import projections as pj
from .errors import SingularLocalSystem
from .methods import FieldTriple, ProblemData
from .mesh import ReferenceTriangle

__all__ = ["PostprocessedField", "stenberg", "gradient_postprocess"]

COMPATIBILITY_TOL = 1e-9


@dataclass
class PostprocessedField:
    """Elementwise degree-(k+1) reconstruction of the potential."""

    mesh: object
    degree: int                  # k+1
    scheme: str                  # "stenberg" | "gradient"
    coeffs: np.ndarray           # (nt, dim P_{k+1})
    decomposed: np.ndarray       # (nt,) flag: flux balance failed, mean-free
                                 # system used as a standalone decomposition

    def field(self, t) -> pj.LocalScalarField:
        return pj.LocalScalarField(self.mesh.element_map(t), self.degree, self.coeffs[t])

    def element_means(self):
        maps = self.mesh.element_maps()
        return np.array(
            [c[0] * np.sqrt(2.0) * 0.5 * m.detJ for c, m in zip(self.coeffs, maps)]
        )


def _local_stiffness(emap, grads, weight, vol):
    """Stiffness of the physical gradients with a pointwise weight."""
    g_phys = np.einsum("gic,cd->gid", grads, emap.invB)
    return emap.detJ * np.einsum("g,gic,gjc->ij", vol.weights * weight, g_phys, g_phys)


def _solve_element(S, rhs, mean_coeff):
    """Solve on the zero-mean block and append the constant coefficient."""
    try:
        inner = np.linalg.solve(S[1:, 1:], rhs[1:])
    except np.linalg.LinAlgError as exc:
        raise SingularLocalSystem("local postprocessing stiffness is singular") from exc
    return np.concatenate([[mean_coeff], inner])


def stenberg(triple: FieldTriple, data: ProblemData) -> PostprocessedField:
    """Flux-driven reconstruction: the weighted gradient of the result
    matches the source minus the boundary flux against all test functions.

    For HDG the boundary flux is the numerical flux, which restores the
    elementwise balance that the scheme relies on.  Elements whose flux
    balance defect exceeds the tolerance are flagged and solved through the
    mean-free decomposition (the two formulations coincide otherwise).
    """
    mesh, space = triple.mesh, triple.space
    k = space.degree
    kp = k + 1
    sb = ps.scalar_basis(kp)
    vol = ps.triangle_rule(2 * kp + 4)
    # The balance check must see the same (f, 1)_K functional the solver
    # enforced, i.e. the assembly rule of degree k, not the finer rule used
    # for the reconstruction integrals.
    vol_check = ps.triangle_rule(2 * k + 4)
    erule = ps.edge_rule(k + 4)
    grads = sb.grad(vol.points)
    vals_edge = [sb.eval(ReferenceTriangle.edge_points(loc, erule.points)) for loc in range(3)]
    What = sb.eval(vol.points)

    nt = mesh.num_triangles
    coeffs = np.zeros((nt, sb.dim))
    decomposed = np.zeros(nt, dtype=bool)
    for t in range(nt):
        em = mesh.element_map(t)
        xq = em.forward(vol.points)
        kap = np.asarray(data.kappa(xq), dtype=float)
        S = _local_stiffness(em, grads, kap, vol)
        fv = np.asarray(data.f(xq), dtype=float)
        rhs = em.detJ * (What.T @ (vol.weights * fv))
        fmean = em.detJ * float(
            vol_check.weights @ np.asarray(data.f(em.forward(vol_check.points)), dtype=float)
        )
        balance = fmean
        for loc in range(3):
            flux = triple.flux_trace(t, loc, erule.points)
            rhs -= em.edge_lengths[loc] * (vals_edge[loc].T @ (erule.weights * flux))
            balance -= em.edge_lengths[loc] * float(erule.weights @ flux)
        scale = max(1.0, abs(fmean))
        if abs(balance) > COMPATIBILITY_TOL * scale:
            decomposed[t] = True
        coeffs[t] = _solve_element(S, rhs, triple.u_coeffs[t, 0])
    return PostprocessedField(mesh=mesh, degree=kp, scheme="stenberg", coeffs=coeffs, decomposed=decomposed)


def gradient_postprocess(triple: FieldTriple, data: ProblemData) -> PostprocessedField:
    """Gradient-matching reconstruction: the plain gradient of the result
    matches the weighted discrete flux against zero-mean test functions."""
    mesh, space = triple.mesh, triple.space
    kp = space.degree + 1
    sb = ps.scalar_basis(kp)
    vol = ps.triangle_rule(2 * kp + 4)
    grads = sb.grad(vol.points)

    nt = mesh.num_triangles
    coeffs = np.zeros((nt, sb.dim))
    for t in range(nt):
        em = mesh.element_map(t)
        xq = em.forward(vol.points)
        S = _local_stiffness(em, grads, np.ones(len(xq)), vol)
        kap = np.asarray(data.kappa(xq), dtype=float)
        qh = triple.q_field(t)(xq)
        g_phys = np.einsum("gic,cd->gid", grads, em.invB)
        rhs = -em.detJ * np.einsum(
            "g,gc,gic->i", vol.weights, qh / kap[:, None], g_phys
        )
        coeffs[t] = _solve_element(S, rhs, triple.u_coeffs[t, 0])
    return PostprocessedField(
        mesh=mesh, degree=kp, scheme="gradient", coeffs=coeffs,
        decomposed=np.zeros(nt, dtype=bool),
    )
