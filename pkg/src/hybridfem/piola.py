"""Primal and dual change-of-variable rules between physical and reference
elements, and numerical verification of the operator identities they satisfy.

Volume fields are callables of (n, 2) point arrays returning (n,) scalars or
(n, 2) vectors.  Boundary fields are callables ``f(local_edge, t)`` with the
edge parameter t in [0, 1] running along the (counter-clockwise) local edge;
the parameter is shared between a physical triangle and its reference
preimage, so only the |a| weight distinguishes the trace transforms.
"""

from __future__ import annotations

from enum import Enum

import numpy as np

from . import polyspaces as ps
from .mesh import ElementMap, ReferenceTriangle

__all__ = [
    "TransformKind",
    "pull_back",
    "push_forward",
    "verify_operator_identities",
]


class TransformKind(Enum):
    PRIMAL_SCALAR = "primal_scalar"  # uhat = u o F
    PRIMAL_VECTOR = "primal_vector"  # qhat = |J| B^-1 q o F
    PRIMAL_TRACE = "primal_trace"    # muhat = mu o F
    DUAL_SCALAR = "dual_scalar"      # ucheck = |J| u o F
    DUAL_VECTOR = "dual_vector"      # qcheck = B^T q o F
    DUAL_TRACE = "dual_trace"        # mucheck = |a| mu o F


_VOLUME = {
    TransformKind.PRIMAL_SCALAR,
    TransformKind.PRIMAL_VECTOR,
    TransformKind.DUAL_SCALAR,
    TransformKind.DUAL_VECTOR,
}


def pull_back(field, kind: TransformKind, emap: ElementMap):
    """Reference-side field (hat or check) of a physical field."""
    if kind in _VOLUME:

        def ref(xhat, field=field, kind=kind, emap=emap):
            x = emap.forward(xhat)
            vals = np.asarray(field(x), dtype=float)
            if kind is TransformKind.PRIMAL_SCALAR:
                return vals
            if kind is TransformKind.DUAL_SCALAR:
                return emap.detJ * vals
            if kind is TransformKind.PRIMAL_VECTOR:
                return emap.detJ * vals @ emap.invB.T
            return vals @ emap.B  # DUAL_VECTOR: B^T q

        return ref

    def ref_trace(local_edge, t, field=field, kind=kind, emap=emap):
        vals = np.asarray(field(local_edge, t), dtype=float)
        if kind is TransformKind.DUAL_TRACE:
            return emap.edge_jacobians[local_edge] * vals
        return vals

    return ref_trace


def push_forward(field, kind: TransformKind, emap: ElementMap):
    """Physical field whose pull-back of the given kind is ``field``."""
    if kind in _VOLUME:

        def phys(x, field=field, kind=kind, emap=emap):
            xhat = emap.inverse(x)
            vals = np.asarray(field(xhat), dtype=float)
            if kind is TransformKind.PRIMAL_SCALAR:
                return vals
            if kind is TransformKind.DUAL_SCALAR:
                return vals / emap.detJ
            if kind is TransformKind.PRIMAL_VECTOR:
                return vals @ emap.B.T / emap.detJ
            return vals @ emap.invB  # invB^T applied from the left

        return phys

    def phys_trace(local_edge, t, field=field, kind=kind, emap=emap):
        vals = np.asarray(field(local_edge, t), dtype=float)
        if kind is TransformKind.DUAL_TRACE:
            return vals / emap.edge_jacobians[local_edge]
        return vals

    return phys_trace


def _compose_vector(coeffs, exps, emap):
    """Monomial coefficients of q o F for a polynomial vector field q."""
    return np.stack(
        [
            ps.compose_affine(exps, coeffs[0], emap.B, emap.b),
            ps.compose_affine(exps, coeffs[1], emap.B, emap.b),
        ]
    )


def verify_operator_identities(emap: ElementMap, degree: int = 3, rng=None) -> float:
    """Largest residual of the three transform identities for random
    polynomial fields of the given total degree.

    The identities state that divergence, gradient, and normal trace map
    primal-transformed fields to dual-transformed ones.  The left-hand sides
    are built from exact affine composition of the polynomial coefficients,
    so the check does not reuse the chain rule it is verifying.
    """
    rng = np.random.default_rng(rng)
    exps = ps.monomial_exponents(degree)
    nm = len(exps)
    Dx = ps._deriv_matrix(degree, 0)
    Dy = ps._deriv_matrix(degree, 1)

    q = rng.standard_normal((2, nm))
    u = rng.standard_normal(nm)

    # Exact reference-side coefficient representations.
    q_of_F = _compose_vector(q, exps, emap)
    qhat = emap.detJ * emap.invB @ q_of_F
    uhat = ps.compose_affine(exps, u, emap.B, emap.b)

    rule = ps.triangle_rule(2 * degree)
    V = ps.monomial_eval(exps, rule.points)

    div_q = Dx @ q[0] + Dy @ q[1]
    div_qhat = Dx @ qhat[0] + Dy @ qhat[1]
    div_check = emap.detJ * ps.compose_affine(exps, div_q, emap.B, emap.b)
    res = float(np.abs(V @ (div_qhat - div_check)).max())

    grad_uhat = np.stack([Dx @ uhat, Dy @ uhat])
    grad_u_comp = np.stack(
        [
            ps.compose_affine(exps, Dx @ u, emap.B, emap.b),
            ps.compose_affine(exps, Dy @ u, emap.B, emap.b),
        ]
    )
    grad_check = emap.B.T @ grad_u_comp
    res = max(res, float(np.abs(V @ (grad_uhat - grad_check).T).max()))

    erule = ps.edge_rule(degree + 2)
    for e in range(3):
        pts_hat = ReferenceTriangle.edge_points(e, erule.points)
        pts = emap.edge_points(e, erule.points)
        qhat_vals = ps.monomial_eval(exps, pts_hat) @ qhat.T
        lhs = qhat_vals @ ReferenceTriangle.edge_normals[e]
        q_vals = ps.monomial_eval(exps, pts) @ q.T
        rhs = emap.edge_jacobians[e] * (q_vals @ emap.edge_normals[e])
        res = max(res, float(np.abs(lhs - rhs).max()))
    return res
