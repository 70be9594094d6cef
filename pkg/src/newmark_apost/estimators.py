"""A posteriori error indicators computed from a finished trajectory.

Time: the 3-point indicator built from second divided differences of the
discrete velocity and forcing. Space: residual indicators combining
element residuals weighted by h_K^2 and normal-gradient jumps across
interior edges weighted by h_E.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .fem import (DofMap, P1Space, SparseOperator, apply_Ah, assemble_mass, column_norms,
                  norm_l2, p1_gradients, seminorm_h1)
from .mesh import Mesh, TimeGrid
from .newmark import Trajectory

# columns per batched solve; bounds temporaries to a few hundred MB on big meshes
_CHUNK = 16


def divided_diff2(w_prev, w_cur, w_next, tau_prev, tau_cur):
    """Second divided difference on a possibly non-uniform grid."""
    tau_half = 0.5 * (tau_cur + tau_prev)
    return ((w_next - w_cur) / tau_cur - (w_cur - w_prev) / tau_prev) / tau_half


def divided_diff1(w_prev, w_next, tau_prev, tau_cur):
    """Centred first difference (w^{n+1} - w^{n-1}) / (tau_n + tau_{n-1})."""
    return (w_next - w_prev) / (tau_cur + tau_prev)


def _bcast(tau, like):
    return tau.reshape((-1,) + (1,) * (like.ndim - 1))


def second_differences(W, grid: TimeGrid):
    """Rows n = 1..N-1 of the second divided differences of the sequence W."""
    W = np.asarray(W)
    tau = grid.steps
    tp, tc = _bcast(tau[:-1], W), _bcast(tau[1:], W)
    return divided_diff2(W[:-2], W[1:-1], W[2:], tp, tc)


def central_differences(W, grid: TimeGrid):
    """Rows n = 1..N-1 of the centred first differences of W."""
    W = np.asarray(W)
    tau = grid.steps
    return divided_diff1(W[:-2], W[2:], _bcast(tau[:-1], W), _bcast(tau[1:], W))


def time_indicator_weights(grid: TimeGrid) -> np.ndarray:
    """Factor multiplying the residual norm in eta_T(t_k), k = 0..N-1.

    k = 0 uses the differences at n = 1 with weight 5 tau_0^2/12 + tau_1 tau_0/2.
    """
    tau = grid.steps
    if len(tau) < 2:
        raise ValueError("the time indicator needs at least two steps")
    w = np.empty(len(tau))
    w[0] = 5.0 * tau[0] ** 2 / 12.0 + tau[1] * tau[0] / 2.0
    w[1:] = tau[1:] ** 2 / 12.0 + tau[:-1] * tau[1:] / 8.0
    return w


def compute_zh(M: SparseOperator, K: SparseOperator, d2u):
    """z with (z, phi) = (grad d2u, grad phi) for all phi, i.e. A_h d2u."""
    return apply_Ah(M, K, d2u)


TIME_NORMS = ("euclidean", "sum")


def _time_residuals(traj: Trajectory, M, K, rows, time_norm: str = "euclidean"):
    """(|d2 v|_H1^2 + ||d2 f - A_h d2 u||^2)^(1/2) for the requested n in 1..N-1.

    With ``time_norm="sum"`` the two norms are added instead.
    """
    if time_norm not in TIME_NORMS:
        raise ValueError(f"unknown time norm {time_norm!r}")
    grid = traj.grid
    tau = grid.steps
    out = np.empty(len(rows))
    for start in range(0, len(rows), _CHUNK):
        ns = np.asarray(rows[start:start + _CHUNK])
        tp, tc = tau[ns - 1][:, None], tau[ns][:, None]
        d2u = divided_diff2(traj.u[ns - 1], traj.u[ns], traj.u[ns + 1], tp, tc).T
        d2v = divided_diff2(traj.v[ns - 1], traj.v[ns], traj.v[ns + 1], tp, tc).T
        d2f = divided_diff2(traj.f[ns - 1], traj.f[ns], traj.f[ns + 1], tp, tc).T
        z = compute_zh(M, K, d2u)
        a, b = column_norms(K, d2v), column_norms(M, d2f - z)
        out[start:start + len(ns)] = a + b if time_norm == "sum" else np.hypot(a, b)
    return out


def eta_T_sequence(traj: Trajectory, M: SparseOperator, K: SparseOperator,
                   time_norm: str = "euclidean") -> np.ndarray:
    """eta_T(t_k) for k = 0..N-1."""
    N = traj.N
    if N < 2:
        raise ValueError("the time indicator needs N >= 2")
    res = _time_residuals(traj, M, K, np.arange(1, N), time_norm)
    # k = 0 reuses the n = 1 residual
    return time_indicator_weights(traj.grid) * np.concatenate([res[:1], res])


def eta_T_step(k: int, traj: Trajectory, M: SparseOperator, K: SparseOperator,
               time_norm: str = "euclidean") -> float:
    N = traj.N
    if N < 2 or not 0 <= k <= N - 1:
        raise IndexError(f"eta_T is defined for 0 <= k <= N-1 = {N - 1}, got k={k}")
    res = _time_residuals(traj, M, K, [max(k, 1)], time_norm)[0]
    return float(time_indicator_weights(traj.grid)[k] * res)


def eta_T_total(per_step, grid: TimeGrid) -> float:
    return float(np.sum(grid.steps * np.asarray(per_step)))


class ResidualOperators:
    """Quadratic forms giving the element and edge parts of the space indicators.

    ``element_sq(w) = sum_K h_K^2 ||w||_{L2(K)}^2`` (exact for P1 w) and
    ``jump_sq(w) = sum_E h_E ||[n . grad w]||_{L2(E)}^2``.
    """

    def __init__(self, mesh: Mesh, dofs: Optional[DofMap] = None):
        self.mesh = mesh
        self.dofs = dofs or DofMap.from_mesh(mesh)
        self.Mh = assemble_mass(mesh, self.dofs, weights=mesh.h_K ** 2)
        self.J = jump_operator(mesh, self.dofs)

    def element_sq(self, W):
        W = np.asarray(W, dtype=float)
        if W.ndim == 1:
            return float(max(W @ (self.Mh @ W), 0.0))
        return column_norms(self.Mh, W) ** 2

    def jump_sq(self, W):
        JW = self.J @ np.asarray(W, dtype=float)
        return np.sum(JW * JW, axis=0)


def jump_operator(mesh: Mesh, dofs: DofMap) -> sp.csr_matrix:
    """Sparse map w -> |E| [n . grad w]_E over interior edges (left minus right)."""
    g = p1_gradients(mesh)
    L, R = mesh.edge_triangles[:, 0], mesh.edge_triangles[:, 1]
    n = mesh.edge_normals
    gl = np.einsum("ekd,ed->ek", g[L], n) * mesh.h_E[:, None]
    gr = np.einsum("ekd,ed->ek", g[R], n) * mesh.h_E[:, None]
    rows = np.repeat(np.arange(mesh.n_interior_edges), 6)
    nodes = np.concatenate([mesh.triangles[L], mesh.triangles[R]], axis=1).ravel()
    vals = np.concatenate([gl, -gr], axis=1).ravel()
    cols = dofs.node_to_dof[nodes]
    keep = cols >= 0
    J = sp.coo_matrix((vals[keep], (rows[keep], cols[keep])),
                      shape=(mesh.n_interior_edges, dofs.n_dofs)).tocsr()
    J.sum_duplicates()
    return J


def jump_l2_sq(mesh: Mesh, dofs: DofMap, w) -> np.ndarray:
    """Per interior edge, h_E ||[n . grad w]||^2_{L2(E)} for a P1 field w."""
    Jw = jump_operator(mesh, dofs) @ np.asarray(w, dtype=float)
    return Jw * Jw


def _ops(mesh, ops):
    return ops if ops is not None else ResidualOperators(mesh)


def eta_S1(traj: Trajectory, mesh: Mesh, ops: Optional[ResidualOperators] = None) -> float:
    """max over n=1..N-1 of [sum h_K^2 ||d_n v - f^n||^2 + sum h_E ||[n.grad u^n]||^2]^(1/2)."""
    if traj.N < 2:
        raise ValueError("space indicators need N >= 2")
    ops = _ops(mesh, ops)
    tau = traj.grid.steps
    best = 0.0
    for start in range(1, traj.N, _CHUNK):
        ns = np.arange(start, min(start + _CHUNK, traj.N))
        dv = divided_diff1(traj.v[ns - 1], traj.v[ns + 1], tau[ns - 1][:, None], tau[ns][:, None])
        vals = ops.element_sq((dv - traj.f[ns]).T) + ops.jump_sq(traj.u[ns].T)
        best = max(best, float(np.sqrt(vals.max())))
    return best


def eta_S2(traj: Trajectory, mesh: Mesh, ops: Optional[ResidualOperators] = None) -> float:
    """sum over n=1..N-1 of tau_n [sum h_K^2 ||d2_n v - d_n f||^2 + sum h_E ||[n.grad d_n u]||^2]^(1/2)."""
    if traj.N < 2:
        raise ValueError("space indicators need N >= 2")
    ops = _ops(mesh, ops)
    tau = traj.grid.steps
    total = 0.0
    for start in range(1, traj.N, _CHUNK):
        ns = np.arange(start, min(start + _CHUNK, traj.N))
        tp, tc = tau[ns - 1][:, None], tau[ns][:, None]
        d2v = divided_diff2(traj.v[ns - 1], traj.v[ns], traj.v[ns + 1], tp, tc)
        df = divided_diff1(traj.f[ns - 1], traj.f[ns + 1], tp, tc)
        du = divided_diff1(traj.u[ns - 1], traj.u[ns + 1], tp, tc)
        vals = ops.element_sq((d2v - df).T) + ops.jump_sq(du.T)
        total += float(np.sum(tau[ns] * np.sqrt(vals)))
    return total


def eta_S3(traj: Trajectory, mesh: Mesh, ops: Optional[ResidualOperators] = None) -> float:
    """Higher-order term: sum_m tau_{m-1}/2 [sum h_K^2 ||d2_m v - d2_{m-1} v||^2]^(1/2).

    Diagnostic only; it is not part of the reported space indicator. The
    reconstruction uses the n = 1 differences on the first slab, so the
    m = 1 term vanishes.
    """
    if traj.N < 3:
        return 0.0
    ops = _ops(mesh, ops)
    tau = traj.grid.steps
    d2v = second_differences(traj.v, traj.grid)
    jumps = d2v[1:] - d2v[:-1]  # m = 2..N-1
    vals = ops.element_sq(jumps.T)
    return float(np.sum(0.5 * tau[1:-1] * np.sqrt(np.atleast_1d(vals))))


@dataclass(frozen=True)
class Diagnostics:
    N0: float
    M1: Optional[float]
    M2: Optional[float]
    Z: Optional[np.ndarray] = field(default=None, repr=False)


def diagnostics(traj: Trajectory, M: SparseOperator, K: SparseOperator,
                Ph_u0=None, with_z: bool = True) -> Diagnostics:
    """Boundedness diagnostics of the discrete data.

    N0 = ||A_h^2 u_h^0 - A_h f_h^0||, M1 = ||A_h P_h u0||, M2 = |P_h u0|_H1
    (the latter two need the L2 projection of the exact u0), and
    Z(n) = (||d2_n f - A_h d2_n u||^2 + |d2_n v|_H1^2)^(1/2) for n = 2..N-1,
    which is only meaningful on a uniform grid.
    """
    u0, f0 = traj.u[0], traj.f[0]
    Au0 = apply_Ah(M, K, u0)
    N0 = norm_l2(M, apply_Ah(M, K, Au0 - f0))
    M1 = M2 = None
    if Ph_u0 is not None:
        M1 = norm_l2(M, apply_Ah(M, K, Ph_u0))
        M2 = seminorm_h1(K, Ph_u0)
    Z = None
    if with_z:
        if not traj.grid.is_uniform():
            raise ValueError("the Z sequence is defined on uniform time grids only")
        Z = _time_residuals(traj, M, K, np.arange(2, traj.N)) if traj.N > 2 else np.empty(0)
    return Diagnostics(N0, M1, M2, Z)


def eval_reconstruction(traj: Trajectory, t: float):
    """Piecewise quadratic (in time) reconstruction of u and v at time t.

    On [t_n, t_{n+1}] with n >= 1 the quadratic through n-1, n, n+1; on the
    first slab the quadratic through 0, 1, 2.
    """
    tt = traj.grid.instants
    if traj.N < 2:
        raise ValueError("the reconstruction needs N >= 2")
    if not tt[0] <= t <= tt[-1]:
        raise ValueError(f"t={t} outside [{tt[0]}, {tt[-1]}]")
    n = int(np.clip(np.searchsorted(tt, t, side="right") - 1, 0, traj.N - 1))
    idx = (0, 1, 2) if n == 0 else (n - 1, n, n + 1)
    a, b, c = (tt[i] for i in idx)
    la = (t - b) * (t - c) / ((a - b) * (a - c))
    lb = (t - a) * (t - c) / ((b - a) * (b - c))
    lc = (t - a) * (t - b) / ((c - a) * (c - b))
    i, j, k = idx
    u = la * traj.u[i] + lb * traj.u[j] + lc * traj.u[k]
    v = la * traj.v[i] + lb * traj.v[j] + lc * traj.v[k]
    return u, v


@dataclass(frozen=True)
class EstimatorConfig:
    C1: float = 1.0
    C2: float = 1.0
    C3: float = 1.0
    include_N0: bool = True
    data_mode: str = "nodal"
    # how |d2 v|_H1 and ||d2 f - z|| combine in eta_T; "sum" is the looser
    # bound, and it is the form the reference wave values were computed with
    time_norm: str = "euclidean"

    def __post_init__(self):
        if not (self.C1 > 0 and self.C2 > 0 and self.C3 > 0):
            raise ValueError("estimator constants must be positive")
        if self.data_mode not in ("nodal", "projection"):
            raise ValueError(f"unknown data mode {self.data_mode!r}")
        if self.time_norm not in TIME_NORMS:
            raise ValueError(f"unknown time norm {self.time_norm!r}")


@dataclass
class EstimatorReport:
    eta_T_per_step: np.ndarray
    eta_T_total: float
    eta_S1: float
    eta_S2: float
    N0: Optional[float] = None
    M1: Optional[float] = None
    M2: Optional[float] = None
    true_error: Optional[float] = None
    error_series: Optional[np.ndarray] = field(default=None, repr=False)
    eta_S3: Optional[float] = None

    @property
    def eta_S(self) -> float:
        return self.eta_S1 + self.eta_S2

    @property
    def effectivity(self) -> Optional[float]:
        """(eta_T + eta_S) / e, or None when the true error is unknown or ~0."""
        if self.true_error is None or self.true_error < 1e-14:
            return None
        return (self.eta_T_total + self.eta_S1 + self.eta_S2) / self.true_error


def estimate(traj: Trajectory, space: P1Space, config: EstimatorConfig = EstimatorConfig(),
             Ph_u0=None, true_error=None, error_series=None,
             with_higher_order: bool = False) -> EstimatorReport:
    M, K = space.M, space.K
    per_step = eta_T_sequence(traj, M, K, config.time_norm)
    ops = ResidualOperators(space.mesh, space.dofs)
    report = EstimatorReport(
        eta_T_per_step=per_step,
        eta_T_total=eta_T_total(per_step, traj.grid),
        eta_S1=config.C1 * eta_S1(traj, space.mesh, ops),
        eta_S2=config.C2 * eta_S2(traj, space.mesh, ops),
        true_error=true_error,
        error_series=error_series,
    )
    if config.include_N0:
        d = diagnostics(traj, M, K, Ph_u0, with_z=False)
        report.N0, report.M1, report.M2 = d.N0, d.M1, d.M2
    if with_higher_order:
        report.eta_S3 = config.C3 * eta_S3(traj, space.mesh, ops)
    return report
