"""Newmark (beta=1/4, gamma=1/2) time stepping of the semi-discrete wave equation.

The scheme is written for the displacement increments ``u^{n+1} - u^n``;
velocities are recovered by ``v^{n+1} = 2 (u^{n+1} - u^n) / tau_n - v^n``. All systems
are multiplied through by the current step so the matrix to factor is
``M + (tau^2 / 4) K``, cached per distinct step size.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fem import SparseOperator
from .mesh import TimeGrid


class NewmarkStepError(RuntimeError):
    def __init__(self, step: int, cause: Exception):
        super().__init__(f"time step {step} failed: {cause}")
        self.step = step
        self.cause = cause


def _step_key(tau: float) -> float:
    # steps derived from stored instants differ in the last ulp on uniform grids
    return float(f"{tau:.12e}")


class StepOperators:
    """Cache of factorized ``M + tau^2/4 K`` keyed by step size."""

    def __init__(self, M: SparseOperator, K: SparseOperator):
        self.M, self.K = M, K
        self._cache: dict[float, SparseOperator] = {}

    def system(self, tau: float) -> SparseOperator:
        key = _step_key(tau)
        op = self._cache.get(key)
        if op is None:
            op = SparseOperator((self.M.matrix + (tau * tau / 4.0) * self.K.matrix).tocsr())
            op.factor  # factorize eagerly so failures surface here
            self._cache[key] = op
        return op

    def __len__(self):
        return len(self._cache)


def _ops(M, K, cache):
    if cache is None:
        return StepOperators(M, K)
    return cache


def initial_increment(M, K, u0, v0, f0, f1, tau0, cache: StepOperators | None = None):
    """u^1 - u^0 for the first step (see :func:`initial_step`)."""
    if not tau0 > 0.0:
        raise ValueError("tau0 must be positive")
    ops = _ops(M, K, cache)
    c = tau0 * tau0 / 4.0
    rhs = M @ (tau0 * v0 + c * (f1 + f0)) - (2.0 * c) * (K @ u0)
    return ops.system(tau0).solve(rhs)


def newmark_increment(M, K, u_cur, du_prev, f_prev, f_cur, f_next, tau_prev, tau_cur,
                      cache: StepOperators | None = None):
    """u^{n+1} - u^n given u^n and the previous increment u^n - u^{n-1}."""
    if not (tau_prev > 0.0 and tau_cur > 0.0):
        raise ValueError("time steps must be positive")
    ops = _ops(M, K, cache)
    q = tau_cur / 4.0
    mass_part = (tau_cur / tau_prev) * du_prev \
        + q * (tau_cur * (f_next + f_cur) + tau_prev * (f_cur + f_prev))
    stiff_part = q * (2.0 * (tau_cur + tau_prev) * u_cur - tau_prev * du_prev)
    rhs = M @ mass_part - K @ stiff_part
    return ops.system(tau_cur).solve(rhs)


def initial_step(M, K, u0, v0, f0, f1, tau0, cache: StepOperators | None = None):
    """u^1 from (u^1 - u^0)/tau0 + A (tau0/4)(u^1 + u^0) = v^0 + (tau0/4)(f^1 + f^0)."""
    return u0 + initial_increment(M, K, u0, v0, f0, f1, tau0, cache)


def newmark_step(M, K, u_prev, u_cur, f_prev, f_cur, f_next, tau_prev, tau_cur,
                 cache: StepOperators | None = None):
    """u^{n+1} from the variable-step Newmark relation with steps tau_{n-1}, tau_n."""
    return u_cur + newmark_increment(M, K, u_cur, u_cur - u_prev, f_prev, f_cur, f_next,
                                     tau_prev, tau_cur, cache)


def velocity_update(u_next, u_cur, v_cur, tau):
    if not tau > 0.0:
        raise ValueError("tau must be positive")
    return 2.0 * (u_next - u_cur) / tau - v_cur


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Discrete states u_h^n, v_h^n, f_h^n stacked as rows, n = 0..N.

    The arrays are made read-only in place (no copy).
    """

    grid: TimeGrid
    u: np.ndarray
    v: np.ndarray
    f: np.ndarray

    def __post_init__(self):
        shape = (self.grid.N + 1,) + np.shape(self.u)[1:]
        for name in ("u", "v", "f"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def N(self) -> int:
        return self.grid.N


def run(M: SparseOperator, K: SparseOperator, u0, v0, f, grid: TimeGrid) -> Trajectory:
    """March from (u0, v0) over ``grid``; ``f`` holds f_h^n as rows, n = 0..N."""
    f = np.asarray(f, dtype=float)
    N = grid.N
    if f.shape[0] != N + 1:
        raise ValueError(f"need {N + 1} forcing samples, got {f.shape[0]}")
    tau = grid.steps
    u = np.empty((N + 1, M.dim))
    v = np.empty_like(u)
    u[0], v[0] = u0, v0
    ops = StepOperators(M, K)
    # increments are carried separately: v is recovered from them divided by
    # tau_n, and differencing stored u would lose digits on short steps
    du = None
    for n in range(N):
        try:
            if n == 0:
                du = initial_increment(M, K, u[0], v[0], f[0], f[1], tau[0], ops)
            else:
                du = newmark_increment(M, K, u[n], du, f[n - 1], f[n], f[n + 1],
                                       tau[n - 1], tau[n], ops)
        except Exception as exc:
            raise NewmarkStepError(n, exc) from exc
        u[n + 1] = u[n] + du
        v[n + 1] = 2.0 * du / tau[n] - v[n]
    return Trajectory(grid, u, v, f)
