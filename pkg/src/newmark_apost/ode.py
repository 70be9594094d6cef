"""Scalar model u'' + A u = f: Newmark integration and its 3-point estimator.

This is the space-free version of the wave pipeline and reuses the same
time grids, divided differences and indicator weights.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .estimators import second_differences, time_indicator_weights
from .mesh import TimeGrid


@dataclass(frozen=True)
class OdeProblem:
    A: float
    f: Callable[[np.ndarray], np.ndarray]
    u0: float
    v0: float
    T: float = 1.0

    def __post_init__(self):
        if not self.A > 0:
            raise ValueError("A must be positive")
        if not self.T > 0:
            raise ValueError("T must be positive")

    @classmethod
    def free_oscillation(cls, A: float, T: float = 1.0) -> "OdeProblem":
        """f = 0, u(t) = cos(sqrt(A) t)."""
        return cls(A, lambda t: np.zeros_like(t), 1.0, 0.0, T)

    def exact(self):
        """(u, u') for f = 0; None when a forcing is present."""
        w = np.sqrt(self.A)
        u = lambda t: self.u0 * np.cos(w * t) + self.v0 / w * np.sin(w * t)
        du = lambda t: -self.u0 * w * np.sin(w * t) + self.v0 * np.cos(w * t)
        return u, du


@dataclass(frozen=True)
class OdeTrajectory:
    grid: TimeGrid
    u: np.ndarray
    v: np.ndarray
    f: np.ndarray

    @property
    def N(self) -> int:
        return self.grid.N


def ode_run(problem: OdeProblem, grid: TimeGrid) -> OdeTrajectory:
    if abs(grid.T - problem.T) > 1e-12 * problem.T:
        raise ValueError(f"grid ends at {grid.T}, problem at {problem.T}")
    A = problem.A
    t = grid.instants
    tau = grid.steps
    f = np.asarray(problem.f(t), dtype=float) * np.ones_like(t)
    N = grid.N
    u = np.empty(N + 1)
    v = np.empty(N + 1)
    u[0], v[0] = problem.u0, problem.v0
    # march the increments d^n = u^{n+1} - u^n: the velocity recursion divides
    # them by tau_n, and forming them from stored u loses digits on tiny steps
    t0 = tau[0]
    d = (v[0] - t0 / 2 * A * u[0] + t0 / 4 * (f[1] + f[0])) / (1 / t0 + A * t0 / 4)
    u[1] = u[0] + d
    v[1] = 2 * d / t0 - v[0]
    for n in range(1, N):
        tp, tc = tau[n - 1], tau[n]
        rhs = (d / tp - A * (2 * (tc + tp) * u[n] - tp * d) / 4
               + (tc * (f[n + 1] + f[n]) + tp * (f[n] + f[n - 1])) / 4)
        d = rhs / (1 / tc + A * tc / 4)
        u[n + 1] = u[n] + d
        v[n + 1] = 2 * d / tc - v[n]
    return OdeTrajectory(grid, u, v, f)


def ode_eta_T(traj: OdeTrajectory, A: float):
    """Per-step 3-point indicator eta_T(t_k), k = 0..N-1, and sum_k tau_k eta_T(t_k)."""
    if traj.N < 2:
        raise ValueError("the 3-point estimator needs N >= 2")
    d2u = second_differences(traj.u, traj.grid)
    d2v = second_differences(traj.v, traj.grid)
    d2f = second_differences(traj.f, traj.grid)
    res = np.sqrt(A * d2v ** 2 + (d2f - A * d2u) ** 2)
    per_step = time_indicator_weights(traj.grid) * np.concatenate([res[:1], res])
    return per_step, float(np.sum(traj.grid.steps * per_step))


def ode_error_series(traj: OdeTrajectory, exact_u, exact_v, A: float) -> np.ndarray:
    t = traj.grid.instants
    return np.sqrt((traj.v - exact_v(t)) ** 2 + A * (traj.u - exact_u(t)) ** 2)


def ode_error(traj: OdeTrajectory, exact_u, exact_v, A: float) -> float:
    """max_n (|v^n - u'(t_n)|^2 + A |u^n - u(t_n)|^2)^(1/2)."""
    return float(ode_error_series(traj, exact_u, exact_v, A).max())
