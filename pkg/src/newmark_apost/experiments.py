"""Manufactured wave solutions on the unit square and the full estimation pipeline.

A run goes mesh -> assembly -> discrete data -> Newmark -> estimators -> true
error. Mesh sources and time-step laws are described by small spec objects
that can also be parsed from the strings the command line accepts.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .estimators import EstimatorConfig, EstimatorReport, estimate
from .fem import P1Space, load_vector
from .mesh import (Mesh, TimeGrid, generate_alternating_timegrid, generate_structured,
                   perturb_mesh, read_mesh)
from .newmark import Trajectory, run

THREADS_ENV = "NEWMARK_APOST_THREADS"

Field = Callable[[np.ndarray, np.ndarray, float], np.ndarray]


@dataclass(frozen=True)
class AnalyticField:
    """Exact solution u(x, y, t) with the derivatives the pipeline needs.

    ``f`` is u_tt - lap u. ``grad_u`` and ``grad_u_t`` return (d/dx, d/dy)
    pairs. All evaluators are vectorized in x and y.
    """

    name: str
    u: Field
    u_t: Field
    u_tt: Field
    grad_u: Callable
    grad_u_t: Callable
    lap_u: Field
    f: Field

    def u0(self, x, y):
        return self.u(x, y, 0.0)

    def v0(self, x, y):
        return self.u_t(x, y, 0.0)


def _separable(name, k, omega):
    """u = cos(omega t) sin(k pi x) sin(k pi y) and its derivatives."""
    kp = k * math.pi
    S = lambda x, y: np.sin(kp * x) * np.sin(kp * y)

    def grad_S(x, y):
        return (kp * np.cos(kp * x) * np.sin(kp * y), kp * np.sin(kp * x) * np.cos(kp * y))

    def grad_u(x, y, t):
        gx, gy = grad_S(x, y)
        c = np.cos(omega * t)
        return c * gx, c * gy

    def grad_u_t(x, y, t):
        gx, gy = grad_S(x, y)
        s = -omega * np.sin(omega * t)
        return s * gx, s * gy

    # -lap S = 2 k^2 pi^2 S and u_tt = -omega^2 u
    coeff = 2.0 * kp * kp - omega * omega
    return AnalyticField(
        name=name,
        u=lambda x, y, t: np.cos(omega * t) * S(x, y),
        u_t=lambda x, y, t: -omega * np.sin(omega * t) * S(x, y),
        u_tt=lambda x, y, t: -omega * omega * np.cos(omega * t) * S(x, y),
        grad_u=grad_u,
        grad_u_t=grad_u_t,
        lap_u=lambda x, y, t: -2.0 * kp * kp * np.cos(omega * t) * S(x, y),
        f=lambda x, y, t: coeff * np.cos(omega * t) * S(x, y),
    )


def _zero_field():
    z = lambda x, y, t: np.zeros(np.broadcast(x, y).shape)
    zz = lambda x, y, t: (z(x, y, t), z(x, y, t))
    return AnalyticField("zero", z, z, z, zz, zz, z, z)


CASES = {
    "a": (1, math.pi),
    "b": (10, 0.5 * math.pi),
    "c": (1, 15.0 * math.pi),
}


def make_case(case_id: str) -> AnalyticField:
    """Test cases a, b, c; ``zero`` gives the trivial solution."""
    if case_id == "zero":
        return _zero_field()
    if case_id not in CASES:
        raise ValueError(f"unknown case {case_id!r}; expected one of a, b, c, zero")
    return _separable(case_id, *CASES[case_id])


def energy_error_series(traj: Trajectory, exact: AnalyticField, space: P1Space) -> np.ndarray:
    """(||v_h^n - u_t(t_n)||^2 + |u_h^n - u(t_n)|_H1^2)^(1/2) for n = 0..N."""
    pts, wts = space.quadrature
    x, y = pts[..., 0], pts[..., 1]
    out = np.empty(traj.N + 1)
    for n, t in enumerate(traj.grid.instants):
        dv = space.values_at_quadrature(traj.v[n]) - exact.u_t(x, y, t)
        gx, gy = exact.grad_u(x, y, t)
        g = space.element_gradients(traj.u[n])
        dg2 = (g[:, 0:1] - gx) ** 2 + (g[:, 1:2] - gy) ** 2
        out[n] = math.sqrt(max(float(np.sum(wts * (dv * dv + dg2))), 0.0))
    return out


def energy_error(traj: Trajectory, exact: AnalyticField, space: P1Space) -> float:
    """Energy-norm error, maximized over the grid instants."""
    return float(energy_error_series(traj, exact, space).max())


# -- run descriptions -------------------------------------------------------

@dataclass(frozen=True)
class MeshSpec:
    kind: str  # structured | file | perturbed
    n: Optional[int] = None
    path: Optional[str] = None
    amplitude: float = 0.0
    seed: int = 0

    @classmethod
    def parse(cls, text: str) -> "MeshSpec":
        kind, _, arg = text.partition(":")
        try:
            if kind == "structured":
                spec = cls("structured", n=int(arg))
            elif kind == "perturbed":
                n, amp, seed = arg.split(",")
                spec = cls("perturbed", n=int(n), amplitude=float(amp), seed=int(seed))
            elif kind == "file":
                if not arg:
                    raise ValueError("empty path")
                spec = cls("file", path=arg)
            else:
                raise ValueError(f"unknown mesh kind {kind!r}")
        except ValueError as exc:
            raise ValueError(f"bad mesh spec {text!r}: {exc}; expected structured:n, "
                             "file:path or perturbed:n,amplitude,seed") from None
        spec.validate()
        return spec

    def validate(self):
        if self.kind in ("structured", "perturbed") and not (self.n and self.n >= 1):
            raise ValueError(f"mesh resolution must be a positive integer, got {self.n}")
        if self.kind == "perturbed" and not 0.0 <= self.amplitude < 0.3:
            raise ValueError(f"perturbation amplitude must lie in [0, 0.3), got {self.amplitude}")
        if self.kind == "file" and not Path(self.path).is_file():
            raise ValueError(f"mesh file {self.path!r} does not exist")

    def build(self) -> Mesh:
        if self.kind == "file":
            return read_mesh(Path(self.path))
        mesh = generate_structured(self.n)
        if self.kind == "perturbed":
            mesh = perturb_mesh(mesh, self.amplitude, self.seed)
        return mesh

    def nominal_h(self, mesh: Mesh) -> float:
        """1/n for generated meshes, the largest diameter for files."""
        return 1.0 / self.n if self.n else mesh.h

    def __str__(self):
        if self.kind == "structured":
            return f"structured:{self.n}"
        if self.kind == "perturbed":
            return f"perturbed:{self.n},{self.amplitude!r},{self.seed}"
        return f"file:{self.path}"


def _steps_for(T, tau):
    # tolerate T/tau landing a hair above an integer
    return max(1, math.ceil(T / tau - 1e-9))


@dataclass(frozen=True)
class TauLaw:
    kind: str  # uniform | sqrt-h | equal-h | alternating
    tau: Optional[float] = None
    ratio: Optional[float] = None

    @classmethod
    def parse(cls, text: str) -> "TauLaw":
        kind, _, arg = text.partition(":")
        try:
            if kind in ("sqrt-h", "equal-h") and not arg:
                law = cls(kind)
            elif kind == "uniform":
                law = cls("uniform", tau=float(arg))
            elif kind == "alternating":
                ts, r = arg.split(",")
                law = cls("alternating", tau=float(ts), ratio=float(r))
            else:
                raise ValueError(f"unknown law {kind!r}")
        except ValueError as exc:
            raise ValueError(f"bad time-step law {text!r}: {exc}; expected uniform:tau, "
                             "sqrt-h, equal-h or alternating:tau_star,ratio") from None
        law.validate()
        return law

    def validate(self):
        if self.kind in ("uniform", "alternating") and not (self.tau and self.tau > 0):
            raise ValueError(f"time step must be positive, got {self.tau}")
        if self.kind == "alternating" and not (self.ratio and 0 < self.ratio <= 1):
            raise ValueError(f"alternation ratio must lie in (0, 1], got {self.ratio}")

    def grid(self, h: float, T: float = 1.0) -> TimeGrid:
        if self.kind == "alternating":
            return generate_alternating_timegrid(self.tau, self.ratio, T)
        tau = {"uniform": self.tau, "sqrt-h": math.sqrt(h), "equal-h": h}[self.kind]
        return TimeGrid.uniform(T, _steps_for(T, tau))

    def __str__(self):
        if self.kind == "uniform":
            return f"uniform:{self.tau!r}"
        if self.kind == "alternating":
            return f"alternating:{self.tau!r},{self.ratio!r}"
        return self.kind


@dataclass(frozen=True)
class CaseSpec:
    case: str
    mesh: MeshSpec
    tau_law: TauLaw
    data_mode: str = "nodal"
    config: EstimatorConfig = field(default_factory=EstimatorConfig)
    T: float = 1.0

    def __post_init__(self):
        if self.case not in ("a", "b", "c", "zero"):
            raise ValueError(f"unknown case {self.case!r}")
        if self.data_mode not in ("nodal", "projection"):
            raise ValueError(f"unknown data mode {self.data_mode!r}")
        if not self.T > 0:
            raise ValueError("T must be positive")
        if self.config.data_mode != self.data_mode:
            object.__setattr__(self, "config",
                               replace(self.config, data_mode=self.data_mode))


class ExperimentError(RuntimeError):
    """A pipeline failure tagged with the stage where it happened."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class Prepared:
    mesh: Mesh
    space: P1Space
    grid: TimeGrid
    h: float


def prepare(spec: CaseSpec) -> Prepared:
    try:
        mesh = spec.mesh.build()
    except Exception as exc:
        raise ExperimentError("mesh", exc) from exc
    h = spec.mesh.nominal_h(mesh)
    try:
        grid = spec.tau_law.grid(h, spec.T)
    except Exception as exc:
        raise ExperimentError("time grid", exc) from exc
    if grid.N < 2:
        raise ExperimentError("time grid", ValueError("the estimators need at least two steps"))
    return Prepared(mesh, P1Space(mesh), grid, h)


def discretize_data(exact: AnalyticField, space: P1Space, grid: TimeGrid, mode: str):
    """(u0_h, v0_h, rows f_h^n) by nodal interpolation or by projection.

    Projection uses the H1_0 projection for u0, v0 and the L2 projection for f.
    """
    if mode == "nodal":
        u0 = space.interpolate(exact.u0)
        v0 = space.interpolate(exact.v0)
        f = np.stack([space.interpolate(lambda x, y, t=t: exact.f(x, y, t))
                      for t in grid.instants])
        return u0, v0, f
    u0 = space.h1_project(lambda x, y: exact.grad_u(x, y, 0.0))
    v0 = space.h1_project(lambda x, y: exact.grad_u_t(x, y, 0.0))
    loads = np.stack([load_vector(space.mesh, space.dofs, lambda x, y, t=t: exact.f(x, y, t))
                      for t in grid.instants], axis=1)
    f = space.M.solve(loads).T
    return u0, v0, np.ascontiguousarray(f)


@dataclass
class Simulation:
    prepared: Prepared
    exact: AnalyticField
    trajectory: Trajectory
    Ph_u0: np.ndarray


def simulate(spec: CaseSpec, prepared: Optional[Prepared] = None) -> Simulation:
    """Mesh, data and Newmark run for one case, without any estimation."""
    p = prepared or prepare(spec)
    exact = make_case(spec.case)
    stage = "assembly"
    try:
        p.space.M.factor  # assembles and factorizes the mass matrix
        p.space.K
        stage = "data"
        u0, v0, f = discretize_data(exact, p.space, p.grid, spec.data_mode)
        Ph_u0 = p.space.l2_project(exact.u0)
        stage = "solve"
        traj = run(p.space.M, p.space.K, u0, v0, f, p.grid)
    except Exception as exc:
        raise ExperimentError(stage, exc) from exc
    return Simulation(p, exact, traj, Ph_u0)


def evaluate(spec: CaseSpec, sim: Simulation, with_higher_order: bool = False) -> EstimatorReport:
    """Estimators and true error of a finished simulation."""
    space, traj = sim.prepared.space, sim.trajectory
    stage = "estimate"
    try:
        report = estimate(traj, space, spec.config, Ph_u0=sim.Ph_u0,
                          with_higher_order=with_higher_order)
        stage = "true error"
        series = energy_error_series(traj, sim.exact, space)
    except Exception as exc:
        raise ExperimentError(stage, exc) from exc
    report.error_series = series
    report.true_error = float(series.max())
    return report


def run_experiment(spec: CaseSpec, prepared: Optional[Prepared] = None,
                   with_higher_order: bool = False) -> EstimatorReport:
    """Whole pipeline for one case; failures carry the stage they came from."""
    return evaluate(spec, simulate(spec, prepared), with_higher_order)


def worker_count(env=None) -> int:
    """Workers allowed by NEWMARK_APOST_THREADS; unset or 0 means one per CPU."""
    raw = (os.environ if env is None else env).get(THREADS_ENV, "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"{THREADS_ENV} must be a non-negative integer, got {raw!r}") from None
    if n < 0:
        raise ValueError(f"{THREADS_ENV} must be a non-negative integer, got {n}")
    return n or (os.cpu_count() or 1)
