import math

import numpy as np
import pytest

from newmark_apost.estimators import EstimatorConfig
from newmark_apost.experiments import (CaseSpec, ExperimentError, MeshSpec, TauLaw,
                                       discretize_data, energy_error, energy_error_series,
                                       make_case, prepare, run_experiment, simulate, worker_count)
from newmark_apost.fem import P1Space
from newmark_apost.mesh import TimeGrid, generate_structured, perturb_mesh, write_mesh
from newmark_apost.newmark import Trajectory
from oracles import p1_energy_error


@pytest.mark.parametrize("case", ["a", "b", "c"])
def test_forcing_matches_finite_differences(case):
    F = make_case(case)
    rng = np.random.default_rng(0)
    x, y, t = rng.uniform(0, 1, 100), rng.uniform(0, 1, 100), rng.uniform(0, 1, 100)
    h = 1e-4
    u_tt = (F.u(x, y, t + h) - 2 * F.u(x, y, t) + F.u(x, y, t - h)) / h**2
    lap = (F.u(x + h, y, t) + F.u(x - h, y, t) + F.u(x, y + h, t) + F.u(x, y - h, t)
           - 4 * F.u(x, y, t)) / h**2
    f = F.f(x, y, t)
    assert np.abs(u_tt - lap - f).max() <= 1e-5 * np.abs(f).max()


@pytest.mark.parametrize("case", ["a", "b", "c"])
def test_forcing_matches_derivative_evaluators(case):
    F = make_case(case)
    rng = np.random.default_rng(1)
    x, y = rng.uniform(0, 1, 50), rng.uniform(0, 1, 50)
    for t in (0.0, 0.3, 0.77):
        np.testing.assert_allclose(F.f(x, y, t), F.u_tt(x, y, t) - F.lap_u(x, y, t),
                                   atol=1e-9)
        # first derivatives by central differences
        h = 1e-6
        gx, gy = F.grad_u(x, y, t)
        np.testing.assert_allclose(gx, (F.u(x + h, y, t) - F.u(x - h, y, t)) / (2 * h), atol=1e-5)
        np.testing.assert_allclose(gy, (F.u(x, y + h, t) - F.u(x, y - h, t)) / (2 * h), atol=1e-5)
        np.testing.assert_allclose(F.u_t(x, y, t), (F.u(x, y, t + h) - F.u(x, y, t - h)) / (2 * h),
                                   atol=1e-5 * (1 + abs(F.u_t(x, y, t)).max()))
        gtx, gty = F.grad_u_t(x, y, t)
        np.testing.assert_allclose(gtx, (F.u_t(x + h, y, t) - F.u_t(x - h, y, t)) / (2 * h),
                                   atol=1e-4)


def test_case_a_point_values():
    F = make_case("a")
    assert F.u(0.5, 0.5, 0.0) == pytest.approx(1.0)
    assert F.u_t(0.5, 0.5, 0.0) == 0.0
    x = np.linspace(0, 1, 7)
    np.testing.assert_allclose(F.f(x, 0.3, 0.2), math.pi ** 2 * F.u(x, 0.3, 0.2))


def test_case_c_initial_velocity_zero():
    F = make_case("c")
    x, y = np.meshgrid(np.linspace(0, 1, 9), np.linspace(0, 1, 9))
    assert not np.any(F.v0(x, y))


def test_case_b_and_c_forms():
    x, y, t = 0.13, 0.71, 0.4
    b, c = make_case("b"), make_case("c")
    assert b.u(x, y, t) == pytest.approx(math.cos(0.5 * math.pi * t) * math.sin(10 * math.pi * x)
                                         * math.sin(10 * math.pi * y))
    assert c.u(x, y, t) == pytest.approx(math.cos(15 * math.pi * t) * math.sin(math.pi * x)
                                         * math.sin(math.pi * y))


def test_unknown_case():
    with pytest.raises(ValueError):
        make_case("d")


def test_energy_error_zero():
    space = P1Space(generate_structured(4))
    g = TimeGrid.uniform(1.0, 3)
    z = np.zeros((4, space.n_dofs))
    tr = Trajectory(g, z, z, z)
    assert energy_error(tr, make_case("zero"), space) == 0.0


def test_energy_error_against_oracle():
    mesh = perturb_mesh(generate_structured(6), 0.2, 4)
    space = P1Space(mesh)
    F = make_case("a")
    g = TimeGrid.uniform(1.0, 3)
    rng = np.random.default_rng(2)
    u = np.stack([space.interpolate(lambda x, y, t=t: F.u(x, y, t)) for t in g.instants])
    v = u + 0.05 * rng.standard_normal(u.shape)
    tr = Trajectory(g, u, v, np.zeros_like(u))
    got = energy_error_series(tr, F, space)
    for n, t in enumerate(g.instants):
        ref = p1_energy_error(mesh.nodes, mesh.triangles, space.dofs.extend(u[n]),
                              space.dofs.extend(v[n]),
                              lambda x, y: F.u(x, y, t), lambda x, y: F.u_t(x, y, t),
                              lambda x, y: F.grad_u(x, y, t))
        assert got[n] == pytest.approx(ref, rel=2e-3)


def test_projection_data_are_projections():
    space = P1Space(generate_structured(8))
    F = make_case("a")
    g = TimeGrid.uniform(1.0, 4)
    u0, v0, f = discretize_data(F, space, g, "projection")
    np.testing.assert_allclose(space.K @ u0, space.K @ space.h1_project(
        lambda x, y: F.grad_u(x, y, 0.0)))
    np.testing.assert_allclose(f[2], space.l2_project(lambda x, y: F.f(x, y, g.instants[2])),
                               atol=1e-12)
    u0n, _, fn = discretize_data(F, space, g, "nodal")
    np.testing.assert_allclose(u0n, space.interpolate(F.u0))
    assert fn.shape == f.shape == (5, space.n_dofs)


def test_spec_parsing():
    assert MeshSpec.parse("structured:16") == MeshSpec("structured", n=16)
    m = MeshSpec.parse("perturbed:10,0.2,7")
    assert (m.n, m.amplitude, m.seed) == (10, 0.2, 7)
    assert str(m) == "perturbed:10,0.2,7"
    assert TauLaw.parse("uniform:0.05").grid(0.1).N == 20
    assert TauLaw.parse("sqrt-h").grid(1 / 160).N == 13
    assert TauLaw.parse("equal-h").grid(1 / 160).N == 160
    alt = TauLaw.parse("alternating:0.1,0.5").grid(0.1)
    assert alt.T == 1.0 and str(TauLaw.parse("alternating:0.1,0.5")) == "alternating:0.1,0.5"
    for bad in ("structured", "structured:x", "structured:0", "perturbed:4,0.5,1",
                "hex:3", "file:"):
        with pytest.raises(ValueError):
            MeshSpec.parse(bad)
    for bad in ("uniform:-1", "uniform", "alternating:0.1,2", "sqrt-h:3", "cubic"):
        with pytest.raises(ValueError):
            TauLaw.parse(bad)


def test_case_spec_validation():
    m, law = MeshSpec.parse("structured:4"), TauLaw.parse("uniform:0.25")
    with pytest.raises(ValueError):
        CaseSpec("q", m, law)
    with pytest.raises(ValueError):
        CaseSpec("a", m, law, data_mode="exact")
    spec = CaseSpec("a", m, law, "projection", EstimatorConfig())
    assert spec.config.data_mode == "projection"


def test_zero_case_report():
    spec = CaseSpec("zero", MeshSpec.parse("structured:4"), TauLaw.parse("uniform:0.25"))
    r = run_experiment(spec)
    assert r.true_error == 0.0 and r.effectivity is None
    assert r.eta_T_total == 0.0 and r.eta_S1 == 0.0 and r.eta_S2 == 0.0 and r.N0 == 0.0


def test_file_mesh_matches_structured(tmp_path):
    path = tmp_path / "m.txt"
    with open(path, "w") as fh:
        write_mesh(generate_structured(8), fh)
    law = TauLaw.parse("uniform:0.1")
    a = run_experiment(CaseSpec("a", MeshSpec.parse(f"file:{path}"), law))
    b = run_experiment(CaseSpec("a", MeshSpec.parse("structured:8"), law))
    assert a.true_error == b.true_error and a.eta_T_total == b.eta_T_total
    # the file has no nominal resolution, so h is the largest diameter
    assert prepare(CaseSpec("a", MeshSpec.parse(f"file:{path}"), law)).h == pytest.approx(
        math.sqrt(2) / 8)


def test_stage_tags():
    spec = CaseSpec("a", MeshSpec.parse("structured:4"), TauLaw.parse("uniform:1.0"))
    with pytest.raises(ExperimentError) as info:
        prepare(spec)
    assert info.value.stage == "time grid"


def test_modes_agree_on_error_case_a():
    law = TauLaw.parse("uniform:0.05")
    mesh = MeshSpec.parse("perturbed:24,0.2,3")
    e = {m: run_experiment(CaseSpec("a", mesh, law, m)).true_error for m in ("nodal", "projection")}
    assert 0.5 <= e["nodal"] / e["projection"] <= 2


def test_simulation_exposes_trajectory():
    spec = CaseSpec("a", MeshSpec.parse("structured:6"), TauLaw.parse("uniform:0.1"))
    sim = simulate(spec)
    assert sim.trajectory.N == 10
    assert sim.Ph_u0.shape == (sim.prepared.space.n_dofs,)


def test_worker_count():
    assert worker_count({"NEWMARK_APOST_THREADS": "3"}) == 3
    assert worker_count({}) >= 1
    assert worker_count({"NEWMARK_APOST_THREADS": "0"}) >= 1
    for bad in ("-1", "two"):
        with pytest.raises(ValueError):
            worker_count({"NEWMARK_APOST_THREADS": bad})
