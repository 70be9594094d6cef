import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from newmark_apost.fem import P1Space, SparseOperator
from newmark_apost.mesh import TimeGrid, generate_structured
from newmark_apost.newmark import (NewmarkStepError, StepOperators, Trajectory, initial_step,
                                   newmark_step, run, velocity_update)
from oracles import crank_nicolson


def _random_system(rng, n):
    B = rng.standard_normal((n, n))
    C = rng.standard_normal((n, n))
    M = B @ B.T + n * np.eye(n)
    K = C @ C.T + 0.1 * np.eye(n)
    return M, K


def _random_grid(rng, N, T=1.0):
    steps = rng.uniform(0.2, 1.0, N)
    return TimeGrid(np.concatenate([[0.0], np.cumsum(steps) / steps.sum() * T]))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 6), N=st.integers(2, 25))
def test_equivalent_to_crank_nicolson(seed, n, N):
    rng = np.random.default_rng(seed)
    M, K = _random_system(rng, n)
    grid = _random_grid(rng, N)
    u0, v0 = rng.standard_normal(n), rng.standard_normal(n)
    F = rng.standard_normal((N + 1, n))
    traj = run(SparseOperator(sp.csr_matrix(M)), SparseOperator(sp.csr_matrix(K)), u0, v0, F, grid)
    U, V = crank_nicolson(M, K, u0, v0, F, grid.instants)
    scale = 1 + np.abs(U).max() + np.abs(V).max()
    assert np.abs(traj.u - U).max() <= 1e-10 * scale
    assert np.abs(traj.v - V).max() <= 1e-10 * scale


def test_energy_conservation():
    space = P1Space(generate_structured(8))
    rng = np.random.default_rng(2)
    u0 = rng.standard_normal(space.n_dofs)
    v0 = rng.standard_normal(space.n_dofs)
    grid = TimeGrid.uniform(10.0, 1000)
    traj = run(space.M, space.K, u0, v0, np.zeros((1001, space.n_dofs)), grid)
    E = np.einsum("ni,ni->n", traj.v, (space.M @ traj.v.T).T) \
        + np.einsum("ni,ni->n", traj.u, (space.K @ traj.u.T).T)
    assert np.abs(E - E[0]).max() <= 1e-9 * E[0]


def test_energy_conservation_variable_steps():
    space = P1Space(generate_structured(6))
    rng = np.random.default_rng(5)
    u0 = rng.standard_normal(space.n_dofs)
    grid = _random_grid(rng, 300, T=3.0)
    traj = run(space.M, space.K, u0, 0 * u0, np.zeros((301, space.n_dofs)), grid)
    E = [v @ (space.M @ v) + u @ (space.K @ u) for u, v in zip(traj.u, traj.v)]
    assert np.ptp(E) <= 1e-10 * E[0]


def test_zero_data_stays_zero():
    space = P1Space(generate_structured(4))
    z = np.zeros(space.n_dofs)
    traj = run(space.M, space.K, z, z, np.zeros((11, space.n_dofs)), TimeGrid.uniform(1, 10))
    assert not traj.u.any() and not traj.v.any()


def test_velocity_recursion_and_single_steps():
    rng = np.random.default_rng(7)
    M, K = _random_system(rng, 4)
    Mo, Ko = SparseOperator(sp.csr_matrix(M)), SparseOperator(sp.csr_matrix(K))
    grid = _random_grid(rng, 6)
    F = rng.standard_normal((7, 4))
    u0, v0 = rng.standard_normal(4), rng.standard_normal(4)
    traj = run(Mo, Ko, u0, v0, F, grid)
    tau = grid.steps
    for n in range(grid.N):
        np.testing.assert_allclose(traj.v[n + 1], velocity_update(traj.u[n + 1], traj.u[n],
                                                                  traj.v[n], tau[n]), atol=1e-10)
    np.testing.assert_allclose(initial_step(Mo, Ko, u0, v0, F[0], F[1], tau[0]), traj.u[1],
                               atol=1e-12)
    for n in range(1, grid.N):
        u_next = newmark_step(Mo, Ko, traj.u[n - 1], traj.u[n], F[n - 1], F[n], F[n + 1],
                              tau[n - 1], tau[n])
        np.testing.assert_allclose(u_next, traj.u[n + 1], atol=1e-10)


def test_step_relation_residual():
    # (u+ - u)/tau_n - (u - u-)/tau_{n-1} + A (tau_n (u+ + u) + tau_{n-1}(u + u-))/4 = f-terms
    rng = np.random.default_rng(8)
    M, K = _random_system(rng, 3)
    grid = _random_grid(rng, 5)
    F = rng.standard_normal((6, 3))
    traj = run(SparseOperator(sp.csr_matrix(M)), SparseOperator(sp.csr_matrix(K)),
               rng.standard_normal(3), rng.standard_normal(3), F, grid)
    u, t = traj.u, grid.steps
    for n in range(1, grid.N):
        lhs = M @ ((u[n + 1] - u[n]) / t[n] - (u[n] - u[n - 1]) / t[n - 1]) \
            + K @ (t[n] * (u[n + 1] + u[n]) + t[n - 1] * (u[n] + u[n - 1])) / 4
        rhs = M @ (t[n] * (F[n + 1] + F[n]) + t[n - 1] * (F[n] + F[n - 1])) / 4
        np.testing.assert_allclose(lhs, rhs, atol=1e-10)


def test_one_factorization_per_step_size():
    space = P1Space(generate_structured(4))
    ops = StepOperators(space.M, space.K)
    for tau in TimeGrid.uniform(1.0, 30).steps:
        ops.system(tau)
    assert len(ops) == 1
    ops.system(0.5)
    assert len(ops) == 2


def test_trajectory_checks_and_is_readonly():
    grid = TimeGrid.uniform(1.0, 3)
    tr = Trajectory(grid, np.zeros((4, 2)), np.zeros((4, 2)), np.zeros((4, 2)))
    with pytest.raises(ValueError):
        tr.u[0, 0] = 1.0
    with pytest.raises(ValueError):
        Trajectory(grid, np.zeros((3, 2)), np.zeros((4, 2)), np.zeros((4, 2)))


def test_forcing_length_checked():
    space = P1Space(generate_structured(3))
    z = np.zeros(space.n_dofs)
    with pytest.raises(ValueError):
        run(space.M, space.K, z, z, np.zeros((5, space.n_dofs)), TimeGrid.uniform(1, 5))


def test_step_failure_is_wrapped():
    M = SparseOperator(sp.identity(2, format="csr"))
    K = SparseOperator(sp.csr_matrix(np.array([[-1e6, 0.0], [0.0, 1.0]])))
    with pytest.raises(NewmarkStepError) as info:
        run(M, K, np.ones(2), np.zeros(2), np.zeros((3, 2)), TimeGrid.uniform(1.0, 2))
    assert info.value.step == 0
