import math

import numpy as np
import pytest

from nlch.errors import ConfigurationError, StepFailure
from nlch.grid import EdgeField, constant_field, field_from_array, init_random_perturbation, make_grid
from nlch.kernel import KernelSpec, build_kernel
from nlch.potential import make_potential
from nlch.scheme import (
    SchemeParams,
    chemical_potential,
    edge_velocities,
    initial_state,
    mobility,
    naive_explicit_step,
    numerical_flux,
    residual,
    step,
)


def oracle_residual(rho_next, rho_k, conv_k, grid, dt, beta, p):
    """Independent residual assembly: explicit loops with modular indices,
    transcribed term by term from the scheme's definition."""
    n = grid.n
    h = grid.h
    w = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            w[i, j] = (
                float(p.fc_prime(rho_next[i, j]))
                - float(p.fe_prime(rho_k[i, j]))
                + 2.0 * rho_next[i, j]
                - 2.0 * conv_k[i, j]
            )

    def mob(x, y):
        return beta * max(1.0 + x, 0.0) * max(1.0 - y, 0.0)

    fx = np.zeros((n, n))
    fy = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            u = -(w[(i + 1) % n, j] - w[i, j]) / h
            fx[i, j] = mob(rho_next[i, j], rho_next[(i + 1) % n, j]) * max(u, 0.0) + mob(
                rho_next[(i + 1) % n, j], rho_next[i, j]
            ) * min(u, 0.0)
            v = -(w[i, (j + 1) % n] - w[i, j]) / h
            fy[i, j] = mob(rho_next[i, j], rho_next[i, (j + 1) % n]) * max(v, 0.0) + mob(
                rho_next[i, (j + 1) % n], rho_next[i, j]
            ) * min(v, 0.0)
    r = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            r[i, j] = (rho_next[i, j] - rho_k[i, j]) / dt + (
                fx[i, j] - fx[(i - 1) % n, j] + fy[i, j] - fy[i, (j - 1) % n]
            ) / h
    return r


def small_setup(n=8, length=1.0, radius=0.3, kind="gl", beta=2.0, seed=0, amp=0.3):
    grid = make_grid(n, length)
    kernel = build_kernel(KernelSpec(shape="bump", support_radius=radius), grid)
    p = make_potential(kind, beta=beta)
    rho = init_random_perturbation(grid, amp, seed=seed)
    return grid, kernel, p, initial_state(rho, kernel)


def test_mobility_values():
    assert mobility(0.0, 0.0, 5.0) == 5.0
    assert mobility(0.5, 1.2, 3.0) == 0.0
    assert mobility(1.0, 0.5, 2.0) == 2.0
    assert mobility(-1.5, 0.0, 2.0) == 0.0
    arr = mobility(np.array([0.0, 1.0]), np.array([0.0, 0.5]), 2.0)
    assert arr.tolist() == [2.0, 2.0]


def test_chemical_potential_trivial_cases():
    grid = make_grid(8, 1.0)
    p = make_potential("gl")
    zero = constant_field(grid, 0.0)
    w = chemical_potential(zero, zero, zero, p)
    assert np.all(w.values == 0.0)
    c = 0.7
    cf = constant_field(grid, c)
    w = chemical_potential(cf, cf, cf, p)
    assert np.max(np.abs(w.values - (c ** 3 - c))) <= 1e-15


@pytest.mark.parametrize("kind,beta", [("gl", 1.0), ("fh", 5.0)])
def test_chemical_potential_matches_pointwise_oracle(kind, beta):
    grid = make_grid(8, 1.0)
    p = make_potential(kind, beta=beta)
    rng = np.random.default_rng(17)
    rho_next = field_from_array(grid, rng.uniform(-0.8, 0.8, (8, 8)))
    rho_curr = field_from_array(grid, rng.uniform(-0.8, 0.8, (8, 8)))
    conv = field_from_array(grid, rng.uniform(-0.8, 0.8, (8, 8)))
    w = chemical_potential(rho_next, rho_curr, conv, p)
    for i in range(8):
        for j in range(8):
            expect = (
                float(p.fc_prime(rho_next.values[i, j]))
                - float(p.fe_prime(rho_curr.values[i, j]))
                + 2.0 * rho_next.values[i, j]
                - 2.0 * conv.values[i, j]
            )
            assert w.values[i, j] == pytest.approx(expect, abs=1e-14)


def test_edge_velocities_constant_and_ramp():
    grid = make_grid(4, 4.0)  # h = 1
    u = edge_velocities(constant_field(grid, 3.5))
    assert np.all(u.x_edges == 0.0) and np.all(u.y_edges == 0.0)

    ramp = field_from_array(grid, np.tile(np.arange(4.0)[:, None], (1, 4)))
    u = edge_velocities(ramp)
    assert np.all(u.x_edges[:3, :] == -1.0)  # interior faces
    assert np.all(u.x_edges[3, :] == 3.0)  # seam carries the compensating jump
    assert np.all(u.x_edges.sum(axis=0) == 0.0)
    assert np.all(u.y_edges == 0.0)


def test_edge_velocities_rows_telescope():
    grid = make_grid(16, 1.0)
    rng = np.random.default_rng(3)
    w = field_from_array(grid, rng.normal(size=(16, 16)))
    u = edge_velocities(w)
    assert np.max(np.abs(u.x_edges.sum(axis=0))) <= 1e-11
    assert np.max(np.abs(u.y_edges.sum(axis=1))) <= 1e-11


def test_numerical_flux_trivial_cases():
    grid = make_grid(4, 1.0)
    rho = constant_field(grid, 0.3)
    zero_u = EdgeField(grid, np.zeros((4, 4)), np.zeros((4, 4)))
    f = numerical_flux(rho, zero_u, beta=5.0)
    assert np.all(f.x_edges == 0.0) and np.all(f.y_edges == 0.0)

    ones = constant_field(grid, 1.0)
    rng = np.random.default_rng(5)
    u = EdgeField(grid, rng.normal(size=(4, 4)), rng.normal(size=(4, 4)))
    f = numerical_flux(ones, u, beta=5.0)
    assert np.all(f.x_edges == 0.0) and np.all(f.y_edges == 0.0)


def test_numerical_flux_single_edge_value():
    grid = make_grid(4, 1.0)
    vals = np.zeros((4, 4))
    vals[1, 0] = 0.5  # east neighbor of cell (0,0)
    rho = field_from_array(grid, vals)
    ux = np.zeros((4, 4))
    ux[0, 0] = 2.0
    f = numerical_flux(rho, EdgeField(grid, ux, np.zeros((4, 4))), beta=1.0)
    # M(0, 0.5) * 2 = 1 * 0.5 * 2
    assert f.x_edges[0, 0] == pytest.approx(1.0, abs=1e-15)


def test_residual_constant_fields_are_steady():
    grid, kernel, p, state0 = small_setup()
    params = SchemeParams(dt=0.1, beta=2.0)
    c = constant_field(grid, 0.4)
    state = initial_state(c, kernel)
    r = residual(c, state, params, kernel, p)
    assert np.all(r.values == 0.0)


def test_residual_sum_telescopes():
    grid, kernel, p, state = small_setup(seed=2)
    params = SchemeParams(dt=0.05, beta=2.0)
    rng = np.random.default_rng(11)
    rho_next = field_from_array(grid, rng.uniform(-0.9, 0.9, (8, 8)))
    r = residual(rho_next, state, params, kernel, p)
    lhs = float(np.sum(r.values))
    rhs = float(np.sum((rho_next.values - state.rho_curr.values) / params.dt))
    assert lhs == pytest.approx(rhs, abs=1e-12 * max(1.0, abs(rhs)))


def test_flux_divergence_telescopes_exactly():
    grid, kernel, p, state = small_setup(seed=4)
    rng = np.random.default_rng(19)
    rho_next = field_from_array(grid, rng.uniform(-0.9, 0.9, (8, 8)))
    w = chemical_potential(rho_next, state.rho_curr, state.conv_curr, p)
    f = numerical_flux(rho_next, edge_velocities(w), beta=2.0)
    terms = []
    n = grid.n
    for i in range(n):
        for j in range(n):
            terms.extend(
                [
                    f.x_edges[i, j],
                    -f.x_edges[(i - 1) % n, j],
                    f.y_edges[i, j],
                    -f.y_edges[i, (j - 1) % n],
                ]
            )
    assert math.fsum(terms) == 0.0


@pytest.mark.parametrize("kind,beta", [("gl", 2.0), ("fh", 5.0)])
def test_residual_matches_loop_oracle(kind, beta):
    # h = 1 keeps all residual terms O(1), so absolute 1e-13 is a roundoff
    # level comparison rather than a relative one
    grid = make_grid(4, 4.0)
    kernel = build_kernel(KernelSpec(shape="bump", support_radius=1.2), grid)
    p = make_potential(kind, beta=beta)
    rng = np.random.default_rng(23)
    rho0 = field_from_array(grid, rng.uniform(-0.8, 0.8, (4, 4)))
    state = initial_state(rho0, kernel)
    params = SchemeParams(dt=0.5, beta=beta)
    rho_next = field_from_array(grid, rng.uniform(-0.8, 0.8, (4, 4)))
    r = residual(rho_next, state, params, kernel, p)
    oracle = oracle_residual(
        rho_next.values, rho0.values, state.conv_curr.values, grid, params.dt, beta, p
    )
    assert np.max(np.abs(r.values - oracle)) <= 1e-13


@pytest.mark.parametrize("solver", ["picard", "damped_newton"])
@pytest.mark.parametrize("kind", ["gl", "fh"])
def test_step_zero_field_is_fixed_point(solver, kind):
    grid = make_grid(8, 1.0)
    kernel = build_kernel(KernelSpec(shape="bump", support_radius=0.3), grid)
    p = make_potential(kind, beta=5.0)
    params = SchemeParams(dt=0.1, beta=5.0, solver=solver)
    state = initial_state(constant_field(grid, 0.0), kernel)
    new_state, report = step(state, params, kernel, p)
    assert np.array_equal(new_state.rho_curr.values, state.rho_curr.values)
    assert report.solver_iters == 1


@pytest.mark.parametrize("solver", ["picard", "damped_newton"])
def test_step_constants_stay_constant(solver):
    grid = make_grid(8, 1.0)
    kernel = build_kernel(KernelSpec(shape="bump", support_radius=0.3), grid)
    p = make_potential("gl", beta=2.0)
    params = SchemeParams(dt=0.5, beta=2.0, solver=solver)
    state = initial_state(constant_field(grid, 0.6), kernel)
    report = None
    for _ in range(20):
        state, report = step(state, params, kernel, p, prev_report=report)
        assert np.max(np.abs(state.rho_curr.values - 0.6)) <= 1e-12


def test_step_fixed_point_verified_by_oracle():
    grid = make_grid(4, 1.0)
    kernel = build_kernel(KernelSpec(shape="bump", support_radius=0.3), grid)
    p = make_potential("gl", beta=2.0)
    params = SchemeParams(dt=0.01, beta=2.0, solver="damped_newton", tol=1e-13)
    rho0 = init_random_perturbation(grid, 0.3, seed=8)
    state = initial_state(rho0, kernel)
    new_state, report = step(state, params, kernel, p)
    oracle = oracle_residual(
        new_state.rho_curr.values,
        rho0.values,
        state.conv_curr.values,
        grid,
        params.dt,
        2.0,
        p,
    )
    # flux finalization perturbs the solver result by at most dt * tol
    assert np.max(np.abs(oracle)) <= 10 * params.tol / params.dt * 1e-2 + 1e-12


@pytest.mark.parametrize("kind,beta", [("fh", 5.0), ("gl", 5.0)])
def test_short_run_respects_theorems(kind, beta):
    grid = make_grid(16, 1.0)
    kernel = build_kernel(KernelSpec(shape="bump", support_radius=0.25), grid)
    p = make_potential(kind, beta=beta)
    params = SchemeParams(dt=1e-2, beta=beta, solver="damped_newton")
    state = initial_state(init_random_perturbation(grid, 0.05, seed=42), kernel)
    report = None
    mass0 = float(np.sum(state.rho_curr.values))
    for _ in range(25):
        prev_mass = float(np.sum(state.rho_curr.values))
        state, report = step(state, params, kernel, p, prev_report=report)
        assert report.max_abs_rho <= 1.0 + 1e-9
        assert abs(report.mass_raw - prev_mass) <= 1e-10
        assert report.inner_w_check <= 1e-10
        assert report.theorem2_ok
    assert abs(float(np.sum(state.rho_curr.values)) - mass0) <= 1e-9


def test_solver_independence():
    grid = make_grid(8, 1.0)
    kernel = build_kernel(KernelSpec(shape="bump", support_radius=0.3), grid)
    p = make_potential("gl", beta=2.0)
    # tol and dt must be chosen together for picard: its residual is the
    # iterate move amplified by 1/dt, and moves below 1e-13 trip the
    # stagnation guard, so tol/dt must stay above ~1e-13/dt
    tol = 1e-9
    rho0 = init_random_perturbation(grid, 0.2, seed=5)
    state = initial_state(rho0, kernel)
    out = {}
    for solver in ("picard", "damped_newton"):
        params = SchemeParams(dt=5e-3, beta=2.0, solver=solver, tol=tol, max_iter=800)
        new_state, _ = step(state, params, kernel, p)
        out[solver] = new_state.rho_curr.values
    assert np.max(np.abs(out["picard"] - out["damped_newton"])) <= 10 * tol


def test_step_beta_mismatch_rejected():
    grid, kernel, p, state = small_setup(kind="gl", beta=2.0)
    params = SchemeParams(dt=0.1, beta=3.0)
    with pytest.raises(ConfigurationError):
        step(state, params, kernel, p)


def test_step_failure_carries_best_residual():
    grid, kernel, p, state = small_setup(kind="gl", beta=2.0, amp=0.4, seed=9)
    params = SchemeParams(dt=0.5, beta=2.0, solver="damped_newton", max_iter=1, tol=1e-14)
    with pytest.raises(StepFailure) as exc:
        step(state, params, kernel, p)
    assert exc.value.best_residual > 0
    assert exc.value.iterations >= 1


def test_scheme_params_validation():
    with pytest.raises(ConfigurationError):
        SchemeParams(dt=0.0, beta=1.0)
    with pytest.raises(ConfigurationError):
        SchemeParams(dt=0.1, beta=1.0, solver="cg")
    with pytest.raises(ConfigurationError):
        SchemeParams(dt=0.1, beta=1.0, tol=1e-16)
    with pytest.raises(ConfigurationError):
        SchemeParams(dt=0.1, beta=1.0, damping=0.0)
    with pytest.raises(ConfigurationError):
        SchemeParams(dt=0.1, beta=1.0, max_iter=0)


def test_naive_step_constant_unchanged():
    grid, kernel, _, _ = small_setup(kind="gl")
    state = initial_state(constant_field(grid, 0.25), kernel)
    out = naive_explicit_step(state, dt=1e-4, beta=5.0, kernel=kernel)
    assert np.max(np.abs(out.rho_curr.values - 0.25)) <= 1e-14


def test_naive_step_conserves_mass():
    grid = make_grid(16, 1.0)
    kernel = build_kernel(KernelSpec(shape="bump", support_radius=0.25), grid)
    state = initial_state(init_random_perturbation(grid, 0.05, seed=1), kernel)
    for _ in range(20):
        prev = float(np.sum(state.rho_curr.values))
        state = naive_explicit_step(state, dt=0.2 * grid.h ** 2, beta=5.0, kernel=kernel)
        assert abs(float(np.sum(state.rho_curr.values)) - prev) <= 1e-12
