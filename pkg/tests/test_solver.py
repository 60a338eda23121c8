import math

import numpy as np
import pytest

from maflow.errors import DegenerateG, InnerDivergence
from maflow.fields import SliceField, linf_distance
from maflow.grid import DomainSpec, build_grid
from maflow.harness import exact_case
from maflow.solver import FlowProblem, SolverParams, boundary_residual, implicit_step, monotone_in_r, solve_flow

from conftest import sq

DISC = DomainSpec("ball", 1, 1.0)


def test_params_validation():
    with pytest.raises(ValueError):
        SolverParams(tol=0)
    with pytest.raises(ValueError):
        SolverParams(damping=1.5)
    with pytest.raises(ValueError):
        SolverParams(method="magic")


def test_quad1_coarse():
    ec = exact_case("quad1")
    grid = ec.grid(0.2, 0.01)
    phi = solve_flow(ec.problem, grid)
    assert linf_distance(phi, ec.exact_field(grid)) <= 0.05
    assert boundary_residual(phi, ec.problem) == 0.0


def test_quad1_newton(quad1, quad1_grid):
    phi = solve_flow(quad1.problem, quad1_grid, SolverParams(method="newton"))
    assert linf_distance(phi, quad1.exact_field(quad1_grid)) < 1e-10


def test_tquad_matches():
    ec = exact_case("tquad")
    grid = ec.grid()
    phi = solve_flow(ec.problem, grid)
    assert linf_distance(phi, ec.exact_field(grid)) < 1e-6


def test_boundary_residual_examples(quad1, quad1_grid, quad1_exact):
    assert boundary_residual(quad1_exact, quad1.problem) == 0.0
    assert boundary_residual(quad1_exact + 1.0, quad1.problem) == pytest.approx(1.0)


def test_degenerate_g():
    ec = exact_case("degen-check")
    grid = ec.grid()
    with pytest.raises(DegenerateG):
        solve_flow(ec.problem, grid)
    prev = SliceField(grid, 0, ec.problem.h_at(0.0, grid.points))
    with pytest.raises(DegenerateG):
        implicit_step(prev, grid.dt, ec.problem)


def test_validation_rejects_bad_data():
    grid = build_grid(DISC, 0.2, 0.05, 0.1)
    with pytest.raises(ValueError):
        FlowProblem(DISC, "-r", "1", "absz2", 0.1).validate(grid)
    with pytest.raises(ValueError):
        FlowProblem(DISC, "r", "1", "-absz2", 0.1).validate(grid)
    assert monotone_in_r(lambda t, p, r: np.tanh(r) + t, grid.points, grid.times).verdict


def test_large_step_reaches_elliptic_solution():
    """One huge step with F(r) = r lands on the solution of log MA(u) = u + log g."""
    grid = build_grid(DISC, 0.2, 1e6, 1e6)
    # MA(|z|^2 + 1) = 4 = g exp(|z|^2 + 1) for g = 4 exp(-|z|^2 - 1); initial data 1.5|z|^2 + 1 is more curved
    prob = FlowProblem(DISC, "r", "4*exp(-absz2 - 1)", "absz2 + 1 + 0.5*exp(-t)*absz2", grid.T)
    prev = SliceField(grid, 0, prob.h_at(0.0, grid.points))
    out = implicit_step(prev, grid.T, prob, SolverParams(method="newton", tol=1e-10))
    assert np.allclose(out.values, sq(grid.points) + 1.0, atol=1e-5)


def test_inner_divergence_raised():
    grid = build_grid(DISC, 0.2, 0.5, 0.5)
    prob = FlowProblem(DISC, "0", "2", "absz2", grid.T)
    prev = SliceField(grid, 0, prob.h_at(0.0, grid.points))
    # an undamped sweep with dt/h^2 this large oscillates and grows
    with pytest.raises(InnerDivergence):
        implicit_step(prev, grid.T, prob, SolverParams(damping=1.0, max_iter=50))


def test_step_log(quad1, quad1_grid):
    rows = []
    solve_flow(quad1.problem, quad1_grid, log_rows=rows)
    assert [r.step for r in rows] == list(range(1, quad1_grid.n_times))
    assert all(r.residual < 1e-8 for r in rows)


def test_boundary_shift_moves_solution_by_at_most_delta(quad1, quad1_grid, quad1_solution):
    p = quad1.problem
    lifted = FlowProblem(p.domain, p.F, p.g, "log(2)*t + absz2 + 0.1", p.T)
    phi = solve_flow(lifted, quad1_grid)
    assert linf_distance(phi, quad1_solution) <= 0.1 + 1e-12


def test_smaller_F_gives_larger_solution(quad1, quad1_grid, quad1_solution):
    p = quad1.problem
    tol = quad1_grid.h**2 + quad1_grid.dt
    for F in ("-0.3", "-0.3*absz2", "-0.1*exp(t)"):
        phi = solve_flow(FlowProblem(p.domain, F, p.g, p.h, p.T), quad1_grid)
        assert np.all(phi.values >= quad1_solution.values - tol)


def test_step_is_monotone_in_boundary_values(quad1, quad1_grid):
    p = quad1.problem
    prev = SliceField(quad1_grid, 0, p.h_at(0.0, quad1_grid.points))
    # the step reads h only at boundary nodes, so this raises boundary values on the right half
    raised = FlowProblem(p.domain, p.F, p.g, "log(2)*t + absz2 + 0.2*max(x1, 0)", p.T)
    a = implicit_step(prev, quad1_grid.dt, p).values
    b = implicit_step(prev, quad1_grid.dt, raised).values
    I = quad1_grid.interior
    assert np.all(b[I] >= a[I] - 1e-12)
    assert np.max(b[I] - a[I]) > 0
