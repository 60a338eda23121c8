import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from maflow.checkers import check_pluripotential_subsolution
from maflow.envelope import perron_envelope, psh_envelope, psh_envelope_field
from maflow.errors import EmptyFamily, MaxIterExceeded
from maflow.fields import SliceField, SpaceTimeField
from maflow.grid import DomainSpec, build_grid
from maflow.harness import exact_case, slack
from maflow.regularize import semiconcavity_constant
from maflow.stencil import lambda_min

from conftest import sq

DISC = DomainSpec("ball", 1, 1.0)
GRID = build_grid(DISC, 0.2, 0.1, 0.3)
TOL = 1e-10


def S(values):
    return SliceField(GRID, 0, values)


def env(values):
    return psh_envelope(S(values), tol=TOL).values


def random_obstacle(seed):
    rng = np.random.default_rng(seed)
    P = GRID.points
    c = rng.normal(size=4)
    return c[0] * sq(P) + c[1] * P[:, 0] + c[2] * np.cos(3 * P[:, 1] + c[3]) + 0.3 * rng.normal(size=GRID.n_space)


def test_psh_obstacle_is_fixed():
    v = sq(GRID.points)
    assert np.allclose(env(v), v, atol=1e-12)


def test_constant_obstacle_is_fixed():
    assert np.allclose(env(np.full(GRID.n_space, 0.7)), 0.7)


def test_radial_oracle():
    ec = exact_case("radial-env")
    for h in (0.1, 0.05):
        g = build_grid(ec.problem.domain, h, 0.1, 0.1)
        out = psh_envelope(SliceField(g, 0, -sq(g.points)), tol=TOL).values[g.interior]
        assert np.all(np.abs(out + 1.0) <= 2 * h)


def test_envelope_contract():
    v = random_obstacle(0)
    u, info = psh_envelope(S(v), tol=TOL, return_info=True)
    assert info.converged
    I = GRID.interior
    assert np.all(u.values <= v + 1e-15)
    lam = lambda_min(u)
    assert np.nanmin(lam) >= -1e-6
    # complementarity: touching the obstacle or flat in some direction
    gap = v[I] - u.values[I]
    assert np.all((gap <= 1e-8) | (lam <= 1e-6))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_idempotent_and_monotone(seed):
    v = random_obstacle(seed)
    w = v + np.abs(np.random.default_rng(seed + 1).normal(size=v.size))
    Pv, Pw = env(v), env(w)
    assert np.allclose(env(Pv), Pv, atol=1e-7)
    assert np.all(Pv <= Pw + 1e-9)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000))
def test_concave_in_obstacle(seed):
    v1, v2 = random_obstacle(seed), random_obstacle(seed + 7)
    mid = env(0.5 * (v1 + v2))
    assert np.all(mid >= 0.5 * (env(v1) + env(v2)) - 1e-7)


def test_gauss_seidel_agrees():
    v = random_obstacle(3)
    a = psh_envelope(S(v), tol=TOL).values
    b = psh_envelope(S(v), tol=TOL, mode="gauss-seidel").values
    assert np.allclose(a, b, atol=1e-6)


def test_max_iter_carries_last_iterate():
    with pytest.raises(MaxIterExceeded) as info:
        psh_envelope(S(-sq(GRID.points)), tol=TOL, max_iter=3)
    assert info.value.last.values.shape == (GRID.n_space,)
    assert info.value.info.iterations == 3


def test_semiconcavity_transfer():
    t = GRID.times[:, None]
    v = SpaceTimeField(GRID, -(t**2) - sq(GRID.points)[None, :] + 0.2 * np.cos(3 * GRID.points[:, 0])[None, :] * t)
    Pv = psh_envelope_field(v, tol=TOL)
    assert semiconcavity_constant(Pv) <= semiconcavity_constant(v) + 1e-6


def test_perron_examples(quad1, quad1_grid, quad1_exact):
    ex = quad1_exact
    assert np.array_equal(perron_envelope([ex]).values, ex.values)
    fam = [ex - c for c in (0.0, 0.5, 1.0)]
    assert np.array_equal(perron_envelope(fam).values, ex.values)
    with pytest.raises(EmptyFamily):
        perron_envelope([])


def test_perron_of_subsolutions_is_subsolution(quad1, quad1_grid, quad1_exact):
    tol = slack(quad1_grid)
    t = quad1_grid.times[:, None]
    r2 = np.sum(quad1_grid.points**2, axis=1)[None, :]
    u = quad1_exact - 0.1 * t
    w = quad1_exact + 1.0 * (r2 - 0.6)
    for f in (u, w):
        assert check_pluripotential_subsolution(f, quad1.problem, tol=tol).verdict
    m = perron_envelope([u, w])
    assert check_pluripotential_subsolution(m, quad1.problem, tol=2 * tol).verdict
