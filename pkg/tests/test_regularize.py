import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from maflow.errors import KernelOutOfRange, TooFewSlices
from maflow.fields import SpaceTimeField, second_time_difference
from maflow.grid import DomainSpec, build_grid
from maflow.harness import exact_case, slack
from maflow.regularize import (
    bump,
    inf_convolution_time,
    kernel_moment,
    mollify_defect,
    semiconcavity_constant,
    semiconvexity_floor,
    shifted_inf_F,
    sup_convolution_time,
    time_mollify,
)

DISC = DomainSpec("ball", 1, 1.0)


@pytest.fixture(scope="module")
def g():
    # dt = 0.005 so that eps^2 = 0.01 is a whole number of steps
    return build_grid(DISC, 0.25, 0.005, 1.0)


def field(g, fn):
    return SpaceTimeField.from_function(g, lambda t, p: fn(t) + 0 * p[..., 0])


def test_constants_fixed(g):
    c = SpaceTimeField.constant(g, 2.5)
    assert np.allclose(sup_convolution_time(c, 0.1).values, 2.5)
    assert np.allclose(inf_convolution_time(c, 0.1).values, 2.5)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", KernelOutOfRange)
        assert np.allclose(time_mollify(c, 0.1).values, 2.5)


def test_sup_convolution_of_t(g):
    eps = 0.1
    out, shift = sup_convolution_time(field(g, lambda t: t), eps, return_shift=True)
    t = g.times
    ok = t + eps**2 <= g.T + 1e-12
    assert np.allclose(out.values[ok, 0], t[ok] + eps**2 / 2, atol=1e-12)
    assert np.allclose(shift[ok], eps**2)


def test_inf_convolution_of_t(g):
    eps = 0.1
    out = inf_convolution_time(field(g, lambda t: t), eps)
    t = g.times
    ok = t - eps**2 >= -1e-12
    assert np.allclose(out.values[ok, 0], t[ok] - eps**2 / 2, atol=1e-12)


def test_large_eps_gives_time_max(g):
    u = field(g, lambda t: np.sin(3 * t))
    out = sup_convolution_time(u, 1e4)
    assert np.allclose(out.values, u.values.max(axis=0), atol=1e-6)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from([0.05, 0.1, 0.3]))
def test_convolution_contracts(seed, eps):
    g = build_grid(DISC, 0.5, 0.05, 1.0)
    rng = np.random.default_rng(seed)
    u = SpaceTimeField(g, rng.normal(size=(g.n_times, g.n_space)))
    sup = sup_convolution_time(u, eps)
    inf = inf_convolution_time(u, eps)
    assert np.all(sup.values >= u.values) and np.all(inf.values <= u.values)
    assert np.all(second_time_difference(sup) >= -1 / eps**2 - 1e-9)
    assert np.all(second_time_difference(inf) <= 1 / eps**2 + 1e-9)
    # ladders are monotone in eps
    assert np.all(sup_convolution_time(u, 2 * eps).values >= sup.values)
    assert np.all(inf_convolution_time(u, 2 * eps).values <= inf.values)


def test_shifted_inf_F():
    F = lambda t, p, r: t + r
    Fe = shifted_inf_F(F, 0.2)
    assert Fe(0.5, np.zeros((1, 2)), 1.0) == pytest.approx(1.3)
    assert Fe.radius == 0.2


def test_bump_and_moment():
    assert bump(np.array([0.0]))[0] == pytest.approx(math.exp(-1))
    assert np.all(bump(np.array([-1.0, 1.0, 2.0])) == 0)
    assert kernel_moment(order=1) == pytest.approx(0.0, abs=1e-12)
    assert 0 < kernel_moment(order=2) < 1 / 3


@pytest.mark.filterwarnings("ignore::maflow.errors.KernelOutOfRange")
def test_mollify_linear_exact(g):
    u = field(g, lambda t: t)
    out, clamped = time_mollify(u, 0.1, return_clamped=True)
    assert np.allclose(out.values[~clamped], u.values[~clamped], atol=1e-12)


@pytest.mark.filterwarnings("ignore::maflow.errors.KernelOutOfRange")
def test_mollify_quadratic_second_moment(g):
    eps = 0.1
    u = field(g, lambda t: t**2)
    out, clamped = time_mollify(u, eps, return_clamped=True)
    mu2 = kernel_moment(order=2)
    t = g.times[~clamped]
    # linear interpolation in t adds at most dt^2/4 to the quadrature value
    expect = t**2 * (1 + eps**2 * mu2)
    assert np.allclose(out.values[~clamped, 0], expect, atol=g.dt**2 / 4 + 1e-6)


def test_mollify_warns_near_T(g):
    with pytest.warns(KernelOutOfRange):
        time_mollify(field(g, lambda t: t), 0.1)


def test_semiconcavity_examples(g):
    assert semiconcavity_constant(field(g, lambda t: -(t**2))) == 0.0
    assert semiconcavity_constant(field(g, lambda t: t**2)) == pytest.approx(2.0)
    assert semiconcavity_constant(field(g, lambda t: 3 * t - 1)) == pytest.approx(0.0, abs=1e-9)
    assert semiconvexity_floor(field(g, lambda t: -(t**2))) == pytest.approx(-2.0)
    short = build_grid(DISC, 0.25, 0.1, 0.1)
    with pytest.raises(TooFewSlices):
        semiconcavity_constant(SpaceTimeField.constant(short, 0.0))


def test_sup_convolution_keeps_subsolutions():
    ec = exact_case("tquad")
    grid = ec.grid()
    from maflow.harness import sup_convolution_entries
    from maflow.checkers import check_pluripotential_subsolution

    for label, ue, pe in sup_convolution_entries(ec, grid, (0.05, 0.1, 0.2)):
        assert check_pluripotential_subsolution(ue, pe, tol=slack(grid)).verdict, label


def test_mollify_defect_decays():
    ec = exact_case("tconvex")
    grid = ec.grid()
    u = ec.exact_field(grid)
    cs = [mollify_defect(u, ec.problem, eps, tol=1e-9)[0] for eps in (0.2, 0.1, 0.05)]
    assert cs[0] > cs[1] > cs[2] > 0
    # the defect scales like eps^2
    assert cs[0] / cs[1] == pytest.approx(4.0, rel=0.15)
