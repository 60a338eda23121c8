import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from maflow.errors import BadSpacing, EmptyInterior, NoIntersection
from maflow.grid import (
    INITIAL_SLICE,
    INTERIOR,
    SPATIAL_BOUNDARY,
    DomainSpec,
    boundary_projection,
    boundary_projection_many,
    build_grid,
    classify_parabolic_boundary,
)

DISC = DomainSpec("ball", 1, 1.0)


def test_coarse_disc_lattice():
    g = build_grid(DISC, 0.5, 0.1, 0.2)
    assert g.n_space == 9
    assert g.n_times == 3
    assert sorted(set(g.points[:, 0])) == [-0.5, 0.0, 0.5]


def test_h2_has_no_interior():
    with pytest.raises(EmptyInterior):
        build_grid(DISC, 2.0, 0.1, 0.2)


@pytest.mark.parametrize("h,dt,T", [(0.0, 0.1, 1.0), (-0.1, 0.1, 1.0), (0.1, 0.0, 1.0), (0.1, 0.1, -1.0),
                                    (0.1, 0.3, 1.0)])
def test_bad_spacing(h, dt, T):
    with pytest.raises(BadSpacing):
        build_grid(DISC, h, dt, T)


def test_classification():
    g = build_grid(DISC, 0.25, 0.1, 0.2)
    cls = classify_parabolic_boundary(g)
    origin = int(np.argmin(np.sum(g.points**2, axis=1)))
    assert cls[0, origin] == INITIAL_SLICE
    assert cls[1, origin] == INTERIOR
    # nodes within one axis step of the circle are spatial boundary
    near = np.flatnonzero(DISC.rho(g.points) > -g.h * g.kappa)
    assert np.all(cls[1, near] == SPATIAL_BOUNDARY)
    assert set(np.unique(cls)) <= {INTERIOR, SPATIAL_BOUNDARY, INITIAL_SLICE}
    assert np.all(cls[0] == INITIAL_SLICE)


def test_interior_arms_stay_in_closure():
    g = build_grid(DISC, 0.1, 0.1, 0.2)
    P = g.points[g.interior]
    for e in np.eye(2):
        for s in (1, -1):
            assert np.all(DISC.rho(P + s * g.h * e) <= 1e-12)


def test_boundary_projection_examples():
    assert boundary_projection(DISC, [0.0, 0.0], [0.3, -0.4])[0] == pytest.approx(1.0)
    assert boundary_projection(DISC, [0.5, 0.0], [1.0, 0.0])[0] == pytest.approx(0.5)
    assert boundary_projection(DISC, [0.5, 0.0], [0.0, 1.0])[0] == pytest.approx(math.sqrt(0.75))
    with pytest.raises(NoIntersection):
        boundary_projection(DISC, [1.5, 0.0], [1.0, 0.0])


@settings(max_examples=100, deadline=None)
@given(st.sampled_from([DomainSpec("ball", 2, 1.3), DomainSpec("polydisc", 2, (1.0, 0.5)), DISC]),
       st.lists(st.floats(-1, 1), min_size=8, max_size=8), st.lists(st.floats(-1, 1), min_size=4, max_size=4))
def test_projection_lands_on_boundary(dom, zs, vs):
    d = 2 * dom.n
    z = np.array(zs[:d]) * 0.4 * min(dom.radii)
    v = np.array(vs[:d])
    if np.linalg.norm(v) < 1e-3:
        v = np.eye(d)[0]
    s, p = boundary_projection(dom, z, v)
    assert 0 < s <= dom.diameter + 1e-12
    assert abs(dom.rho(p)) < 1e-10 or dom.kind == "polydisc" and np.all(dom.rho(p) <= 1e-10)
    assert boundary_projection_many(dom, z[None], (v / np.linalg.norm(v))[None])[0] == pytest.approx(s)


def test_refinement_increases_interior():
    counts = [build_grid(DISC, h, 0.1, 0.2).interior.size for h in (0.4, 0.2, 0.1, 0.05)]
    assert counts == sorted(counts) and len(set(counts)) == 4


def test_lookup_round_trip():
    g = build_grid(DomainSpec("ball", 2, 1.0), 0.25, 0.1, 0.1)
    assert np.array_equal(g.lookup(g.lattice), np.arange(g.n_space))
    assert g.lookup(np.full((1, 4), 100))[0] == -1


def test_node_order_and_metadata():
    g = build_grid(DISC, 0.25, 0.05, 0.1)
    assert g.n_nodes == 3 * g.n_space
    assert np.allclose(g.times, [0.0, 0.05, 0.1])
    meta = g.metadata()
    assert meta["nodes"] == g.n_nodes and meta["domain"]["kind"] == "ball"
    assert DomainSpec.from_dict(meta["domain"]) == DISC


def test_polydisc_grid():
    g = build_grid(DomainSpec("polydisc", 2, (1.0, 1.0)), 0.25, 0.1, 0.1)
    assert g.interior.size > 0
    assert np.all(np.abs(g.points[g.interior]).max(axis=1) < 1.0)
