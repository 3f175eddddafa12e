from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from seglab.bc_catalog import get_bc
from seglab.grid import (
    BoundaryDataError,
    BoundarySpec,
    Grid,
    ScalarField,
    boundary_values,
    embed_boundary,
    make_grid,
    sample_boundary,
)

from conftest import const


def test_paper_grid_spacing():
    g = make_grid(2, [(-1, 1), (-1, 1)], (201, 201))
    assert g.spacing == pytest.approx((0.01, 0.01), abs=1e-15)
    assert g.shape == (201, 201)


def test_smallest_line_grid():
    g = make_grid(1, [(0, 1)], 3)
    np.testing.assert_array_equal(g.axes[0], [0.0, 0.5, 1.0])


def test_boundary_and_interior_counts_11():
    g = make_grid(2, [(-1, 1)], 11)
    assert g.boundary_index.size == 40
    assert g.interior_index.size == 81


@pytest.mark.parametrize(
    "dim, extents, n",
    [(2, [(-1, 1)], 2), (1, [(1, 0)], 5), (1, [(0, 0)], 5), (3, [(0, 1)] * 3, 5), (1, [(0, 1)], 4.5)],
)
def test_make_grid_rejects(dim, extents, n):
    with pytest.raises(ValueError):
        make_grid(dim, extents, n)


@given(nx=st.integers(3, 30), ny=st.integers(3, 30))
def test_boundary_interior_partition(nx, ny):
    g = make_grid(2, [(0, 2), (-1, 3)], (nx, ny))
    b, i = set(g.boundary_index.tolist()), set(g.interior_index.tolist())
    assert not b & i
    assert b | i == set(range(g.size))
    assert len(b) == 2 * nx + 2 * ny - 4


@given(nx=st.integers(3, 25), ny=st.integers(3, 25), data=st.data())
def test_node_round_trip(nx, ny, data):
    g = make_grid(2, [(-1, 1), (0, 3)], (nx, ny))
    flat = data.draw(st.integers(0, g.size - 1))
    idx = np.unravel_index(flat, g.shape)
    assert g.nearest_node(g.node_coords(flat)) == tuple(int(v) for v in idx)


@given(n=st.integers(3, 50))
def test_node_round_trip_1d(n):
    g = make_grid(1, [(0, 1)], n)
    for k in range(n):
        assert g.nearest_node(g.node_coords(k)) == (k,)


def test_scalar_field_validation(square):
    with pytest.raises(ValueError):
        ScalarField(square, np.zeros((3, 3)))
    bad = np.zeros(square.shape)
    bad[3, 3] = np.nan
    with pytest.raises(ValueError):
        ScalarField(square, bad)
    f = ScalarField(square, np.ones(square.shape))
    assert f.boundary.shape == (80,)
    assert np.all((f + f).values == 2)
    assert np.all((f - f).values == 0)


def test_grid_is_hashable_and_immutable(square):
    assert hash(square) == hash(make_grid(2, [(-1.0, 1.0)], 21))
    with pytest.raises(Exception):
        square.n = (3, 3)
    assert not square.boundary_mask.flags.writeable


def test_constant_spec_sampling(square):
    spec = BoundarySpec(({e: const(1) for e in ("x-", "x+", "y-", "y+")}, {}, {}))
    vals = sample_boundary(spec, square)
    np.testing.assert_array_equal(vals[0], 1.0)
    np.testing.assert_array_equal(vals[1:], 0.0)


def _value_at(spec, grid, point):
    vals = sample_boundary(spec, grid)
    idx = grid.nearest_node(point)
    flat = np.ravel_multi_index(idx, grid.shape)
    k = np.searchsorted(grid.boundary_index, flat)
    assert grid.boundary_index[k] == flat
    return vals[:, k]


def test_bc4_sample():
    g = make_grid(2, [(-1, 1)], 201)
    np.testing.assert_allclose(_value_at(get_bc(4), g, (0.5, 1.0)), [0.5, 0.0, 0.25], atol=1e-15)


def test_bc3_sample():
    g = make_grid(2, [(-1, 1)], 201)
    np.testing.assert_allclose(_value_at(get_bc(3), g, (1.0, 0.0)), [0.0, 0.0, 0.5], atol=1e-15)


def test_product_violation_names_node(square):
    spec = BoundarySpec(tuple({"y+": const(1)} for _ in range(3)), label="bad")
    with pytest.raises(BoundaryDataError, match=r"bad: phi1\*phi2\*phi3 = 1 at node"):
        sample_boundary(spec, square)


def test_negative_trace_rejected(square):
    spec = BoundarySpec(({"x-": const(-0.5)}, {}, {}), label="neg")
    with pytest.raises(BoundaryDataError, match="neg: invalid trace"):
        sample_boundary(spec, square)


def test_unknown_edge_rejected():
    with pytest.raises(ValueError):
        BoundarySpec(({"top": const(1)}, {}, {}))


def test_corner_takes_edge_maximum(square):
    spec = BoundarySpec(({"x-": const(0.3), "y-": const(0.7)}, {}, {}))
    vals = boundary_values(spec, square)
    corner = np.searchsorted(square.boundary_index, 0)
    assert vals[0, corner] == 0.7


def test_corner_product_repair():
    # BC5 corners get (1, 1, 0.3) from the edge maxima; the smallest entry is zeroed
    g = make_grid(2, [(-1, 1)], 11)
    vals = sample_boundary(get_bc(5), g)
    corner = np.searchsorted(g.boundary_index, 0)
    np.testing.assert_array_equal(vals[:, corner], [1.0, 1.0, 0.0])
    assert np.max(np.prod(vals, axis=0)) == 0.0


def test_embed_and_integrate(square):
    full = embed_boundary(square, np.ones(square.boundary_index.size), fill=2.0)
    assert full[0, 0] == 1.0 and full[5, 5] == 2.0
    assert square.integrate(np.ones(square.shape)) == pytest.approx(4.0)
    g1 = make_grid(1, [(0, 1)], 11)
    assert g1.integrate(g1.axes[0]) == pytest.approx(0.5)


def test_grid_direct_construction_validates():
    with pytest.raises(ValueError):
        Grid(((0.0, 1.0),), (3, 3))


def test_nan_trace_rejected(square):
    spec = BoundarySpec(({"x-": const(np.nan)}, {}, {}), label="nan")
    with pytest.raises(BoundaryDataError, match="nan: invalid trace"):
        sample_boundary(spec, square)
