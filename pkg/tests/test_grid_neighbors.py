import numpy as np
import pytest

from levyswarm.grid import Grid2D, GridError
from levyswarm.neighbors import minimum_image, pairs_brute_force, pairs_within


@pytest.mark.parametrize("periodic", [False, True])
@pytest.mark.parametrize("radius", [3.0, 11.0, 45.0])
def test_cell_list_matches_brute_force(periodic, radius, rng):
    box = (100.0, 60.0)
    pos = rng.random((400, 2)) * box
    i, j, d = pairs_within(pos, radius, box, periodic)
    bi, bj, bd = pairs_brute_force(pos, radius, box, periodic)
    np.testing.assert_array_equal(i, bi)
    np.testing.assert_array_equal(j, bj)
    np.testing.assert_allclose(d, bd, atol=1e-12)


def test_pairs_sorted_and_ordered(rng):
    pos = rng.random((200, 2)) * 50
    i, j, _ = pairs_within(pos, 6.0, (50, 50), True)
    assert np.all(i < j)
    key = i * 200 + j
    assert np.all(np.diff(key) > 0)


def test_minimum_image():
    d = minimum_image(np.array([[90.0, -55.0]]), (100.0, 100.0), True)
    np.testing.assert_allclose(d, [[-10.0, 45.0]])
    np.testing.assert_allclose(minimum_image(np.array([[90.0, 0.0]]), (100.0, 100.0), False), [[90.0, 0.0]])


def test_degenerate_inputs():
    assert pairs_within(np.zeros((1, 2)), 1.0, (10, 10), False)[0].size == 0
    assert pairs_within(np.zeros((3, 2)), 0.0, (10, 10), False)[0].size == 0


@pytest.mark.parametrize("kw", [dict(nx=15), dict(nx=17), dict(lx=0.0), dict(boundary_mode="dirichlet")])
def test_grid_validation(kw):
    base = dict(nx=32, ny=32, lx=1.0, ly=1.0)
    base.update(kw)
    with pytest.raises(GridError):
        Grid2D(**base)


def test_grid_geometry():
    g = Grid2D(100, 80, 200.0, 160.0)
    assert g.hx == 2.0 and g.hy == 2.0 and g.cell_area == 4.0 and g.area == 32000.0
    assert g.x[0] == 1.0 and g.x[-1] == 199.0
    assert g.integrate(np.ones(g.shape)) == pytest.approx(g.area)


def test_histogram_counts_edges():
    g = Grid2D(16, 16, 1.0, 1.0)
    h = g.histogram(np.array([[0.0, 0.0], [1.0, 1.0], [0.5, 0.5]]))
    assert h.sum() == 3
    assert h[0, 0] == 1 and h[-1, -1] == 1 and h[8, 8] == 1
