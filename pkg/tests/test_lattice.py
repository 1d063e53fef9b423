import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sseconc.lattice import build_lattice, canonical_separation, site_pairs_at_separation


def degrees(g):
    return np.bincount(g.bonds.ravel(), minlength=g.N)


@pytest.mark.parametrize("Lx, Ly, nbonds, deg", [(4, 4, 32, 4), (8, 1, 8, 2), (32, 32, 2048, 4), (3, 5, 30, 4)])
def test_bond_counts_and_degrees(Lx, Ly, nbonds, deg):
    g = build_lattice(Lx, Ly)
    assert g.N == Lx * Ly
    assert len(g.bonds) == nbonds
    assert np.all(degrees(g) == deg)


def test_site_index_convention():
    g = build_lattice(5, 3)
    for i in range(g.N):
        x, y = g.coords(i)
        assert i == x + 5 * y and 0 <= x < 5 and 0 <= y < 3
        assert g.site(x, y) == i


@pytest.mark.parametrize("args", [(0, 4), (4, 0), (1, 4), (2, 1)])
def test_rejects_bad_extents(args):
    with pytest.raises(ValueError):
        build_lattice(*args)


def test_open_dimer_has_one_bond():
    g = build_lattice(2, 1, periodic=False)
    assert g.bonds.tolist() == [[0, 1]]


def test_nearest_neighbour_pairs_are_bonds():
    g = build_lattice(4, 4)
    bonds = {tuple(sorted(b)) for b in g.bonds.tolist()}
    pairs = site_pairs_at_separation(g, (1, 0))
    assert len(pairs) == 16
    assert all(tuple(sorted(p)) in bonds for p in pairs)


def test_periodic_aliasing():
    g = build_lattice(4, 4)
    assert canonical_separation(g, (-2, -2)) == (2, 2)
    assert sorted(site_pairs_at_separation(g, (2, 2))) == sorted(site_pairs_at_separation(g, (-2, -2)))
    assert len(site_pairs_at_separation(g, (2, 2))) == 16


def test_ring_pairs():
    g = build_lattice(8, 1)
    pairs = site_pairs_at_separation(g, (3, 0))
    assert len(pairs) == 8
    assert all((j - i) % 8 == 3 for i, j in pairs)


@pytest.mark.parametrize("sep", [(0, 0), (4, 0), (0, 4), (8, -4)])
def test_zero_separation_rejected(sep):
    with pytest.raises(ValueError):
        site_pairs_at_separation(build_lattice(4, 4), sep)


def test_separation_index_matches_pairs():
    g = build_lattice(4, 3)
    idx = g.separation_index()
    for sep in [(1, 0), (2, 1), (3, 2)]:
        r = sep[0] + g.Lx * sep[1]
        assert sorted(zip(*np.nonzero(idx == r))) == sorted(site_pairs_at_separation(g, sep))


@settings(max_examples=40, deadline=None)
@given(Lx=st.integers(3, 7), Ly=st.sampled_from([1, 2, 3, 4, 5]), dx=st.integers(-9, 9), dy=st.integers(-9, 9),
       tx=st.integers(0, 6), ty=st.integers(0, 4))
def test_translation_closure(Lx, Ly, dx, dy, tx, ty):
    g = build_lattice(Lx, Ly)
    if (dx % Lx, dy % Ly) == (0, 0):
        return
    pairs = site_pairs_at_separation(g, (dx, dy))
    assert len(pairs) == g.N

    def shift(i):
        x, y = g.coords(i)
        return g.site(x + tx, y + ty)

    moved = sorted((shift(i), shift(j)) for i, j in pairs)
    assert moved == sorted(pairs)
