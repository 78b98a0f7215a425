import pytest

from pipelines import geometry
from pipelines.errors import ParameterError
from pipelines.lattice import DIHEDRAL, Symmetry, Torus


def test_flat_and_coords_are_inverse():
    torus = Torus(7)
    for i in range(torus.size):
        assert torus.flat(torus.coords(i)) == i
    assert torus.flat((-1, -1)) == torus.flat((6, 6))


def test_add_wraps_around():
    torus = Torus(5)
    assert torus.add((4, 0), (1, -1)) == (0, 4)


def test_edges_and_neighbor_table():
    torus = Torus(5)
    assert len(torus.edges()) == 2 * torus.size
    assert list(torus.neighbor_table()[0]) == [1, 5, 4, 20]


@pytest.mark.parametrize("n, L", [(3, 9), (4, 8), (5, 10)])
def test_check_particles_rejects_small_parameters(n, L):
    with pytest.raises(ParameterError):
        Torus(L).check_particles(n)


def test_torus_side_must_be_positive():
    with pytest.raises(ParameterError):
        Torus(1)


@pytest.mark.parametrize("d", range(len(DIHEDRAL)))
def test_symmetry_inverse(d):
    torus = Torus(11)
    g = Symmetry(d, (2, 3))
    h = g.compose(g.inverse()).reduced(torus)
    assert h == Symmetry(0, (0, 0))
    for s in [(0, 0), (3, 7), (10, 1)]:
        assert g.inverse().apply(g.apply(s, torus), torus) == s


@pytest.mark.parametrize("d", range(len(DIHEDRAL)))
def test_of_square_preserves_the_square(d):
    torus = Torus(11)
    anchor, n = (2, 5), 4
    square = {torus.site(anchor[0] + x, anchor[1] + y) for x, y in geometry.square(n)}
    g = Symmetry.of_square(anchor, n, d)
    assert {g.apply(s, torus) for s in square} == square


@pytest.mark.parametrize("d", range(len(DIHEDRAL)))
def test_about_fixes_anchor(d):
    torus = Torus(9)
    assert Symmetry.about((3, 4), d).apply((3, 4), torus) == (3, 4)


def test_permutation_matches_apply():
    torus = Torus(6)
    g = Symmetry(5, (1, 2))
    perm = g.permutation(torus)
    for i in range(torus.size):
        assert perm[i] == torus.flat(g.apply(torus.coords(i), torus))
