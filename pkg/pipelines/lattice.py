"""
Torus geometry: sites of the L x L torus, its nearest-neighbour edges and the
symmetry group (translations and the eight dihedral maps) used to carry a
result proved for one corner or side over to all the others.
"""
from dataclasses import dataclass
from functools import lru_cache
from typing import List, Tuple

import numpy as np

from pipelines.errors import ParameterError

Site = Tuple[int, int]

# Unit steps in the order +e1, +e2, -e1, -e2.
DIRECTIONS: Tuple[Site, ...] = ((1, 0), (0, 1), (-1, 0), (0, -1))
E1: Site = (1, 0)
E2: Site = (0, 1)

# Integer 2x2 matrices (a, b, c, d) acting as (x, y) -> (a x + b y, c x + d y).
# Indices 0..3 are the rotations by 0, 90, 180, 270 degrees counter-clockwise,
# 4..7 the reflections obtained by composing those rotations with y -> -y.
DIHEDRAL: Tuple[Tuple[int, int, int, int], ...] = (
    (1, 0, 0, 1),
    (0, -1, 1, 0),
    (-1, 0, 0, -1),
    (0, 1, -1, 0),
    (1, 0, 0, -1),
    (0, 1, 1, 0),
    (-1, 0, 0, 1),
    (0, -1, -1, 0),
)


def _matmul(m1, m2):
    a1, b1, c1, d1 = m1
    a2, b2, c2, d2 = m2
    return (a1 * a2 + b1 * c2, a1 * b2 + b1 * d2, c1 * a2 + d1 * c2, c1 * b2 + d1 * d2)


def _matvec(m, v):
    a, b, c, d = m
    return (a * v[0] + b * v[1], c * v[0] + d * v[1])


_DIHEDRAL_INDEX = {m: i for i, m in enumerate(DIHEDRAL)}


@dataclass(frozen=True)
class Torus:
    L: int

    def __post_init__(self):
        if self.L < 2:
            raise ParameterError(f"Torus side must be at least 2, got L={self.L}")

    @property
    def size(self) -> int:
        return self.L * self.L

    def site(self, x: int, y: int) -> Site:
        return (x % self.L, y % self.L)

    def flat(self, s: Site) -> int:
        return (s[1] % self.L) * self.L + (s[0] % self.L)

    def coords(self, index: int) -> Site:
        return (index % self.L, index // self.L)

    def add(self, s: Site, v: Site) -> Site:
        return ((s[0] + v[0]) % self.L, (s[1] + v[1]) % self.L)

    def edges(self) -> List[Tuple[Site, Site]]:
        """Each site paired with its +e1 and +e2 neighbours: 2 L^2 edges."""
        out = []
        for y in range(self.L):
            for x in range(self.L):
                out.append(((x, y), self.add((x, y), E1)))
                out.append(((x, y), self.add((x, y), E2)))
        return out

    def neighbor_table(self) -> np.ndarray:
        return _neighbor_table(self.L)

    def check_particles(self, n: int):
        """Ground-state parameters: 4 <= n and L >= 2n + 1."""
        if n < 4:
            raise ParameterError(f"Particle parameter n must be >= 4, got n={n}")
        if self.L < 2 * n + 1:
            raise ParameterError(f"Torus side must satisfy L >= 2n+1 = {2 * n + 1}, got L={self.L}")


@lru_cache(maxsize=None)
def _neighbor_table(L: int) -> np.ndarray:
    """(L^2, 4) array of flat neighbour indices in DIRECTIONS order."""
    idx = np.arange(L * L)
    x, y = idx % L, idx // L
    table = np.empty((L * L, 4), dtype=np.int64)
    for k, (dx, dy) in enumerate(DIRECTIONS):
        table[:, k] = ((y + dy) % L) * L + (x + dx) % L
    table.setflags(write=False)
    return table


def add(s: Site, v: Site, torus: Torus) -> Site:
    return torus.add(s, v)


def edges(torus: Torus) -> List[Tuple[Site, Site]]:
    return torus.edges()


# -----------------------------------------------------------------------------
# Symmetry group
# -----------------------------------------------------------------------------
@dataclass(frozen=True)
class Symmetry:
    """
    The map s -> D s + t (mod L) with D one of the eight dihedral matrices.
    """
    dihedral: int = 0
    translation: Site = (0, 0)

    @property
    def matrix(self):
        return DIHEDRAL[self.dihedral]

    def apply(self, s: Site, torus: Torus = None) -> Site:
        x, y = _matvec(self.matrix, s)
        x, y = x + self.translation[0], y + self.translation[1]
        if torus is None:
            return (x, y)
        return torus.site(x, y)

    def apply_vector(self, v: Site) -> Site:
        return _matvec(self.matrix, v)

    def compose(self, other: "Symmetry") -> "Symmetry":
        """self after other."""
        m = _matmul(self.matrix, other.matrix)
        tx, ty = _matvec(self.matrix, other.translation)
        return Symmetry(_DIHEDRAL_INDEX[m], (tx + self.translation[0], ty + self.translation[1]))

    def inverse(self) -> "Symmetry":
        a, b, c, d = self.matrix
        transpose = (a, c, b, d)
        tx, ty = _matvec(transpose, self.translation)
        return Symmetry(_DIHEDRAL_INDEX[transpose], (-tx, -ty))

    def reduced(self, torus: Torus) -> "Symmetry":
        return Symmetry(self.dihedral, torus.site(*self.translation))

    def permutation(self, torus: Torus) -> np.ndarray:
        """Flat-index image of every site, as an int array."""
        return _permutation(self.dihedral, torus.site(*self.translation), torus.L)

    @classmethod
    def translation_by(cls, t: Site) -> "Symmetry":
        return cls(0, t)

    @classmethod
    def about(cls, anchor: Site, dihedral: int) -> "Symmetry":
        """Dihedral map fixing the site `anchor`."""
        dx, dy = _matvec(DIHEDRAL[dihedral], anchor)
        return cls(dihedral, (anchor[0] - dx, anchor[1] - dy))

    @classmethod
    def of_square(cls, anchor: Site, n: int, dihedral: int) -> "Symmetry":
        """Dihedral map sending the square anchor + {0..n-1}^2 onto itself."""
        c = (2 * anchor[0] + n - 1, 2 * anchor[1] + n - 1)   # twice the centre
        dx, dy = _matvec(DIHEDRAL[dihedral], c)
        return cls(dihedral, ((c[0] - dx) // 2, (c[1] - dy) // 2))


@lru_cache(maxsize=256)
def _permutation(dihedral: int, translation: Site, L: int) -> np.ndarray:
    a, b, c, d = DIHEDRAL[dihedral]
    idx = np.arange(L * L)
    x, y = idx % L, idx // L
    nx = (a * x + b * y + translation[0]) % L
    ny = (c * x + d * y + translation[1]) % L
    perm = ny * L + nx
    perm.setflags(write=False)
    return perm


def apply_symmetry(g: Symmetry, s: Site, torus: Torus) -> Site:
    return g.apply(s, torus)


def all_dihedral() -> List[int]:
    return list(range(len(DIHEDRAL)))
