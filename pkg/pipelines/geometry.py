"""
Planar shapes used by the valley taxonomy, in integer coordinates relative to
the anchor (no wrapping; every shape fits inside a (n+3) x (n+3) window).
"""
from dataclasses import dataclass
from typing import FrozenSet, List, Tuple

from pipelines.lattice import DIRECTIONS, Site

Shape = FrozenSet[Site]

# Outward normal of side j: 0 bottom, 1 right, 2 top, 3 left.
OUTWARD: Tuple[Site, ...] = ((0, -1), (1, 0), (0, 1), (-1, 0))
# Direction in which side j is traversed, counter-clockwise.
ALONG: Tuple[Site, ...] = ((1, 0), (0, 1), (-1, 0), (0, -1))


def square(n: int) -> Shape:
    return frozenset((a, b) for a in range(n) for b in range(n))


def rectangle(x0: int, y0: int, width: int, height: int) -> Shape:
    return frozenset((x0 + a, y0 + b) for a in range(width) for b in range(height))


def corners(n: int) -> List[Site]:
    """w0..w3: bottom-left, bottom-right, top-right, top-left."""
    return [(0, 0), (n - 1, 0), (n - 1, n - 1), (0, n - 1)]


def quasi_square(n: int, i: int) -> Shape:
    return square(n) - {corners(n)[i]}


def shift(s: Site, v: Site, k: int = 1) -> Site:
    return (s[0] + k * v[0], s[1] + k * v[1])


def translate(shape, v: Site) -> Shape:
    return frozenset((x + v[0], y + v[1]) for x, y in shape)


def outer_boundary(block) -> Shape:
    out = set()
    for s in block:
        for d in DIRECTIONS:
            z = shift(s, d)
            if z not in block:
                out.add(z)
    return frozenset(out)


def side_sites(block, j: int) -> List[Site]:
    """
    Empty sites z with z - OUTWARD[j] in `block`, listed counter-clockwise
    along side j.
    """
    sites = {shift(s, OUTWARD[j]) for s in block} - set(block)
    ax, ay = ALONG[j]
    return sorted(sites, key=lambda z: ax * z[0] + ay * z[1])


def corner_band_sites(n: int, i: int, j: int) -> List[Site]:
    """Attachment sites of the extra particle for the corner-band family (i, j)."""
    q = quasi_square(n, i)
    full = square(n)
    return [z for z in side_sites(q, j) if z not in full]


def band_rectangle(n: int, orientation: str) -> Shape:
    """The (n+1) x (n-1) rectangle ('l') or its transpose ('s')."""
    if orientation == "l":
        return rectangle(0, 0, n + 1, n - 1)
    return rectangle(0, 0, n - 1, n + 1)


# -----------------------------------------------------------------------------
# Decorated rectangles
# -----------------------------------------------------------------------------
@dataclass(frozen=True)
class SideGeometry:
    """
    Rectangle {1..W} x {1..H} with four sides of attachment sites. Position 0
    of each side is the corner shared with the previous side; side i holds
    positions 0..n_i.
    """
    width: int
    height: int

    @property
    def side_lengths(self) -> Tuple[int, int, int, int]:
        return (self.width, self.height, self.width, self.height)

    @property
    def core(self) -> Shape:
        return rectangle(1, 1, self.width, self.height)

    def side_site(self, i: int, p: int) -> Site:
        W, H = self.width, self.height
        if i == 0:
            return (p, 0)
        if i == 1:
            return (W + 1, p)
        if i == 2:
            return (W + 1 - p, H + 1)
        return (0, H + 1 - p)

    def side_position(self, s: Site):
        """(side, position) of a decoration site, the corner counted on the following side."""
        W, H = self.width, self.height
        x, y = s
        if y == 0 and 0 <= x <= W:
            return (0, x)
        if x == W + 1 and 0 <= y <= H:
            return (1, y)
        if y == H + 1 and 1 <= x <= W + 1:
            return (2, W + 1 - x)
        if x == 0 and 1 <= y <= H + 1:
            return (3, H + 1 - y)
        return None

    def shape(self, k, l) -> Shape:
        occupied = set(self.core)
        for i in range(4):
            for p in range(k[i], l[i] + 1):
                occupied.add(self.side_site(i, p))
        return frozenset(occupied)


PERIMETER_SIDES = {"l": lambda n: SideGeometry(n - 1, n - 2), "s": lambda n: SideGeometry(n - 2, n - 1)}
WIDE_SIDES = {"l": lambda n: SideGeometry(n, n - 3), "s": lambda n: SideGeometry(n - 3, n)}
