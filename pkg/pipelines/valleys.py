"""
Valley taxonomy of the lower energy landscape.

Five families live in levels 0 and 1 above the ground energy:

* ground      - the n x n square anchored at x;
* corner_band - a square missing corner i with the extra particle on side j;
* rect_band   - an (n+1) x (n-1) rectangle with one particle on side j;
* perimeter   - an (n-1) x (n-2) rectangle decorated on all four sides;
* wide_rect   - an n x (n-3) rectangle decorated on all four sides.

Every family is enumerated at anchor 0 and translated; classification goes
through a table of shift-normalized member shapes.
"""
import itertools
import logging
import os
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, List, Optional, Sequence, Tuple

from tqdm import tqdm

try:
    from config import settings
except ImportError:
    import sys
    sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
    from config import settings

from pipelines import geometry
from pipelines.absorption import hitting_measure
from pipelines.chains import Distribution
from pipelines.configuration import Configuration, ground_energy, iter_bits, moves
from pipelines.errors import ParameterError, TaxonomyError
from pipelines.geometry import SideGeometry
from pipelines.lattice import DIHEDRAL, Site, Symmetry, Torus

logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(levelname)s - %(message)s')
logger = logging.getLogger(__name__)

FAMILIES = ("ground", "corner_band", "rect_band", "perimeter", "wide_rect")
FAMILY_ORDER = {f: i for i, f in enumerate(FAMILIES)}
ORIENTATIONS = ("s", "l")


# -----------------------------------------------------------------------------
# Side vectors of decorated rectangles
# -----------------------------------------------------------------------------
@dataclass(frozen=True)
class SideVector:
    """
    Occupied positions k_i..l_i on each side i of a decorated rectangle.
    Generation 1 decorates the perimeter rectangles, generation 2 the wide ones.
    """
    orientation: str
    generation: int
    k: Tuple[int, int, int, int]
    l: Tuple[int, int, int, int]

    def layout(self, n: int) -> SideGeometry:
        return side_geometry(n, self.orientation, self.generation)

    def end(self, i: int) -> int:
        """Last occupied extended position of side i; n_i + 1 is the next side's corner."""
        return self.l[i] + (1 if self.k[(i + 1) % 4] == 0 else 0)

    def multiplicity(self, i: int) -> int:
        return self.end(i) - self.k[i] + 1

    def multiplicities(self) -> Tuple[int, ...]:
        return tuple(self.multiplicity(i) for i in range(4))

    def is_star(self) -> bool:
        return min(self.multiplicities()) >= 2

    def can_shift_down(self, i: int, n: int) -> bool:
        """Particle at k_i may move to k_i - 1 at rate e^{-beta}."""
        lengths = self.layout(n).side_lengths
        return self.k[i] >= 2 or (self.k[i] == 1 and self.l[(i - 1) % 4] == lengths[(i - 1) % 4])

    def can_shift_up(self, i: int, n: int) -> bool:
        """Particle at l_i may move to l_i + 1 at rate e^{-beta}."""
        lengths = self.layout(n).side_lengths
        return self.l[i] <= lengths[i] - 1 or (self.l[i] == lengths[i] and self.k[(i + 1) % 4] == 1)

    def interval(self, i: int, n: int) -> Tuple[int, int]:
        """Extended positions available to a two-particle side."""
        lengths = self.layout(n).side_lengths
        lo = 1 - (1 if self.l[(i - 1) % 4] == lengths[(i - 1) % 4] else 0)
        hi = lengths[i] + (1 if self.k[(i + 1) % 4] <= 1 else 0)
        return (lo, hi)

    def shape(self, n: int) -> geometry.Shape:
        return self.layout(n).shape(self.k, self.l)

    def label(self) -> str:
        pairs = ";".join(f"{a},{b}" for a, b in zip(self.k, self.l))
        return f"{self.orientation}{self.generation}[{pairs}]"


def side_geometry(n: int, orientation: str, generation: int) -> SideGeometry:
    table = geometry.PERIMETER_SIDES if generation == 1 else geometry.WIDE_SIDES
    if orientation not in table:
        raise ParameterError(f"Orientation must be one of {ORIENTATIONS}, got {orientation!r}")
    return table[orientation](n)


def extended_site(geom: SideGeometry, i: int, p: int) -> Site:
    if p == geom.side_lengths[i] + 1:
        return geom.side_site((i + 1) % 4, 0)
    return geom.side_site(i, p)


@lru_cache(maxsize=None)
def side_vectors(n: int, orientation: str, generation: int, star: bool = True) -> Tuple[SideVector, ...]:
    """All admissible side vectors whose decorated rectangle holds n^2 sites."""
    geom = side_geometry(n, orientation, generation)
    lengths = geom.side_lengths
    extra = n * n - geom.width * geom.height
    options = [[(k, l) for k in range(m + 1) for l in range(k, m + 1)] for m in lengths]
    out = []
    for choice in itertools.product(*options):
        if sum(l - k + 1 for k, l in choice) != extra:
            continue
        k = tuple(c[0] for c in choice)
        l = tuple(c[1] for c in choice)
        if any(k[j] == 0 and l[(j - 1) % 4] != lengths[(j - 1) % 4] for j in range(4)):
            continue
        sv = SideVector(orientation, generation, k, l)
        if star and not sv.is_star():
            continue
        if generation == 2 and star:
            long_side = 0 if geom.width >= geom.height else 1
            for i in (long_side, long_side + 2):
                if sv.multiplicity(i) < 4:
                    raise TaxonomyError(f"Wide rectangle {sv.label()} has fewer than four particles on a long side")
        out.append(sv)
    return tuple(sorted(out, key=lambda s: (s.k, s.l)))


# -----------------------------------------------------------------------------
# Valley identifiers
# -----------------------------------------------------------------------------
@dataclass(frozen=True)
class ValleyId:
    family: str
    anchor: Site
    params: tuple = ()

    @classmethod
    def ground(cls, x: Site) -> "ValleyId":
        return cls("ground", tuple(x))

    @classmethod
    def corner_band(cls, x: Site, i: int, j: int) -> "ValleyId":
        return cls("corner_band", tuple(x), (i, j))

    @classmethod
    def rect_band(cls, x: Site, orientation: str, j: int) -> "ValleyId":
        return cls("rect_band", tuple(x), (orientation, j))

    @classmethod
    def decorated(cls, x: Site, sv: SideVector) -> "ValleyId":
        return cls("perimeter" if sv.generation == 1 else "wide_rect", tuple(x), (sv,))

    @property
    def is_ground(self) -> bool:
        return self.family == "ground"

    @property
    def side_vector(self) -> SideVector:
        if self.family not in ("perimeter", "wide_rect"):
            raise ParameterError(f"{self.family} valleys carry no side vector")
        return self.params[0]

    def at(self, anchor: Site) -> "ValleyId":
        return ValleyId(self.family, tuple(anchor), self.params)

    def base(self) -> "ValleyId":
        return self.at((0, 0))

    def sort_key(self):
        params = tuple(p.label() if isinstance(p, SideVector) else p for p in self.params)
        return (FAMILY_ORDER[self.family], params, self.anchor[1], self.anchor[0])

    def label(self) -> str:
        if self.family == "ground":
            body = ""
        elif self.family in ("perimeter", "wide_rect"):
            body = self.params[0].label()
        else:
            body = ",".join(str(p) for p in self.params)
        return f"{self.family}({body})@{self.anchor[0]},{self.anchor[1]}"


@dataclass(frozen=True)
class Classification:
    valley: Optional[ValleyId]
    level: int

    @property
    def is_other(self) -> bool:
        return self.valley is None

    def label(self) -> str:
        return self.valley.label() if self.valley is not None else f"other(level={self.level})"


# -----------------------------------------------------------------------------
# Member shapes, anchor 0, no wrapping
# -----------------------------------------------------------------------------
def member_shapes(n: int, family: str, params: tuple) -> List[geometry.Shape]:
    if family == "ground":
        return [geometry.square(n)]
    if family == "corner_band":
        i, j = params
        q = geometry.quasi_square(n, i)
        return [q | {z} for z in geometry.corner_band_sites(n, i, j)]
    if family == "rect_band":
        orientation, j = params
        rect = geometry.band_rectangle(n, orientation)
        return [rect | {z} for z in geometry.side_sites(rect, j)]
    if family in ("perimeter", "wide_rect"):
        return [params[0].shape(n)]
    raise ParameterError(f"Unknown valley family {family!r}")


def _box_origin(coords: Sequence[int], L: int) -> Optional[int]:
    """Start of the shortest cyclic window holding every coordinate; None if they wrap."""
    c = sorted(set(coords))
    if len(c) == L:
        return None
    best, origin = -1, None
    for t in range(len(c)):
        nxt = c[(t + 1) % len(c)]
        gap = (nxt - c[t] - 1) % L
        if gap > best or (gap == best and nxt < origin):
            best, origin = gap, nxt
    return origin


class Taxonomy:
    """
    The valleys for one (n, L): anchor-0 catalogue, shape table, member and
    neighbourhood generation, classification and symmetry transport.
    """

    def __init__(self, n: int, L: int):
        self.n = n
        self.torus = Torus(L)
        self.torus.check_particles(n)
        self.h_min = ground_energy(n)
        self.base = self._catalogue()
        self._base_index = {(v.family, v.params): b for b, v in enumerate(self.base)}
        self._table: Dict[int, Tuple[int, Site]] = {}
        self._class_cache: Dict[int, Classification] = {}
        self._neighborhoods: Dict[ValleyId, List[Configuration]] = {}
        self._build_table()

    @classmethod
    def get(cls, n: int, L: int) -> "Taxonomy":
        return _taxonomy(n, L)

    # -------------------------------------------------------------------------
    # Catalogue
    # -------------------------------------------------------------------------
    def _catalogue(self) -> List[ValleyId]:
        """Anchor-0 identifiers in dispatch order, ground first."""
        origin = (0, 0)
        out = [ValleyId.ground(origin)]
        out += [ValleyId.corner_band(origin, i, j) for i in range(4) for j in range(4)]
        out += [ValleyId.rect_band(origin, a, j) for a in ORIENTATIONS for j in range(4)]
        for generation in (1, 2):
            for a in ORIENTATIONS:
                out += [ValleyId.decorated(origin, sv) for sv in side_vectors(self.n, a, generation)]
        return out

    def counts(self) -> Dict[str, int]:
        per_anchor = {f: 0 for f in FAMILIES}
        for v in self.base:
            per_anchor[v.family] += 1
        return {f: c * self.torus.size for f, c in per_anchor.items()}

    @property
    def kappa(self) -> int:
        return len(self.base) * self.torus.size

    def enumerate_valleys(self) -> List[ValleyId]:
        """Ground states first, then every other family in catalogue order, anchors in flat order."""
        anchors = [self.torus.coords(i) for i in range(self.torus.size)]
        return [v.at(a) for v in self.base for a in anchors]

    def index_of(self, v: ValleyId) -> int:
        b = self._base_index[(v.family, v.params)]
        return b * self.torus.size + self.torus.flat(v.anchor)

    # -------------------------------------------------------------------------
    # Members
    # -------------------------------------------------------------------------
    def shapes(self, v: ValleyId) -> List[geometry.Shape]:
        return _member_shapes(self.n, v.family, v.params)

    def members(self, v: ValleyId) -> List[Configuration]:
        ax, ay = v.anchor
        return [
            Configuration.from_sites(self.torus, ((ax + x, ay + y) for x, y in shape), self.n)
            for shape in self.shapes(v)
        ]

    def level_of(self, v: ValleyId) -> int:
        return 0 if v.is_ground else 1

    # -------------------------------------------------------------------------
    # Classification
    # -------------------------------------------------------------------------
    def canonical(self, bits: int) -> Optional[Tuple[int, Site]]:
        """Shift-normalized occupancy and the box origin it was shifted from."""
        L = self.torus.L
        sites = [self.torus.coords(i) for i in iter_bits(bits)]
        ox = _box_origin([s[0] for s in sites], L)
        oy = _box_origin([s[1] for s in sites], L)
        if ox is None or oy is None:
            return None
        key = 0
        for x, y in sites:
            key |= 1 << (((y - oy) % L) * L + (x - ox) % L)
        return key, (ox, oy)

    def _build_table(self):
        for b, v in enumerate(tqdm(self.base, desc="Valley table", leave=False)):
            for cfg in self.members(v):
                if cfg.level != self.level_of(v):
                    raise TaxonomyError(f"{v.label()} member sits at level {cfg.level}, expected {self.level_of(v)}")
                key, origin = self.canonical(cfg.bits)
                entry = (b, self.torus.site(-origin[0], -origin[1]))
                if self._table.setdefault(key, entry) != entry:
                    other = self.base[self._table[key][0]]
                    raise TaxonomyError(f"Shape collision between {v.label()} and {other.label()}")
        logger.info(f"Taxonomy n={self.n}, L={self.torus.L}: {len(self.base)} valleys per anchor, kappa={self.kappa}")

    def classify(self, cfg: Configuration) -> Classification:
        cached = self._class_cache.get(cfg.bits)
        if cached is not None:
            return cached
        if cfg.K != self.n * self.n:
            raise ParameterError(f"Classification needs K = n^2 = {self.n * self.n} particles, got {cfg.K}")
        level = cfg.energy - self.h_min
        result = Classification(None, level)
        if level <= 1:
            found = self.canonical(cfg.bits)
            entry = self._table.get(found[0]) if found is not None else None
            if entry is not None:
                b, delta = entry
                anchor = self.torus.add(found[1], delta)
                result = Classification(self.base[b].at(anchor), level)
            elif level == 0:
                raise TaxonomyError(f"Level-0 configuration {sorted(cfg.occupied)} is not a square")
        if len(self._class_cache) < settings.CLASSIFY_CACHE_SIZE:
            self._class_cache[cfg.bits] = result
        return result

    # -------------------------------------------------------------------------
    # Neighbourhoods
    # -------------------------------------------------------------------------
    def neighborhood(self, v: ValleyId) -> List[Configuration]:
        """
        Configurations one exit move away from the well, with multiplicity:
        energy +2 moves out of a ground state, +1 moves out of any other
        valley. Rate-one moves must stay inside the well.
        """
        cached = self._neighborhoods.get(v)
        if cached is not None:
            return cached
        members = self.members(v)
        inside = {c.bits for c in members}
        step = 2 if v.is_ground else 1
        out = []
        for cfg in members:
            for m, delta in moves(cfg):
                bits = cfg.bits ^ ((1 << m.a) | (1 << m.b))
                if delta <= 0 and bits not in inside:
                    raise TaxonomyError(f"Rate-one move leaves the well of {v.label()}")
                if delta == step:
                    out.append(Configuration(self.torus, bits, self.n, cfg.energy + delta))
        if v.is_ground and len(out) != 8:
            raise TaxonomyError(f"Ground state has {len(out)} exit configurations, expected 8")
        self._neighborhoods[v] = out
        return out

    # -------------------------------------------------------------------------
    # Symmetry transport
    # -------------------------------------------------------------------------
    def transform_id(self, v: ValleyId, g: Symmetry) -> ValleyId:
        image = self.classify(self.members(v)[0].transformed(g.reduced(self.torus)))
        if image.valley is None or image.valley.family != v.family:
            raise TaxonomyError(f"Image of {v.label()} under {g} is {image.label()}")
        return image.valley

    def symmetries_between(self, ref: ValleyId, target: ValleyId) -> List[Symmetry]:
        """All symmetries of the torus mapping the members of `ref` onto the members of `target`."""
        src = self.shapes(ref)
        dst = set(self.shapes(target))
        dst_min = _min_corner(dst)
        out = []
        for d in range(len(DIHEDRAL)):
            g = Symmetry(d, (0, 0))
            img = [frozenset(g.apply(s) for s in shape) for shape in src]
            m = _min_corner(img)
            t = (dst_min[0] - m[0], dst_min[1] - m[1])
            if {geometry.translate(shape, t) for shape in img} != dst:
                continue
            # s -> D (s - a_ref) + t + a_target
            da = g.apply(ref.anchor)
            out.append(Symmetry(d, (t[0] + target.anchor[0] - da[0], t[1] + target.anchor[1] - da[1])).reduced(self.torus))
        return out


def _min_corner(shapes) -> Site:
    xs = [x for shape in shapes for x, _ in shape]
    ys = [y for shape in shapes for _, y in shape]
    return (min(xs), min(ys))


@lru_cache(maxsize=None)
def _member_shapes(n: int, family: str, params: tuple) -> List[geometry.Shape]:
    return member_shapes(n, family, params)


@lru_cache(maxsize=8)
def _taxonomy(n: int, L: int) -> Taxonomy:
    return Taxonomy(n, L)


# -----------------------------------------------------------------------------
# Module-level operations
# -----------------------------------------------------------------------------
def enumerate_valleys(n: int, L: int) -> List[ValleyId]:
    return Taxonomy.get(n, L).enumerate_valleys()


def members(v: ValleyId, n: int, L: int) -> List[Configuration]:
    return Taxonomy.get(n, L).members(v)


def neighborhood(v: ValleyId, n: int, L: int) -> List[Configuration]:
    return Taxonomy.get(n, L).neighborhood(v)


def special_configuration(n: int, L: int, anchor: Site = (0, 0)) -> Configuration:
    """
    The square with corner w0 moved above w3 and corner w2 moved to the
    diagonal of w3: the singleton target of the hole walk down the left column.
    """
    torus = Torus(L)
    w = geometry.corners(n)
    sites = set(geometry.square(n)) - {w[0], w[2]}
    sites |= {(w[3][0], w[3][1] + 1), (w[3][0] + 1, w[3][1] + 1)}
    return Configuration.from_sites(torus, ((anchor[0] + x, anchor[1] + y) for x, y in sites), n)


def special_target(n: int, L: int, anchor: Site = (0, 0)) -> ValleyId:
    found = Taxonomy.get(n, L).classify(special_configuration(n, L, anchor))
    if found.valley is None or found.valley.family != "perimeter":
        raise TaxonomyError(f"Special hole-walk target classifies as {found.label()}, expected a perimeter valley")
    return found.valley


def m_measure(xi: Configuration, v: ValleyId) -> Distribution:
    """Limiting law of the first valley entered from the exit configuration xi of v."""
    tax = Taxonomy.get(xi.n, xi.torus.L)
    if xi.bits not in {c.bits for c in tax.neighborhood(v)}:
        raise ParameterError(f"Configuration is not an exit of {v.label()}")
    return hitting_measure(xi, tax)
