"""
Closed-form hitting measures and escape parameters.

Each formula is written for one reference valley and carried to the others by
symmetries of the torus:

* the two ground exits (corner particle lifted along e2 or e1);
* the corner band E^{2,2} at anchor w;
* the rectangle band E^{s,0};
* the row shifts and interval-pair measures of the decorated rectangles.

This is the second evaluation route next to the rate-one engine. The rates
stage compares the two.
"""
import logging
from functools import lru_cache
from typing import Dict, Iterable, Optional, Tuple

import numpy as np
import scipy.sparse as sp

from pipelines import geometry
from pipelines.chains import Distribution, FiniteChain, absorption_distribution
from pipelines.configuration import Configuration
from pipelines.elementary import elementary_table, m_interval, m_interval_distribution, walk_problem
from pipelines.errors import ParameterError, TaxonomyError
from pipelines.lattice import E1, E2, Site, Symmetry
from pipelines.valleys import SideVector, Taxonomy, ValleyId, extended_site, special_target

logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(levelname)s - %(message)s')
logger = logging.getLogger(__name__)

# x <-> y reflection of a square about its diagonal through w0 and w2
DIAGONAL = 5


def mixture(terms: Iterable[Tuple[float, object]]) -> Distribution:
    """Weighted sum of valley ids and distributions."""
    acc: Dict = {}
    for w, target in terms:
        if isinstance(target, Distribution):
            for u, p in target.as_dict().items():
                acc[u] = acc.get(u, 0.0) + w * p
        else:
            acc[target] = acc.get(target, 0.0) + w
    return Distribution.from_mapping(acc)


def _place(tax: Taxonomy, anchor: Site, sites) -> Configuration:
    return Configuration.from_sites(tax.torus, ((anchor[0] + x, anchor[1] + y) for x, y in sites), tax.n)


def _square_with(n: int, removed, added) -> frozenset:
    return (geometry.square(n) - set(removed)) | set(added)


# -----------------------------------------------------------------------------
# Ground exits
# -----------------------------------------------------------------------------
def ground_star_configs(n: int, L: int, anchor: Site = (0, 0)) -> Tuple[Configuration, Configuration]:
    """Square with corner w2 lifted to w2 + e2 (first) or pushed to w2 + e1 (second)."""
    tax = Taxonomy.get(n, L)
    w2 = geometry.corners(n)[2]
    return (
        _place(tax, anchor, _square_with(n, [w2], [geometry.shift(w2, E2)])),
        _place(tax, anchor, _square_with(n, [w2], [geometry.shift(w2, E1)])),
    )


@lru_cache(maxsize=None)
def ground_m1_m2(n: int, L: int, anchor: Site = (0, 0)) -> Tuple[Distribution, Distribution]:
    """
    Hitting measures of the two ground exits at corner w2, from the
    sum/difference system
        alpha M1 - A(e1) M2 = c1,   alpha M2 - A(e1) M1 = c2,
    with alpha = 4 + q + r - A(e2).
    """
    tax = Taxonomy.get(n, L)
    tab = elementary_table(n, L)
    walk = tab.walk
    alpha = 4.0 + tab.q + tab.r.total - walk.a_e2
    cross = walk.a_e1

    c1: Dict[ValleyId, float] = {}

    def put(v, w):
        c1[v] = c1.get(v, 0.0) + w

    put(ValleyId.ground(anchor), 1.0)
    put(ValleyId.corner_band(anchor, 2, 2), 1.0 + tab.r.minus)
    for k in range(4):
        put(ValleyId.corner_band(anchor, 2, k), walk.a_side[k])
    put(ValleyId.corner_band(anchor, 1, 2), tab.r.plus)
    put(ValleyId.corner_band(anchor, 3, 2), tab.q)

    rho = Symmetry.of_square(anchor, n, DIAGONAL)
    c2 = {tax.transform_id(v, rho): w for v, w in c1.items()}
    det = alpha * alpha - cross * cross
    support = set(c1) | set(c2)
    m1 = {v: (alpha * c1.get(v, 0.0) + cross * c2.get(v, 0.0)) / det for v in support}
    m2 = {v: (alpha * c2.get(v, 0.0) + cross * c1.get(v, 0.0)) / det for v in support}
    return Distribution.from_mapping(m1), Distribution.from_mapping(m2)


def _ground_reference(tax: Taxonomy, anchor: Site) -> Dict[int, Distribution]:
    n, L = tax.n, tax.torus.L
    stars = ground_star_configs(n, L, anchor)
    measures = ground_m1_m2(n, L, anchor)
    out = {}
    for d in range(8):
        g = Symmetry.of_square(anchor, n, d).reduced(tax.torus)
        for star, m in zip(stars, measures):
            bits = star.transformed(g).bits
            if bits not in out:
                out[bits] = m.pushforward(lambda u, g=g: tax.transform_id(u, g))
    return out


# -----------------------------------------------------------------------------
# Corner band E^{2,2}
# -----------------------------------------------------------------------------
def _free_walk_targets(tax: Taxonomy, anchor: Site) -> Dict[Site, object]:
    """Entrance site on the outer boundary of the square -> valley reached."""
    n, torus = tax.n, tax.torus
    w2 = geometry.corners(n)[2]
    m1, m2 = ground_m1_m2(n, torus.L, anchor)
    out = {torus.site(*geometry.shift(w2, E2)): m1, torus.site(*geometry.shift(w2, E1)): m2}
    for k in range(4):
        for z in geometry.corner_band_sites(n, 2, k):
            out[torus.site(*z)] = ValleyId.corner_band(anchor, 2, k)
    return out


def free_walk_measure(tax: Taxonomy, anchor: Site, start: Site) -> Distribution:
    targets = _free_walk_targets(tax, anchor)
    hits = walk_problem(tax.n, tax.torus.L).hitting_distribution(start)
    return mixture((p, targets[z]) for z, p in hits.items())


def corner_band_neighbors(n: int) -> Dict[str, list]:
    """
    Relative (removed, added) site lists of the 3n exits of E^{2,2} at anchor 0,
    grouped by kind.
    """
    w = geometry.corners(n)
    w2 = w[2]
    top = [(a, n) for a in range(n - 1)]
    return {
        "free": [([w2], [y]) for y in [(-1, n), (n - 1, n)] + [(a, n + 1) for a in range(n - 1)]],
        "hole": [([geometry.shift(w2, E2, -1)], [z]) for z in top],
        "trapped": [([geometry.shift(w2, E1, -1)], [(k, n)]) for k in range(n - 2)],
        "column": [([w2, w[3]], [(0, n), (1, n)])],
        "pinned": [([w2, geometry.shift(w2, E1, -1)], [(n - 3, n), (n - 2, n)])],
    }


def _settle(tax: Taxonomy, anchor: Site, sites, ground: Dict[int, Distribution]):
    """Measure of a configuration the top-row chain stops in: a ground exit or a level-1 valley member."""
    cfg = _place(tax, anchor, sites)
    if cfg.bits in ground:
        return ground[cfg.bits]
    found = tax.classify(cfg)
    if found.valley is None:
        raise TaxonomyError(f"Top-row hole walk stops outside the valleys ({found.label()})")
    return found.valley


def top_row_chain(tax: Taxonomy, anchor: Site) -> Tuple[FiniteChain, Dict[tuple, object]]:
    """
    Square with a hole at (h, n-1), 1 <= h <= n-2, and one particle at (m, n)
    on top, m != h. The hole moves along the top row unless the site it moves
    to is under the top particle; the top particle moves along row n unless it
    would sit above the hole. When the hole meets a corner, that corner slides
    in and the walk stops in ("end", corner column, m), whose measure is
    returned alongside the chain.
    """
    n = tax.n
    ground = _ground_reference(tax, anchor)
    square = geometry.square(n)
    inner = [(h, m) for h in range(1, n - 1) for m in range(n) if m != h]
    ends: Dict[tuple, object] = {}
    edges = []
    for h, m in inner:
        for m2 in (m - 1, m + 1):
            if 0 <= m2 < n and m2 != h:
                edges.append(((h, m), (h, m2)))
        for h2 in (h - 1, h + 1):
            if 1 <= h2 <= n - 2:
                if h2 != m:
                    edges.append(((h, m), (h2, m)))
                continue
            end = ("end", h2, m)
            if end not in ends:
                ends[end] = _settle(tax, anchor, (square - {(h2, n - 1)}) | {(m, n)}, ground)
            edges.append(((h, m), end))
    states = inner + sorted(ends)
    index = {s: i for i, s in enumerate(states)}
    rows = [index[a] for a, _ in edges]
    cols = [index[b] for _, b in edges]
    rates = sp.csr_matrix((np.ones(len(edges)), (rows, cols)), shape=(len(states), len(states)))
    return FiniteChain(states, rates), ends


def top_row_measure(tax: Taxonomy, anchor: Site, k: int, built=None) -> Distribution:
    """M of the E^{2,2} exit with the hole at w2 - e1 and the top particle at (k, n)."""
    chain, ends = built or top_row_chain(tax, anchor)
    labels = sorted(ends)
    w = absorption_distribution(chain, (tax.n - 2, k), [[e] for e in labels]).weights
    return mixture(zip(w, (ends[e] for e in labels)))


def _corner_band_reference(tax: Taxonomy, anchor: Site) -> Dict[int, Distribution]:
    n, L = tax.n, tax.torus.L
    tab = elementary_table(n, L)
    m1, _ = ground_m1_m2(n, L, anchor)
    home = ValleyId.corner_band(anchor, 2, 2)
    groups = corner_band_neighbors(n)
    out = {}
    for removed, added in groups["free"]:
        cfg = _place(tax, anchor, _square_with(n, removed, added))
        out[cfg.bits] = free_walk_measure(tax, anchor, added[0])
    for removed, added in groups["hole"]:
        r0 = tab.r.zero[n - 1 - added[0][0]]
        cfg = _place(tax, anchor, _square_with(n, removed, added))
        out[cfg.bits] = mixture([
            (1.0 / (n - 1), ValleyId.corner_band(anchor, 1, 2)),
            (r0, m1),
            ((n - 2) / (n - 1) - r0, home),
        ])
    built = top_row_chain(tax, anchor)
    for removed, added in groups["trapped"]:
        cfg = _place(tax, anchor, _square_with(n, removed, added))
        out[cfg.bits] = top_row_measure(tax, anchor, added[0][0], built)
    for removed, added in groups["pinned"]:
        out[_place(tax, anchor, _square_with(n, removed, added)).bits] = Distribution.point(home)
    for removed, added in groups["column"]:
        cfg = _place(tax, anchor, _square_with(n, removed, added))
        out[cfg.bits] = mixture([(1.0 / n, special_target(n, L, anchor)), ((n - 1) / n, home)])
    return out


def corner_band_z_closed_form(n: int, L: int) -> float:
    """Z(E^{2,2}) from the elementary quantities and the ground exits."""
    tab = elementary_table(n, L)
    m1, m2 = ground_m1_m2(n, L)
    home = ValleyId.corner_band((0, 0), 2, 2)
    w2 = geometry.corners(n)[2]
    walk = walk_problem(n, L)
    top = geometry.corner_band_sites(n, 2, 2)
    # hole exits contribute 1; the column exit 1/n (not 1/(n-1)), its only mass off the band
    z = 1.0 + 1.0 / n + (1.0 + tab.r.minus) * (1.0 - m1.mass(home))
    tax = Taxonomy.get(n, L)
    built = top_row_chain(tax, (0, 0))
    for k in range(n - 2):
        z += 1.0 - top_row_measure(tax, (0, 0), k, built).mass(home)
    for y in [(-1, n)] + [(a, n + 1) for a in range(n - 1)]:
        z += (1.0 - walk.hit(y, top)
              - walk.hit(y, [geometry.shift(w2, E2)]) * m1.mass(home)
              - walk.hit(y, [geometry.shift(w2, E1)]) * m2.mass(home))
    return z


# -----------------------------------------------------------------------------
# Rectangle band E^{s,0}
# -----------------------------------------------------------------------------
def rect_band_free_starts(n: int) -> list:
    return [(-1, -1)] + [(a, -2) for a in range(n - 1)] + [(n - 1, -1)]


def _band_walk(n: int, L: int):
    return walk_problem(n, L, geometry.outer_boundary(geometry.band_rectangle(n, "s")))


def _rect_band_reference(tax: Taxonomy, anchor: Site) -> Dict[int, Distribution]:
    n, L, torus = tax.n, tax.torus.L, tax.torus
    rect = geometry.band_rectangle(n, "s")
    home = ValleyId.rect_band(anchor, "s", 0)
    side_of = {torus.site(*z): j for j in range(4) for z in geometry.side_sites(rect, j)}
    walk = _band_walk(n, L)
    out = {}
    for y in rect_band_free_starts(n):
        hits = walk.hitting_distribution(y)
        cfg = _place(tax, anchor, rect | {y})
        out[cfg.bits] = mixture((p, ValleyId.rect_band(anchor, "s", side_of[z])) for z, p in hits.items())
    for bottom, mover, corner in (((1, -1), (0, 0), (0, n)), ((n - 3, -1), (n - 2, 0), (n - 2, n))):
        below = (mover[0], -1)
        xi = _place(tax, anchor, (rect - {mover}) | {bottom, below})
        escaped = tax.classify(_place(tax, anchor, (rect - {corner}) | {bottom, below}))
        if escaped.valley is None:
            raise TaxonomyError(f"Rectangle-band corner escape lands outside the valleys ({escaped.label()})")
        out[xi.bits] = mixture([(1.0 / (n + 1), escaped.valley), (n / (n + 1), home)])
    return out


def rect_band_z_closed_form(n: int, L: int) -> float:
    walk = _band_walk(n, L)
    bottom = geometry.side_sites(geometry.band_rectangle(n, "s"), 0)
    return 2.0 / (n + 1) + sum(1.0 - walk.hit(y, bottom) for y in rect_band_free_starts(n))


# -----------------------------------------------------------------------------
# Decorated rectangles
# -----------------------------------------------------------------------------
def _decorated(tax: Taxonomy, v: ValleyId, sites) -> Configuration:
    return _place(tax, v.anchor, sites)


def _shifted_side(n: int, sv: SideVector, i: int, positions) -> frozenset:
    geom = sv.layout(n)
    old = {extended_site(geom, i, p) for p in range(sv.k[i], sv.end(i) + 1)}
    new = {extended_site(geom, i, p) for p in positions}
    return (sv.shape(n) - old) | new


def row_shift_exits(n: int, sv: SideVector):
    """
    (side, sign, exit shape, start of the spread pair) for every admissible
    row shift; the start is None on sides holding three or more particles.
    """
    geom = sv.layout(n)
    shape = sv.shape(n)
    out = []
    for i in range(4):
        two = sv.multiplicity(i) == 2
        if sv.can_shift_down(i, n):
            moved = (shape - {extended_site(geom, i, sv.k[i])}) | {extended_site(geom, i, sv.k[i] - 1)}
            out.append((i, -1, moved, sv.k[i] - 1 if two else None))
        if sv.can_shift_up(i, n):
            moved = (shape - {extended_site(geom, i, sv.l[i])}) | {extended_site(geom, i, sv.l[i] + 1)}
            out.append((i, +1, moved, sv.k[i] if two else None))
    return out


def pair_shift_probability(n: int, sv: SideVector, i: int, b: int) -> float:
    """Mass the row shifts of side i put on the pair moved to (b, b+1)."""
    J = sv.interval(i, n)
    total = 0.0
    if sv.can_shift_down(i, n):
        total += m_interval(J, sv.k[i] - 1, b)
    if sv.can_shift_up(i, n):
        total += m_interval(J, sv.k[i], b)
    return total


def _decorated_reference(tax: Taxonomy, v: ValleyId) -> Dict[int, Distribution]:
    n = tax.n
    sv = v.side_vector
    out = {}
    for i, sign, moved, start in row_shift_exits(n, sv):
        xi = _decorated(tax, v, moved)
        if start is None:
            m = sv.multiplicity(i)
            lo, hi = sv.k[i] + sign, sv.end(i) + sign
            target = tax.classify(_decorated(tax, v, _shifted_side(n, sv, i, range(lo, hi + 1))))
            if target.valley is None:
                raise TaxonomyError(f"Row shift of {v.label()} lands outside the valleys ({target.label()})")
            out[xi.bits] = mixture([(1.0 / m, target.valley), ((m - 1) / m, v)])
            continue
        terms = []
        for b, p in m_interval_distribution(sv.interval(i, n), start).items():
            if p <= 0.0:
                continue
            target = tax.classify(_decorated(tax, v, _shifted_side(n, sv, i, (b, b + 1))))
            if target.valley is None:
                raise TaxonomyError(f"Pair move of {v.label()} lands outside the valleys ({target.label()})")
            terms.append((p, target.valley))
        out[xi.bits] = mixture(terms)
    return out


def decorated_z_closed_form(n: int, sv: SideVector) -> float:
    z = 0.0
    for i in range(4):
        m = sv.multiplicity(i)
        down, up = sv.can_shift_down(i, n), sv.can_shift_up(i, n)
        if m > 2:
            z += (int(down) + int(up)) / m
            continue
        J = sv.interval(i, n)
        if down:
            z += 1.0 - m_interval(J, sv.k[i] - 1, sv.k[i])
        if up:
            z += 1.0 - m_interval(J, sv.k[i], sv.k[i])
    return z


# -----------------------------------------------------------------------------
# Dispatch
# -----------------------------------------------------------------------------
_REFERENCES: Dict[Tuple[int, int, ValleyId], Dict[int, Distribution]] = {}


def _reference(tax: Taxonomy, ref: ValleyId) -> Dict[int, Distribution]:
    key = (tax.n, tax.torus.L, ref)
    if key not in _REFERENCES:
        if ref.family == "ground":
            _REFERENCES[key] = _ground_reference(tax, ref.anchor)
        elif ref.family == "corner_band":
            _REFERENCES[key] = _corner_band_reference(tax, ref.anchor)
        elif ref.family == "rect_band":
            _REFERENCES[key] = _rect_band_reference(tax, ref.anchor)
        else:
            _REFERENCES[key] = _decorated_reference(tax, ref)
    return _REFERENCES[key]


def reference_valley(v: ValleyId) -> Optional[ValleyId]:
    """The valley whose displayed formula covers v, or None."""
    if v.family == "corner_band":
        i, j = v.params
        if j not in (i, (i - 1) % 4):
            return None
        return ValleyId.corner_band(v.anchor, 2, 2)
    if v.family == "rect_band":
        orientation, j = v.params
        if (orientation == "s") != (j in (0, 2)):
            return None
        return ValleyId.rect_band(v.anchor, "s", 0)
    return v


def closed_form_measure(xi: Configuration, v: ValleyId) -> Optional[Distribution]:
    """
    Closed-form M(xi, .) for xi in the neighbourhood of v, or None where no
    formula is displayed. Exits of decorated rectangles other than the row
    shifts return to the well.
    """
    tax = Taxonomy.get(xi.n, xi.torus.L)
    ref = reference_valley(v)
    if ref is None:
        return None
    if ref == v:
        found = _reference(tax, v).get(xi.bits)
        if found is None and v.family in ("perimeter", "wide_rect"):
            if xi.bits not in {c.bits for c in tax.neighborhood(v)}:
                raise ParameterError(f"Configuration is not an exit of {v.label()}")
            return Distribution.point(v)
        return found
    maps = tax.symmetries_between(ref, v)
    if not maps:
        raise TaxonomyError(f"No symmetry carries {ref.label()} onto {v.label()}")
    g = maps[0]
    found = _reference(tax, ref).get(xi.transformed(g.inverse().reduced(tax.torus)).bits)
    if found is None:
        return None
    return found.pushforward(lambda u: tax.transform_id(u, g))
