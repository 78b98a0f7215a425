"""
Elementary Markov processes behind every hitting measure:

* the free-particle random walk on the torus absorbed at the outer boundary
  of a block (probabilities p(y, A, G));
* the corner chain on D_n (q_n);
* the hole-particle chain on E_n (r_n^+, r_n^-, r_n^0(k));
* the two-walker interval chain (m(J, a, b)).
"""
import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, FrozenSet, Iterable, List, Optional, Tuple

import numpy as np
import scipy.sparse as sp

from pipelines import geometry
from pipelines.chains import Distribution, FiniteChain, absorption_distribution, solve_linear
from pipelines.errors import ParameterError
from pipelines.lattice import DIRECTIONS, Site, Torus

logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(levelname)s - %(message)s')
logger = logging.getLogger(__name__)


def grid_chain(states: Iterable, extra_edges: Iterable[Tuple] = ()) -> FiniteChain:
    """Unit-rate nearest-neighbour walk restricted to `states` (jumps leaving the set suppressed)."""
    states = list(states)
    index = {s: i for i, s in enumerate(states)}
    rows, cols = [], []
    for s, i in index.items():
        for dx, dy in DIRECTIONS:
            j = index.get((s[0] + dx, s[1] + dy))
            if j is not None:
                rows.append(i)
                cols.append(j)
    for a, b in extra_edges:
        rows += [index[a], index[b]]
        cols += [index[b], index[a]]
    m = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(states), len(states)))
    return FiniteChain(states, m)


# -----------------------------------------------------------------------------
# Free-particle walk on the torus
# -----------------------------------------------------------------------------
class TorusWalkProblem:
    """
    Rate-one symmetric walk on the whole torus absorbed on G. Coordinates are
    given relative to the origin and reduced mod L; the default G is the outer
    boundary of the square {0..n-1}^2.
    """

    def __init__(self, n: int, L: int, G: Optional[FrozenSet[Site]] = None):
        self.n = n
        self.torus = Torus(L)
        block = G if G is not None else geometry.outer_boundary(geometry.square(n))
        self.G = sorted({self.torus.site(*z) for z in block})
        if not self.G:
            raise ParameterError("Absorbing set G must be nonempty")
        self._g_index = {z: k for k, z in enumerate(self.G)}
        self._solution = None
        self._t_index = None

    def _solve(self):
        if self._solution is not None:
            return
        torus = self.torus
        absorbing = {torus.flat(z) for z in self.G}
        transient = [i for i in range(torus.size) if i not in absorbing]
        t_index = {i: k for k, i in enumerate(transient)}
        nbrs = torus.neighbor_table()
        rows, cols, g_rows, g_cols = [], [], [], []
        for i in transient:
            for j in nbrs[i]:
                j = int(j)
                if j in t_index:
                    rows.append(t_index[i])
                    cols.append(t_index[j])
                else:
                    g_rows.append(t_index[i])
                    g_cols.append(self._g_index[torus.coords(j)])
        T = len(transient)
        A = 4.0 * sp.identity(T, format="csr") - sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(T, T))
        B = sp.csr_matrix((np.ones(len(g_rows)), (g_rows, g_cols)), shape=(T, len(self.G))).toarray()
        self._solution = np.atleast_2d(solve_linear(A, B, symmetric=True)).reshape(T, len(self.G))
        self._t_index = t_index
        logger.debug(f"Torus walk solved: L={torus.L}, |G|={len(self.G)}, {T} transient sites")

    def hitting_distribution(self, start: Site) -> Dict[Site, float]:
        """Law of the entrance site into G from `start`."""
        s = self.torus.site(*start)
        if s in self._g_index:
            return {s: 1.0}
        self._solve()
        row = self._solution[self._t_index[self.torus.flat(s)]]
        return {z: float(p) for z, p in zip(self.G, row) if p > 0.0}

    def hit(self, start: Site, targets: Iterable[Site]) -> float:
        targets = {self.torus.site(*z) for z in targets}
        outside = targets - set(self._g_index)
        if outside:
            raise ParameterError(f"Targets {sorted(outside)} are not in the absorbing set")
        dist = self.hitting_distribution(start)
        return sum(dist.get(z, 0.0) for z in targets)


@lru_cache(maxsize=64)
def walk_problem(n: int, L: int, G: Optional[FrozenSet[Site]] = None) -> TorusWalkProblem:
    return TorusWalkProblem(n, L, G)


def torus_hit(n: int, L: int, start: Site, targets: Iterable[Site], G: Optional[Iterable[Site]] = None) -> float:
    return walk_problem(n, L, None if G is None else frozenset(G)).hit(start, targets)


def free_starts(n: int) -> Tuple[Site, Site]:
    """Positions of the detached particle after its second step: w2 + 2 e2 and w2 + e1 + e2."""
    return ((n - 1, n + 1), (n, n))


def p_of_A(n: int, L: int, A: Iterable[Site]) -> float:
    A = list(A)
    return sum(torus_hit(n, L, s, A) for s in free_starts(n))


@dataclass(frozen=True)
class WalkAggregates:
    """Sums of p(.) over the pieces of the outer boundary of the square seen from corner w2."""
    a_e1: float
    a_e2: float
    a_side: Tuple[float, float, float, float]

    @property
    def a_total(self) -> float:
        return self.a_e1 + self.a_e2

    @property
    def a_12(self) -> float:
        return self.a_side[1] + self.a_side[2]

    @property
    def a_03(self) -> float:
        return self.a_side[0] + self.a_side[3]


def walk_aggregates(n: int, L: int) -> WalkAggregates:
    w2 = geometry.corners(n)[2]
    return WalkAggregates(
        a_e1=p_of_A(n, L, [(w2[0] + 1, w2[1])]),
        a_e2=p_of_A(n, L, [(w2[0], w2[1] + 1)]),
        a_side=tuple(p_of_A(n, L, geometry.corner_band_sites(n, 2, j)) for j in range(4)),
    )


# -----------------------------------------------------------------------------
# Corner chain
# -----------------------------------------------------------------------------
def corner_chain(n: int) -> FiniteChain:
    states = [(0, 0)] + [(j, k) for k in range(1, n) for j in range(k)]
    return grid_chain(states)


def q_corner(n: int) -> float:
    if n < 2:
        raise ParameterError(f"q_n needs n >= 2, got n={n}")
    chain = corner_chain(n)
    top = [(j, n - 1) for j in range(n - 1)]
    return float(absorption_distribution(chain, (0, 1), [top, [(0, 0)]]).weights[0])


# -----------------------------------------------------------------------------
# Hole-particle chain
# -----------------------------------------------------------------------------
AUXILIARY = "d"


@dataclass(frozen=True)
class RProbs:
    plus: float
    minus: float
    zero: Tuple[float, ...]     # r_n^0(k), k = 0..n-1

    @property
    def total(self) -> float:
        return self.plus + self.minus


def hole_chain(n: int, with_auxiliary: bool = False) -> FiniteChain:
    states = [(a, b) for b in range(n) for a in range(n)]
    extra = []
    if with_auxiliary:
        states.append(AUXILIARY)
        extra.append(((1, 1), AUXILIARY))
    return grid_chain(states, extra)


def hole_boundary(n: int) -> Tuple[List[Site], List[Site], List[Site]]:
    upper = [(j, n - 1) for j in range(n)]
    lower = [(j, 0) for j in range(1, n)]
    return upper, lower, [(0, 0)]


def r_probs(n: int, with_auxiliary: bool = False) -> RProbs:
    if n < 3:
        raise ParameterError(f"r_n needs n >= 3, got n={n}")
    chain = hole_chain(n, with_auxiliary)
    parts = list(hole_boundary(n))
    w = absorption_distribution(chain, (0, 1), parts).weights
    zero = tuple(float(absorption_distribution(chain, (k, 1), parts).weights[2]) for k in range(n))
    return RProbs(plus=float(w[0]), minus=float(w[1]), zero=zero)


# -----------------------------------------------------------------------------
# Interval pair chain
# -----------------------------------------------------------------------------
def interval_chain(J: Tuple[int, int]) -> FiniteChain:
    lo, hi = J
    states = [(u, v) for u in range(lo, hi + 1) for v in range(u + 1, hi + 1)]
    index = {s: i for i, s in enumerate(states)}
    rows, cols = [], []
    for (u, v), i in index.items():
        if v - u == 1:
            continue
        for nxt in ((u - 1, v), (u + 1, v), (u, v - 1), (u, v + 1)):
            j = index.get(nxt)
            if j is not None:
                rows.append(i)
                cols.append(j)
    m = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(states), len(states)))
    return FiniteChain(states, m)


def _check_interval(J, *points):
    lo, hi = J
    if hi - lo < 2:
        raise ParameterError(f"Interval {J} must hold at least three sites")
    for p in points:
        if not lo <= p <= hi:
            raise ParameterError(f"Point {p} lies outside the interval {J}")


@lru_cache(maxsize=4096)
def m_interval_distribution(J: Tuple[int, int], a: int) -> Dict[int, float]:
    """b -> m(J, a, b) for every adjacency pair (b, b+1) inside J."""
    _check_interval(J, a, a + 2)
    lo, hi = J
    chain = interval_chain(J)
    targets = list(range(lo, hi))
    w = absorption_distribution(chain, (a, a + 2), [[(b, b + 1)] for b in targets]).weights
    return {b: float(p) for b, p in zip(targets, w)}


def m_interval(J: Tuple[int, int], a: int, b: int) -> float:
    _check_interval(J, a, a + 2, b, b + 1)
    return m_interval_distribution(tuple(J), a)[b]


# -----------------------------------------------------------------------------
# Shared table
# -----------------------------------------------------------------------------
@dataclass(frozen=True)
class ElementaryTable:
    n: int
    L: int
    q: float
    r: RProbs
    walk: WalkAggregates

    def as_dict(self) -> dict:
        return {
            "n": self.n,
            "L": self.L,
            "q": self.q,
            "r_plus": self.r.plus,
            "r_minus": self.r.minus,
            "r_total": self.r.total,
            "r_zero": list(self.r.zero),
            "A_e1": self.walk.a_e1,
            "A_e2": self.walk.a_e2,
            "A": self.walk.a_total,
            "A_side": list(self.walk.a_side),
            "A_12": self.walk.a_12,
            "A_03": self.walk.a_03,
        }


@lru_cache(maxsize=None)
def elementary_table(n: int, L: int) -> ElementaryTable:
    Torus(L).check_particles(n)
    table = ElementaryTable(n=n, L=L, q=q_corner(n), r=r_probs(n), walk=walk_aggregates(n, L))
    logger.info(f"Elementary table n={n}, L={L}: q={table.q:.6f}, r+={table.r.plus:.6f}, r-={table.r.minus:.6f}")
    return table
