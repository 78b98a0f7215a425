"""
Lattice-gas configurations on the torus: occupancy bitsets, the Hamiltonian,
Kawasaki exchange moves with their Metropolis rates, ground states and the
low-elevation path between neighbouring ground states.
"""
import heapq
import itertools
import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Iterator, List, Optional, Tuple

from pipelines.errors import ContractViolation, ParameterError
from pipelines.lattice import DIRECTIONS, Site, Symmetry, Torus

logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(levelname)s - %(message)s')
logger = logging.getLogger(__name__)


@lru_cache(maxsize=None)
def neighbor_lists(L: int) -> Tuple[Tuple[int, ...], ...]:
    """Plain-tuple copy of the neighbour table; faster than numpy for scalar lookups."""
    table = Torus(L).neighbor_table()
    return tuple(tuple(int(v) for v in row) for row in table)


def iter_bits(bits: int) -> Iterator[int]:
    while bits:
        low = bits & -bits
        yield low.bit_length() - 1
        bits ^= low


def ground_energy(n: int) -> int:
    return -2 * n * (n - 1)


class Configuration:
    """
    Immutable occupancy of the torus. `bits` has bit i set when flat site i is
    occupied; the energy is cached at construction.
    """
    __slots__ = ("torus", "bits", "n", "K", "energy")

    def __init__(self, torus: Torus, bits: int, n: Optional[int] = None, energy: Optional[int] = None):
        self.torus = torus
        self.bits = bits
        self.n = n
        self.K = bin(bits).count("1")
        if n is not None and self.K != n * n:
            raise ParameterError(f"Configuration holds {self.K} particles, expected n^2 = {n * n}")
        self.energy = compute_energy(torus.L, bits) if energy is None else energy

    @classmethod
    def from_sites(cls, torus: Torus, sites: Iterable[Site], n: Optional[int] = None) -> "Configuration":
        bits = 0
        for s in sites:
            bits |= 1 << torus.flat(s)
        return cls(torus, bits, n)

    @classmethod
    def from_indices(cls, torus: Torus, indices: Iterable[int], n: Optional[int] = None) -> "Configuration":
        bits = 0
        for i in indices:
            bits |= 1 << int(i)
        return cls(torus, bits, n)

    def occupied_indices(self) -> List[int]:
        return list(iter_bits(self.bits))

    @property
    def occupied(self) -> frozenset:
        return frozenset(self.torus.coords(i) for i in iter_bits(self.bits))

    def is_occupied(self, s: Site) -> bool:
        return bool((self.bits >> self.torus.flat(s)) & 1)

    @property
    def level(self) -> int:
        if self.n is None:
            raise ParameterError("Energy level needs the particle parameter n")
        return self.energy - ground_energy(self.n)

    def transformed(self, g: Symmetry) -> "Configuration":
        perm = g.permutation(self.torus)
        bits = 0
        for i in iter_bits(self.bits):
            bits |= 1 << int(perm[i])
        return Configuration(self.torus, bits, self.n, self.energy)

    def to_dict(self) -> dict:
        return {"L": self.torus.L, "n": self.n, "occupied": self.occupied_indices()}

    @classmethod
    def from_dict(cls, payload: dict) -> "Configuration":
        return cls.from_indices(Torus(int(payload["L"])), payload["occupied"], payload.get("n"))

    def __eq__(self, other):
        return isinstance(other, Configuration) and self.torus.L == other.torus.L and self.bits == other.bits

    def __hash__(self):
        return hash((self.torus.L, self.bits))

    def __repr__(self):
        return f"Configuration(L={self.torus.L}, K={self.K}, H={self.energy})"


@dataclass(frozen=True)
class SwapMove:
    """Exchange of the occupation variables at two adjacent flat sites."""
    a: int
    b: int

    @classmethod
    def between(cls, torus: Torus, s1: Site, s2: Site) -> "SwapMove":
        i, j = torus.flat(s1), torus.flat(s2)
        if j not in neighbor_lists(torus.L)[i]:
            raise ParameterError(f"Sites {s1} and {s2} are not nearest neighbours on L={torus.L}")
        return cls(i, j)

    def reversed(self) -> "SwapMove":
        return SwapMove(self.b, self.a)


# -----------------------------------------------------------------------------
# Energy bookkeeping
# -----------------------------------------------------------------------------
def compute_energy(L: int, bits: int) -> int:
    """Minus the number of edges with both endpoints occupied, from scratch."""
    nbrs = neighbor_lists(L)
    bonds = 0
    for i in iter_bits(bits):
        # +e1 and +e2 neighbours only, so each edge is counted once
        bonds += (bits >> nbrs[i][0]) & 1
        bonds += (bits >> nbrs[i][1]) & 1
    return -bonds


def occupied_neighbors(L: int, bits: int, i: int) -> int:
    nb = neighbor_lists(L)[i]
    return ((bits >> nb[0]) & 1) + ((bits >> nb[1]) & 1) + ((bits >> nb[2]) & 1) + ((bits >> nb[3]) & 1)


def energy(cfg: Configuration) -> int:
    return cfg.energy


def bits_delta(L: int, bits: int, a: int, b: int) -> int:
    """Energy change of exchanging sites a and b (adjacent) in `bits`."""
    oa, ob = (bits >> a) & 1, (bits >> b) & 1
    if oa == ob:
        return 0
    if ob:
        a, b = b, a
    # particle at a moves to the empty site b; b counts a as a neighbour
    return occupied_neighbors(L, bits, a) - (occupied_neighbors(L, bits, b) - 1)


def energy_delta(cfg: Configuration, m: SwapMove) -> int:
    return bits_delta(cfg.torus.L, cfg.bits, m.a, m.b)


def apply_swap(cfg: Configuration, m: SwapMove) -> Configuration:
    if ((cfg.bits >> m.a) & 1) == ((cfg.bits >> m.b) & 1):
        return cfg
    delta = energy_delta(cfg, m)
    bits = cfg.bits ^ ((1 << m.a) | (1 << m.b))
    return Configuration(cfg.torus, bits, cfg.n, cfg.energy + delta)


def rate_level(cfg: Configuration, m: SwapMove) -> int:
    return max(energy_delta(cfg, m), 0)


def rate(cfg: Configuration, m: SwapMove, beta: float) -> float:
    if beta <= 0:
        raise ParameterError(f"Inverse temperature must be positive, got beta={beta}")
    return math.exp(-beta * rate_level(cfg, m))


def log_weight(cfg: Configuration, beta: float) -> float:
    """Unnormalized Gibbs log-weight -beta H."""
    return -beta * cfg.energy


def moves(cfg: Configuration) -> Iterator[Tuple[SwapMove, int]]:
    """Every exchange that actually changes the configuration, with its energy change."""
    L, bits = cfg.torus.L, cfg.bits
    nbrs = neighbor_lists(L)
    for a in iter_bits(bits):
        na = occupied_neighbors(L, bits, a)
        for b in nbrs[a]:
            if not (bits >> b) & 1:
                yield SwapMove(a, b), na - (occupied_neighbors(L, bits, b) - 1)


# -----------------------------------------------------------------------------
# Ground states
# -----------------------------------------------------------------------------
def square_config(x: Site, n: int, torus: Torus) -> Configuration:
    torus.check_particles(n)
    return Configuration.from_sites(torus, ((x[0] + a, x[1] + b) for a in range(n) for b in range(n)), n)


def classify(cfg: Configuration):
    from pipelines.valleys import Taxonomy
    if cfg.n is None:
        raise ParameterError("Classification needs the particle parameter n")
    return Taxonomy.get(cfg.n, cfg.torus.L).classify(cfg)


# -----------------------------------------------------------------------------
# Saddle path between neighbouring ground states
# -----------------------------------------------------------------------------
def _window(torus: Torus, x: Site, direction: Site, n: int, margin: int) -> int:
    """Bitmask of the bounding box of both squares widened by `margin`."""
    x0, y0 = min(0, direction[0]) - margin, min(0, direction[1]) - margin
    x1, y1 = n - 1 + max(0, direction[0]) + margin, n - 1 + max(0, direction[1]) + margin
    mask = 0
    for a in range(x0, x1 + 1):
        for b in range(y0, y1 + 1):
            mask |= 1 << torus.flat((x[0] + a, x[1] + b))
    return mask


def _search_path(start: Configuration, goal: Configuration, ceiling: int, window: int) -> Optional[List[int]]:
    """
    Weighted A* over configurations confined to `window` with energy at most
    `ceiling`. The heuristic counts particles outside the goal square.
    """
    L = start.torus.L
    nbrs = neighbor_lists(L)
    goal_bits = goal.bits

    def h(bits):
        return bin(bits & ~goal_bits).count("1")

    counter = itertools.count()
    frontier = [(2 * h(start.bits), next(counter), 0, start.bits, start.energy)]
    parent = {start.bits: None}
    depth = {start.bits: 0}
    while frontier:
        _, _, g, bits, e = heapq.heappop(frontier)
        if bits == goal_bits:
            path = []
            while bits is not None:
                path.append(bits)
                bits = parent[bits]
            return path[::-1]
        if g > depth[bits]:
            continue
        for a in iter_bits(bits):
            na = occupied_neighbors(L, bits, a)
            for b in nbrs[a]:
                if (bits >> b) & 1 or not (window >> b) & 1:
                    continue
                e2 = e + na - (occupied_neighbors(L, bits, b) - 1)
                if e2 > ceiling:
                    continue
                nxt = bits ^ ((1 << a) | (1 << b))
                if nxt in depth and depth[nxt] <= g + 1:
                    continue
                depth[nxt] = g + 1
                parent[nxt] = bits
                heapq.heappush(frontier, (g + 1 + 2 * h(nxt), next(counter), g + 1, nxt, e2))
    return None


def saddle_path(x: Site, direction: Site, n: int, torus: Torus) -> List[Configuration]:
    """
    A self-avoiding path of single swaps from the square at x to the square at
    x + direction whose energy never exceeds H_min + 2. The path is audited
    before it is returned.
    """
    torus.check_particles(n)
    if tuple(direction) not in DIRECTIONS:
        raise ParameterError(f"Direction must be a unit lattice vector, got {direction}")
    start = square_config(x, n, torus)
    goal = square_config(torus.add(x, direction), n, torus)
    ceiling = ground_energy(n) + 2

    path_bits = None
    for margin in (1, 2):
        path_bits = _search_path(start, goal, ceiling, _window(torus, x, direction, n, margin))
        if path_bits is not None:
            break
        logger.warning(f"No saddle path inside a margin-{margin} window; widening")
    if path_bits is None:
        raise ContractViolation(f"No path of elevation <= H_min+2 between {x} and {torus.add(x, direction)}")

    path = [Configuration(torus, b, n) for b in path_bits]
    audit_saddle_path(path, n)
    logger.info(f"Saddle path {x} -> {torus.add(x, direction)}: {len(path) - 1} swaps")
    return path


def audit_saddle_path(path: List[Configuration], n: int):
    """Raise ContractViolation unless `path` is a valid minimal-elevation path between two ground states."""
    h_min = ground_energy(n)
    if path[0].energy != h_min or path[-1].energy != h_min:
        raise ContractViolation(f"Path endpoints have energies {path[0].energy}, {path[-1].energy}, expected {h_min}")
    if len({c.bits for c in path}) != len(path):
        raise ContractViolation("Path revisits a configuration")
    L = path[0].torus.L
    nbrs = neighbor_lists(L)
    for prev, cur in zip(path, path[1:]):
        diff = prev.bits ^ cur.bits
        sites = list(iter_bits(diff))
        if len(sites) != 2 or sites[1] not in nbrs[sites[0]] or prev.K != cur.K:
            raise ContractViolation(f"Consecutive configurations differ by {sites}, not one swap")
        if cur.energy != compute_energy(L, cur.bits):
            raise ContractViolation("Cached energy disagrees with recomputation along the path")
    top = max(c.energy for c in path)
    if top != h_min + 2:
        raise ContractViolation(f"Path elevation is H_min{top - h_min:+d}, expected H_min+2")


def bottleneck_log_weight(path: List[Configuration], beta: float) -> float:
    """min_j log mu(xi_j) - log mu(xi_0); -2 beta for a saddle path."""
    base = log_weight(path[0], beta)
    return min(log_weight(c, beta) for c in path) - base
