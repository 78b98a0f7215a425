"""
Event-driven simulation of the Kawasaki dynamics at finite beta.

Moves are bucketed by rate level: a particle jump raising the energy by
d > 0 fires at rate e^{-beta d}, every other jump at rate 1. Selecting an
event draws a level from the per-level totals and then a uniform move in
that bucket. After a jump only moves within distance two of the two touched
sites are re-rated.
"""
import logging
import math
import multiprocessing as mp
import os
from dataclasses import dataclass
from functools import lru_cache, partial
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import stats
from tqdm import tqdm

try:
    from config import settings
except ImportError:
    import sys
    sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
    from config import settings

from pipelines.chains import Distribution
from pipelines.configuration import (Configuration, compute_energy, ground_energy, neighbor_lists,
                                     occupied_neighbors, square_config)
from pipelines.errors import ContractViolation, ParameterError
from pipelines.lattice import Torus
from pipelines.valleys import Taxonomy, ValleyId

logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(levelname)s - %(message)s')
logger = logging.getLogger(__name__)

LEVELS = 4      # an exchange changes the energy by at most 3


@lru_cache(maxsize=None)
def _balls(L: int) -> Tuple[Tuple[int, ...], ...]:
    """Sites within graph distance two of each site."""
    nbrs = neighbor_lists(L)
    out = []
    for s in range(L * L):
        ball = {s}
        for a in nbrs[s]:
            ball.add(a)
            ball.update(nbrs[a])
        out.append(tuple(sorted(ball)))
    return tuple(out)


class _Bucket:
    """Indexable set with O(1) add, remove and uniform pick."""
    __slots__ = ("items", "pos")

    def __init__(self):
        self.items: List[Tuple[int, int]] = []
        self.pos: Dict[Tuple[int, int], int] = {}

    def add(self, key):
        self.pos[key] = len(self.items)
        self.items.append(key)

    def remove(self, key):
        i = self.pos.pop(key)
        last = self.items.pop()
        if i < len(self.items):
            self.items[i] = last
            self.pos[last] = i

    def __len__(self):
        return len(self.items)


class KawasakiSimulator:
    """Continuous-time Kawasaki dynamics from `cfg0`; state is (bits, energy, time)."""

    def __init__(self, cfg0: Configuration, beta: float, seed: int):
        if beta <= 0:
            raise ParameterError(f"Inverse temperature must be positive, got beta={beta}")
        self.torus = cfg0.torus
        self.L = cfg0.torus.L
        self.n = cfg0.n
        self.beta = beta
        self.rng = np.random.default_rng(seed)
        self.weights = [math.exp(-beta * lvl) for lvl in range(LEVELS)]
        self.bits = cfg0.bits
        self.energy = cfg0.energy
        self.time = 0.0
        self.events = 0
        self._nbrs = neighbor_lists(self.L)
        self._balls = _balls(self.L)
        self._buckets = [_Bucket() for _ in range(LEVELS)]
        self._moves_of: Dict[int, List[Tuple[Tuple[int, int], int]]] = {}
        for p in range(self.L * self.L):
            if (self.bits >> p) & 1:
                self._rate_particle(p)

    @property
    def configuration(self) -> Configuration:
        return Configuration(self.torus, self.bits, self.n, self.energy)

    @property
    def level(self) -> int:
        return self.energy - ground_energy(self.n)

    def total_rate(self) -> float:
        return sum(len(b) * w for b, w in zip(self._buckets, self.weights))

    def _rate_particle(self, p: int):
        bits, L = self.bits, self.L
        na = occupied_neighbors(L, bits, p)
        entries = []
        for q in self._nbrs[p]:
            if not (bits >> q) & 1:
                lvl = max(na - (occupied_neighbors(L, bits, q) - 1), 0)
                self._buckets[lvl].add((p, q))
                entries.append(((p, q), lvl))
        self._moves_of[p] = entries

    def _drop_particle(self, p: int):
        for key, lvl in self._moves_of.pop(p, ()):
            self._buckets[lvl].remove(key)

    def step(self) -> Tuple[float, int, int, int]:
        """One event: returns (holding time, from site, to site, energy change)."""
        rates = [len(b) * w for b, w in zip(self._buckets, self.weights)]
        total = sum(rates)
        dt = self.rng.exponential(1.0 / total)
        u = self.rng.random() * total
        lvl = 0
        while lvl < LEVELS - 1 and u >= rates[lvl]:
            u -= rates[lvl]
            lvl += 1
        bucket = self._buckets[lvl]
        a, b = bucket.items[int(self.rng.integers(len(bucket)))]

        L = self.L
        delta = occupied_neighbors(L, self.bits, a) - (occupied_neighbors(L, self.bits, b) - 1)
        region = set(self._balls[a]) | set(self._balls[b])
        for s in region:
            self._drop_particle(s)
        self.bits ^= (1 << a) | (1 << b)
        for s in sorted(region):
            if (self.bits >> s) & 1:
                self._rate_particle(s)

        self.energy += delta
        self.time += dt
        self.events += 1
        return dt, a, b, delta


# -----------------------------------------------------------------------------
# Trajectories
# -----------------------------------------------------------------------------
@dataclass
class Trajectory:
    initial: Configuration
    beta: float
    seed: int
    times: np.ndarray           # event times, strictly increasing
    moves: np.ndarray           # (events, 2) flat sites: particle from, to
    energies: np.ndarray        # energy after each event
    end_time: float
    truncated: bool = False

    @property
    def final(self) -> Configuration:
        bits = self.initial.bits
        for a, b in self.moves:
            bits ^= (1 << int(a)) | (1 << int(b))
        return Configuration(self.initial.torus, bits, self.initial.n)

    def states(self):
        """(entry time, bits, energy) of every visited configuration, initial included."""
        bits, energy = self.initial.bits, self.initial.energy
        yield 0.0, bits, energy
        for t, (a, b), e in zip(self.times, self.moves, self.energies):
            bits ^= (1 << int(a)) | (1 << int(b))
            yield float(t), bits, int(e)

    def check(self):
        if len(self.times) and np.any(np.diff(self.times) <= 0):
            raise ContractViolation("Trajectory times are not strictly increasing")
        L = self.initial.torus.L
        final = self.final
        if len(self.energies) and compute_energy(L, final.bits) != int(self.energies[-1]):
            raise ContractViolation("Replayed energy disagrees with the incremental bookkeeping")

    def to_frame(self) -> pd.DataFrame:
        torus = self.initial.torus
        a, b = self.moves[:, 0], self.moves[:, 1]
        n = self.initial.n
        return pd.DataFrame({
            "event_index": np.arange(1, len(self.times) + 1),
            "time": self.times,
            "x1": a % torus.L, "y1": a // torus.L,
            "x2": b % torus.L, "y2": b // torus.L,
            "level": self.energies - ground_energy(n),
        }, columns=settings.TRAJECTORY_COLUMNS)


def simulate(cfg0: Configuration, beta: float, seed: int, max_events: Optional[int] = None,
             max_time: Optional[float] = None,
             stop: Optional[Callable[[KawasakiSimulator], bool]] = None) -> Trajectory:
    """
    Run until `stop` holds, `max_time` is passed or `max_events` events were
    drawn. Without a predicate or time limit the event budget is the stop rule;
    a predicate still unmet when the budget runs out flags the trajectory.
    """
    budget = settings.EVENT_BUDGET if max_events is None else max_events
    if budget <= 0:
        raise ParameterError(f"Event budget must be positive, got {budget}")
    sim = KawasakiSimulator(cfg0, beta, seed)
    times, moves, energies = [], [], []
    truncated = False
    while True:
        if stop is not None and stop(sim):
            break
        if sim.events >= budget:
            truncated = stop is not None or max_time is not None
            break
        dt, a, b, _ = sim.step()
        if max_time is not None and sim.time > max_time:
            sim.time = max_time
            break
        times.append(sim.time)
        moves.append((a, b))
        energies.append(sim.energy)
    if truncated:
        logger.warning(f"Simulation stopped by the event budget ({budget}) before its stop rule")
    return Trajectory(
        initial=cfg0, beta=beta, seed=seed,
        times=np.asarray(times, dtype=float),
        moves=np.asarray(moves, dtype=np.int64).reshape(-1, 2),
        energies=np.asarray(energies, dtype=np.int64),
        end_time=sim.time, truncated=truncated,
    )


@dataclass
class TracePath:
    times: np.ndarray       # trace-clock entry time of each visited set member
    states: List[int]       # bits of successive distinct members
    total_time: float


def trace_on(traj: Trajectory, member: Callable[[int, int], bool]) -> TracePath:
    """
    Time-changed path that only runs while the trajectory sits in the set
    described by member(bits, energy).
    """
    clock, last_state = 0.0, None
    times, states = [], []
    entries = list(traj.states())
    for k, (t, bits, energy) in enumerate(entries):
        leave = entries[k + 1][0] if k + 1 < len(entries) else traj.end_time
        if not member(bits, energy):
            continue
        if bits != last_state:
            times.append(clock)
            states.append(bits)
            last_state = bits
        clock += leave - t
    return TracePath(np.asarray(times), states, clock)


def ground_member(n: int) -> Callable[[int, int], bool]:
    h_min = ground_energy(n)
    return lambda bits, energy: energy == h_min


# -----------------------------------------------------------------------------
# Excursions between ground states
# -----------------------------------------------------------------------------
@dataclass
class ExcursionRecord:
    start: Tuple[int, int]
    end: Tuple[int, int]
    duration: float
    outside_time: float
    max_level: int
    entered_delta1: bool
    entered_delta2: bool
    events: int


@dataclass
class ExcursionReport:
    n: int
    L: int
    beta: float
    seed: int
    records: List[ExcursionRecord]
    total_time: float
    outside_time: float
    truncated: bool = False

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame([r.__dict__ for r in self.records])

    def empirical_kernel(self) -> Distribution:
        """Law of the displacement end - start over completed excursions, as flat indices."""
        torus = Torus(self.L)
        counts: Dict[int, int] = {}
        for r in self.records:
            d = torus.flat((r.end[0] - r.start[0], r.end[1] - r.start[1]))
            counts[d] = counts.get(d, 0) + 1
        total = sum(counts.values())
        if total == 0:
            raise ParameterError("No completed excursion to build a kernel from")
        return Distribution.from_mapping({d: c / total for d, c in sorted(counts.items())})

    def scaled_durations(self) -> np.ndarray:
        return np.array([r.duration for r in self.records]) / math.exp(2.0 * self.beta)

    def delta2_fraction(self) -> float:
        return float(np.mean([r.entered_delta2 for r in self.records])) if self.records else float("nan")

    def delta1_fraction(self) -> float:
        return float(np.mean([r.entered_delta1 for r in self.records])) if self.records else float("nan")

    def outside_fraction(self) -> float:
        return self.outside_time / self.total_time if self.total_time > 0 else float("nan")


def _excursion_worker(task, n: int, L: int, beta: float, budget: int) -> ExcursionReport:
    count, child = task
    tax = Taxonomy.get(n, L)
    torus = tax.torus
    seed = int(child.generate_state(1)[0])
    sim = KawasakiSimulator(square_config((0, 0), n, torus), beta, seed)
    h_min = ground_energy(n)
    current = (0, 0)
    start_time, start_events = 0.0, 0
    outside, outside_total = 0.0, 0.0
    max_level, d1, d2 = 0, False, False
    records: List[ExcursionRecord] = []
    truncated = False
    while len(records) < count:
        if sim.events - start_events >= budget:
            truncated = True
            break
        was_ground = sim.energy == h_min
        dt, _, _, _ = sim.step()
        if not was_ground:
            outside += dt
            outside_total += dt
        level = sim.energy - h_min
        max_level = max(max_level, level)
        d1 = d1 or level > 1
        d2 = d2 or level > 2
        if level == 0:
            anchor = tax.classify(sim.configuration).valley.anchor
            if anchor != current:
                records.append(ExcursionRecord(current, anchor, sim.time - start_time, outside,
                                               max_level, d1, d2, sim.events - start_events))
                current, start_time, start_events = anchor, sim.time, sim.events
                outside, max_level, d1, d2 = 0.0, 0, False, False
    if truncated:
        logger.warning(f"Excursion {len(records) + 1} exceeded the event budget of {budget}")
    return ExcursionReport(n, L, beta, seed, records, sim.time, outside_total, truncated)


def excursion_stats(n: int, L: int, beta: float, excursions: int, seed: int,
                    budget: Optional[int] = None, replicas: int = 1, workers: int = 1) -> ExcursionReport:
    """
    Simulate from the square at the origin until `excursions` moves between
    distinct ground states were completed, split over independent replicas.
    """
    Torus(L).check_particles(n)
    if excursions <= 0:
        raise ParameterError(f"Excursion target must be positive, got {excursions}")
    budget = settings.EVENT_BUDGET if budget is None else budget
    if budget <= 0:
        raise ParameterError(f"Event budget must be positive, got {budget}")
    replicas = max(1, min(replicas, excursions))
    shares = [excursions // replicas + (1 if r < excursions % replicas else 0) for r in range(replicas)]
    children = np.random.SeedSequence(seed).spawn(replicas)
    tasks = list(zip(shares, children))
    worker = partial(_excursion_worker, n=n, L=L, beta=beta, budget=budget)
    if workers > 1 and replicas > 1:
        with mp.Pool(processes=min(workers, replicas)) as pool:
            parts = list(tqdm(pool.imap(worker, tasks), total=len(tasks), desc=f"Excursions beta={beta}"))
    else:
        parts = [worker(t) for t in tqdm(tasks, desc=f"Excursions beta={beta}")]
    report = ExcursionReport(
        n, L, beta, seed,
        records=[r for p in parts for r in p.records],
        total_time=sum(p.total_time for p in parts),
        outside_time=sum(p.outside_time for p in parts),
        truncated=any(p.truncated for p in parts),
    )
    logger.info(f"beta={beta}: {len(report.records)} excursions, outside fraction {report.outside_fraction():.3e}")
    return report


# -----------------------------------------------------------------------------
# Statistics
# -----------------------------------------------------------------------------
def ks_exponentiality(samples: Sequence[float]) -> float:
    """KS distance between samples / mean and the unit-mean exponential law."""
    x = np.asarray(samples, dtype=float)
    if len(x) < settings.KS_MIN_SAMPLES:
        raise ParameterError(f"KS test needs at least {settings.KS_MIN_SAMPLES} samples, got {len(x)}")
    if np.any(x < 0):
        raise ParameterError("KS samples must be non-negative")
    mean = x.mean()
    if mean <= 0:
        return 1.0
    return float(stats.kstest(x / mean, "expon").statistic)


def ks_critical_value(n_samples: int, level: float = settings.KS_LEVEL) -> float:
    return float(stats.kstwo.ppf(1.0 - level, n_samples))


def tv_distance(p: Distribution, q: Distribution) -> float:
    pa, qa = p.as_dict(), q.as_dict()
    return 0.5 * sum(abs(pa.get(k, 0.0) - qa.get(k, 0.0)) for k in set(pa) | set(qa))


def kernel_distribution(row: np.ndarray) -> Distribution:
    """Exact kernel row Q(0, .) as a Distribution over flat displacements."""
    return Distribution.from_mapping({i: float(p) for i, p in enumerate(row)})


def jump_balance(traj: Trajectory, min_count: int = 20) -> float:
    """
    Largest standardized imbalance |N(a->b) - N(b->a)| / sqrt(N(a->b) + N(b->a))
    over configuration pairs crossed at least `min_count` times.
    """
    counts: Dict[Tuple[int, int], int] = {}
    prev = None
    for _, bits, _ in traj.states():
        if prev is not None:
            counts[(prev, bits)] = counts.get((prev, bits), 0) + 1
        prev = bits
    worst = 0.0
    for (a, b), forward in counts.items():
        if a > b:
            continue
        back = counts.get((b, a), 0)
        if forward + back >= min_count:
            worst = max(worst, abs(forward - back) / math.sqrt(forward + back))
    return worst


# -----------------------------------------------------------------------------
# Valley exits
# -----------------------------------------------------------------------------
@dataclass
class ValleyExitReport:
    valley: ValleyId
    beta: float
    attractor_first: np.ndarray     # attractor visited before leaving
    exit_times: np.ndarray          # in units of e^beta
    targets: List[str]
    truncated: int

    def target_frequencies(self) -> Dict[str, float]:
        return pd.Series(self.targets).value_counts(normalize=True).sort_index().to_dict()


def valley_exit_stats(n: int, L: int, beta: float, runs: int, seed: int,
                      valley: Optional[ValleyId] = None, budget: Optional[int] = None) -> ValleyExitReport:
    """
    Start in a uniformly chosen member of the valley (default E^{2,2} at the
    origin) and run until a level-0/1 configuration outside it is reached.
    """
    tax = Taxonomy.get(n, L)
    valley = valley or ValleyId.corner_band((0, 0), 2, 2)
    if runs <= 0:
        raise ParameterError(f"Number of runs must be positive, got {runs}")
    budget = settings.EVENT_BUDGET if budget is None else budget
    members = tax.members(valley)
    inside = {c.bits for c in members}
    attractor = members[0].bits
    h_min = ground_energy(n)
    rng = np.random.default_rng(seed)
    seeds = rng.integers(0, 2**63 - 1, size=runs)
    first, times, targets, truncated = [], [], [], 0
    for r in tqdm(range(runs), desc=f"Valley exits beta={beta}"):
        start = members[int(rng.integers(len(members)))]
        sim = KawasakiSimulator(start, beta, int(seeds[r]))
        seen = start.bits == attractor
        while sim.events < budget:
            sim.step()
            if sim.bits == attractor:
                seen = True
            if sim.energy - h_min <= 1 and sim.bits not in inside:
                break
        else:
            truncated += 1
            continue
        found = tax.classify(sim.configuration)
        first.append(seen)
        times.append(sim.time / math.exp(beta))
        targets.append(found.label())
    if truncated:
        logger.warning(f"{truncated} of {runs} valley runs exhausted the event budget")
    return ValleyExitReport(valley, beta, np.asarray(first), np.asarray(times), targets, truncated)


class GroundChanges:
    """Stop rule for `simulate`: holds once `count` jumps between distinct ground states happened."""

    def __init__(self, n: int, L: int, count: int):
        if count <= 0:
            raise ParameterError(f"Excursion target must be positive, got {count}")
        self.taxonomy = Taxonomy.get(n, L)
        self.h_min = ground_energy(n)
        self.count = count
        self.current = None
        self.seen = 0

    def __call__(self, sim: KawasakiSimulator) -> bool:
        if sim.energy == self.h_min:
            anchor = self.taxonomy.classify(sim.configuration).valley.anchor
            if self.current is None:
                self.current = anchor
            elif anchor != self.current:
                self.seen += 1
                self.current = anchor
        return self.seen >= self.count
