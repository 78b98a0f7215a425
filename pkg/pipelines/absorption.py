"""
Rate-one absorption engine.

In the beta -> infinity limit, a configuration outside every valley only
performs the moves that do not raise the energy. Each of them fires at rate 1.
Starting from a configuration xi, the engine explores that rate-one component
until it meets valley members. It then solves the absorption problem that
gives the hitting measure M(xi, .) on the valleys.

Every explored state is memoised, so later neighbourhood configurations
landing in the same component are answered without another solve.
"""
import logging
import os
from collections import deque
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, List, Tuple

import numpy as np
import scipy.sparse as sp

try:
    from config import settings
except ImportError:
    import sys
    sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
    from config import settings

from pipelines.chains import Distribution, solve_linear
from pipelines.configuration import Configuration, moves
from pipelines.errors import SolverError, TaxonomyError

logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(levelname)s - %(message)s')
logger = logging.getLogger(__name__)


@dataclass
class Component:
    exits: List            # ValleyId per column
    solution: np.ndarray   # rows: explored states, columns: exits


class RateOneEngine:
    def __init__(self, taxonomy):
        self.taxonomy = taxonomy
        self._where: Dict[int, Tuple[int, int]] = {}
        self._components: List[Component] = []

    @property
    def explored_states(self) -> int:
        return len(self._where)

    def measure(self, xi: Configuration) -> Distribution:
        found = self.taxonomy.classify(xi)
        if found.valley is not None:
            return Distribution.point(found.valley)
        if found.level <= 1:
            raise TaxonomyError(f"Level-{found.level} configuration {sorted(xi.occupied)} is outside every valley")
        hit = self._where.get(xi.bits)
        if hit is None:
            self._explore(xi)
            hit = self._where[xi.bits]
        comp = self._components[hit[0]]
        row = np.clip(comp.solution[hit[1]], 0.0, None)
        return Distribution.from_mapping(dict(zip(comp.exits, row)))

    def _explore(self, xi: Configuration):
        torus, n = self.taxonomy.torus, self.taxonomy.n
        cap = settings.MAX_COMPONENT_STATES
        index = {xi.bits: 0}
        states = [(xi.bits, xi.energy)]
        exits: Dict = {}
        rows, cols, e_rows, e_cols, degree = [], [], [], [], []
        queue = deque([0])
        while queue:
            i = queue.popleft()
            bits, e = states[i]
            d = 0
            for m, delta in moves(Configuration(torus, bits, n, e)):
                if delta > 0:
                    continue
                d += 1
                nb = bits ^ ((1 << m.a) | (1 << m.b))
                j = index.get(nb)
                if j is None:
                    target = self.taxonomy.classify(Configuration(torus, nb, n, e + delta))
                    if target.valley is None and target.level <= 1:
                        raise TaxonomyError(f"Rate-one move from {sorted(xi.occupied)} stops at a level-{target.level} "
                                            f"configuration outside every valley")
                    if target.valley is not None:
                        e_rows.append(i)
                        e_cols.append(exits.setdefault(target.valley, len(exits)))
                        continue
                    if len(states) >= cap:
                        raise SolverError(f"Rate-one component from {sorted(xi.occupied)} exceeds {cap} states")
                    j = index[nb] = len(states)
                    states.append((nb, e + delta))
                    queue.append(j)
                rows.append(i)
                cols.append(j)
            if d == 0:
                raise SolverError(f"Configuration outside every valley has no rate-one move (energy {e})")
            degree.append(d)
        if not exits:
            raise SolverError(f"Rate-one component of size {len(states)} never reaches a valley")

        T = len(states)
        A = sp.diags(np.asarray(degree, dtype=float)) - sp.csr_matrix(
            (np.ones(len(rows)), (rows, cols)), shape=(T, T))
        B = sp.csr_matrix((np.ones(len(e_rows)), (e_rows, e_cols)), shape=(T, len(exits))).toarray()
        X = np.atleast_2d(solve_linear(A, B)).reshape(T, len(exits))

        cid = len(self._components)
        self._components.append(Component(list(exits), X))
        for bits, k in index.items():
            self._where[bits] = (cid, k)
        logger.debug(f"Rate-one component {cid}: {T} states, {len(exits)} exit valleys")


@lru_cache(maxsize=4)
def engine_for(taxonomy) -> RateOneEngine:
    """One memoising engine per taxonomy; `engine_for.cache_clear()` drops them."""
    return RateOneEngine(taxonomy)


def hitting_measure(xi: Configuration, taxonomy) -> Distribution:
    return engine_for(taxonomy).measure(xi)
