"""
Finite continuous-time Markov chains and the exact solvers every hitting
quantity is built on: absorption distributions, mean hitting times,
stationary measures, capacities and trace chains.
"""
import logging
import os
from dataclasses import dataclass, field
from typing import Hashable, List, Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse import csgraph
from scipy.sparse.linalg import bicgstab, cg, splu

try:
    from config import settings
except ImportError:
    import sys
    sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
    from config import settings

from pipelines.errors import ParameterError, SolverError

logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(levelname)s - %(message)s')
logger = logging.getLogger(__name__)


# -----------------------------------------------------------------------------
# Types
# -----------------------------------------------------------------------------
@dataclass
class Distribution:
    """Finitely supported probability measure; labels are opaque."""
    support: List[Hashable]
    weights: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if len(self.support) != len(self.weights):
            raise ParameterError(f"Support has {len(self.support)} labels but {len(self.weights)} weights")
        if np.any(self.weights < -settings.MASS_TOL):
            raise SolverError(f"Negative probability {self.weights.min()}")
        total = self.weights.sum()
        if abs(total - 1.0) > settings.MASS_TOL:
            raise SolverError(f"Distribution mass is {total!r}, expected 1 within {settings.MASS_TOL}")
        self.weights = np.clip(self.weights, 0.0, None)

    @classmethod
    def point(cls, label) -> "Distribution":
        return cls([label], np.ones(1))

    @classmethod
    def from_mapping(cls, masses: dict, drop_zero: bool = True) -> "Distribution":
        items = [(k, v) for k, v in masses.items() if not drop_zero or v > 0.0]
        return cls([k for k, _ in items], np.array([v for _, v in items], dtype=float))

    def as_dict(self) -> dict:
        out = {}
        for label, w in zip(self.support, self.weights):
            out[label] = out.get(label, 0.0) + float(w)
        return out

    def mass(self, label) -> float:
        return float(sum(w for s, w in zip(self.support, self.weights) if s == label))

    def pushforward(self, fn) -> "Distribution":
        out = {}
        for label, w in zip(self.support, self.weights):
            key = fn(label)
            out[key] = out.get(key, 0.0) + float(w)
        return Distribution(list(out), np.array(list(out.values())))


@dataclass
class FiniteChain:
    """
    States are opaque labels identified by index. `rates[i, j]` is the jump
    rate i -> j; the diagonal is ignored.
    """
    states: List[Hashable]
    rates: sp.csr_matrix
    pi: Optional[np.ndarray] = None
    _index: dict = field(default=None, init=False, repr=False)

    def __post_init__(self):
        m = sp.csr_matrix(self.rates, dtype=float)
        m.setdiag(0.0)
        m.eliminate_zeros()
        if m.shape != (len(self.states), len(self.states)):
            raise ParameterError(f"Rate matrix shape {m.shape} does not match {len(self.states)} states")
        if m.nnz and (m.data.min() < 0 or not np.all(np.isfinite(m.data))):
            raise ParameterError("Off-diagonal rates must be finite and non-negative")
        self.rates = m
        if self.pi is not None:
            self.pi = np.asarray(self.pi, dtype=float)
            self.check_reversible()

    @property
    def size(self) -> int:
        return len(self.states)

    def index(self, label) -> int:
        if self._index is None:
            self._index = {s: i for i, s in enumerate(self.states)}
        try:
            return self._index[label]
        except KeyError:
            raise ParameterError(f"Unknown state {label!r}") from None

    def indices(self, labels) -> np.ndarray:
        return np.array(sorted({self.index(s) for s in labels}), dtype=np.int64)

    def holding_rates(self) -> np.ndarray:
        return np.asarray(self.rates.sum(axis=1)).ravel()

    def generator(self) -> sp.csr_matrix:
        return (self.rates - sp.diags(self.holding_rates())).tocsr()

    def check_reversible(self, tol: float = 1e-10):
        flow = sp.diags(self.pi) @ self.rates
        asym = abs(flow - flow.T)
        worst = asym.max() if asym.nnz else 0.0
        scale = max(1.0, abs(flow).max() if flow.nnz else 1.0)
        if worst > tol * scale:
            raise ParameterError(f"Detailed balance violated: max |pi_i r_ij - pi_j r_ji| = {worst}")


# -----------------------------------------------------------------------------
# Linear algebra
# -----------------------------------------------------------------------------
def solve_linear(A: sp.spmatrix, B: np.ndarray, symmetric: bool = False) -> np.ndarray:
    """
    Solve A X = B. Sparse LU up to DIRECT_SOLVE_MAX_UNKNOWNS unknowns, Jacobi
    preconditioned CG (symmetric) or BiCGSTAB above; the residual is always
    checked against RESIDUAL_TOL.
    """
    A = sp.csc_matrix(A)
    B = np.asarray(B, dtype=float)
    if A.shape[0] == 0:
        return np.zeros_like(B)
    if A.shape[0] <= settings.DIRECT_SOLVE_MAX_UNKNOWNS:
        try:
            X = splu(A).solve(B)
        except RuntimeError as e:
            raise SolverError(f"Sparse factorization failed: {e}") from e
    else:
        diag = A.diagonal()
        M = sp.diags(np.where(diag != 0, 1.0 / diag, 1.0))
        method = cg if symmetric else bicgstab
        cols = B.reshape(B.shape[0], -1)
        X = np.empty_like(cols)
        for k in range(cols.shape[1]):
            X[:, k], info = method(A, cols[:, k], rtol=settings.SOLVER_RTOL, atol=0.0, M=M, maxiter=10 * A.shape[0])
            if info != 0:
                raise SolverError(f"Iterative solver did not converge (info={info})")
        X = X.reshape(B.shape)
    residual = np.abs(A @ X - B).max() if B.size else 0.0
    scale = max(1.0, np.abs(B).max() if B.size else 1.0)
    if residual > settings.RESIDUAL_TOL * scale:
        raise SolverError(f"Residual {residual:.3e} above tolerance {settings.RESIDUAL_TOL:.1e}")
    return X


def _can_reach(rates: sp.csr_matrix, targets: np.ndarray) -> np.ndarray:
    """Boolean mask of states from which some target is reachable."""
    n = rates.shape[0]
    mask = np.zeros(n, dtype=bool)
    if len(targets) == 0:
        return mask
    graph = _with_source(rates.T.tocsr(), targets)
    order = csgraph.breadth_first_order(graph, n, directed=True, return_predecessors=False)
    mask[order[order < n]] = True
    return mask


def _with_source(m: sp.csr_matrix, sources: np.ndarray) -> sp.csr_matrix:
    """Append a super-source node (index n) pointing at every source."""
    n = m.shape[0]
    extra_row = sp.csr_matrix((np.ones(len(sources)), (np.zeros(len(sources), dtype=np.int64), sources)), shape=(1, n))
    top = sp.hstack([m, sp.csr_matrix((n, 1))])
    bottom = sp.hstack([extra_row, sp.csr_matrix((1, 1))])
    return sp.vstack([top, bottom]).tocsr()


def _reachable_from(rates: sp.csr_matrix, start: int) -> np.ndarray:
    order = csgraph.breadth_first_order(rates, start, directed=True, return_predecessors=False)
    mask = np.zeros(rates.shape[0], dtype=bool)
    mask[order] = True
    return mask


def absorption_matrix(rates: sp.csr_matrix, transient: np.ndarray, absorbing: np.ndarray) -> np.ndarray:
    """
    X[t, a] = probability that the chain started at transient[t] is absorbed
    at absorbing[a]. Every transient state must be able to reach absorption.
    """
    rates = sp.csr_matrix(rates)
    hold = np.asarray(rates.sum(axis=1)).ravel()
    R_tt = rates[transient][:, transient]
    R_ta = rates[transient][:, absorbing]
    A = sp.diags(hold[transient]) - R_tt
    return np.atleast_2d(solve_linear(A, R_ta.toarray())).reshape(len(transient), len(absorbing))


def absorption_distribution(c: FiniteChain, start, parts: Sequence[Sequence]) -> Distribution:
    """Probability of being absorbed in each part, as a Distribution indexed by part number."""
    s = c.index(start)
    part_idx = [c.indices(p) for p in parts]
    absorbing = np.concatenate(part_idx) if part_idx else np.array([], dtype=np.int64)
    if len(np.unique(absorbing)) != len(absorbing):
        raise ParameterError("Absorbing parts overlap")
    owner = {int(a): k for k, p in enumerate(part_idx) for a in p}
    if s in owner:
        w = np.zeros(len(parts))
        w[owner[s]] = 1.0
        return Distribution(list(range(len(parts))), w)

    reach = _reachable_from(_cut_rows(c.rates, absorbing), s)
    can_absorb = _can_reach(_cut_rows(c.rates, absorbing), absorbing)
    transient = np.array([i for i in np.flatnonzero(reach) if i not in owner], dtype=np.int64)
    if not np.all(can_absorb[transient]):
        raise SolverError(f"From {start!r} the chain can reach states that never get absorbed")
    X = absorption_matrix(c.rates, transient, absorbing)
    row = X[int(np.searchsorted(transient, s))]
    w = np.zeros(len(parts))
    for a, p in zip(absorbing, row):
        w[owner[int(a)]] += p
    return Distribution(list(range(len(parts))), w)


def _cut_rows(rates: sp.csr_matrix, rows: np.ndarray) -> sp.csr_matrix:
    """Copy of `rates` with the given rows emptied (those states become absorbing)."""
    keep = np.ones(rates.shape[0])
    keep[rows] = 0.0
    out = (sp.diags(keep) @ rates).tocsr()
    out.eliminate_zeros()
    return out


def mean_hitting_times(c: FiniteChain, target) -> np.ndarray:
    """Expected hitting time of `target` from every state (0 on the target)."""
    tgt = c.indices(target)
    cut = _cut_rows(c.rates, tgt)
    transient = np.setdiff1d(np.arange(c.size), tgt)
    hits = _can_reach(cut, tgt)
    if not np.all(hits[transient]):
        raise SolverError(f"{int(np.sum(~hits[transient]))} states never reach the target")
    hold = c.holding_rates()
    A = sp.diags(hold[transient]) - c.rates[transient][:, transient]
    out = np.zeros(c.size)
    out[transient] = solve_linear(A, np.ones(len(transient)))
    return out


def expected_hitting_time(c: FiniteChain, start, target) -> float:
    s = c.index(start)
    tgt = c.indices(target)
    if s in set(tgt.tolist()):
        return 0.0
    cut = _cut_rows(c.rates, tgt)
    reach = _reachable_from(cut, s)
    reach[tgt] = False
    transient = np.flatnonzero(reach)
    if not np.all(_can_reach(cut, tgt)[transient]):
        raise SolverError(f"Target unreachable from some state visited after {start!r}")
    hold = c.holding_rates()
    A = sp.diags(hold[transient]) - c.rates[transient][:, transient]
    t = solve_linear(A, np.ones(len(transient)))
    return float(t[int(np.searchsorted(transient, s))])


def stationary(c: FiniteChain) -> Distribution:
    ncomp, _ = csgraph.connected_components(c.rates, directed=True, connection="strong")
    if ncomp != 1:
        raise SolverError(f"Chain is reducible ({ncomp} communicating classes)")
    Q = c.generator().T.tolil()
    Q[c.size - 1, :] = np.ones(c.size)
    b = np.zeros(c.size)
    b[-1] = 1.0
    pi = solve_linear(Q.tocsc(), b)
    return Distribution(list(c.states), pi)


def dirichlet_form(c: FiniteChain, f: np.ndarray) -> float:
    """(1/2) sum_{x,y} pi(x) r(x,y) (f(y) - f(x))^2."""
    if c.pi is None:
        raise ParameterError("Dirichlet form needs a reversible measure pi")
    coo = c.rates.tocoo()
    diff = f[coo.col] - f[coo.row]
    return 0.5 * float(np.sum(c.pi[coo.row] * coo.data * diff * diff))


def equilibrium_potential(c: FiniteChain, A, B) -> np.ndarray:
    a_idx, b_idx = c.indices(A), c.indices(B)
    if len(a_idx) == 0 or len(b_idx) == 0:
        raise ParameterError("Capacity sets must be nonempty")
    if set(a_idx.tolist()) & set(b_idx.tolist()):
        raise ParameterError("Capacity sets must be disjoint")
    boundary = np.concatenate([a_idx, b_idx])
    interior = np.setdiff1d(np.arange(c.size), boundary)
    f = np.zeros(c.size)
    f[a_idx] = 1.0
    if len(interior):
        hits = _can_reach(_cut_rows(c.rates, boundary), boundary)
        if not np.all(hits[interior]):
            raise SolverError("Some states never reach A or B")
        X = absorption_matrix(c.rates, interior, a_idx)
        f[interior] = X.sum(axis=1)
    return f


def capacity(c: FiniteChain, A, B) -> float:
    return dirichlet_form(c, equilibrium_potential(c, A, B))


def trace_chain(c: FiniteChain, subset) -> FiniteChain:
    """
    The chain watched only while in `subset`: r^A(x,y) = r(x,y) + sum over
    excursions leaving A from x and re-entering at y. Self-returns are
    invisible and dropped.
    """
    keep = c.indices(subset)
    if len(keep) == 0:
        raise ParameterError("Trace subset must be nonempty")
    rest = np.setdiff1d(np.arange(c.size), keep)
    R_aa = c.rates[keep][:, keep].toarray()
    if len(rest):
        hits = _can_reach(_cut_rows(c.rates, keep), keep)
        if not np.all(hits[rest]):
            raise SolverError("Some excursions off the trace subset never return")
        X = absorption_matrix(c.rates, rest, keep)
        R_aa = R_aa + c.rates[keep][:, rest].toarray() @ X
    np.fill_diagonal(R_aa, 0.0)
    pi = None if c.pi is None else c.pi[keep] / c.pi[keep].sum()
    return FiniteChain([c.states[i] for i in keep], sp.csr_matrix(R_aa), pi)


# -----------------------------------------------------------------------------
# Monte Carlo cross-check
# -----------------------------------------------------------------------------
def jump_matrix(c: FiniteChain) -> sp.csr_matrix:
    hold = c.holding_rates()
    inv = np.where(hold > 0, 1.0 / np.where(hold > 0, hold, 1.0), 0.0)
    return (sp.diags(inv) @ c.rates).tocsr()


def sample_absorption(c: FiniteChain, start, absorbing, n_samples: int, seed: int,
                      max_steps: int = 1_000_000, with_times: bool = False):
    """
    Run `n_samples` independent copies of the embedded jump chain from `start`
    until they hit `absorbing`; returns the absorbing state index of each copy
    (and the continuous hitting times if requested). Vectorized across copies.
    """
    rng = np.random.default_rng(seed)
    P = jump_matrix(c)
    hold = c.holding_rates()
    cum = np.cumsum(P.data)
    row_base = np.concatenate([[0.0], cum])[P.indptr[:-1]]
    stop = np.zeros(c.size, dtype=bool)
    stop[c.indices(absorbing)] = True

    state = np.full(n_samples, c.index(start), dtype=np.int64)
    times = np.zeros(n_samples)
    active = np.flatnonzero(~stop[state])
    for _ in range(max_steps):
        if len(active) == 0:
            break
        s = state[active]
        if with_times:
            times[active] += rng.exponential(1.0 / hold[s])
        u = rng.random(len(active))
        pos = np.searchsorted(cum, row_base[s] + u, side="right")
        pos = np.clip(pos, P.indptr[s], P.indptr[s + 1] - 1)
        state[active] = P.indices[pos]
        active = active[~stop[state[active]]]
    else:
        raise SolverError(f"{len(active)} walkers still running after {max_steps} steps")
    return (state, times) if with_times else state
