"""
Escape parameters, the mesoscopic chain on valleys and the ground kernel.

For each valley v outside the ground states:
    Z(v)    = sum over exits xi of (1 - M(xi, v))
    R(v, u) = sum over exits xi of M(xi, u),   u != v
    Q(v, .) = R(v, .) / Z(v)

Everything is computed at anchor 0 and translated. The mesoscopic chain
moves on all kappa valleys at rates R with the ground states absorbing. Its
absorption probabilities q(i, x) fold into the kernel Z Q(x, y) between
ground states.
"""
import logging
import multiprocessing as mp
import os
from dataclasses import dataclass
from functools import partial
from typing import Dict, List, Optional

import numpy as np
import scipy.sparse as sp
from tqdm import tqdm

try:
    from config import settings
except ImportError:
    import sys
    sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
    from config import settings

from pipelines import closed_forms
from pipelines.absorption import hitting_measure
from pipelines.chains import Distribution, FiniteChain, absorption_matrix, mean_hitting_times, solve_linear
from pipelines.errors import ContractViolation, KernelPositivityError, ParameterError, SolverError
from pipelines.lattice import DIHEDRAL, Symmetry, Torus
from pipelines.valleys import Taxonomy, ValleyId

logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(levelname)s - %(message)s')
logger = logging.getLogger(__name__)

ROUTES = ("engine", "closed_form")


# -----------------------------------------------------------------------------
# Valley rates
# -----------------------------------------------------------------------------
@dataclass
class ValleyRates:
    valley: ValleyId
    Z: float
    Q: Distribution
    size: int

    @property
    def R(self) -> Dict[ValleyId, float]:
        return {u: self.Z * p for u, p in self.Q.as_dict().items()}

    @property
    def depth(self) -> float:
        """Mean exit time in units of e^beta."""
        return self.size / self.Z

    def translated(self, anchor, torus: Torus) -> "ValleyRates":
        shift = lambda u: u.at(torus.add(u.anchor, anchor))
        return ValleyRates(shift(self.valley), self.Z, self.Q.pushforward(shift), self.size)


def _measure(xi, v: ValleyId, tax: Taxonomy, route: str) -> Distribution:
    if route == "engine":
        return hitting_measure(xi, tax)
    m = closed_forms.closed_form_measure(xi, v)
    if m is None:
        # no displayed formula for this exit
        return hitting_measure(xi, tax)
    return m


def escape_masses(v: ValleyId, n: int, L: int, route: str = "engine"):
    """(Z, unnormalized exit masses) summed over the exits of v."""
    if route not in ROUTES:
        raise ParameterError(f"Route must be one of {ROUTES}, got {route!r}")
    tax = Taxonomy.get(n, L)
    Z = 0.0
    mass: Dict[ValleyId, float] = {}
    for xi in tax.neighborhood(v):
        m = _measure(xi, v, tax, route)
        for u, p in m.as_dict().items():
            if u == v:
                continue
            Z += p
            mass[u] = mass.get(u, 0.0) + p
    return Z, mass


def valley_rates(v: ValleyId, n: int, L: int, route: str = "engine") -> ValleyRates:
    if v.is_ground:
        raise ParameterError("valley_rates applies to non-ground valleys; use ground_kernel for squares")
    tax = Taxonomy.get(n, L)
    if v.anchor != (0, 0):
        return valley_rates(v.base(), n, L, route).translated(v.anchor, tax.torus)
    Z, mass = escape_masses(v, n, L, route)
    if Z <= 0.0:
        raise SolverError(f"Valley {v.label()} has no escape (Z = {Z})")
    Q = Distribution(list(mass), np.array(list(mass.values())) / Z)
    return ValleyRates(v, Z, Q, len(tax.members(v)))


def _rates_worker(v: ValleyId, n: int, L: int, route: str) -> ValleyRates:
    return valley_rates(v, n, L, route)


def base_rates(n: int, L: int, route: str = "engine", workers: int = 1) -> List[ValleyRates]:
    """Rates of every anchor-0 non-ground valley, in catalogue order."""
    tax = Taxonomy.get(n, L)
    bases = [v for v in tax.base if not v.is_ground]
    if workers > 1:
        logger.info(f"Using {workers} workers for {len(bases)} valleys.")
        with mp.Pool(processes=workers) as pool:
            worker = partial(_rates_worker, n=n, L=L, route=route)
            return list(tqdm(pool.imap(worker, bases), total=len(bases), desc="Valley rates"))
    return [valley_rates(v, n, L, route) for v in tqdm(bases, desc="Valley rates")]


def closed_form_audit(n: int, L: int, tol: float = 1e-10) -> List[dict]:
    """
    Z by the rate-one engine against the displayed formulas for E^{2,2},
    E^{s,0} and every decorated rectangle.
    """
    origin = (0, 0)
    tax = Taxonomy.get(n, L)
    checks = [
        (ValleyId.corner_band(origin, 2, 2), closed_forms.corner_band_z_closed_form(n, L)),
        (ValleyId.rect_band(origin, "s", 0), closed_forms.rect_band_z_closed_form(n, L)),
    ]
    checks += [(v, closed_forms.decorated_z_closed_form(n, v.side_vector))
               for v in tax.base if v.family in ("perimeter", "wide_rect")]
    rows = []
    for v, closed in checks:
        engine, _ = escape_masses(v, n, L, "engine")
        rows.append({"valley": v.label(), "engine": engine, "closed_form": closed, "difference": engine - closed})
        if abs(engine - closed) > tol:
            raise ContractViolation(f"Z({v.label()}): engine {engine!r} vs closed form {closed!r}")
    logger.info(f"Closed-form audit passed for {len(rows)} valleys")
    return rows


# -----------------------------------------------------------------------------
# Mesoscopic chain
# -----------------------------------------------------------------------------
@dataclass
class MesoChain:
    n: int
    L: int
    chain: FiniteChain
    ground: np.ndarray          # indices of the ground ids (the first L^2)
    rates: Dict[ValleyId, ValleyRates]

    @property
    def kappa(self) -> int:
        return self.chain.size


def meso_chain(n: int, L: int, route: str = "engine", workers: int = 1) -> MesoChain:
    tax = Taxonomy.get(n, L)
    torus = tax.torus
    states = tax.enumerate_valleys()
    by_base = {r.valley: r for r in base_rates(n, L, route, workers)}
    rows, cols, vals = [], [], []
    for b, base in enumerate(tax.base):
        if base.is_ground:
            continue
        local = by_base[base].R
        for a in range(torus.size):
            anchor = torus.coords(a)
            i = b * torus.size + a
            for u, r in local.items():
                rows.append(i)
                cols.append(tax.index_of(u.at(torus.add(u.anchor, anchor))))
                vals.append(r)
    kappa = len(states)
    matrix = sp.csr_matrix((vals, (rows, cols)), shape=(kappa, kappa))
    mc = MesoChain(n, L, FiniteChain(states, matrix), np.arange(torus.size), by_base)
    logger.info(f"Mesoscopic chain n={n}, L={L}: kappa={kappa}, {matrix.nnz} transitions")
    return mc


def _difference_table(torus: Torus) -> np.ndarray:
    """D[a, y] = flat(a - y)."""
    idx = np.arange(torus.size)
    x, y = idx % torus.L, idx // torus.L
    dx = (x[:, None] - x[None, :]) % torus.L
    dy = (y[:, None] - y[None, :]) % torus.L
    return dy * torus.L + dx


def absorption_q(mc: MesoChain, full: bool = False) -> np.ndarray:
    """
    q[i, y] = probability that the mesoscopic chain from valley i is absorbed
    at Ground(y). By default only the Ground(0) column is solved and the others
    follow by translation; `full` solves every column.
    """
    torus = Torus(mc.L)
    size = torus.size
    kappa = mc.kappa
    transient = np.arange(size, kappa)
    q = np.zeros((kappa, size))
    q[np.arange(size), np.arange(size)] = 1.0
    if full:
        q[transient] = absorption_matrix(mc.chain.rates, transient, mc.ground)
    else:
        hold = mc.chain.holding_rates()
        if np.any(hold[transient] <= 0):
            raise SolverError("Some transient valley has no exit")
        A = sp.diags(hold[transient]) - mc.chain.rates[transient][:, transient]
        rhs = np.asarray(mc.chain.rates[transient][:, [0]].todense()).ravel()
        col = np.concatenate([[1.0], np.zeros(size - 1), solve_linear(A, rhs)])
        D = _difference_table(torus)
        for b in range(1, kappa // size):
            q[b * size:(b + 1) * size] = col[b * size + D]
    worst = np.abs(q.sum(axis=1) - 1.0).max()
    if worst > settings.MASS_TOL:
        raise SolverError(f"Absorption rows sum to 1 only within {worst:.3e}")
    return q


def meso_report(mc: MesoChain, q: Optional[np.ndarray] = None) -> dict:
    """Per anchor-0 valley: Z, depth, size, and mean absorption time into the squares."""
    tax = Taxonomy.get(mc.n, mc.L)
    times = mean_hitting_times(mc.chain, [tax.base[0].at(Torus(mc.L).coords(i)) for i in mc.ground])
    rows = []
    for base in tax.base:
        if base.is_ground:
            continue
        r = mc.rates[base]
        i = tax.index_of(base)
        row = {"valley": base.label(), "family": base.family, "size": r.size, "Z": r.Z,
               "depth": r.depth, "absorption_time": float(times[i])}
        if q is not None:
            row["q_origin"] = float(q[i, 0])
        rows.append(row)
    return {"kappa": mc.kappa, "valleys": rows}


# -----------------------------------------------------------------------------
# Ground kernel
# -----------------------------------------------------------------------------
@dataclass
class GroundKernel:
    n: int
    L: int
    Z: float
    row: np.ndarray         # Q(0, y) in flat order, zero at the origin

    @property
    def Q(self) -> np.ndarray:
        """Full kernel, Q[x, y] = Q(0, y - x)."""
        D = _difference_table(Torus(self.L))
        return self.row[D.T]

    @property
    def r(self) -> np.ndarray:
        return self.Z * self.Q

    @property
    def depth(self) -> float:
        """Mean time between ground-state jumps, in units of e^{2 beta}."""
        return 1.0 / self.Z


def ground_kernel(n: int, L: int, mc: Optional[MesoChain] = None, q: Optional[np.ndarray] = None,
                  route: str = "engine") -> GroundKernel:
    tax = Taxonomy.get(n, L)
    torus = tax.torus
    if mc is None:
        mc = meso_chain(n, L, route)
    if q is None:
        q = absorption_q(mc)
    origin = ValleyId.ground((0, 0))
    weights = np.zeros(mc.kappa)
    for xi in tax.neighborhood(origin):
        m = _measure(xi, origin, tax, route)
        for u, p in m.as_dict().items():
            weights[tax.index_of(u)] += p
    landing = weights @ q
    Z = float(weights.sum() - landing[0])
    if Z <= 0.0:
        raise KernelPositivityError(f"Ground escape parameter Z = {Z} is not positive")
    row = landing / Z
    row[0] = 0.0
    kernel = GroundKernel(n, L, Z, row)
    audit_kernel(kernel)
    logger.info(f"Ground kernel n={n}, L={L}: Z={Z:.12f}, depth={kernel.depth:.6f}")
    return kernel


def audit_kernel(kernel: GroundKernel, tol: float = 1e-10):
    torus = Torus(kernel.L)
    total = kernel.row.sum()
    if abs(total - 1.0) > settings.MASS_TOL:
        raise ContractViolation(f"Kernel row sums to {total!r}, expected 1")
    off = np.delete(kernel.row, 0)
    if np.any(off <= 0.0):
        bad = [torus.coords(i + 1) for i in np.flatnonzero(off <= 0.0)[:5]]
        raise KernelPositivityError(f"Kernel vanishes at {bad} (min {off.min()!r})")
    for d in range(len(DIHEDRAL)):
        perm = Symmetry.about((0, 0), d).permutation(torus)
        worst = np.abs(kernel.row[perm] - kernel.row).max()
        if worst > tol:
            raise ContractViolation(f"Kernel row not invariant under dihedral map {d} (deviation {worst:.3e})")
