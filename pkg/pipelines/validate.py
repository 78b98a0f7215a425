import os
import math
import logging
from typing import Dict, List, Optional, Sequence

import numpy as np

try:
    from config import settings
except ImportError:
    import sys
    sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
    from config import settings

from pipelines import kmc
from pipelines.errors import ParameterError
from pipelines.lattice import Torus
from pipelines.rates import GroundKernel, ground_kernel, valley_rates
from pipelines.valleys import ValleyId

# Setup logging
logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(levelname)s - %(message)s')
logger = logging.getLogger(__name__)

Z_95 = 1.959963984540054


def is_decreasing(values: Sequence[float]) -> bool:
    return all(b < a for a, b in zip(values, values[1:]))


class Validator:
    """
    Compares finite-beta simulations against the exact beta -> infinity
    predictions: the ground kernel, its depth 1/Z, exponential excursion
    times, and the vanishing of Delta_2 visits and of the time outside the
    ground states.
    """
    def __init__(self, n: int, L: int, betas: Sequence[float], excursions: int, seed: int,
                 budget: Optional[int] = None, workers: int = 1, replicas: Optional[int] = None,
                 valley_runs: int = 0, kernel: Optional[GroundKernel] = None):
        Torus(L).check_particles(n)
        if not betas or any(b <= 0 for b in betas):
            raise ParameterError(f"Every beta must be positive, got {list(betas)}")
        if valley_runs < 0:
            raise ParameterError(f"Valley runs must be non-negative, got {valley_runs}")
        self.n, self.L = n, L
        self.betas = sorted(betas)
        self.excursions = excursions
        self.seed = seed
        self.budget = budget
        self.workers = workers
        self.replicas = replicas or workers
        self.valley_runs = valley_runs
        self._kernel = kernel

    @property
    def kernel(self) -> GroundKernel:
        if self._kernel is None:
            self._kernel = ground_kernel(self.n, self.L)
        return self._kernel

    # -------------------------------------------------------------------------
    # Checks
    # -------------------------------------------------------------------------
    @staticmethod
    def mean_interval(samples: np.ndarray) -> Dict[str, float]:
        """Sample mean with a normal 95% interval."""
        mean = float(samples.mean())
        se = float(samples.std(ddof=1) / math.sqrt(len(samples))) if len(samples) > 1 else float("nan")
        return {"mean": mean, "se": se, "ci_low": mean - Z_95 * se, "ci_high": mean + Z_95 * se}

    def kernel_rows(self, report: kmc.ExcursionReport) -> List[dict]:
        """Exact and empirical kernel entries with binomial standard errors."""
        torus = Torus(self.L)
        empirical = report.empirical_kernel().as_dict()
        total = len(report.records)
        rows = []
        for i, exact in enumerate(self.kernel.row):
            if i == 0:
                continue
            p = empirical.get(i, 0.0)
            rows.append({
                "displacement": list(torus.coords(i)),
                "exact": float(exact),
                "empirical": p,
                "se": math.sqrt(max(exact * (1.0 - exact), 0.0) / total),
            })
        return rows

    def check_beta(self, beta: float, seed: int) -> dict:
        logger.info(f"Validating beta={beta} with {self.excursions} excursions...")
        report = kmc.excursion_stats(self.n, self.L, beta, self.excursions, seed,
                                     budget=self.budget, replicas=self.replicas, workers=self.workers)
        out = {
            "beta": beta,
            "seed": seed,
            "excursions": len(report.records),
            "truncated": report.truncated,
            "delta1_fraction": report.delta1_fraction(),
            "delta2_fraction": report.delta2_fraction(),
            "outside_fraction": report.outside_fraction(),
        }
        if not report.records:
            logger.warning(f"beta={beta}: no completed excursion")
            return out

        exact = kmc.kernel_distribution(self.kernel.row)
        out["tv_distance"] = kmc.tv_distance(report.empirical_kernel(), exact)
        out["kernel"] = self.kernel_rows(report)

        durations = report.scaled_durations()
        depth = self.mean_interval(durations)
        depth["exact"] = self.kernel.depth
        depth["ratio"] = depth["mean"] / self.kernel.depth
        out["depth"] = depth
        low, high = settings.DEPTH_WINDOW
        checks = {
            "tv": out["tv_distance"] <= settings.TV_THRESHOLD,
            "depth": low <= depth["ratio"] <= high,
        }
        if len(durations) >= settings.KS_MIN_SAMPLES:
            out["ks_statistic"] = kmc.ks_exponentiality(durations)
            out["ks_critical"] = kmc.ks_critical_value(len(durations))
            checks["ks"] = out["ks_statistic"] <= out["ks_critical"]
        else:
            logger.warning(f"beta={beta}: {len(durations)} durations, KS test skipped")
        out["checks"] = checks
        failed = [k for k, ok in checks.items() if not ok]
        if failed:
            logger.warning(f"beta={beta}: finite-beta checks not met: {failed}")
        return out

    def check_valley(self, beta: float, seed: int) -> dict:
        """Exit statistics of the corner band E^{2,2} at the origin against Z, Q and |E|."""
        v = ValleyId.corner_band((0, 0), 2, 2)
        exact = valley_rates(v, self.n, self.L)
        runs = kmc.valley_exit_stats(self.n, self.L, beta, self.valley_runs, seed, valley=v, budget=self.budget)
        out = {"valley": v.label(), "beta": beta, "runs": len(runs.exit_times), "truncated": runs.truncated}
        if not len(runs.exit_times):
            return out
        out["attractor_first_fraction"] = float(runs.attractor_first.mean())
        depth = self.mean_interval(runs.exit_times)
        depth["exact"] = exact.depth
        out["exit_time"] = depth
        if len(runs.exit_times) >= settings.KS_MIN_SAMPLES:
            out["ks_statistic"] = kmc.ks_exponentiality(runs.exit_times)
            out["ks_critical"] = kmc.ks_critical_value(len(runs.exit_times))
        freq = runs.target_frequencies()
        total = len(runs.targets)
        targets = []
        for u, p in sorted(exact.Q.as_dict().items(), key=lambda kv: kv[0].sort_key()):
            targets.append({"target": u.label(), "exact": p, "empirical": freq.get(u.label(), 0.0),
                            "se": math.sqrt(p * (1.0 - p) / total)})
        out["targets"] = targets
        return out

    # -------------------------------------------------------------------------
    # Run
    # -------------------------------------------------------------------------
    def run(self) -> dict:
        logger.info(f"Starting validation for n={self.n}, L={self.L}, betas={self.betas}")
        seeds = np.random.SeedSequence(self.seed).generate_state(len(self.betas) * 2)
        per_beta = [self.check_beta(b, int(s)) for b, s in zip(self.betas, seeds[::2])]

        def series(key):
            return [r.get(key, float("nan")) for r in per_beta]

        report = {
            "n": self.n,
            "L": self.L,
            "Z": self.kernel.Z,
            "depth": self.kernel.depth,
            "tv_threshold": settings.TV_THRESHOLD,
            "ks_level": settings.KS_LEVEL,
            "depth_window": list(settings.DEPTH_WINDOW),
            "betas": per_beta,
            "trends": {
                "tv_decreasing": is_decreasing(series("tv_distance")),
                "delta2_decreasing": is_decreasing(series("delta2_fraction")),
                "outside_decreasing": is_decreasing(series("outside_fraction")),
            },
        }
        if self.valley_runs:
            report["valley_exits"] = [self.check_valley(b, int(s)) for b, s in zip(self.betas, seeds[1::2])]
        for name, ok in report["trends"].items():
            if not ok:
                logger.warning(f"Trend across beta not observed: {name}")
        logger.info("Validation Complete.")
        return report
