"""
Command-line entry point.

    python -m pipelines <command> [flags]

Commands: elementary, taxonomy, rates, meso, simulate, validate. JSON payloads
and CSV event streams go to files (`--out`); stdout only carries a short
summary. Exit codes: 0 on success, 2 for bad parameters, 3 when an internal
consistency check aborts the run.
"""
import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from typing import List, Optional

import numpy as np

try:
    from config import settings
except ImportError:
    sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
    from config import settings

from pipelines import elementary, kmc, rates
from pipelines.configuration import audit_saddle_path, bottleneck_log_weight, saddle_path, square_config
from pipelines.errors import ContractViolation, ParameterError
from pipelines.lattice import Torus
from pipelines.validate import Validator
from pipelines.valleys import Taxonomy, special_target

logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(levelname)s - %(message)s')
logger = logging.getLogger(__name__)

COMMANDS = ("elementary", "taxonomy", "rates", "meso", "simulate", "validate")
EXIT_OK, EXIT_PARAMETER, EXIT_CONTRACT = 0, 2, 3


@dataclass
class RunConfig:
    command: str
    n: int = settings.DEFAULT_N
    L: int = settings.DEFAULT_L
    betas: List[float] = field(default_factory=lambda: list(settings.DEFAULT_BETAS))
    seed: int = settings.DEFAULT_SEED
    excursions: int = settings.DEFAULT_EXCURSIONS
    budget: int = settings.EVENT_BUDGET
    max_events: Optional[int] = None
    valley_runs: int = 0
    route: str = "engine"
    audit: bool = False
    workers: int = 1
    out: Optional[str] = None

    def validate(self):
        if self.command not in COMMANDS:
            raise ParameterError(f"Unknown command {self.command!r}, expected one of {COMMANDS}")
        if self.n < settings.MIN_N:
            raise ParameterError(f"n must be at least {settings.MIN_N}, got n={self.n}")
        Torus(self.L).check_particles(self.n)
        if not self.betas or any(b <= 0 for b in self.betas):
            raise ParameterError(f"Every beta must be positive, got {self.betas}")
        for name in ("excursions", "budget", "workers"):
            if getattr(self, name) <= 0:
                raise ParameterError(f"{name} must be positive, got {getattr(self, name)}")
        if self.max_events is not None and self.max_events <= 0:
            raise ParameterError(f"max_events must be positive, got {self.max_events}")
        if self.valley_runs < 0:
            raise ParameterError(f"valley_runs must be non-negative, got {self.valley_runs}")
        if self.route not in rates.ROUTES:
            raise ParameterError(f"route must be one of {rates.ROUTES}, got {self.route!r}")

    @property
    def output_path(self) -> str:
        if self.out:
            return self.out
        if self.command == "simulate":
            return os.path.join(settings.TRAJECTORY_DIR, f"trajectory_n{self.n}_L{self.L}_b{self.betas[0]:g}.csv")
        return os.path.join(settings.REPORT_DIR, f"{self.command}_n{self.n}_L{self.L}.json")

    def params(self) -> dict:
        out = asdict(self)
        for key in ("command", "out", "workers"):
            out.pop(key)
        return out

    def metadata(self) -> dict:
        return {
            "tool_version": settings.TOOL_VERSION,
            "command": self.command,
            "params": self.params(),
            "seed": self.seed,
            "generator": settings.GENERATOR_NAME,
        }


# -----------------------------------------------------------------------------
# Argument parsing
# -----------------------------------------------------------------------------
def _beta_list(text: str) -> List[float]:
    try:
        return [float(b) for b in text.split(",") if b.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"Invalid beta list {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pipelines", description="Kawasaki tunneling pipelines")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        # defaults stay None so a config file can fill in what the flags leave out
        p.add_argument("--config", default=None, help="JSON file whose keys mirror the flags")
        p.add_argument("--n", type=int, default=None)
        p.add_argument("--L", type=int, default=None)
        p.add_argument("--out", default=None)
        p.add_argument("--workers", type=int, default=None)
        if name in ("rates", "meso"):
            p.add_argument("--route", choices=rates.ROUTES, default=None)
        if name == "rates":
            p.add_argument("--audit", action="store_true", default=None,
                           help="Check Z against the closed forms")
        if name in ("simulate", "validate"):
            p.add_argument("--seed", type=int, default=None)
            p.add_argument("--excursions", type=int, default=None)
            p.add_argument("--budget", type=int, default=None, help="Event budget per excursion")
        if name == "simulate":
            p.add_argument("--beta", dest="betas", type=lambda s: [float(s)], default=None)
            p.add_argument("--max-events", dest="max_events", type=int, default=None)
        if name == "validate":
            p.add_argument("--beta-list", dest="betas", type=_beta_list, default=None)
            p.add_argument("--valley-runs", dest="valley_runs", type=int, nargs="?", default=None,
                           const=settings.DEFAULT_VALLEY_RUNS,
                           help=f"Corner-band exit runs per beta (bare flag: {settings.DEFAULT_VALLEY_RUNS})")
    return parser


def _load_config_file(path: str) -> dict:
    try:
        with open(path) as f:
            payload = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ParameterError(f"Cannot read config file {path}: {e}")
    if not isinstance(payload, dict):
        raise ParameterError(f"Config file {path} must hold a JSON object")
    if "beta" in payload:
        payload["betas"] = [payload.pop("beta")]
    if "beta_list" in payload:
        payload["betas"] = payload.pop("beta_list")
    return payload


def resolve_workers(flag: Optional[int]) -> int:
    if flag is not None:
        return flag
    env = os.environ.get(settings.WORKERS_ENV_VAR)
    if env:
        try:
            return int(env)
        except ValueError:
            raise ParameterError(f"{settings.WORKERS_ENV_VAR} must be an integer, got {env!r}")
    return os.cpu_count() or 1


def parse_config(argv: List[str]) -> RunConfig:
    args = vars(build_parser().parse_args(argv))
    path = args.pop("config")
    values = _load_config_file(path) if path else {}
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ParameterError(f"Unknown config keys: {unknown}")
    values.update({k: v for k, v in args.items() if v is not None})
    values["command"] = args["command"]
    values["workers"] = resolve_workers(values.get("workers"))
    config = RunConfig(**values)
    config.validate()
    return config


# -----------------------------------------------------------------------------
# Output
# -----------------------------------------------------------------------------
def _plain(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"Cannot serialize {type(obj).__name__}")


def write_json(path: str, config: RunConfig, payload: dict):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    # float repr is the shortest string that round-trips, never more than 17 significant digits
    text = json.dumps({"metadata": config.metadata(), **payload}, indent=2, default=_plain)
    with open(path, "w") as f:
        f.write(text + "\n")
    logger.info(f"Saved {path}")


def write_csv(path: str, config: RunConfig, frame):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    frame.to_csv(path, index=False, float_format=f"%.{settings.JSON_SIGNIFICANT_DIGITS}g")
    with open(path + ".meta.json", "w") as f:
        f.write(json.dumps(config.metadata(), indent=2, default=_plain) + "\n")
    logger.info(f"Saved {path} ({len(frame)} events)")


# -----------------------------------------------------------------------------
# Commands
# -----------------------------------------------------------------------------
def cmd_elementary(config: RunConfig):
    table = elementary.elementary_table(config.n, config.L)
    write_json(config.output_path, config, {"elementary": table.as_dict()})
    print(f"q={table.q:.12g} r+={table.r.plus:.12g} r-={table.r.minus:.12g} A={table.walk.a_total:.12g}")


def cmd_taxonomy(config: RunConfig):
    n, L = config.n, config.L
    tax = Taxonomy.get(n, L)
    torus = tax.torus
    target = special_target(n, L, (0, 0))
    path = saddle_path((0, 0), (1, 0), n, torus)
    audit_saddle_path(path, n)
    payload = {
        "kappa": tax.kappa,
        "counts": tax.counts(),
        "base": [{"valley": v.label(), "family": v.family, "members": len(tax.members(v)),
                  "neighbors": len(tax.neighborhood(v))} for v in tax.base],
        "special_target": target.label(),
        "saddle_path": {
            "swaps": len(path) - 1,
            "elevation": max(c.level for c in path),
            "bottleneck_log_weight_per_beta": bottleneck_log_weight(path, 1.0),
        },
    }
    write_json(config.output_path, config, {"taxonomy": payload})
    print(f"kappa={tax.kappa} ({len(tax.base)} valleys per anchor), saddle path of {len(path) - 1} swaps")


def cmd_rates(config: RunConfig):
    n, L = config.n, config.L
    mc = rates.meso_chain(n, L, config.route, config.workers)
    q = rates.absorption_q(mc)
    kernel = rates.ground_kernel(n, L, mc, q, config.route)
    torus = Torus(L)
    payload = {
        "n": n,
        "L": L,
        "kappa": mc.kappa,
        "Z": kernel.Z,
        "depth": kernel.depth,
        "kernel_row": [{"x": torus.coords(i)[0], "y": torus.coords(i)[1], "Q": float(p)}
                       for i, p in enumerate(kernel.row)],
        "Q": kernel.Q,
        "r": kernel.r,
        "valleys": [{"valley": r.valley.label(), "Z": r.Z, "size": r.size, "depth": r.depth,
                     "Q": {u.label(): p for u, p in sorted(r.Q.as_dict().items(), key=lambda kv: kv[0].sort_key())}}
                    for r in sorted(mc.rates.values(), key=lambda r: r.valley.sort_key())],
    }
    if config.audit:
        payload["closed_form_audit"] = rates.closed_form_audit(n, L)
    write_json(config.output_path, config, {"rates": payload})
    print(f"Z={kernel.Z:.12g} depth={kernel.depth:.12g} min Q={kernel.row[1:].min():.6g}")


def cmd_meso(config: RunConfig):
    mc = rates.meso_chain(config.n, config.L, config.route, config.workers)
    q = rates.absorption_q(mc)
    report = rates.meso_report(mc, q)
    write_json(config.output_path, config, {"meso": report})
    print(f"kappa={report['kappa']}, {len(report['valleys'])} valleys per anchor")


def cmd_simulate(config: RunConfig):
    n, L, beta = config.n, config.L, config.betas[0]
    cfg0 = square_config((0, 0), n, Torus(L))
    budget = config.max_events or config.budget * config.excursions
    stop = kmc.GroundChanges(n, L, config.excursions)
    traj = kmc.simulate(cfg0, beta, config.seed, max_events=budget, stop=stop)
    traj.check()
    write_csv(config.output_path, config, traj.to_frame())
    flag = " (truncated)" if traj.truncated else ""
    print(f"{len(traj.times)} events, {stop.seen} ground changes, time {traj.end_time:.6g}{flag}")


def cmd_validate(config: RunConfig):
    validator = Validator(config.n, config.L, config.betas, config.excursions, config.seed,
                          budget=config.budget, workers=config.workers, valley_runs=config.valley_runs)
    report = validator.run()
    write_json(config.output_path, config, {"validation": report})
    for row in report["betas"]:
        print(f"beta={row['beta']:g}: TV={row.get('tv_distance', float('nan')):.4f} "
              f"KS={row.get('ks_statistic', float('nan')):.4f} delta2={row['delta2_fraction']:.4f}")


HANDLERS = {
    "elementary": cmd_elementary,
    "taxonomy": cmd_taxonomy,
    "rates": cmd_rates,
    "meso": cmd_meso,
    "simulate": cmd_simulate,
    "validate": cmd_validate,
}


def run(argv: Optional[List[str]] = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        config = parse_config(argv)
        HANDLERS[config.command](config)
    except SystemExit as e:
        # argparse exits 2 on usage errors and 0 on --help
        return int(e.code or 0)
    except ParameterError as e:
        logger.error(f"Invalid parameters: {e}")
        return EXIT_PARAMETER
    except ContractViolation as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_CONTRACT
    return EXIT_OK


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
