"""Experiment driver: subcommand dispatch, JSON configs, report persistence.

All randomness flows from --seed; reports carry a schema version and the
resolved experiment configuration (runtime-only fields such as worker count
and output paths are excluded so reports stay byte-identical across runs and
across --workers values).
"""
from __future__ import annotations

import argparse
import json
import math
import os
import re
import sys
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import analysis, crosscheck, integrator
from .integrator import ConfigError, SimConfig
from .potential import PotentialContext, euler_pairing
from .root_system import (MultiplicityMap, RootSystemError, build_root_system,
                          sample_interior, validate)

SCHEMA_VERSION = 1
DEFAULT_EPS_LADDER = (1e-2, 3e-3, 1e-3, 3e-4)


class CliError(Exception):
    """Configuration-level failure; maps to exit code 1."""


@dataclass
class ExperimentConfig:
    """Union of simulation fields plus subcommand-specific knobs."""

    family: str = None
    rank: int = None
    k: float = None
    k_short: float = None
    k_long: float = None
    start: tuple = None
    horizon: float = 1.0
    dt: float = 1e-3
    dt_min: float = None
    paths: int = 1000
    seed: int = 0
    eps: tuple = DEFAULT_EPS_LADDER
    alpha0: str = None
    alpha1: str = None
    boundary_offset: float = 0.0
    record_stride: int = None
    absorb_eps: float = None
    theta: float = 0.5
    m: int = None
    beta: float = 2.0
    delta: float = None
    matrix_n: int = None

    def resolved_dt_min(self) -> float:
        return self.dt_min if self.dt_min is not None else self.dt * integrator.DT_MIN_FACTOR


_CONFIG_KEYS = {f.name for f in fields(ExperimentConfig)}


def load_config_file(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read config {path}: {exc}")
    if not isinstance(data, dict):
        raise CliError("config file must hold a JSON object")
    unknown = set(data) - _CONFIG_KEYS
    if unknown:
        raise CliError(f"unknown config keys: {sorted(unknown)}")
    return data


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    """Defaults, then JSON file values, then explicit CLI flags (flags win)."""
    cfg = ExperimentConfig()
    if getattr(args, "config", None):
        for key, val in load_config_file(args.config).items():
            if key in ("start", "eps") and val is not None:
                val = tuple(float(v) for v in val)
            setattr(cfg, key, val)
    for f in fields(ExperimentConfig):
        val = getattr(args, f.name, None)
        if val is not None:
            setattr(cfg, f.name, val)
    return cfg


# ---------------------------------------------------------------------------
# Field parsing helpers
# ---------------------------------------------------------------------------

def _floats_csv(text: str) -> tuple:
    try:
        return tuple(float(v) for v in str(text).split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated floats, got {text!r}")


def resolve_simple_root(rs, name) -> int:
    """Map a simple-root name ('e2', 'e_m', 'e1-e2', or an index) to its root index."""
    text = str(name).replace("_", "").replace(" ", "")
    if re.fullmatch(r"-?\d+", text):
        idx = int(text)
        if idx in rs.simple:
            return idx
        raise CliError(f"index {idx} is not a simple root of this system")
    m = rs.rank

    def coord(tok):
        i = m if tok == "m" else int(tok)
        if not 1 <= i <= m:
            raise CliError(f"coordinate e_{tok} out of range for rank {m}")
        v = np.zeros(rs.ambient_dim)
        v[i - 1] = 1.0
        return v

    match = re.fullmatch(r"e(\d+|m)-e(\d+|m)", text)
    if match:
        vec = coord(match.group(1)) - coord(match.group(2))
    else:
        match = re.fullmatch(r"e(\d+|m)", text)
        if not match:
            raise CliError(f"cannot parse simple-root name {name!r}")
        vec = coord(match.group(1))
    try:
        idx = rs.root_index(vec)
    except RootSystemError:
        raise CliError(f"{name!r} is not a root of this system")
    if idx not in rs.simple:
        raise CliError(f"{name!r} is not a simple root of this system")
    return idx


def build_context(cfg: ExperimentConfig) -> PotentialContext:
    if cfg.family is None or cfg.rank is None:
        raise CliError("--family and --rank are required")
    try:
        rs = build_root_system(cfg.family, cfg.rank)
    except RootSystemError as exc:
        raise CliError(str(exc))
    if cfg.k_short is not None or cfg.k_long is not None:
        if rs.family != "B":
            raise CliError("--k-short/--k-long apply to the B family")
        if cfg.k_short is None or (cfg.k_long is None and rs.n_orbits > 1):
            raise CliError("need both --k-short and --k-long")
        kmap = MultiplicityMap.short_long(rs, cfg.k_short,
                                          cfg.k_long if cfg.k_long is not None else 0.0)
    elif cfg.k is not None:
        kmap = MultiplicityMap.uniform(rs, cfg.k)
    else:
        raise CliError("need --k or --k-short/--k-long")
    return PotentialContext(rs, kmap)


def default_start(rs) -> tuple:
    if rs.family == "A":
        return tuple(float(v) for v in range(rs.rank - 1, -1, -1))
    return tuple(float(v) for v in range(rs.rank, 0, -1))


def build_sim_config(cfg: ExperimentConfig, ctx: PotentialContext, *, mode: str,
                     absorb_eps: float, record_stride: int,
                     permissive: bool = False) -> SimConfig:
    start = cfg.start if cfg.start is not None else default_start(ctx.rs)
    try:
        return SimConfig(
            ctx=ctx, y0=tuple(start), horizon=cfg.horizon, dt_base=cfg.dt,
            dt_min=cfg.resolved_dt_min(), seed=cfg.seed, n_paths=cfg.paths,
            record_stride=record_stride, absorb_eps=absorb_eps, mode=mode,
            theta=cfg.theta, boundary_offset=cfg.boundary_offset,
            permissive=permissive)
    except ConfigError as exc:
        raise CliError(str(exc))


def experiment_echo(cfg: ExperimentConfig) -> dict:
    """Experiment-defining fields only; None entries are dropped."""
    return {k: v for k, v in asdict(cfg).items() if v is not None}


# ---------------------------------------------------------------------------
# Subcommand handlers: each returns (results dict, asserts dict)
# ---------------------------------------------------------------------------

def _auto_stride(cfg: ExperimentConfig, target: int = 64) -> int:
    if cfg.record_stride is not None:
        return cfg.record_stride
    n_steps = max(1, int(math.ceil(cfg.horizon / cfg.dt - 1e-9)))
    return max(1, n_steps // target)


def cmd_validate(cfg: ExperimentConfig, args) -> tuple:
    if cfg.family is None or cfg.rank is None:
        raise CliError("--family and --rank are required")
    try:
        rs = build_root_system(cfg.family, cfg.rank)
    except RootSystemError as exc:
        raise CliError(str(exc))
    rep = validate(rs)
    results = rep.to_dict()
    results.update(n_roots=len(rs.roots), n_positive=len(rs.positive),
                   n_simple=len(rs.simple), n_orbits=rs.n_orbits)
    return results, {"axioms_pass": rep.passed}


def cmd_simulate(cfg: ExperimentConfig, args) -> tuple:
    ctx = build_context(cfg)
    eps = cfg.absorb_eps if cfg.absorb_eps is not None else crosscheck.CONTINUE_EPS
    sim = build_sim_config(cfg, ctx, mode="continue", absorb_eps=eps,
                           record_stride=_auto_stride(cfg),
                           permissive=not ctx.k.strictly_positive)
    batch = integrator.simulate_batch(sim, workers=args.workers)
    slope = analysis.moment_slope(batch)
    expected = ctx.rs.ambient_dim + 2.0 * ctx.gamma

    # Cheap per-run identity check: <grad Phi, x> + gamma vanishes everywhere.
    rng = integrator.derive_stream(cfg.seed, 0, integrator.SUB_AUX)
    pts = [sim.resolved_start()]
    if ctx.k.strictly_positive:
        pts.extend(sample_interior(ctx.rs, 8, rng))
    euler_resid = max(abs(euler_pairing(ctx, x) + ctx.gamma) for x in pts)

    pos_min = float(min((batch.states[t] @ ctx.pos_mat.T).min()
                        for t in range(len(batch.times))))
    results = {
        "moment_slope": slope.slope,
        "moment_slope_se": slope.se,
        "moment_slope_expected": expected,
        "gamma": ctx.gamma,
        "euler_identity_residual": euler_resid,
        "min_recorded_positive_pairing": pos_min,
        "wall_contacts": int((~np.isnan(batch.hit_time)).sum()),
    }
    if args.traj_csv:
        with open(args.traj_csv, "w", encoding="utf-8") as fh:
            integrator.write_trajectory_csv(fh, integrator.batch_trajectories(sim, batch))
    asserts = {
        "slope_within_3se": abs(slope.slope - expected) <= 3.0 * slope.se,
        "chamber_containment": pos_min >= -1e-12,
        "euler_identity": euler_resid < 1e-8,
    }
    return results, asserts


def cmd_hit(cfg: ExperimentConfig, args) -> tuple:
    ctx = build_context(cfg)
    if cfg.alpha0 is None:
        raise CliError("--alpha0 is required")
    alpha0 = resolve_simple_root(ctx.rs, cfg.alpha0)
    ladder = tuple(sorted(cfg.eps, reverse=True))
    sim = build_sim_config(cfg, ctx, mode="absorb", absorb_eps=min(ladder),
                           record_stride=10 ** 9)
    try:
        stats = analysis.estimate_hitting(sim, alpha0, ladder, workers=args.workers)
    except ConfigError as exc:
        raise CliError(str(exc))
    results = stats.to_dict()
    if args.hits_csv:
        batch = integrator.simulate_batch(sim, workers=args.workers)
        with open(args.hits_csv, "w", encoding="utf-8") as fh:
            integrator.write_hits_csv(fh, integrator.batch_trajectories(sim, batch))
    fr = [r.hit_fraction for r in stats.per_eps]
    asserts = {
        # The ladder is pathwise coupled, so monotonicity in eps is exact.
        "hit_fraction_monotone_in_eps": all(fr[i] >= fr[i + 1] - 1e-12
                                            for i in range(len(fr) - 1)),
    }
    return results, asserts


def cmd_compare_bessel(cfg: ExperimentConfig, args) -> tuple:
    ctx = build_context(cfg)
    if cfg.alpha0 is None:
        raise CliError("--alpha0 is required")
    alpha0 = resolve_simple_root(ctx.rs, cfg.alpha0)
    eps = cfg.absorb_eps if cfg.absorb_eps is not None else crosscheck.CONTINUE_EPS
    sim = build_sim_config(cfg, ctx, mode="continue", absorb_eps=eps,
                           record_stride=10 ** 9)
    try:
        report = analysis.coupled_comparison(sim, alpha0, workers=args.workers)
    except ConfigError as exc:
        raise CliError(str(exc))
    rng = integrator.derive_stream(cfg.seed, 0, integrator.SUB_AUX)
    resid = analysis.max_drift_residual(ctx, alpha0, 1000, rng)
    results = report.to_dict()
    results["max_drift_residual"] = resid
    if args.viol_csv:
        with open(args.viol_csv, "w", encoding="utf-8") as fh:
            fh.write("path_id,max_violation\n")
            for pid, v in enumerate(report.max_violation):
                fh.write(f"{pid},{format(float(v), '.17g')}\n")
    bound = 5.0 * math.sqrt(cfg.dt)
    asserts = {
        "q99_within_5_sqrt_dt": report.quantile(0.99) <= bound,
        "drift_residual_nonpositive": resid <= 1e-10,
    }
    return results, asserts


def cmd_functional(cfg: ExperimentConfig, args) -> tuple:
    ctx = build_context(cfg)
    eps = cfg.absorb_eps if cfg.absorb_eps is not None else crosscheck.CONTINUE_EPS
    sim = build_sim_config(cfg, ctx, mode="continue", absorb_eps=eps,
                           record_stride=10 ** 9)
    try:
        est = analysis.estimate_singular_functional(sim, workers=args.workers)
    except ConfigError as exc:
        raise CliError(str(exc))
    results = {
        "mean": est.mean, "se": est.se, "n_paths": est.n_paths, "dt": est.dt_base,
    }
    asserts = {"finite": math.isfinite(est.mean) and math.isfinite(est.se)}
    # rank-1 runs admit an exact reference whenever 1/Y is integrable (k > 0)
    if ctx.rs.ambient_dim == 1 and ctx.k.value_per_orbit[0] > 0.0:
        ref = analysis.singular_functional_reference(
            ctx.k.value_per_orbit[0], sim.resolved_start()[0], cfg.horizon)
        results["exact_reference"] = ref
        asserts["within_5pct_of_reference"] = abs(est.mean - ref) <= 0.05 * ref
    return results, asserts


def cmd_crosscheck(cfg: ExperimentConfig, args) -> tuple:
    model = args.model
    m = cfg.m if cfg.m is not None else (cfg.rank if cfg.rank else None)
    if m is None:
        raise CliError("--m is required")
    beta = cfg.beta
    start = cfg.start
    try:
        if model == "dyson":
            if beta not in (1, 2):
                raise CliError("dyson check needs --beta 1 or 2")
            x0 = start if start is not None else tuple(float(v) for v in range(m - 1, -m, -2))
            results = crosscheck.dyson_vs_dunkl(m, int(beta), x0, cfg.horizon,
                                                cfg.dt, cfg.paths, cfg.seed,
                                                workers=args.workers)
            asserts = {"ks_all_above_level": all(p > 0.01 for p in results["ks_pvalues"])}
        elif model == "laguerre":
            if cfg.delta is None:
                raise CliError("laguerre check needs --delta")
            lam0 = start if start is not None else tuple(float(v) ** 2 for v in range(m, 0, -1))
            results = crosscheck.laguerre_vs_dunkl(m, beta, cfg.delta, lam0,
                                                   cfg.horizon, cfg.dt, cfg.paths,
                                                   cfg.seed, workers=args.workers)
            asserts = {
                "ks_all_above_level": all(p > 0.01 for p in results["ks_pvalues"]),
                "trace_slope_within_3se": (
                    abs(results["trace_slope"] - results["trace_slope_expected"])
                    <= 3.0 * results["trace_slope_se"]),
                "interaction_sum_small": results["interaction_sum_max"] < 1e-10,
            }
        elif model == "wishart":
            n = cfg.matrix_n if cfg.matrix_n is not None else m
            sv0 = None if start is None else tuple(start)
            results = crosscheck.wishart_vs_laguerre(n, m, int(beta), cfg.horizon,
                                                     cfg.dt, cfg.paths, cfg.seed,
                                                     sv0=sv0)
            asserts = {
                "energy_above_level": results["energy_pvalue"] > 0.01,
                "trace_mean_within_3se": (
                    abs(results["trace_mean"] - results["trace_mean_expected"])
                    <= 3.0 * results["trace_mean_se"]),
            }
        else:
            raise CliError(f"unknown crosscheck model {model!r}")
    except ConfigError as exc:
        raise CliError(str(exc))
    return results, asserts


def cmd_race_walls(cfg: ExperimentConfig, args) -> tuple:
    ctx = build_context(cfg)
    simple = list(ctx.rs.simple)
    a0 = resolve_simple_root(ctx.rs, cfg.alpha0) if cfg.alpha0 else simple[0]
    a1 = resolve_simple_root(ctx.rs, cfg.alpha1) if cfg.alpha1 else simple[-1]
    if a0 == a1:
        raise CliError("race needs two distinct simple roots")
    eps = min(cfg.eps)
    sim = build_sim_config(cfg, ctx, mode="continue",
                           absorb_eps=eps / 30.0, record_stride=10 ** 9)
    try:
        report = analysis.race_walls(sim, (a0, a1), eps, workers=args.workers)
    except ConfigError as exc:
        raise CliError(str(exc))
    return report.to_dict(), {}


COMMANDS = {
    "validate": cmd_validate,
    "simulate": cmd_simulate,
    "hit": cmd_hit,
    "compare-bessel": cmd_compare_bessel,
    "functional": cmd_functional,
    "crosscheck": cmd_crosscheck,
    "race-walls": cmd_race_walls,
}


# ---------------------------------------------------------------------------
# Report emission
# ---------------------------------------------------------------------------

def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def emit_report(report: dict, out_path) -> str:
    text = json.dumps(_jsonable(report), sort_keys=True, indent=2) + "\n"
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return text


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise CliError(message)


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dunklsim",
                     description="Radial Dunkl process simulation and verification")
    sub = parser.add_subparsers(dest="command", metavar="SUBCOMMAND")

    def add_common(p):
        p.add_argument("--config", help="JSON config file (flags override it)")
        p.add_argument("--family", choices=["A", "B", "a", "b"], type=str.upper)
        p.add_argument("--rank", type=int)
        p.add_argument("--k", type=float)
        p.add_argument("--k-short", dest="k_short", type=float)
        p.add_argument("--k-long", dest="k_long", type=float)
        p.add_argument("--start", type=_floats_csv)
        p.add_argument("--horizon", type=float)
        p.add_argument("--dt", type=float)
        p.add_argument("--dt-min", dest="dt_min", type=float)
        p.add_argument("--paths", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--eps", type=_floats_csv, help="threshold or eps ladder")
        p.add_argument("--alpha0")
        p.add_argument("--alpha1")
        p.add_argument("--boundary-offset", dest="boundary_offset", type=float)
        p.add_argument("--record-stride", dest="record_stride", type=int)
        p.add_argument("--absorb-eps", dest="absorb_eps", type=float)
        p.add_argument("--theta", type=float)
        p.add_argument("--workers", type=int,
                       default=int(os.environ.get("DUNKL_SIM_WORKERS", "1")))
        p.add_argument("--out", help="report JSON path (default: stdout)")
        p.add_argument("--assert", dest="check", action="store_true",
                       help="exit 2 unless the statistical gates pass")

    for name in ("validate", "simulate", "hit", "compare-bessel", "functional",
                 "race-walls"):
        p = sub.add_parser(name)
        add_common(p)
        if name == "simulate":
            p.add_argument("--traj-csv", dest="traj_csv")
        if name == "hit":
            p.add_argument("--hits-csv", dest="hits_csv")
        if name == "compare-bessel":
            p.add_argument("--viol-csv", dest="viol_csv")

    p = sub.add_parser("crosscheck")
    p.add_argument("model", choices=["dyson", "laguerre", "wishart"])
    add_common(p)
    p.add_argument("--m", type=int)
    p.add_argument("--beta", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--matrix-n", dest="matrix_n", type=int)
    return parser


def run(argv) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            parser.print_usage(sys.stderr)
            return 1
        cfg = resolve_config(args)
        results, asserts = COMMANDS[args.command](cfg, args)
        report = {
            "schema_version": SCHEMA_VERSION,
            "command": args.command if args.command != "crosscheck"
            else f"crosscheck-{args.model}",
            "config": experiment_echo(cfg),
            "results": results,
        }
        if args.check:
            report["asserts"] = asserts
        emit_report(report, args.out)
        if args.check and not all(asserts.values()):
            return 2
        return 0
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
