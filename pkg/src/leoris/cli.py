"""Command-line entry point: ``leoris track | crb-sweep | montecarlo``.

Exit codes: 0 success, 2 configuration problem, 3 filter failure (or every
Monte Carlo trial failed).
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import itertools
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from .errors import FilterStepError
from .experiment import (CRB_REGIONS, METRICS, crb_sweep, compute_metrics, rmse, run_monte_carlo,
                         run_variant)
from .manifold import so3_log
from .scenario import SEGMENTS, ScenarioConfig, build_world, desk_scenario, full_scenario
from .ukf import BELIEF_MODES

EXIT_CONFIG = 2
EXIT_FILTER = 3

TRACK_COLUMNS = (
    ["step", "segment", "region"]
    + [f"truth_{k}" for k in ("px", "py", "pz", "vx", "vy", "vz", "rx", "ry", "rz")]
    + [f"est_{k}" for k in ("px", "py", "pz", "vx", "vy", "vz", "rx", "ry", "rz")]
    + ["position_error", "velocity_error", "orientation_error", "nees", "orthonormality_error"]
)
METRIC_COLUMNS = ["trial", "step", "variant", "segment", "position_error", "velocity_error",
                  "orientation_error", "nees", "orthonormality_error"]
CDF_COLUMNS = ["variant", "metric", "value", "probability"]
CRB_COLUMNS = ["G", "S", "K", "region", "crb_phi_d"]


class ConfigError(Exception):
    pass


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path: Path, columns, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def write_json(path: Path, data):
    with open(path, "w") as fh:
        json.dump(_json_safe(data), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_config(args) -> ScenarioConfig:
    """Scenario from ``--scenario`` (or a built-in profile) with CLI overrides applied."""
    try:
        if args.scenario is not None:
            path = Path(args.scenario)
            if not path.is_file():
                raise ConfigError(f"scenario file not found: {path}")
            config = ScenarioConfig.load(path)
            if args.paper_scale:
                config = dataclasses.replace(config, n_sats=5, n_ris=2, n_subcarriers=3000,
                                             n_transmissions=32)
        else:
            config = full_scenario() if args.paper_scale else desk_scenario()
        if args.seed is not None:
            if not 0 <= args.seed < 2 ** 64:
                raise ConfigError("seed must be an unsigned 64-bit integer")
            config = dataclasses.replace(config, seed=args.seed)
        if getattr(args, "trials", None) is not None:
            if args.trials < 1:
                raise ConfigError("--trials must be at least 1")
            config = dataclasses.replace(config, trials=args.trials)
    except ConfigError:
        raise
    except (OSError, ValueError, TypeError, KeyError) as exc:
        raise ConfigError(f"cannot load scenario {args.scenario}: {exc}") from exc
    return config


def _out_dir(args) -> Path:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from exc
    return out


def _segment_rmse(segments, errors: dict) -> dict:
    out = {}
    steps = np.arange(len(segments))
    for seg in (*SEGMENTS, "all"):
        sel = (steps > 0) & ((np.asarray(segments) == seg) if seg != "all" else True)
        out[seg] = {m: rmse(errors[m][sel]) for m in METRICS}
    return out


def cmd_track(args) -> int:
    config = load_config(args)
    out = _out_dir(args)
    variant = f"{args.variant[0]}/{args.belief[0]}"
    start = time.perf_counter()
    world = build_world(config, args.trial)
    try:
        res = run_variant(config, world, args.trial, variant)
    except FilterStepError as exc:
        print(f"error: {variant} failed at step {exc.step}: {exc.cause}", file=sys.stderr)
        return EXIT_FILTER
    runtime = time.perf_counter() - start

    truth = world.truth
    err = compute_metrics(truth.states, res.estimates)
    orth = res.orthonormality
    regions = ["initial", *world.filter_regions]
    rows = []
    for n, (t, e) in enumerate(zip(truth.states, res.estimates)):
        row = {"step": n, "segment": truth.segments[n], "region": regions[n]}
        for prefix, st in (("truth", t), ("est", e)):
            vals = np.concatenate([st.p, st.v, so3_log(st.R)])
            row.update({f"{prefix}_{k}": float(v) for k, v in
                        zip(("px", "py", "pz", "vx", "vy", "vz", "rx", "ry", "rz"), vals)})
        row.update(position_error=err["position"][n], velocity_error=err["velocity"][n],
                   orientation_error=err["orientation"][n], nees=float(res.nees[n]),
                   orthonormality_error=float(orth[n]))
        rows.append(row)
    write_csv(out / "track.csv", TRACK_COLUMNS, rows)
    write_json(out / "summary.json", {
        "variant": variant, "seed": config.seed, "trial": args.trial, "n_steps": config.n_steps,
        "rmse": _segment_rmse(truth.segments, err),
        "mean_nees": float(np.nanmean(res.nees)) if len(res.nees) > 1 else None,
        "runtime_s": runtime,
    })
    return 0


def _grid(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()] if text else []


def cmd_crb_sweep(args) -> int:
    config = load_config(args)
    G, S, K = _grid(args.G), _grid(args.S), _grid(args.K)
    regions = [r for r in args.regions.split(",") if r.strip()]
    if not (G and S and K and regions):
        raise ConfigError("CRB grid is empty")
    if min(G + S + K) < 1 or max(S) > len(config.orbits):
        raise ConfigError(f"grid values must be positive and S at most {len(config.orbits)}")
    out = _out_dir(args)
    try:
        rows = crb_sweep(config, G, S, K, regions)
    except (KeyError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    write_csv(out / "crb.csv", CRB_COLUMNS, rows)
    return 0


def cmd_montecarlo(args) -> int:
    config = load_config(args)
    out = _out_dir(args)
    variants = [f"{f}/{b}" for f, b in itertools.product(args.variant, args.belief)]
    result = run_monte_carlo(config, config.trials, variants)
    write_csv(out / "metrics.csv", METRIC_COLUMNS, result.rows)
    write_csv(out / "cdf.csv", CDF_COLUMNS, result.cdf_rows())
    summary = result.summary()
    summary.update(seed=config.seed, trials=config.trials)
    write_json(out / "summary.json", summary)
    for f in result.failures:
        print(f"warning: trial {f['trial']} {f['variant']} failed at step {f['step']}: {f['error']}",
              file=sys.stderr)
    if not result.rows:
        print("error: every trial failed", file=sys.stderr)
        return EXIT_FILTER
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="leoris", description="LEO + RIS 9D user tracking")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", help="scenario JSON file (default: built-in desk profile)")
    common.add_argument("--seed", type=int, help="root seed (unsigned 64-bit)")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--paper-scale", action="store_true",
                        help="S=5, R=2, K=3000, G=32 instead of the desk profile")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_variants(p, multiple):
        action = "append" if multiple else "store"
        kw = dict(action=action) if multiple else {}
        p.add_argument("--variant", choices=["riemannian", "euclidean"], **kw,
                       help="filter family" + (" (repeatable)" if multiple else ""))
        p.add_argument("--belief", choices=list(BELIEF_MODES), **kw,
                       help="observation belief" + (" (repeatable)" if multiple else ""))

    p = sub.add_parser("track", parents=[common], help="track one trial")
    add_variants(p, False)
    p.add_argument("--trial", type=int, default=0, help="trial index (selects the RNG streams)")
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("crb-sweep", parents=[common], help="CRB of the RIS angles over a grid")
    p.add_argument("--G", default="4,8,16,32", help="comma-separated transmissions per interval")
    p.add_argument("--S", default="1,2,3,4,5", help="comma-separated satellite counts")
    p.add_argument("--K", default="128", help="comma-separated subcarrier counts")
    p.add_argument("--regions", default=",".join(CRB_REGIONS), help="comma-separated environments")
    p.set_defaults(func=cmd_crb_sweep)

    p = sub.add_parser("montecarlo", parents=[common], help="Monte Carlo over trials and variants")
    p.add_argument("--trials", type=int, help="number of trials (default: scenario value)")
    add_variants(p, True)
    p.set_defaults(func=cmd_montecarlo)
    return parser


def _as_list(value, default):
    if value is None:
        return [default]
    return [value] if isinstance(value, str) else list(dict.fromkeys(value))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if hasattr(args, "variant"):
        args.variant = _as_list(args.variant, "riemannian")
        args.belief = _as_list(args.belief, "fim_approx")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
