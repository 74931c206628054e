"""Monte Carlo driver and tracking metrics.

Every trial builds one world (truth, IMU readings, channel realizations and
observations) and runs all requested filter variants on it, so variants are
compared on common random numbers.
"""
from __future__ import annotations

import dataclasses
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .channel import BeamformingSet
from .errors import FilterStepError, LengthMismatch
from .fim import crb_phi_d, observation_fim
from .geometry import assemble_observation
from .manifold import UeState, geodesic_angle
from .scenario import (SEGMENTS, ScenarioConfig, TrialWorld, build_snapshot, build_world,
                       generate_trajectory, initial_estimate, trial_rng)
from .ukf import BELIEF_MODES, EuclideanUKF, FilterState, RiemannianUKF, to_euclidean, track

FILTERS = ("riemannian", "euclidean")
VARIANTS = tuple(f"{f}/{b}" for f in FILTERS for b in BELIEF_MODES)
METRICS = ("position", "velocity", "orientation")


def parse_variant(name: str) -> tuple[str, str]:
    if name not in VARIANTS:
        raise ValueError(f"unknown variant {name!r}; choose from {VARIANTS}")
    filt, belief = name.split("/")
    return filt, belief


def compute_metrics(truth, estimates) -> dict:
    """Per-step position (m), velocity (m/s) and geodesic orientation (rad) errors."""
    truth, estimates = list(truth), list(estimates)
    if len(truth) != len(estimates):
        raise LengthMismatch(f"{len(truth)} truth states vs {len(estimates)} estimates")
    if not truth:
        return {m: np.zeros(0) for m in METRICS}
    return {
        "position": np.array([np.linalg.norm(e.p - t.p) for t, e in zip(truth, estimates)]),
        "velocity": np.array([np.linalg.norm(e.v - t.v) for t, e in zip(truth, estimates)]),
        "orientation": np.array([float(geodesic_angle(e.R, t.R)) for t, e in zip(truth, estimates)]),
    }


def rmse(errors) -> float:
    errors = np.asarray(errors, dtype=float)
    return float(np.sqrt(np.mean(errors ** 2))) if errors.size else float("nan")


def empirical_cdf(values):
    """Sorted values and their empirical probabilities ``i / n``."""
    v = np.sort(np.asarray(values, dtype=float))
    return v, np.arange(1, v.size + 1) / v.size


def make_filter(name: str, config: ScenarioConfig, **overrides):
    filt, belief = parse_variant(name)
    fc = config.filter_config(belief=belief, **overrides)
    return RiemannianUKF(fc) if filt == "riemannian" else EuclideanUKF(fc)


def run_variant(config: ScenarioConfig, world: TrialWorld, trial: int, variant: str, **overrides):
    """Track one variant on a prepared world; returns the TrackResult."""
    filt = make_filter(variant, config, **overrides)
    mean0, P0 = initial_estimate(config, world.truth.states[0], trial)
    initial = FilterState(mean0, P0)
    if isinstance(filt, EuclideanUKF):
        initial = to_euclidean(initial)
    return track(filt, initial, world.timeline, world.truth.states)


@dataclass
class TrialOutcome:
    trial: int
    rows: list
    failures: list = field(default_factory=list)


def run_trial(config: ScenarioConfig, trial: int, variants, **overrides) -> TrialOutcome:
    world = build_world(config, trial)
    truth = world.truth
    rows, failures = [], []
    for variant in variants:
        try:
            res = run_variant(config, world, trial, variant, **overrides)
        except FilterStepError as exc:
            failures.append({"trial": trial, "variant": variant, "step": exc.step,
                             "error": f"{type(exc.cause).__name__}: {exc.cause}"})
            continue
        err = compute_metrics(truth.states, res.estimates)
        orth = res.orthonormality
        for n in range(len(truth.states)):
            rows.append({"trial": trial, "step": n, "variant": variant,
                         "segment": truth.segments[n],
                         "position_error": float(err["position"][n]),
                         "velocity_error": float(err["velocity"][n]),
                         "orientation_error": float(err["orientation"][n]),
                         "nees": float(res.nees[n]),
                         "orthonormality_error": float(orth[n])})
    return TrialOutcome(trial, rows, failures)


def _worker(args):
    config_dict, trial, variants, overrides = args
    return run_trial(ScenarioConfig.from_dict(config_dict), trial, variants, **overrides)


def worker_count(n_tasks: int) -> int:
    limit = os.environ.get("MT_THREADS")
    n = int(limit) if limit else (os.cpu_count() or 1)
    return max(1, min(n, n_tasks))


@dataclass
class MonteCarloResult:
    variants: list
    rows: list
    failures: list

    def errors(self, variant: str, metric: str, segment: str | None = None, skip_initial=True):
        key = f"{metric}_error"
        return np.array([r[key] for r in self.rows if r["variant"] == variant
                         and (segment is None or r["segment"] == segment)
                         and not (skip_initial and r["step"] == 0)])

    def trial_rmse(self, variant: str, metric: str, segment: str | None = None) -> dict:
        """RMSE per trial over the selected steps (initial step excluded)."""
        out = {}
        key = f"{metric}_error"
        for r in self.rows:
            if r["variant"] != variant or r["step"] == 0:
                continue
            if segment is not None and r["segment"] != segment:
                continue
            out.setdefault(r["trial"], []).append(r[key])
        return {t: rmse(v) for t, v in sorted(out.items())}

    def mean_trial_rmse(self, variant: str, metric: str, segment: str | None = None) -> float:
        vals = list(self.trial_rmse(variant, metric, segment).values())
        return float(np.mean(vals)) if vals else float("nan")

    def summary(self) -> dict:
        out = {"variants": {}, "failures": self.failures}
        for v in self.variants:
            entry = {}
            for seg in (*SEGMENTS, "all"):
                sel = None if seg == "all" else seg
                entry[seg] = {m: {"rmse": rmse(self.errors(v, m, sel)),
                                  "mean_trial_rmse": self.mean_trial_rmse(v, m, sel)}
                              for m in METRICS}
            trials = sorted({r["trial"] for r in self.rows if r["variant"] == v})
            entry["completed_trials"] = len(trials)
            out["variants"][v] = entry
        return out

    def cdf_rows(self) -> list:
        rows = []
        for v in self.variants:
            for m in METRICS:
                vals, probs = empirical_cdf(self.errors(v, m))
                rows += [{"variant": v, "metric": m, "value": float(x), "probability": float(p)}
                         for x, p in zip(vals, probs)]
        return rows


def run_monte_carlo(config: ScenarioConfig, trials: int | None = None, variants=("riemannian/fim_approx",),
                    parallel: bool = True, **overrides) -> MonteCarloResult:
    """Run ``trials`` trials of every variant; failures are recorded, not raised."""
    trials = config.trials if trials is None else trials
    if trials < 1:
        raise ValueError("need at least one trial")
    variants = list(variants)
    for v in variants:
        parse_variant(v)
    tasks = [(config.to_dict(), t, variants, overrides) for t in range(trials)]
    workers = worker_count(trials) if parallel else 1
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_worker, tasks))
    else:
        outcomes = [run_trial(config, t, variants, **overrides) for t in range(trials)]
    outcomes.sort(key=lambda o: o.trial)
    rows = [r for o in outcomes for r in o.rows]
    failures = [f for o in outcomes for f in o.failures]
    return MonteCarloResult(variants, rows, failures)


# ---------------------------------------------------------------- CRB sweep

CRB_REGIONS = ("rural", "urban")


def reference_step(config: ScenarioConfig) -> int:
    """First trajectory step at which the first RIS sees the UE (0 if never)."""
    traj = generate_trajectory(config)
    hits = np.flatnonzero(traj.visible[:, 0]) if traj.visible.shape[1] else []
    return int(hits[0]) if len(hits) else 0


def crb_sweep(config: ScenarioConfig, G_values, S_values, K_values, regions=CRB_REGIONS,
              step: int | None = None) -> list[dict]:
    """CRB of the RIS angles of departure over a (G, S, K, region) grid.

    The UE sits at a fixed trajectory step.  Shadowing and random gain phases
    are switched off and a single beam draw for the largest grid point is
    shared by all points, so points differ only in G, S, K and the radio
    environment.  Needs at least one deployed RIS.
    """
    G_values, S_values, K_values, regions = (sorted(set(map(int, G_values))), sorted(set(map(int, S_values))),
                                             sorted(set(map(int, K_values))), list(regions))
    if not (G_values and S_values and K_values and regions):
        raise ValueError("empty CRB grid")
    if config.n_ris < 1:
        raise ValueError("CRB sweep needs at least one RIS")
    step = reference_step(config) if step is None else step
    traj = generate_trajectory(config, n_steps=max(step, 1))
    ue = traj.states[step]
    sat_n, ris_n, ue_n = (a.size for a in config.arrays())
    beams = BeamformingSet.random(trial_rng(config.seed, 0, 0), max(S_values), max(G_values), sat_n, ue_n,
                                  max(K_values), config.n_ris, ris_n)
    t = step * config.update_interval
    rows = []
    for G in G_values:
        for S in S_values:
            for K in K_values:
                cfg = dataclasses.replace(config, n_sats=S, n_transmissions=G, n_subcarriers=K)
                sub = beams.subset(S, G, K, config.n_ris)
                for region in regions:
                    snap, sats, riss = build_snapshot(cfg, t, ue, region, None, environment=region, beams=sub,
                                                      shadowing=False, random_phases=False)
                    rho = assemble_observation(UeState(ue.p, ue.v, np.zeros(S), ue.R), sats, riss, cfg.wave)
                    J = observation_fim(snap, rho)
                    rows.append({"G": G, "S": S, "K": K, "region": region,
                                 "crb_phi_d": crb_phi_d(J, config.n_ris)})
    return rows
