"""Experiment execution: wire a config to potentials, methods, and artifacts.

One process runs one experiment.  All randomness flows through the seeded
counter-based stream, so rerunning a config (at any worker count)
reproduces every data artifact byte for byte; only the manifest's wall
time differs.
"""

from __future__ import annotations

import json
import os
import time as _time
from pathlib import Path

import numpy as np

from . import __version__
from .artifacts import (format_real, read_density_csv, read_samples_csv,
                        write_chain_stats, write_decay_report, write_density_csv,
                        write_metrics_csv, write_samples_csv, write_trajectory_csv)
from .config import ExperimentConfig, config_to_dict
from .density import Grid1D, GridDensity, histogram, kl_divergence, l2_pi_inv_norm, normalize, tv_distance
from .errors import GradflowError
from .fpe import FokkerPlanckSolver1D, FpeState, bdl_fpe_step, decay_report, fpe_step, weighted_fpe_step
from .optimize import (PreconditionerField, bfgs_stepper, gradient_stepper,
                       implicit_stepper, mirror_stepper, negative_entropy_mirror_map,
                       preconditioned_stepper, quadratic_mirror_map, run_flow,
                       verify_rates)
from .potentials import from_identifier
from .rng import RngStream
from .sample import ChainStats, Ensemble, SampleRun, run_sampler

__all__ = ["run_experiment", "compare_files", "AssertionFailure"]


class AssertionFailure(GradflowError):
    """A config-declared assertion did not hold."""


def _resolve(path: str, out_root: Path) -> Path:
    p = Path(path)
    return p if p.is_absolute() else out_root / p


def run_experiment(cfg: ExperimentConfig, out_root=None, seed_override=None,
                   workers_override=None) -> dict:
    """Execute one experiment and write its declared artifacts.

    Returns the manifest mapping (also written to the configured manifest
    path).  Raises AssertionFailure when a declared assertion fails and
    GradflowError subclasses for runtime problems.
    """
    started = _time.perf_counter()
    if out_root is None:
        out_root = Path(os.environ.get("GRADFLOW_OUT", "."))
    out_root = Path(out_root)
    if seed_override is not None:
        cfg = ExperimentConfig(**{**cfg.__dict__, "seed": int(seed_override)})
    if workers_override is not None:
        cfg = ExperimentConfig(**{**cfg.__dict__, "workers": int(workers_override)})

    potential = from_identifier(cfg.problem)
    artifacts = []
    metrics_rows = []
    endpoint_states = []

    if cfg.family == "deterministic":
        _run_deterministic(cfg, potential, out_root, artifacts, endpoint_states)
    elif cfg.family == "stochastic":
        metrics_rows = _run_stochastic(cfg, potential, out_root, artifacts)
    else:
        metrics_rows = _run_grid(cfg, potential, out_root, artifacts)

    _check_assertions(cfg, metrics_rows, endpoint_states)

    manifest = {
        "config": config_to_dict(cfg),
        "seed": cfg.seed,
        "version": __version__,
        "wall_time_s": _time.perf_counter() - started,
        "artifacts": [str(a) for a in artifacts],
    }
    manifest_path = _resolve(cfg.manifest, out_root)
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest


# --- deterministic flows ------------------------------------------------------

def _make_stepper(cfg: ExperimentConfig, potential):
    if cfg.method == "gd":
        return gradient_stepper(cfg.tau)
    if cfg.method == "gd_implicit":
        return implicit_stepper(cfg.tau)
    if cfg.method == "newton":
        return preconditioned_stepper(PreconditionerField.hessian_of(potential), cfg.tau)
    if cfg.method == "bfgs":
        return bfgs_stepper(cfg.tau)
    mmap = (quadratic_mirror_map() if cfg.mirror_map == "quadratic"
            else negative_entropy_mirror_map())
    return mirror_stepper(mmap, cfg.tau)


def _run_deterministic(cfg, potential, out_root, artifacts, endpoint_states):
    init = cfg.init
    starts = [init] if init and not isinstance(init[0], list) else list(init)
    n_steps = cfg.n_steps()
    trajectories = []
    for start in starts:
        stepper = _make_stepper(cfg, potential)  # fresh state per run (bfgs)
        trajectories.append(run_flow(potential, stepper, start, n_steps, cfg.tau))
    endpoint_states.extend(t.final_state for t in trajectories)

    for spec in cfg.outputs:
        if spec.kind == "trajectory":
            for i, traj in enumerate(trajectories):
                path = _indexed_path(spec.path, i, len(trajectories), out_root)
                write_trajectory_csv(path, traj)
                artifacts.append(path)
        elif spec.kind == "rates":
            for i, traj in enumerate(trajectories):
                path = _indexed_path(spec.path, i, len(trajectories), out_root)
                report = verify_rates(traj, potential)
                with path.open("w") as fh:
                    fh.write(f"fitted_rate {format_real(report.fitted_rate)}\n")
                    fh.write(f"dissipation_violations {report.dissipation_violations}\n")
                    fh.write(f"rate_bound_satisfied {report.rate_bound_satisfied}\n")
                    fh.write(f"bound_applicable {report.details['bound_applicable']}\n")
                artifacts.append(path)


def _indexed_path(template: str, index: int, total: int, out_root) -> Path:
    if "{i}" in template:
        return _ensure_dir(_resolve(template.replace("{i}", str(index)), out_root))
    if total > 1:
        raise GradflowError(
            f"output path {template!r} needs a '{{i}}' placeholder for {total} runs")
    return _ensure_dir(_resolve(template, out_root))


def _ensure_dir(path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


# --- stochastic samplers ------------------------------------------------------

def _initial_ensemble(cfg, potential) -> Ensemble:
    rng = RngStream(cfg.seed)
    spec = cfg.init
    j = cfg.particles
    if isinstance(spec, list):  # a single point: all particles start there
        return Ensemble.at_points(rng, j, [spec])
    kind = spec.get("kind")
    if kind == "points":
        return Ensemble.at_points(rng, j, spec["points"])
    if kind == "gaussian":
        mean = np.asarray(spec["mean"], dtype=float)
        cov = (spec["var"] * np.eye(mean.size) if "var" in spec
               else np.asarray(spec["cov"], dtype=float))
        return Ensemble.gaussian(rng, j, mean, cov)
    raise GradflowError(f"init kind {kind!r} is not valid for sampler methods")


def _grid_from_cfg(cfg) -> Grid1D:
    return Grid1D.from_bounds(cfg.grid["lo"], cfg.grid["hi"], cfg.grid["n"])


def _assertion_times(cfg):
    times = []
    for a in cfg.assertions:
        if a.check == "metric_max":
            times.append(a.params["time"])
    return times


def _run_stochastic(cfg, potential, out_root, artifacts):
    ensemble = _initial_ensemble(cfg, potential)
    n_steps = cfg.n_steps()
    tau = cfg.tau

    requested = []
    for spec in cfg.outputs:
        if spec.kind in ("histogram", "metrics"):
            requested.extend(spec.times or [n_steps * tau])
    requested.extend(_assertion_times(cfg))
    if requested and ensemble.dim != 1:
        raise GradflowError("histogram/metrics outputs need a 1-D problem")

    want_samples = any(spec.kind == "samples" for spec in cfg.outputs)
    record = {0, n_steps}
    record.update(min(n_steps, int(round(t / tau))) for t in requested)
    if want_samples:
        record.update(range(0, n_steps + 1, cfg.thin))
    record_steps = sorted(record)

    states = {0: ensemble.particles.copy()}
    n_moves = n_accepted = 0
    for prev, nxt in zip(record_steps[:-1], record_steps[1:]):
        span = nxt - prev
        run = run_sampler(cfg.method, potential, ensemble, tau, span, thin=span,
                          workers=cfg.workers, ridge=cfg.ridge,
                          bandwidth=cfg.bandwidth)
        ensemble = Ensemble(particles=run.final, rng=ensemble.rng, step=nxt)
        states[nxt] = run.final.copy()
        n_moves += run.stats.n_moves
        n_accepted += run.stats.n_accepted

    pooled = (np.concatenate([states[k] for k in record_steps[1:]])
              if len(record_steps) > 1 else states[0])
    stats = ChainStats(
        n_steps=n_steps, n_moves=n_moves, n_accepted=n_accepted,
        mean=pooled.mean(axis=0),
        cov=np.atleast_2d(np.cov(pooled.T)) if pooled.shape[0] > 1
        else np.zeros((ensemble.dim, ensemble.dim)))

    grid = _grid_from_cfg(cfg) if cfg.grid else None
    metrics_rows = []
    metric_times = sorted(set(requested))
    if grid is not None and metric_times:
        solver = FokkerPlanckSolver1D(potential, grid)
        target = solver.target()
        for t in metric_times:
            k = min(n_steps, int(round(t / tau)))
            hist = histogram(states[k][:, 0], grid)
            metrics_rows.extend(_metric_rows(t, hist, target))

    for spec in cfg.outputs:
        if spec.kind == "samples":
            keep = [k for k in record_steps if k % cfg.thin == 0 or k == n_steps]
            run = SampleRun(times=np.array([k * tau for k in keep]),
                            steps=np.array(keep, dtype=int),
                            states=np.stack([states[k] for k in keep]),
                            stats=stats)
            path = _ensure_dir(_resolve(spec.path, out_root))
            write_samples_csv(path, run)
            artifacts.append(path)
        elif spec.kind == "histogram":
            for t in spec.times or [n_steps * tau]:
                k = min(n_steps, int(round(t / tau)))
                hist = histogram(states[k][:, 0], grid)
                path = _timed_path(spec.path, t, spec.times, out_root)
                write_density_csv(path, hist)
                artifacts.append(path)
        elif spec.kind == "metrics":
            path = _ensure_dir(_resolve(spec.path, out_root))
            write_metrics_csv(path, metrics_rows)
            artifacts.append(path)
        elif spec.kind == "stats":
            path = _ensure_dir(_resolve(spec.path, out_root))
            write_chain_stats(path, stats)
            artifacts.append(path)
    return metrics_rows


def _metric_rows(t, dens, target):
    rows = [{"time": t, "metric": "tv", "value": tv_distance(dens, target)},
            {"time": t, "metric": "kl", "value": kl_divergence(dens, target)}]
    try:
        rows.append({"time": t, "metric": "l2pinv",
                     "value": l2_pi_inv_norm(dens, target)})
    except ValueError:
        rows.append({"time": t, "metric": "l2pinv", "value": float("nan")})
    return rows


def _timed_path(template: str, t: float, times, out_root) -> Path:
    if "{t}" in template:
        return _ensure_dir(_resolve(template.replace("{t}", f"{t:g}"), out_root))
    if times and len(times) > 1:
        raise GradflowError(
            f"output path {template!r} needs a '{{t}}' placeholder for multiple times")
    return _ensure_dir(_resolve(template, out_root))


# --- grid solves ---------------------------------------------------------------

def _initial_grid_density(cfg, solver: FokkerPlanckSolver1D) -> GridDensity:
    spec = cfg.init
    if isinstance(spec, dict) and spec.get("kind") == "gibbs":
        return solver.target()
    if isinstance(spec, dict) and spec.get("kind") == "gaussian":
        mean = np.asarray(spec["mean"], dtype=float).ravel()[0]
        var = spec["var"] if "var" in spec else np.asarray(spec["cov"], dtype=float).ravel()[0]
        x = solver.grid.centers()
        return normalize(np.exp(-((x - mean) ** 2) / (2.0 * var)), solver.grid)
    raise GradflowError("grid methods need init kind 'gaussian' or 'gibbs'")


def _run_grid(cfg, potential, out_root, artifacts):
    grid = _grid_from_cfg(cfg)
    solver = FokkerPlanckSolver1D(potential, grid)
    state = FpeState.initial(potential, _initial_grid_density(cfg, solver))

    step_fn = {"fpe": fpe_step, "fpe_weighted": weighted_fpe_step,
               "fpe_bdl": bdl_fpe_step}[cfg.method]

    horizon = cfg.time if cfg.time is not None else cfg.steps * cfg.tau
    out_times = sorted({t for spec in cfg.outputs for t in (spec.times or [horizon])
                        if spec.kind in ("density", "metrics")}
                       | set(_assertion_times(cfg)) | {horizon})

    snapshots = {0.0: state}
    for t_target in out_times:
        while state.time < t_target - 1e-12:
            mobility = 1.0
            if cfg.method == "fpe_weighted":
                mobility = max(state.density.variance(), 1e-12)
            dt = min(cfg.tau, solver.max_stable_dt(mobility), t_target - state.time)
            state = step_fn(state, dt)
        snapshots[t_target] = state

    target = solver.target()
    metrics_rows = []
    for t in out_times:
        metrics_rows.extend(_metric_rows(t, snapshots[t].density, target))

    for spec in cfg.outputs:
        if spec.kind == "density":
            for t in spec.times or [horizon]:
                path = _timed_path(spec.path, t, spec.times, out_root)
                write_density_csv(path, snapshots[t].density)
                artifacts.append(path)
        elif spec.kind == "metrics":
            path = _ensure_dir(_resolve(spec.path, out_root))
            write_metrics_csv(path, metrics_rows)
            artifacts.append(path)
        elif spec.kind == "rates":
            ordered = [snapshots[0.0]] + [snapshots[t] for t in out_times if t > 0]
            report = decay_report(ordered, target, potential.alpha)
            path = _ensure_dir(_resolve(spec.path, out_root))
            write_decay_report(path, report)
            artifacts.append(path)
    return metrics_rows


# --- assertions ----------------------------------------------------------------

def _check_assertions(cfg, metrics_rows, endpoint_states):
    by_key = {}
    for row in metrics_rows:
        by_key.setdefault(row["metric"], []).append((row["time"], row["value"]))
    for a in cfg.assertions:
        if a.check == "endpoint_near":
            point = np.asarray(a.params["point"], dtype=float)
            tol = a.params["tol"]
            for state in endpoint_states:
                dist = float(np.linalg.norm(state - point))
                if dist > tol:
                    raise AssertionFailure(
                        f"endpoint {state} is {dist:.3e} from {point} (tol {tol:g})")
        elif a.check == "metric_max":
            want_t, limit = a.params["time"], a.params["max"]
            metric = a.params["metric"]
            candidates = [v for t, v in by_key.get(metric, []) if abs(t - want_t) < 1e-9]
            if not candidates:
                raise AssertionFailure(
                    f"no {metric} value computed at time {want_t:g}")
            if candidates[0] > limit:
                raise AssertionFailure(
                    f"{metric} at t={want_t:g} is {candidates[0]:.6g} > {limit:g}")
        elif a.check == "metric_monotone":
            series = sorted(by_key.get(a.params["metric"], []))
            values = [v for _, v in series]
            if len(values) < 2:
                raise AssertionFailure(
                    f"metric_monotone needs {a.params['metric']} at >= 2 times")
            for earlier, later in zip(values[:-1], values[1:]):
                if later > earlier + 1e-12:
                    raise AssertionFailure(
                        f"{a.params['metric']} increased from {earlier:.6g} "
                        f"to {later:.6g}")


# --- file comparison -------------------------------------------------------------

def compare_files(path_a, path_b, metric: str) -> float:
    """Metric between two artifact files.

    ``tv``, ``kl``, ``l2pinv`` expect density CSVs on a common grid;
    ``w2`` expects samples CSVs and compares the final recorded step of
    each (1-D).
    """
    if metric in ("tv", "kl", "l2pinv"):
        a = read_density_csv(path_a)
        b = read_density_csv(path_b)
        if metric == "tv":
            return tv_distance(a, b)
        if metric == "kl":
            return kl_divergence(a, b)
        return l2_pi_inv_norm(a, b)
    if metric == "w2":
        from .density import wasserstein1d
        sa, ta = read_samples_csv(path_a)
        sb, tb = read_samples_csv(path_b)
        return wasserstein1d(ta[sa == sa.max(), 0], tb[sb == sb.max(), 0])
    raise ValueError(f"unknown metric {metric!r} (choose tv, kl, l2pinv, w2)")
