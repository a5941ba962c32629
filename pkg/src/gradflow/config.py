"""Declarative experiment configs.

Configs are YAML mappings parsed in strict mode: unknown keys are
rejected, every violation is reported with its line number, and all
errors are collected before failing.  ``serialize_config`` emits a
canonical form that reparses to an equal config.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import List, Optional

import yaml

from .errors import ConfigError

__all__ = [
    "ExperimentConfig",
    "OutputSpec",
    "AssertionSpec",
    "parse_config",
    "serialize_config",
    "DETERMINISTIC_METHODS",
    "STOCHASTIC_METHODS",
    "GRID_METHODS",
]

DETERMINISTIC_METHODS = ("gd", "gd_implicit", "newton", "bfgs", "mirror")
STOCHASTIC_METHODS = ("ula", "mala", "ensemble", "bdl")
GRID_METHODS = ("fpe", "fpe_weighted", "fpe_bdl")
ALL_METHODS = DETERMINISTIC_METHODS + STOCHASTIC_METHODS + GRID_METHODS

_OUTPUT_KINDS = {
    "deterministic": ("trajectory", "rates"),
    "stochastic": ("samples", "histogram", "metrics", "stats"),
    "grid": ("density", "metrics", "rates"),
}
_TIMED_KINDS = ("histogram", "density", "metrics")
_METRIC_NAMES = ("tv", "kl", "l2pinv")
_ASSERTION_CHECKS = ("endpoint_near", "metric_max", "metric_monotone")

_TOP_KEYS = ("problem", "method", "tau", "dt", "steps", "time", "seed",
             "particles", "init", "grid", "thin", "workers", "ridge",
             "bandwidth", "mirror_map", "outputs", "assertions", "manifest")


@dataclass(eq=True)
class OutputSpec:
    kind: str
    path: str
    times: Optional[List[float]] = None


@dataclass(eq=True)
class AssertionSpec:
    check: str
    params: dict


@dataclass(eq=True)
class ExperimentConfig:
    problem: str
    method: str
    tau: float
    steps: Optional[int] = None
    time: Optional[float] = None
    seed: Optional[int] = None
    particles: Optional[int] = None
    init: object = None
    grid: Optional[dict] = None
    thin: int = 1
    workers: int = 1
    ridge: Optional[float] = None
    bandwidth: object = "auto"
    mirror_map: str = "quadratic"
    outputs: List[OutputSpec] = dc_field(default_factory=list)
    assertions: List[AssertionSpec] = dc_field(default_factory=list)
    manifest: str = "manifest.json"

    @property
    def family(self) -> str:
        if self.method in DETERMINISTIC_METHODS:
            return "deterministic"
        if self.method in STOCHASTIC_METHODS:
            return "stochastic"
        return "grid"

    def n_steps(self) -> int:
        if self.steps is not None:
            return self.steps
        return max(0, int(round(self.time / self.tau)))


# --- node-level helpers ------------------------------------------------------

def _line(node) -> int:
    return node.start_mark.line + 1


def _construct(node):
    return yaml.SafeLoader("").construct_object(node, deep=True)


def _mapping_items(node, errors, where: str):
    if not isinstance(node, yaml.MappingNode):
        errors.append(f"line {_line(node)}: {where} must be a mapping")
        return {}
    out = {}
    for key_node, val_node in node.value:
        key = _construct(key_node)
        if not isinstance(key, str):
            errors.append(f"line {_line(key_node)}: keys must be strings")
            continue
        if key in out:
            errors.append(f"line {_line(key_node)}: duplicate key {key!r}")
            continue
        out[key] = val_node
    return out


class _Field:
    """Typed extraction from a mapping of YAML nodes, accumulating errors."""

    def __init__(self, items: dict, errors: list):
        self.items = items
        self.errors = errors

    def _value(self, key, kind, check, describe):
        node = self.items.get(key)
        if node is None:
            return None, False
        val = _construct(node)
        if not kind(val):
            self.errors.append(f"line {_line(node)}: {key} must be {describe}")
            return None, True
        msg = check(val) if check else None
        if msg:
            self.errors.append(f"line {_line(node)}: {key} {msg}")
            return None, True
        return val, True

    def floating(self, key, minimum=None, exclusive=False):
        def check(v):
            if minimum is not None:
                if exclusive and not v > minimum:
                    return f"must be > {minimum}"
                if not exclusive and not v >= minimum:
                    return f"must be >= {minimum}"
            return None
        val, _ = self._value(key, lambda v: isinstance(v, (int, float))
                             and not isinstance(v, bool), check, "a number")
        return None if val is None else float(val)

    def integer(self, key, minimum=None):
        def check(v):
            if minimum is not None and v < minimum:
                return f"must be >= {minimum}"
            return None
        val, _ = self._value(key, lambda v: isinstance(v, int)
                             and not isinstance(v, bool), check, "an integer")
        return val

    def string(self, key, choices=None):
        def check(v):
            if choices and v not in choices:
                return f"must be one of {', '.join(choices)}"
            return None
        val, _ = self._value(key, lambda v: isinstance(v, str), check, "a string")
        return val

    def node(self, key):
        return self.items.get(key)


def _float_list(node, errors, where):
    val = _construct(node)
    if (isinstance(val, list) and val
            and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in val)):
        return [float(v) for v in val]
    errors.append(f"line {_line(node)}: {where} must be a nonempty list of numbers")
    return None


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate; raises ConfigError listing every violation."""
    errors: List[str] = []
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        raise ConfigError([f"yaml: {exc}"])
    if root is None:
        raise ConfigError(["config is empty"])
    items = _mapping_items(root, errors, "config")
    if errors:
        raise ConfigError(errors)

    for key, node in items.items():
        if key not in _TOP_KEYS:
            errors.append(f"line {_line(node)}: unknown key {key!r}")

    f = _Field(items, errors)
    problem = f.string("problem")
    method = f.string("method", choices=ALL_METHODS)
    if "problem" not in items:
        errors.append("line 1: missing required key 'problem'")
    if "method" not in items:
        errors.append("line 1: missing required key 'method'")

    tau = f.floating("tau", minimum=0.0, exclusive=True)
    dt = f.floating("dt", minimum=0.0, exclusive=True)
    if ("tau" in items) == ("dt" in items):
        errors.append("line 1: exactly one of 'tau' or 'dt' is required")
    step_size = tau if tau is not None else dt

    steps = f.integer("steps", minimum=0)
    time = f.floating("time", minimum=0.0, exclusive=True)
    if ("steps" in items) == ("time" in items):
        errors.append("line 1: exactly one of 'steps' or 'time' is required")

    seed = f.integer("seed")
    particles = f.integer("particles", minimum=1)
    thin = f.integer("thin", minimum=1)
    workers = f.integer("workers", minimum=1)
    ridge = f.floating("ridge", minimum=0.0)
    mirror_map = f.string("mirror_map", choices=("quadratic", "negative_entropy"))
    manifest = f.string("manifest")

    bandwidth = "auto"
    bw_node = f.node("bandwidth")
    if bw_node is not None:
        bw = _construct(bw_node)
        if bw == "auto":
            bandwidth = "auto"
        elif isinstance(bw, (int, float)) and not isinstance(bw, bool) and bw > 0:
            bandwidth = float(bw)
        else:
            errors.append(f"line {_line(bw_node)}: bandwidth must be 'auto' or a positive number")

    grid = None
    grid_node = f.node("grid")
    if grid_node is not None:
        gitems = _mapping_items(grid_node, errors, "grid")
        for key in gitems:
            if key not in ("lo", "hi", "n"):
                errors.append(f"line {_line(gitems[key])}: unknown grid key {key!r}")
        gf = _Field(gitems, errors)
        lo = gf.floating("lo")
        hi = gf.floating("hi")
        n = gf.integer("n", minimum=2)
        missing = [k for k in ("lo", "hi", "n") if k not in gitems]
        if missing:
            errors.append(f"line {_line(grid_node)}: grid needs keys lo, hi, n "
                          f"(missing {', '.join(missing)})")
        elif lo is not None and hi is not None and hi <= lo:
            errors.append(f"line {_line(grid_node)}: grid needs hi > lo")
        if lo is not None and hi is not None and n is not None and hi > lo:
            grid = {"lo": lo, "hi": hi, "n": n}

    init = None
    init_node = f.node("init")
    if init_node is not None:
        init = _parse_init(init_node, errors)

    outputs: List[OutputSpec] = []
    out_node = f.node("outputs")
    if out_node is not None:
        if not isinstance(out_node, yaml.SequenceNode):
            errors.append(f"line {_line(out_node)}: outputs must be a list")
        else:
            for item in out_node.value:
                spec = _parse_output(item, errors)
                if spec:
                    outputs.append(spec)

    assertions: List[AssertionSpec] = []
    asrt_node = f.node("assertions")
    if asrt_node is not None:
        if not isinstance(asrt_node, yaml.SequenceNode):
            errors.append(f"line {_line(asrt_node)}: assertions must be a list")
        else:
            for item in asrt_node.value:
                spec = _parse_assertion(item, errors)
                if spec:
                    assertions.append(spec)

    # method-family requirements
    if method is not None:
        family = ("deterministic" if method in DETERMINISTIC_METHODS
                  else "stochastic" if method in STOCHASTIC_METHODS else "grid")
        if family == "stochastic":
            for key in ("seed", "particles", "init"):
                if key not in items:
                    errors.append(f"line 1: method {method!r} requires key {key!r}")
        if family == "grid" and grid_node is None:
            errors.append(f"line 1: method {method!r} requires key 'grid'")
        if family == "grid" and init_node is None:
            errors.append(f"line 1: method {method!r} requires key 'init'")
        if family == "deterministic" and init_node is None:
            errors.append(f"line 1: method {method!r} requires key 'init'")
        allowed = _OUTPUT_KINDS[family]
        for spec in outputs:
            if spec.kind not in allowed:
                errors.append(f"line 1: output kind {spec.kind!r} not valid for "
                              f"method {method!r} (allowed: {', '.join(allowed)})")
        needs_grid = any(spec.kind in ("histogram", "metrics") for spec in outputs)
        needs_grid = needs_grid or any(a.check in ("metric_max", "metric_monotone")
                                       for a in assertions)
        if family == "stochastic" and needs_grid and grid_node is None:
            errors.append("line 1: histogram/metrics outputs require key 'grid'")

    if errors:
        raise ConfigError(errors)
    return ExperimentConfig(
        problem=problem, method=method, tau=step_size, steps=steps, time=time,
        seed=seed, particles=particles, init=init, grid=grid,
        thin=thin if thin is not None else 1,
        workers=workers if workers is not None else 1,
        ridge=ridge, bandwidth=bandwidth,
        mirror_map=mirror_map if mirror_map is not None else "quadratic",
        outputs=outputs, assertions=assertions,
        manifest=manifest if manifest is not None else "manifest.json")


def _parse_init(node, errors):
    """Initial condition: a point / list of points, or a mapping.

    Mappings: {kind: gaussian, mean: ..., var|cov: ...},
    {kind: points, points: [[...], ...]}, {kind: gibbs}.
    """
    if isinstance(node, yaml.SequenceNode):
        val = _construct(node)
        if all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in val) and val:
            return [float(v) for v in val]
        if val and all(isinstance(v, list) and v
                       and all(isinstance(x, (int, float)) and not isinstance(x, bool)
                               for x in v) for v in val):
            return [[float(x) for x in v] for v in val]
        errors.append(f"line {_line(node)}: init list must hold numbers or "
                      "lists of numbers")
        return None
    if isinstance(node, yaml.MappingNode):
        sub = _mapping_items(node, errors, "init")
        sf = _Field(sub, errors)
        kind = sf.string("kind", choices=("gaussian", "points", "gibbs"))
        if kind is None:
            errors.append(f"line {_line(node)}: init mapping needs 'kind'")
            return None
        if kind == "gibbs":
            return {"kind": "gibbs"}
        if kind == "gaussian":
            mean_node = sub.get("mean")
            if mean_node is None:
                errors.append(f"line {_line(node)}: gaussian init needs 'mean'")
                return None
            mean_val = _construct(mean_node)
            if isinstance(mean_val, (int, float)) and not isinstance(mean_val, bool):
                mean = [float(mean_val)]
            else:
                mean = _float_list(mean_node, errors, "mean")
                if mean is None:
                    return None
            var = sf.floating("var", minimum=0.0, exclusive=True)
            cov_node = sub.get("cov")
            if (var is None) == (cov_node is None):
                errors.append(f"line {_line(node)}: gaussian init needs exactly one "
                              "of 'var' or 'cov'")
                return None
            if var is not None:
                return {"kind": "gaussian", "mean": mean, "var": var}
            cov = _construct(cov_node)
            return {"kind": "gaussian", "mean": mean, "cov": cov}
        points_node = sub.get("points")
        if points_node is None:
            errors.append(f"line {_line(node)}: points init needs 'points'")
            return None
        pts = _construct(points_node)
        return {"kind": "points", "points": pts}
    errors.append(f"line {_line(node)}: init must be a list or a mapping")
    return None


def _parse_output(node, errors):
    sub = _mapping_items(node, errors, "output")
    if not sub:
        return None
    for key in sub:
        if key not in ("kind", "path", "times"):
            errors.append(f"line {_line(sub[key])}: unknown output key {key!r}")
    sf = _Field(sub, errors)
    kind = sf.string("kind", choices=tuple(sorted(
        {k for kinds in _OUTPUT_KINDS.values() for k in kinds})))
    path = sf.string("path")
    if kind is None or path is None:
        errors.append(f"line {_line(node)}: output needs 'kind' and 'path'")
        return None
    times = None
    times_node = sub.get("times")
    if times_node is not None:
        if kind not in _TIMED_KINDS:
            errors.append(f"line {_line(times_node)}: 'times' only applies to "
                          f"{', '.join(_TIMED_KINDS)} outputs")
        times = _float_list(times_node, errors, "times")
    return OutputSpec(kind=kind, path=path, times=times)


def _parse_assertion(node, errors):
    sub = _mapping_items(node, errors, "assertion")
    if not sub:
        return None
    sf = _Field(sub, errors)
    check = sf.string("check", choices=_ASSERTION_CHECKS)
    if check is None:
        errors.append(f"line {_line(node)}: assertion needs 'check'")
        return None
    params = {}
    if check == "endpoint_near":
        for key in sub:
            if key not in ("check", "point", "tol"):
                errors.append(f"line {_line(sub[key])}: unknown assertion key {key!r}")
        point_node = sub.get("point")
        tol = sf.floating("tol", minimum=0.0, exclusive=True)
        if point_node is None or tol is None:
            errors.append(f"line {_line(node)}: endpoint_near needs 'point' and 'tol'")
            return None
        point = _float_list(point_node, errors, "point")
        if point is None:
            return None
        params = {"point": point, "tol": tol}
    elif check == "metric_max":
        for key in sub:
            if key not in ("check", "metric", "time", "max"):
                errors.append(f"line {_line(sub[key])}: unknown assertion key {key!r}")
        metric = sf.string("metric", choices=_METRIC_NAMES)
        at = sf.floating("time")
        limit = sf.floating("max")
        if metric is None or at is None or limit is None:
            errors.append(f"line {_line(node)}: metric_max needs 'metric', 'time', 'max'")
            return None
        params = {"metric": metric, "time": at, "max": limit}
    else:  # metric_monotone
        for key in sub:
            if key not in ("check", "metric"):
                errors.append(f"line {_line(sub[key])}: unknown assertion key {key!r}")
        metric = sf.string("metric", choices=_METRIC_NAMES)
        if metric is None:
            errors.append(f"line {_line(node)}: metric_monotone needs 'metric'")
            return None
        params = {"metric": metric}
    return AssertionSpec(check=check, params=params)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    """Canonical plain mapping; omits defaults that were not set explicitly
    only where they are unambiguous (outputs/assertions always included)."""
    out = {"problem": cfg.problem, "method": cfg.method, "tau": cfg.tau}
    if cfg.steps is not None:
        out["steps"] = cfg.steps
    if cfg.time is not None:
        out["time"] = cfg.time
    if cfg.seed is not None:
        out["seed"] = cfg.seed
    if cfg.particles is not None:
        out["particles"] = cfg.particles
    if cfg.init is not None:
        out["init"] = cfg.init
    if cfg.grid is not None:
        out["grid"] = cfg.grid
    out["thin"] = cfg.thin
    out["workers"] = cfg.workers
    if cfg.ridge is not None:
        out["ridge"] = cfg.ridge
    if cfg.bandwidth != "auto":
        out["bandwidth"] = cfg.bandwidth
    if cfg.mirror_map != "quadratic":
        out["mirror_map"] = cfg.mirror_map
    if cfg.outputs:
        out["outputs"] = [
            {"kind": o.kind, "path": o.path, **({"times": o.times} if o.times else {})}
            for o in cfg.outputs]
    if cfg.assertions:
        out["assertions"] = [{"check": a.check, **a.params} for a in cfg.assertions]
    if cfg.manifest != "manifest.json":
        out["manifest"] = cfg.manifest
    return out


def serialize_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=False,
                          default_flow_style=False)
