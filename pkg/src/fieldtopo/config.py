"""Run configuration: TOML schema, validation, canonical resolution.

One configuration file describes one experiment. Validation walks the whole
document and aggregates every problem as "path: message" before rejecting,
and unknown keys are errors so typos cannot silently change a run. The
resolved dictionary (defaults applied, numbers normalized) is what gets
hashed; outputs are a pure function of (hash, seed, artifact version).
"""
from __future__ import annotations

import math
import sys
from dataclasses import dataclass

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError, KernelError
from .fields import ModelConfig
from .geometry import Box
from .io import canonical_digest
from .kernels import FAMILIES, KernelSpec, make_kernel
from .rng import MarkDistribution, discrete_marks, point_mass, uniform_marks

EXPERIMENTS = ("clt", "fclt-tightness", "resample", "stabilize", "kacrice",
               "perco-tail", "sigma")

GAUSSIAN_ONLY = ("resample", "stabilize", "kacrice", "perco-tail", "sigma")


# --- primitive checkers: each returns the value or records an error --------

def _reject_unknown(table: dict, allowed, path: str, errors: list):
    for key in table:
        if key not in allowed:
            errors.append(f"{path}{key}: unknown key")


def _get(table: dict, key: str, path: str, errors: list, required=True,
         default=None):
    if key in table:
        return table[key]
    if required:
        errors.append(f"{path}{key}: missing required key")
    return default


def _num(value, path: str, errors: list, minimum=None, strict=False,
         maximum=None):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        errors.append(f"{path}: expected a number, got {value!r}")
        return None
    v = float(value)
    if not math.isfinite(v):
        errors.append(f"{path}: must be finite")
        return None
    if minimum is not None and (v <= minimum if strict else v < minimum):
        op = ">" if strict else ">="
        errors.append(f"{path}: must be {op} {minimum}")
        return None
    if maximum is not None and v > maximum:
        errors.append(f"{path}: must be <= {maximum}")
        return None
    return v


def _int(value, path: str, errors: list, minimum=None):
    if isinstance(value, bool) or not isinstance(value, int):
        errors.append(f"{path}: expected an integer, got {value!r}")
        return None
    if minimum is not None and value < minimum:
        errors.append(f"{path}: must be >= {minimum}")
        return None
    return int(value)


def _bool(value, path: str, errors: list):
    if not isinstance(value, bool):
        errors.append(f"{path}: expected true or false, got {value!r}")
        return None
    return value


def _str_choice(value, choices, path: str, errors: list):
    if not isinstance(value, str) or value not in choices:
        errors.append(f"{path}: expected one of {sorted(choices)}, got {value!r}")
        return None
    return value


def _ascending_numbers(value, path: str, errors: list, minimum=0.0,
                       strict_min=True, integers=False):
    if not isinstance(value, list) or not value:
        errors.append(f"{path}: expected a nonempty array")
        return None
    out = []
    for k, v in enumerate(value):
        item = (_int(v, f"{path}[{k}]", errors, minimum=None) if integers
                else _num(v, f"{path}[{k}]", errors))
        if item is None:
            return None
        out.append(item)
    if any(b <= a for a, b in zip(out, out[1:])):
        errors.append(f"{path}: entries must be strictly ascending")
        return None
    lo = out[0]
    if (lo <= minimum if strict_min else lo < minimum):
        op = ">" if strict_min else ">="
        errors.append(f"{path}: entries must be {op} {minimum}")
        return None
    return out


def _interval(value, path: str, errors: list, strict=True):
    if not isinstance(value, list) or len(value) != 2:
        errors.append(f"{path}: expected [lo, hi]")
        return None
    a = _num(value[0], f"{path}[0]", errors)
    b = _num(value[1], f"{path}[1]", errors)
    if a is None or b is None:
        return None
    if strict and not a < b:
        errors.append(f"{path}: need lo < hi")
        return None
    if not strict and not a <= b:
        errors.append(f"{path}: need lo <= hi")
        return None
    return [a, b]


def _level_grid(table, path: str, errors: list):
    if not isinstance(table, dict):
        errors.append(f"{path}: expected a table with lo, hi, count")
        return None
    _reject_unknown(table, {"lo", "hi", "count"}, path + ".", errors)
    lo = _num(_get(table, "lo", path + ".", errors), f"{path}.lo", errors)
    hi = _num(_get(table, "hi", path + ".", errors), f"{path}.hi", errors)
    count = _int(_get(table, "count", path + ".", errors), f"{path}.count",
                 errors, minimum=2)
    if lo is None or hi is None or count is None:
        return None
    if not lo < hi:
        errors.append(f"{path}: need lo < hi")
        return None
    return {"lo": lo, "hi": hi, "count": count}


def level_grid_values(grid: dict) -> np.ndarray:
    return np.linspace(grid["lo"], grid["hi"], grid["count"])


def _on_grid(u: float, grid: dict) -> bool:
    return bool(np.any(np.isclose(level_grid_values(grid), u,
                                  rtol=0, atol=1e-12)))


# --- sections ---------------------------------------------------------------

def _parse_marks(table, path: str, errors: list):
    if not isinstance(table, dict):
        errors.append(f"{path}: expected a table")
        return None, None
    kind = _str_choice(table.get("kind"), {"point", "uniform", "discrete"},
                       f"{path}.kind", errors)
    if kind == "point":
        _reject_unknown(table, {"kind", "value"}, path + ".", errors)
        v = _num(_get(table, "value", path + ".", errors), f"{path}.value", errors)
        if v is None:
            return None, None
        return point_mass(v), {"kind": "point", "value": v}
    if kind == "uniform":
        _reject_unknown(table, {"kind", "lo", "hi"}, path + ".", errors)
        lo = _num(_get(table, "lo", path + ".", errors), f"{path}.lo", errors,
                  minimum=0.0, strict=True)
        hi = _num(_get(table, "hi", path + ".", errors), f"{path}.hi", errors)
        if lo is None or hi is None:
            return None, None
        if not lo < hi:
            errors.append(f"{path}: need lo < hi")
            return None, None
        return uniform_marks(lo, hi), {"kind": "uniform", "lo": lo, "hi": hi}
    if kind == "discrete":
        _reject_unknown(table, {"kind", "values", "weights"}, path + ".", errors)
        values = table.get("values")
        weights = table.get("weights")
        if (not isinstance(values, list) or not isinstance(weights, list)
                or len(values) != len(weights) or not values):
            errors.append(f"{path}: discrete marks need matching nonempty "
                          "values/weights arrays")
            return None, None
        try:
            dist = discrete_marks([float(v) for v in values],
                                  [float(w) for w in weights])
        except (TypeError, ValueError) as exc:
            errors.append(f"{path}: {exc}")
            return None, None
        return dist, {"kind": "discrete", "values": [float(v) for v in values],
                      "weights": [float(w) for w in weights]}
    return None, None


_PARAM_KEYS = {
    "clt": {"window_sizes", "levels", "replicates", "target_level", "q",
            "interior"},
    "fclt-tightness": {"window_sizes", "levels", "replicates", "intervals",
                       "interior"},
    "resample": {"window_size", "distances", "interval", "replicates", "axis"},
    "stabilize": {"window_size", "radii", "interval", "replicates", "axis"},
    "kacrice": {"window_size", "targets", "replicates", "intervals"},
    "perco-tail": {"window_size", "level", "radii", "replicates"},
    "sigma": {"window_size", "box_side", "replicates", "inner_replicates",
              "interval", "shifts"},
}


def _parse_params(experiment: str, table, dim: int, errors: list) -> dict:
    path = "params."
    out = {}
    if not isinstance(table, dict):
        errors.append("params: expected a table")
        return out
    _reject_unknown(table, _PARAM_KEYS[experiment], path, errors)

    def req(key):
        return _get(table, key, path, errors)

    if experiment in ("clt", "fclt-tightness"):
        out["window_sizes"] = _ascending_numbers(req("window_sizes"),
                                                 path + "window_sizes", errors)
        out["levels"] = _level_grid(req("levels"), "params.levels", errors)
        out["replicates"] = _int(req("replicates"), path + "replicates",
                                 errors, minimum=1)
        if experiment == "clt":
            out["target_level"] = _num(req("target_level"),
                                       path + "target_level", errors)
            out["q"] = _int(table.get("q", 0), path + "q", errors, minimum=0)
            out["interior"] = _bool(table.get("interior", True),
                                    path + "interior", errors)
            if (out["target_level"] is not None and out["levels"] is not None
                    and not _on_grid(out["target_level"], out["levels"])):
                errors.append("params.target_level: must lie on the level grid")
            if out["q"] is not None and out["q"] >= dim:
                errors.append(f"params.q: must be < dim for superlevel sets "
                              f"of a {dim}-dimensional grid")
        else:
            out["interior"] = _bool(table.get("interior", True),
                                    path + "interior", errors)
            intervals = req("intervals")
            if not isinstance(intervals, list) or not intervals:
                errors.append("params.intervals: expected a nonempty array "
                              "of [lo, hi] pairs")
                out["intervals"] = None
            else:
                parsed = [_interval(iv, f"params.intervals[{k}]", errors)
                          for k, iv in enumerate(intervals)]
                out["intervals"] = parsed if all(p is not None for p in parsed) \
                    else None
            if out["intervals"] is not None and out["levels"] is not None:
                for k, (a, b) in enumerate(out["intervals"]):
                    if not (_on_grid(a, out["levels"])
                            and _on_grid(b, out["levels"])):
                        errors.append(f"params.intervals[{k}]: endpoints must "
                                      "lie on the level grid")
        return out

    out["window_size"] = _num(req("window_size"), path + "window_size",
                              errors, minimum=0.0, strict=True)
    out["replicates"] = _int(req("replicates"), path + "replicates", errors,
                             minimum=1)

    if experiment == "resample":
        out["distances"] = _ascending_numbers(req("distances"),
                                              path + "distances", errors,
                                              integers=True)
        out["interval"] = _interval(req("interval"), path + "interval", errors,
                                    strict=False)
        out["axis"] = _int(table.get("axis", 0), path + "axis", errors,
                           minimum=0)
        if out["axis"] is not None and out["axis"] >= dim:
            errors.append(f"params.axis: must be < dim ({dim})")
    elif experiment == "stabilize":
        out["radii"] = _ascending_numbers(req("radii"), path + "radii", errors,
                                          integers=True)
        out["interval"] = _interval(req("interval"), path + "interval", errors,
                                    strict=False)
        out["axis"] = _int(table.get("axis", 0), path + "axis", errors,
                           minimum=0)
        if out["axis"] is not None and out["axis"] >= dim:
            errors.append(f"params.axis: must be < dim ({dim})")
    elif experiment == "kacrice":
        targets = table.get("targets", [])
        if not isinstance(targets, list):
            errors.append("params.targets: expected an array of levels")
            targets = []
        out["targets"] = [
            v for k, t in enumerate(targets)
            if (v := _num(t, f"params.targets[{k}]", errors)) is not None
        ]
        if out["targets"] and dim != 1:
            errors.append("params.targets: the closed-form rate comparison "
                          "needs dim = 1")
        intervals = table.get("intervals", [])
        if not isinstance(intervals, list):
            errors.append("params.intervals: expected an array of [lo, hi]")
            intervals = []
        parsed = [_interval(iv, f"params.intervals[{k}]", errors)
                  for k, iv in enumerate(intervals)]
        out["intervals"] = [p for p in parsed if p is not None]
        if not out["targets"] and not out["intervals"]:
            errors.append("params: kacrice needs targets and/or intervals")
    elif experiment == "perco-tail":
        out["level"] = _num(req("level"), path + "level", errors)
        out["radii"] = _ascending_numbers(req("radii"), path + "radii", errors)
    elif experiment == "sigma":
        out["box_side"] = _int(req("box_side"), path + "box_side", errors,
                               minimum=1)
        out["inner_replicates"] = _int(req("inner_replicates"),
                                       path + "inner_replicates", errors,
                                       minimum=2)
        if out["replicates"] is not None and out["replicates"] < 2:
            errors.append("params.replicates: sigma needs >= 2 outer draws")
        out["interval"] = _interval(req("interval"), path + "interval", errors,
                                    strict=False)
        shifts = table.get("shifts", [0.0])
        if not isinstance(shifts, list) or not shifts:
            errors.append("params.shifts: expected a nonempty array")
            shifts = [0.0]
        out["shifts"] = [
            v for k, s in enumerate(shifts)
            if (v := _num(s, f"params.shifts[{k}]", errors)) is not None
        ]
        if out["shifts"] and 0.0 not in out["shifts"]:
            errors.append("params.shifts: must include 0.0")
    return out


@dataclass(frozen=True)
class RunConfig:
    """A fully validated, resolved run description."""

    experiment: str
    seed: int
    out: str | None
    model_kind: str  # "gaussian" | "shot"
    dim: int
    spacing: float
    kernel_family: str
    kernel_b0: float
    kernel_eta: float | None
    intensity: float | None
    marks: MarkDistribution | None
    params: dict
    resolved: dict

    def config_hash(self) -> str:
        return canonical_digest(self.resolved)

    def kernel_spec(self) -> KernelSpec:
        normalization = "L2" if self.model_kind == "gaussian" else "L1"
        return make_kernel(self.dim, self.kernel_family, self.kernel_b0,
                           eta=self.kernel_eta, normalization=normalization)

    def model_for(self, window_size: float) -> ModelConfig:
        window = Box((0.0,) * self.dim, (float(window_size),) * self.dim)
        return ModelConfig(model=self.model_kind, kernel=self.kernel_spec(),
                           window=window, spacing=self.spacing,
                           intensity=self.intensity, marks=self.marks)


def validate_config(data: dict):
    """Validate a parsed document. Returns (RunConfig or None, error list)."""
    errors: list = []
    if not isinstance(data, dict):
        return None, ["config: expected a table"]
    _reject_unknown(data, {"experiment", "seed", "out", "model", "kernel",
                           "params"}, "", errors)

    experiment = _str_choice(data.get("experiment"), set(EXPERIMENTS),
                             "experiment", errors)
    seed = _int(_get(data, "seed", "", errors), "seed", errors, minimum=0)
    out = data.get("out")
    if out is not None and not isinstance(out, str):
        errors.append("out: expected a string path")
        out = None

    model_tbl = _get(data, "model", "", errors, default={})
    kind = None
    dim = None
    spacing = None
    intensity = None
    marks = None
    marks_resolved = None
    if isinstance(model_tbl, dict):
        _reject_unknown(model_tbl, {"kind", "dim", "spacing", "intensity",
                                    "marks"}, "model.", errors)
        kind_raw = _str_choice(model_tbl.get("kind"),
                               {"gaussian", "shot-noise"}, "model.kind", errors)
        kind = {"gaussian": "gaussian", "shot-noise": "shot"}.get(kind_raw)
        dim = _int(_get(model_tbl, "dim", "model.", errors), "model.dim",
                   errors, minimum=1)
        if dim is not None and dim > 3:
            errors.append("model.dim: must be 1, 2 or 3")
            dim = None
        spacing = _num(_get(model_tbl, "spacing", "model.", errors),
                       "model.spacing", errors, minimum=0.0, strict=True)
        if kind == "shot":
            intensity = _num(_get(model_tbl, "intensity", "model.", errors),
                             "model.intensity", errors, minimum=0.0,
                             strict=True)
            marks, marks_resolved = _parse_marks(
                _get(model_tbl, "marks", "model.", errors, default={}),
                "model.marks", errors)
        else:
            for key in ("intensity", "marks"):
                if key in model_tbl:
                    errors.append(f"model.{key}: only valid for shot-noise")
    elif model_tbl is not None:
        errors.append("model: expected a table")

    kernel_tbl = _get(data, "kernel", "", errors, default={})
    family = None
    b0 = None
    eta = None
    if isinstance(kernel_tbl, dict):
        _reject_unknown(kernel_tbl, {"family", "b0", "eta"}, "kernel.", errors)
        family = _str_choice(kernel_tbl.get("family"), set(FAMILIES),
                             "kernel.family", errors)
        b0 = _num(_get(kernel_tbl, "b0", "kernel.", errors), "kernel.b0",
                  errors, minimum=0.0, strict=True)
        if family == "polydecay":
            eta = _num(_get(kernel_tbl, "eta", "kernel.", errors),
                       "kernel.eta", errors, minimum=0.0, strict=True)
        elif "eta" in kernel_tbl:
            errors.append("kernel.eta: only valid for the polydecay family")
    elif kernel_tbl is not None:
        errors.append("kernel: expected a table")

    if experiment in GAUSSIAN_ONLY and kind == "shot":
        errors.append(f"model.kind: experiment {experiment!r} requires the "
                      "gaussian model")
    if experiment in ("kacrice",) and family == "uniform":
        errors.append("kernel.family: kacrice needs a differentiable kernel")

    params = {}
    if experiment is not None and dim is not None:
        params = _parse_params(experiment, _get(data, "params", "", errors,
                                                default={}), dim, errors)

    # geometry cross-checks that only need arithmetic
    if spacing is not None and dim is not None:
        sizes = (params.get("window_sizes") or
                 ([params["window_size"]] if params.get("window_size") else []))
        for n in sizes:
            ratio = n / spacing
            if abs(ratio - round(ratio)) > 1e-9 * max(1.0, abs(ratio)):
                errors.append(f"model.spacing: window size {n} is not an "
                              "integer number of cells")

    if errors:
        return None, errors

    # constructible kernel (integrability, truncation) checked for real
    try:
        make_kernel(dim, family, b0, eta=eta,
                    normalization="L2" if kind == "gaussian" else "L1")
    except (KernelError, ValueError) as exc:
        return None, [f"kernel: {exc}"]

    resolved = {
        "experiment": experiment,
        "seed": seed,
        "model": {"kind": "gaussian" if kind == "gaussian" else "shot-noise",
                  "dim": dim, "spacing": spacing,
                  "intensity": intensity, "marks": marks_resolved},
        "kernel": {"family": family, "b0": b0, "eta": eta},
        "params": params,
    }
    cfg = RunConfig(experiment=experiment, seed=seed, out=out,
                    model_kind=kind, dim=dim, spacing=spacing,
                    kernel_family=family, kernel_b0=b0, kernel_eta=eta,
                    intensity=intensity, marks=marks, params=params,
                    resolved=resolved)
    return cfg, []


def parse_config(path) -> RunConfig:
    """Load and validate a TOML run configuration file."""
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}",
                          [f"config: file not found: {path}"])
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML: {exc}", [f"config: invalid TOML: {exc}"])
    cfg, errors = validate_config(data)
    if cfg is None:
        raise ConfigError("invalid configuration:\n" + "\n".join(errors),
                          errors)
    return cfg


def override(cfg: RunConfig, seed=None, out=None) -> RunConfig:
    """Apply CLI overrides; the seed participates in the config hash."""
    if seed is None and out is None:
        return cfg
    data = dict(cfg.resolved)
    new_seed = cfg.seed if seed is None else int(seed)
    data = {**data, "seed": new_seed}
    return RunConfig(
        experiment=cfg.experiment, seed=new_seed,
        out=out if out is not None else cfg.out,
        model_kind=cfg.model_kind, dim=cfg.dim, spacing=cfg.spacing,
        kernel_family=cfg.kernel_family, kernel_b0=cfg.kernel_b0,
        kernel_eta=cfg.kernel_eta, intensity=cfg.intensity, marks=cfg.marks,
        params=cfg.params, resolved=data,
    )
