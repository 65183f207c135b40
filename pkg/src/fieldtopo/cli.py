"""Command-line runner: validate configs, execute experiments, report runs.

Exit codes: 0 success, 2 configuration problems, 3 infeasible resource
demand. A run writes its CSV/JSON outputs plus a manifest recording the
config hash, artifact version, seed, timestamps and per-output checksums;
re-running the same manifest inputs reproduces the outputs byte for byte.
"""
from __future__ import annotations

import argparse
import datetime
import os
import sys

import numpy as np

from . import __version__ as ARTIFACT_VERSION
from .clt import (
    ChentsovMoment,
    chentsov_moment,
    ensemble_run,
    estimate_field_bytes,
    gaussian_rice_rate,
    level_moment_diagnostic,
    mean_density,
    normality_test,
    variance_scaling,
)
from .config import RunConfig, level_grid_values, override, parse_config
from .errors import ConfigError, ResourceError
from .excursion import diameter_tail
from .geometry import snap_count
from .io import canonical_json, sha256_file, write_csv, write_json
from .perturbation import (
    change_probability_curve,
    sigma_conditional,
    stabilization_radius,
    stabilization_tail,
)
from .rng import ALGORITHM_ID, make_stream


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fieldtopo",
        description="Random-field topology experiments: synthesis, "
                    "persistence, limit diagnostics.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute the configured experiment")
    run.add_argument("--config", required=True, help="TOML configuration file")
    run.add_argument("--seed", type=int, default=None,
                     help="override the configured seed")
    run.add_argument("--threads", type=int, default=1,
                     help="worker processes for ensemble experiments")
    run.add_argument("--out", default=None, help="output directory")
    run.add_argument("--dry-run", action="store_true",
                     help="print the resolved configuration and estimated "
                          "resources, write nothing")
    run.set_defaults(func=cmd_run)

    val = sub.add_parser("validate", help="check a configuration file")
    val.add_argument("--config", required=True)
    val.set_defaults(func=cmd_validate)

    rep = sub.add_parser("report", help="verify and summarize a finished run")
    rep.add_argument("--out", required=True, help="run output directory")
    rep.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        for line in exc.errors:
            print(f"error: {line}", file=sys.stderr)
        return 2
    except ResourceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if exc.required_bytes is not None:
            print(f"required bytes: {exc.required_bytes}", file=sys.stderr)
        return 3


def cmd_validate(args) -> int:
    cfg = parse_config(args.config)
    print(f"configuration OK: experiment={cfg.experiment} "
          f"hash={cfg.config_hash()}")
    return 0


def _estimates(cfg: RunConfig):
    kernel = cfg.kernel_spec()
    if cfg.experiment in ("clt", "fclt-tightness"):
        sizes = cfg.params["window_sizes"]
        reps = cfg.params["replicates"]
    else:
        sizes = [cfg.params["window_size"]]
        reps = cfg.params["replicates"]
        if cfg.experiment == "sigma":
            reps *= cfg.params["inner_replicates"] * len(cfg.params["shifts"])
        elif cfg.experiment == "resample":
            reps *= 1 + len(cfg.params["distances"])
        elif cfg.experiment == "stabilize":
            reps *= 1 + len(cfg.params["radii"])
    mem = max(estimate_field_bytes(kernel, n, cfg.spacing) for n in sizes)
    cells = sum((snap_count(float(n), cfg.spacing) + 1) ** cfg.dim
                for n in sizes)
    seconds = 0.5 + cells * reps / len(sizes) * 5e-8 * max(1, cfg.dim)
    return mem, seconds


def cmd_run(args) -> int:
    cfg = parse_config(args.config)
    cfg = override(cfg, seed=args.seed, out=args.out)
    if args.threads < 1:
        raise ConfigError("threads must be >= 1", ["threads: must be >= 1"])
    if args.dry_run:
        print(canonical_json(cfg.resolved))
        mem, seconds = _estimates(cfg)
        print(f"config hash: {cfg.config_hash()}")
        print(f"estimated peak memory: {mem} bytes")
        print(f"estimated runtime: {seconds:.1f} s (rough)")
        return 0
    outdir = cfg.out or os.path.join(
        "runs", f"{cfg.experiment}-{cfg.config_hash()[:12]}")
    started = datetime.datetime.now(datetime.timezone.utc).isoformat()
    outputs = RUNNERS[cfg.experiment](cfg, outdir, args.threads)
    finished = datetime.datetime.now(datetime.timezone.utc).isoformat()
    manifest = {
        "artifact_version": ARTIFACT_VERSION,
        "experiment": cfg.experiment,
        "config_hash": cfg.config_hash(),
        "config": cfg.resolved,
        "seed": cfg.seed,
        "rng": {"master_seed": cfg.seed, "algorithm_id": ALGORITHM_ID},
        "started": started,
        "finished": finished,
        "outputs": {name: sha256_file(os.path.join(outdir, name))
                    for name in sorted(outputs)},
    }
    write_json(os.path.join(outdir, "manifest.json"), manifest)
    print(f"wrote {len(outputs)} outputs + manifest to {outdir}")
    return 0


def cmd_report(args) -> int:
    manifest_path = os.path.join(args.out, "manifest.json")
    if not os.path.exists(manifest_path):
        raise ConfigError(f"no manifest at {manifest_path}",
                          [f"report: no manifest at {manifest_path}"])
    import json

    with open(manifest_path) as fh:
        manifest = json.load(fh)
    print(f"experiment: {manifest['experiment']}")
    print(f"artifact version: {manifest['artifact_version']}")
    print(f"config hash: {manifest['config_hash']}")
    print(f"seed: {manifest['seed']}")
    bad = 0
    for name, digest in manifest["outputs"].items():
        path = os.path.join(args.out, name)
        if not os.path.exists(path):
            print(f"MISSING  {name}")
            bad += 1
        elif sha256_file(path) != digest:
            print(f"MISMATCH {name}")
            bad += 1
        else:
            print(f"ok       {name}")
    summary_path = os.path.join(args.out, "summary.json")
    if os.path.exists(summary_path):
        with open(summary_path) as fh:
            summary = json.load(fh)
        print("summary:")
        for key in sorted(summary):
            if key in ("config_hash",):
                continue
            print(f"  {key}: {summary[key]}")
    if bad:
        print(f"{bad} outputs failed verification", file=sys.stderr)
        return 2
    return 0


# ---------------------------------------------------------------------------
# experiment runners: each writes its files and returns their names


def _comments(cfg: RunConfig):
    return (f"config: {cfg.config_hash()}",
            f"version: {ARTIFACT_VERSION}",
            f"experiment: {cfg.experiment}")


def _run_clt(cfg: RunConfig, outdir: str, threads: int):
    p = cfg.params
    levels = level_grid_values(p["levels"])
    summary = ensemble_run(
        cfg.model_kind, cfg.kernel_spec(), cfg.spacing, p["window_sizes"],
        levels, p["replicates"], cfg.seed, q=p["q"], intensity=cfg.intensity,
        marks=cfg.marks, threads=threads,
    )
    interior = p["interior"]
    rows = []
    for n in summary.window_sizes:
        for u, k1, k2, k3, k4, skew, excess in summary.moment_table(
                n, interior=interior):
            rows.append((n, u, k1, k2, k3, k4, skew, excess))
    write_csv(os.path.join(outdir, "clt_levels.csv"),
              ["n", "u", "mean", "k2", "k3", "k4", "skewness", "excess"],
              rows, comments=_comments(cfg))

    scaling = variance_scaling(summary, p["target_level"], interior=interior)
    write_csv(os.path.join(outdir, "variance_scaling.csv"),
              ["n", "volume", "ratio", "se", "ci_lo", "ci_hi"],
              [(r.n, r.volume, r.ratio, r.se, r.ci_lo, r.ci_hi)
               for r in scaling.rows],
              comments=_comments(cfg))

    normality = {}
    if summary.replicates >= 20:
        for n in summary.window_sizes:
            rep = normality_test(summary.samples(n, p["target_level"],
                                                 interior=interior))
            normality[str(n)] = {
                "skewness": rep.skewness, "excess": rep.excess_kurtosis,
                "jarque_bera": rep.jarque_bera, "pvalue": rep.pvalue,
                "qq_correlation": rep.qq_correlation,
            }
    density = mean_density(summary, p["target_level"], interior=interior)
    write_json(os.path.join(outdir, "summary.json"), {
        "config_hash": cfg.config_hash(),
        "experiment": cfg.experiment,
        "replicates": summary.replicates,
        "variance_defined": summary.variance_defined,
        "target_level": p["target_level"],
        "interior": interior,
        "q": p["q"],
        "variance_stabilized": scaling.stabilized,
        "variance_last_gap": (None if not np.isfinite(scaling.last_gap)
                              else scaling.last_gap),
        "normality": normality,
        "mean_density": [
            {"n": r.n, "mu_hat": r.mu_hat, "se": r.se,
             "ci_lo": r.ci_lo, "ci_hi": r.ci_hi}
            for r in density
        ],
    })
    return ["clt_levels.csv", "variance_scaling.csv", "summary.json"]


def _run_fclt(cfg: RunConfig, outdir: str, threads: int):
    p = cfg.params
    levels = level_grid_values(p["levels"])
    summary = ensemble_run(
        cfg.model_kind, cfg.kernel_spec(), cfg.spacing, p["window_sizes"],
        levels, p["replicates"], cfg.seed, q=0, intensity=cfg.intensity,
        marks=cfg.marks, threads=threads,
    )
    interior = p["interior"]
    moments: list[ChentsovMoment] = []
    for n in summary.window_sizes:
        for interval in p["intervals"]:
            moments.append(chentsov_moment(summary, n, interval,
                                           interior=interior))
    write_csv(os.path.join(outdir, "chentsov.csv"),
              ["n", "u_minus", "u_plus", "length", "n_big", "ratio",
               "variance", "c4", "identity_gap"],
              [(m.n, m.u_minus, m.u_plus, m.length, m.n_big, m.ratio,
                m.variance, m.c4, m.identity_gap) for m in moments],
              comments=_comments(cfg))

    part_pos = "ipos" if interior else "pos"
    part_neg = "ineg" if interior else "neg"
    monotone = all(
        bool(np.all(np.diff(summary.matrix(n, part), axis=1) <= 0))
        for n in summary.window_sizes for part in (part_pos, part_neg)
    )
    big = [m.ratio for m in moments if m.n_big and m.ratio > 0]
    write_json(os.path.join(outdir, "summary.json"), {
        "config_hash": cfg.config_hash(),
        "experiment": cfg.experiment,
        "replicates": summary.replicates,
        "interior": interior,
        "monotone_parts_nonincreasing": monotone,
        "n_big_ratio_spread": (max(big) / min(big)) if len(big) >= 2 else None,
        "ratios": [
            {"n": m.n, "u_minus": m.u_minus, "u_plus": m.u_plus,
             "n_big": m.n_big, "ratio": m.ratio}
            for m in moments
        ],
    })
    return ["chentsov.csv", "summary.json"]


_RECORD_HEADER = ["rep", "i", "j", "dist", "u_minus", "u_plus", "before",
                  "after", "changed"]


def _run_resample(cfg: RunConfig, outdir: str, threads: int):
    p = cfg.params
    model = cfg.model_for(p["window_size"])
    estimates, records = change_probability_curve(
        model, p["distances"], p["interval"], p["replicates"],
        make_stream(cfg.seed), axis=p["axis"],
    )
    write_csv(os.path.join(outdir, "resample_records.csv"), _RECORD_HEADER,
              [r.to_row() for r in records], comments=_comments(cfg))
    write_csv(os.path.join(outdir, "change_curve.csv"),
              ["lattice_dist", "n", "n_changed", "frequency", "wilson_lo",
               "wilson_hi"],
              [(e.lattice_dist, e.n, e.n_changed, e.frequency, e.wilson_lo,
                e.wilson_hi) for e in estimates],
              comments=_comments(cfg))
    freqs = [e.frequency for e in estimates]
    write_json(os.path.join(outdir, "summary.json"), {
        "config_hash": cfg.config_hash(),
        "experiment": cfg.experiment,
        "replicates": p["replicates"],
        "distances": p["distances"],
        "frequencies": freqs,
        "nonincreasing": bool(all(b <= a for a, b in zip(freqs, freqs[1:]))),
        "endpoints_separated": bool(estimates[0].wilson_lo
                                    > estimates[-1].wilson_hi),
    })
    return ["resample_records.csv", "change_curve.csv", "summary.json"]


def _run_stabilize(cfg: RunConfig, outdir: str, threads: int):
    p = cfg.params
    model = cfg.model_for(p["window_size"])
    samples, records = stabilization_radius(
        model, p["radii"], p["interval"], p["replicates"],
        make_stream(cfg.seed), axis=p["axis"],
    )
    write_csv(os.path.join(outdir, "stabilization.csv"),
              ["rep", "radius", "censored"],
              [(s.rep, s.radius, int(s.censored)) for s in samples],
              comments=_comments(cfg))
    write_csv(os.path.join(outdir, "resample_records.csv"), _RECORD_HEADER,
              [r.to_row() for r in records], comments=_comments(cfg))
    tail = stabilization_tail(samples, p["radii"])
    write_json(os.path.join(outdir, "summary.json"), {
        "config_hash": cfg.config_hash(),
        "experiment": cfg.experiment,
        "replicates": p["replicates"],
        "radii": p["radii"],
        "tail": list(tail),
        "censored_fraction": sum(s.censored for s in samples) / len(samples),
    })
    return ["stabilization.csv", "resample_records.csv", "summary.json"]


def _run_kacrice(cfg: RunConfig, outdir: str, threads: int):
    p = cfg.params
    outputs = []
    payload = {
        "config_hash": cfg.config_hash(),
        "experiment": cfg.experiment,
        "replicates": p["replicates"],
    }
    if p["targets"]:
        spec = cfg.kernel_spec()
        levels = sorted(p["targets"])
        summary = ensemble_run(
            cfg.model_kind, spec, cfg.spacing, [p["window_size"]],
            np.asarray(levels), p["replicates"], cfg.seed, q=0,
            threads=threads,
        )
        rows = []
        for u in levels:
            (row,) = mean_density(summary, u, interior=True)
            rate = gaussian_rice_rate(spec, u)
            z = (row.mu_hat - rate) / row.se if row.se else float("inf")
            rows.append((u, row.mu_hat, row.se, row.ci_lo, row.ci_hi, rate, z))
        write_csv(os.path.join(outdir, "kacrice.csv"),
                  ["u", "mu_hat", "se", "ci_lo", "ci_hi", "rate", "z"],
                  rows, comments=_comments(cfg))
        outputs.append("kacrice.csv")
        payload["max_abs_z"] = max(abs(r[-1]) for r in rows)
    if p["intervals"]:
        model = cfg.model_for(p["window_size"])
        rows = level_moment_diagnostic(model, p["intervals"],
                                       p["replicates"], cfg.seed)
        write_csv(os.path.join(outdir, "critical_counts.csv"),
                  ["u_minus", "u_plus", "length", "mean_count", "mean_square",
                   "ratio_m1", "ratio_m2"],
                  [(r.u_minus, r.u_plus, r.length, r.mean_count,
                    r.mean_square, r.ratio_m1, r.ratio_m2) for r in rows],
                  comments=_comments(cfg))
        outputs.append("critical_counts.csv")
        payload["mean_counts"] = [r.mean_count for r in rows]
    write_json(os.path.join(outdir, "summary.json"), payload)
    outputs.append("summary.json")
    return outputs


def _run_perco_tail(cfg: RunConfig, outdir: str, threads: int):
    p = cfg.params
    model = cfg.model_for(p["window_size"])
    tail = diameter_tail(model, p["level"], p["radii"], p["replicates"],
                         make_stream(cfg.seed))
    write_csv(os.path.join(outdir, "diameter_tail.csv"),
              ["radius", "prob", "wilson_lo", "wilson_hi"],
              [(r, pr, lo, hi) for r, pr, lo, hi in
               zip(tail.radii, tail.probs, tail.wilson_lo, tail.wilson_hi)],
              comments=_comments(cfg))
    try:
        slope = tail.loglog_slope()
    except ValueError:
        slope = None
    write_json(os.path.join(outdir, "summary.json"), {
        "config_hash": cfg.config_hash(),
        "experiment": cfg.experiment,
        "replicates": p["replicates"],
        "level": p["level"],
        "loglog_slope": slope,
        "occupied_fraction": tail.n_occupied / tail.n,
    })
    return ["diameter_tail.csv", "summary.json"]


def _run_sigma(cfg: RunConfig, outdir: str, threads: int):
    p = cfg.params
    model = cfg.model_for(p["window_size"])
    res = sigma_conditional(model, p["box_side"], p["replicates"],
                            p["inner_replicates"], p["interval"],
                            make_stream(cfg.seed), shifts=p["shifts"])
    write_csv(os.path.join(outdir, "sigma.csv"),
              ["rep", "z", "g_hat", "inner_var"],
              [(k, res.z_values[k], res.g_hat[k], res.inner_var[k])
               for k in range(res.replicates)],
              comments=_comments(cfg))
    write_csv(os.path.join(outdir, "shift_curve.csv"),
              ["shift", "mean_g"],
              list(zip(res.shifts, res.shift_curve)),
              comments=_comments(cfg))
    write_json(os.path.join(outdir, "summary.json"), {
        "config_hash": cfg.config_hash(),
        "experiment": cfg.experiment,
        "replicates": res.replicates,
        "inner_replicates": res.inner_replicates,
        "sigma2": res.sigma2,
        "sigma2_se": res.sigma2_se,
        "sigma2_debiased": res.sigma2_debiased,
        "g_mean": res.g_mean,
        "g_mean_se": res.g_mean_se,
    })
    return ["sigma.csv", "shift_curve.csv", "summary.json"]


RUNNERS = {
    "clt": _run_clt,
    "fclt-tightness": _run_fclt,
    "resample": _run_resample,
    "stabilize": _run_stabilize,
    "kacrice": _run_kacrice,
    "perco-tail": _run_perco_tail,
    "sigma": _run_sigma,
}
