"""Command-line experiment runner.

Subcommands: validate, optimize, map, stdp-run, stdp-sweep. Parameters come
from built-in defaults, then an optional flat ``key = value`` config file,
then command-line flags (highest precedence). Every output directory gets a
``manifest.json`` echoing the resolved configuration.

Exit codes: 0 success, 1 check failure, 2 configuration or I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import platform
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__
from .analytic import DetectorParams, snr
from .io import write_f32
from .lifsim import LifConfig, SnrProtocol, measure_snr, select_afferents
from .optimizer import optimize, sweep_plane, verify_optimum
from .spikegen import JitterConfig, PoissonConfig, build_stream, freeze_pattern
from .stdp import StreamProtocol, SweepExternals, geometric_grid, seeded_run, sweep_modes

EXIT_OK, EXIT_CHECK, EXIT_IO = 0, 1, 2

_STREAM = dict(n_afferents=10_000, period=400.0, dt_bin=0.1)
_STDP = dict(_STREAM, rate=3.2, jitter=3.2, pattern_duration=100.0, tau=18.0,
             trace_increment=0.01, trace_tau=20.0, presentations=500,
             optimal_window=23.0, margin=0.1)

DEFAULTS: dict[str, dict] = {
    "validate": dict(_STREAM, rate=5.0, jitter=0.0, pattern_duration=20.0, window=20.0,
                     taus="5,10,18,30,60", strategies="1,2", patterns=20, presentations=200),
    "optimize": dict(rate=3.2, jitter=3.2, n_afferents=10_000, max_strategy=5),
    "map": dict(f_min=0.1, f_max=100.0, T_min=0.1, T_max=100.0, points=25,
                n_afferents=10_000, max_strategy=5),
    "stdp-run": dict(_STDP, theta=250.0, w_out=-1.6e-3, run_index=0, snapshot_every=0),
    "stdp-sweep": dict(_STDP, theta_min=250.0, theta_max=370.0, w_out_min=-1.6e-3,
                       w_out_max=-3.5e-3, runs=50, snapshot_every=0),
}


class ConfigError(ValueError):
    pass


def read_config_file(path) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, value = (part.strip() for part in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


def _coerce(value, like):
    if isinstance(value, str) and not isinstance(like, str):
        try:
            return type(like)(float(value)) if isinstance(like, int) else type(like)(value)
        except ValueError as exc:
            raise ConfigError(f"cannot parse {value!r}") from exc
    return value


def resolve(command: str, file_values: dict, cli_values: dict) -> dict:
    """Defaults < config file < command line. Unknown keys are rejected."""
    defaults = DEFAULTS[command]
    unknown = sorted((set(file_values) | set(cli_values)) - set(defaults))
    if unknown:
        raise ConfigError(f"unknown keys for {command}: {', '.join(unknown)}")
    cfg = dict(defaults)
    for source in (file_values, cli_values):
        for key, value in source.items():
            if value is not None:
                cfg[key] = _coerce(value, defaults[key])
    return cfg


def _floats(text) -> list[float]:
    return [float(x) for x in str(text).split(",") if x.strip()]


def _progress(done, total):
    print(f"\r{done}/{total}", end="" if done < total else "\n", file=sys.stderr, flush=True)


def write_manifest(out_dir, command, cfg, seed) -> None:
    manifest = {
        "tool": "lifsnr",
        "version": __version__,
        "command": command,
        "seed": seed,
        "config": cfg,
        "python": platform.python_version(),
        "numpy": np.__version__,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")


# validate ---------------------------------------------------------------

def _validate_pattern(args):
    cfg, seed, k = args
    p_seed, n_seed, j_seed = np.random.SeedSequence(seed, spawn_key=(k,)).generate_state(3)
    N, f = cfg["n_afferents"], cfg["rate"]
    pattern = freeze_pattern(PoissonConfig(N, f, int(p_seed)), cfg["pattern_duration"])
    stream = build_stream(pattern, PoissonConfig(N, f, int(n_seed)),
                          JitterConfig(cfg["jitter"], int(j_seed)), cfg["period"],
                          cfg["presentations"])
    proto = SnrProtocol(cfg["presentations"], cfg["period"], f, cfg["jitter"])
    out = {}
    for n in (int(x) for x in _floats(cfg["strategies"])):
        w = select_afferents(pattern, n, 0.0, cfg["window"])
        for tau in _floats(cfg["taus"]):
            m = measure_snr(pattern, w, LifConfig(tau, cfg["dt_bin"]), proto, stream=stream)
            out[(n, tau)] = m.snr
    return out


def validation_table(cfg: dict, seed: int, jobs: int, progress=None) -> list[dict]:
    """Simulated vs analytic SNR per (strategy, tau), aggregated over patterns."""
    tasks = [(cfg, seed, k) for k in range(cfg["patterns"])]
    results = []
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for r in pool.map(_validate_pattern, tasks):
                results.append(r)
                if progress:
                    progress(len(results), len(tasks))
    else:
        for t in tasks:
            results.append(_validate_pattern(t))
            if progress:
                progress(len(results), len(tasks))
    rows = []
    for n in (int(x) for x in _floats(cfg["strategies"])):
        for tau in _floats(cfg["taus"]):
            vals = np.array([r[(n, tau)] for r in results])
            ref = snr(DetectorParams(cfg["n_afferents"], cfg["rate"], cfg["jitter"], n, tau,
                                     cfg["window"])).snr
            sd = float(vals.std(ddof=1)) if vals.size > 1 else math.nan
            rows.append(dict(tau=tau, strategy=n, snr_analytic=ref, snr_sim_mean=float(vals.mean()),
                             snr_sim_sd=sd, n_patterns=int(vals.size)))
    return rows


def agreement_ok(row, rel=0.05, n_se=3.0) -> bool:
    se = row["snr_sim_sd"] / math.sqrt(row["n_patterns"])
    tol = max(n_se * se if math.isfinite(se) else 0.0, rel * abs(row["snr_analytic"]))
    return abs(row["snr_sim_mean"] - row["snr_analytic"]) <= tol


def cmd_validate(cfg, seed, out_dir, jobs) -> int:
    rows = validation_table(cfg, seed, jobs, _progress)
    cols = ["tau", "strategy", "snr_analytic", "snr_sim_mean", "snr_sim_sd", "n_patterns"]
    with open(os.path.join(out_dir, "validate.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in cols])
    bad = [r for r in rows if not agreement_ok(r)]
    for r in bad:
        print(f"disagreement at strategy={r['strategy']} tau={r['tau']}: "
              f"sim {r['snr_sim_mean']:.2f} vs analytic {r['snr_analytic']:.2f}", file=sys.stderr)
    return EXIT_CHECK if bad else EXIT_OK


# optimize / map -----------------------------------------------------------

def cmd_optimize(cfg, seed, out_dir, jobs) -> int:
    res = optimize(cfg["rate"], cfg["jitter"], cfg["n_afferents"], cfg["max_strategy"])
    with open(os.path.join(out_dir, "optimize.json"), "w") as fh:
        json.dump(res.to_dict(), fh, indent=1)
    print(json.dumps({k: getattr(res, k) for k in
                      ("best_strategy", "best_tau", "best_window", "best_snr", "constraint_active")}))
    return EXIT_OK if res.feasible and verify_optimum(res) else EXIT_CHECK


MAP_PANELS = ("n", "tau", "window_over_tau", "snr")


def write_matrix_csv(path, sweep, key) -> None:
    """Rows follow f, columns follow T; the corner cell names the axes."""
    mat = sweep.matrix(key)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["f\\T"] + [repr(t) for t in sweep.T_grid])
        for f, row in zip(sweep.f_grid, mat):
            w.writerow([repr(f)] + [repr(float(v)) for v in row])


def cmd_map(cfg, seed, out_dir, jobs) -> int:
    f_grid = list(np.geomspace(cfg["f_min"], cfg["f_max"], cfg["points"]))
    T_grid = list(np.geomspace(cfg["T_min"], cfg["T_max"], cfg["points"]))
    print(f"solving {len(f_grid) * len(T_grid)} cells", file=sys.stderr)
    sweep = sweep_plane(f_grid, T_grid, cfg["n_afferents"], cfg["max_strategy"], jobs)
    sweep.write_csv(os.path.join(out_dir, "sweep.csv"))
    sweep.write_json(os.path.join(out_dir, "sweep.json"))
    for key in MAP_PANELS:
        write_matrix_csv(os.path.join(out_dir, f"map_{key}.csv"), sweep, key)
        sweep.write_gnuplot(os.path.join(out_dir, f"map_{key}.dat"), key)
    return EXIT_OK


# stdp ---------------------------------------------------------------------

def _externals(cfg, seed) -> SweepExternals:
    proto = StreamProtocol(cfg["n_afferents"], cfg["rate"], cfg["jitter"],
                           cfg["pattern_duration"], cfg["period"])
    return SweepExternals(proto, cfg["tau"], cfg["dt_bin"], cfg["trace_increment"],
                          cfg["trace_tau"], cfg["presentations"], cfg["optimal_window"],
                          cfg["margin"], seed, cfg["snapshot_every"] or None)


def cmd_stdp_run(cfg, seed, out_dir, jobs) -> int:
    out = seeded_run(cfg["theta"], cfg["w_out"], cfg["run_index"], _externals(cfg, seed))
    out.write_json(os.path.join(out_dir, "outcome.json"))
    write_f32(out.final_weights, os.path.join(out_dir, "weights.f32"))
    if out.snapshots is not None:
        write_f32(out.snapshots, os.path.join(out_dir, "snapshots.f32"))
    with open(os.path.join(out_dir, "post_spikes.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time_ms"])
        w.writerows([repr(float(t))] for t in out.post_spike_times)
    print(json.dumps({k: v for k, v in out.to_dict().items() if k != "reinforced_set"}))
    return EXIT_OK


def cmd_stdp_sweep(cfg, seed, out_dir, jobs) -> int:
    thetas = geometric_grid(cfg["theta_min"], cfg["theta_max"])
    w_outs = geometric_grid(cfg["w_out_min"], cfg["w_out_max"])
    runs_dir = os.path.join(out_dir, "runs")
    res = sweep_modes(thetas, w_outs, cfg["runs"], _externals(cfg, seed), jobs, runs_dir,
                      _progress)
    res.write_csv(os.path.join(out_dir, "sweep.csv"))
    return EXIT_OK


COMMANDS = {
    "validate": cmd_validate,
    "optimize": cmd_optimize,
    "map": cmd_map,
    "stdp-run": cmd_stdp_run,
    "stdp-sweep": cmd_stdp_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lifsnr", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, defaults in DEFAULTS.items():
        p = sub.add_parser(name)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default=os.path.join("out", name))
        p.add_argument("--jobs", type=int, default=None,
                       help="worker processes (default: all cores)")
        p.add_argument("--config", help="flat key = value file")
        for key, value in defaults.items():
            # strings stay strings; numbers are parsed against the default's type later
            p.add_argument("--" + key.replace("_", "-"), dest=key, default=None,
                           help=f"default {value}")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    cli_values = {k: getattr(args, k) for k in DEFAULTS[args.command]}
    try:
        file_values = read_config_file(args.config) if args.config else {}
        cfg = resolve(args.command, file_values, cli_values)
        os.makedirs(args.out, exist_ok=True)
        write_manifest(args.out, args.command, cfg, args.seed)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    jobs = args.jobs or os.cpu_count() or 1
    try:
        return COMMANDS[args.command](cfg, args.seed, args.out, jobs)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        # parameter combinations rejected by the library are configuration errors
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
