"""Command-line front end: ``psf design``, ``psf simulate`` and ``psf report``.

Exit codes: 1 config or input error, 2 design infeasible, 3 initial state
infeasible, 4 warmstart lost during a run, 5 report failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import filter_core as fc
from .config import RunConfig, builtin_config, loads_config, parse_config
from .control_math import LinearSystem
from .errors import ConfigError, DesignInfeasible, InitialInfeasible, PSFError, WarmstartInfeasible
from .plant import VehiclePlant
from .sim import metrics, run_experiment

log = logging.getLogger("psf")

EXIT_CONFIG, EXIT_DESIGN, EXIT_INIT, EXIT_RUNTIME, EXIT_REPORT = 1, 2, 3, 4, 5
RUN_PATTERN = re.compile(r"^run_rho(?P<rho>[^_]+)_(?P<plant>linear|nonlinear)_(?P<seed>-?\d+)\.csv$")
REQUIRED_COLUMNS = ("t", "x1", "du_norm", "V")


class ReportError(PSFError):
    pass


# -- pure helpers -------------------------------------------------------------

def vehicle_from_config(cfg: RunConfig) -> VehiclePlant | None:
    s = cfg.system
    if s.preset != "vehicle":
        return None
    return VehiclePlant(s.vehicle, v_op=s.v_op, dt=s.dt)


def design_from_config(cfg: RunConfig) -> fc.FilterDesign:
    veh = vehicle_from_config(cfg)
    if veh is not None:
        A, B = veh.linearize()
    else:
        A, B = cfg.system.A, cfg.system.B
    return fc.design_filter(LinearSystem(A, B), cfg.Q, cfg.R, cfg.X, cfg.U, cfg.W, cfg.N,
                            cfg.rho_values[0], rpi_max_iter=cfg.rpi_max_iter)


def run_name(rho: float, plant: str, seed: int) -> str:
    return f"run_rho{rho:g}_{plant}_{seed}"


def format_certificates(certs: dict) -> str:
    failed = set(fc.failed_certificates(certs))
    lines = ["certificates:"]
    for key, value in certs.items():
        shown = f"{value:.3e}" if isinstance(value, float) else str(value)
        mark = "FAIL" if key in failed else "ok"
        lines.append(f"  {key:<22} {shown:<12} {mark}")
    return "\n".join(lines)


# -- file I/O -----------------------------------------------------------------

def read_config(path) -> RunConfig:
    if str(path).startswith("builtin:"):
        return parse_config(builtin_config(str(path).split(":", 1)[1]))
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return loads_config(text)


def read_design(path) -> fc.FilterDesign:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read design {path}: {exc}") from exc
    try:
        return fc.FilterDesign.from_dict(data)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid design artifact {path}: {exc}") from exc


def write_design(design: fc.FilterDesign, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(design.to_dict(), indent=1) + "\n")


def _simulate_one(args):
    design_dict, raw_cfg, plant, rho, seed = args
    cfg = parse_config(raw_cfg)
    design = fc.FilterDesign.from_dict(design_dict)
    exp = cfg.experiment_for(plant, seed)
    lg = run_experiment(exp, design, rho=rho, vehicle=vehicle_from_config(cfg))
    return lg.to_csv(), metrics(lg)


def simulate(cfg: RunConfig, design: fc.FilterDesign, outdir, seed=None, jobs=1):
    """Run every (rho, plant) pair; returns the list of summaries."""
    if design.n != cfg.system.n or design.m != cfg.system.m:
        raise ConfigError("design dimensions do not match the config system")
    seed = cfg.experiment.seed if seed is None else int(seed)
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    tasks = [(design.to_dict(), cfg.raw, plant, rho, seed) for plant in cfg.plants for rho in cfg.rho_values]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as pool:
            results = list(pool.map(_simulate_one, tasks))
    else:
        results = [_simulate_one(t) for t in tasks]
    summaries = []
    for (_, _, plant, rho, _), (text, summary) in zip(tasks, results):
        stem = run_name(rho, plant, seed)
        (outdir / f"{stem}.csv").write_text(text)
        (outdir / f"{stem}.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
        summaries.append(summary)
    return summaries


def load_runs(indir):
    """Read every run CSV under ``indir``; returns a list of dicts sorted by plant and rho."""
    indir = Path(indir)
    if not indir.is_dir():
        raise ReportError(f"{indir} is not a directory")
    runs = []
    for path in sorted(indir.iterdir()):
        match = RUN_PATTERN.match(path.name)
        if not match:
            continue
        with path.open(newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise ReportError(f"{path.name}: empty file")
        header = rows[0]
        missing = [c for c in REQUIRED_COLUMNS if c not in header]
        if missing:
            raise ReportError(f"{path.name}: schema error, missing column(s) {', '.join(missing)}")
        idx = {c: header.index(c) for c in REQUIRED_COLUMNS}
        try:
            cols = {c: np.array([float(r[i]) for r in rows[1:]]) for c, i in idx.items()}
        except (ValueError, IndexError) as exc:
            raise ReportError(f"{path.name}: malformed row ({exc})") from exc
        summary_path = path.with_suffix(".json")
        summary = json.loads(summary_path.read_text()) if summary_path.exists() else {}
        runs.append({"rho": float(match["rho"]), "plant": match["plant"], "seed": int(match["seed"]),
                     "n": sum(1 for c in header if re.fullmatch(r"x\d+", c)), "cols": cols, "summary": summary})
    if not runs:
        raise ReportError(f"no run logs found in {indir}")
    runs.sort(key=lambda r: (r["plant"], r["seed"], r["rho"]))
    return runs


def _plot(runs, column, ylabel, path, bounds=None):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "psf"
    fig, ax = plt.subplots(figsize=(6, 3.2))
    for r in runs:
        label = f"rho={r['rho']:g}" + (f", seed {r['seed']}" if len({q['seed'] for q in runs}) > 1 else "")
        ax.plot(r["cols"]["t"], r["cols"][column], label=label, linewidth=1.2)
    if bounds is not None:
        for b in (-bounds, bounds):
            ax.axhline(b, color="k", linestyle="--", linewidth=0.8)
    ax.set_xlabel("t [s]")
    ax.set_ylabel(ylabel)
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def metrics_table(runs) -> str:
    cols = ["plant", "rho", "seed", "max abs p_y", "interventions", "final/initial norm",
            "V violations", "fallbacks", "w outside W"]
    lines = ["| " + " | ".join(cols) + " |", "|" + "---|" * len(cols)]
    for r in runs:
        s = r["summary"]
        ratio = (s["final_state_norm"] / s["initial_state_norm"]
                 if s.get("initial_state_norm") else float("nan"))
        cells = [r["plant"], f"{r['rho']:g}", str(r["seed"]),
                 f"{np.max(np.abs(r['cols']['x1'])):.4f}",
                 str(s.get("interventions", int(np.sum(r["cols"]["du_norm"] > 1e-6)))),
                 f"{ratio:.3g}", str(s.get("lyapunov_monotonicity_violations", "")),
                 str(s.get("fallbacks", "")),
                 f"{s['w_outside_W']} ({100 * s['w_outside_W_fraction']:.1f}%)" if "w_outside_W" in s else ""]
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def report(indir, outdir, p_y_bound=0.1):
    runs = load_runs(indir)
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []
    for plant in sorted({r["plant"] for r in runs}):
        sel = [r for r in runs if r["plant"] == plant]
        # the lateral bound only applies to the vehicle state layout
        bound = p_y_bound if all(r["n"] == 5 for r in sel) else None
        for column, ylabel, stem, bounds in (("x1", "p_y [m]", "lateral_offset", bound),
                                             ("du_norm", "|u - u_L|", "interventions", None),
                                             ("V", "V(z)", "lyapunov", None)):
            path = outdir / f"{stem}_{plant}.svg"
            _plot(sel, column, ylabel, path, bounds)
            written.append(path)
    table = outdir / "metrics.md"
    table.write_text("# Closed-loop metrics\n\n" + metrics_table(runs))
    written.append(table)
    return written


# -- commands -----------------------------------------------------------------

def cmd_design(args) -> int:
    cfg = read_config(args.config)
    try:
        design = design_from_config(cfg)
    except DesignInfeasible as exc:
        print(f"design infeasible: {exc} (certificate: {exc.certificate})", file=sys.stderr)
        return EXIT_DESIGN
    write_design(design, args.output)
    print(f"wrote {args.output}: N={design.N}, Xf rows={design.Xf.n_rows}, Zf rows={design.Zf.n_rows}")
    print(format_certificates(design.certificates))
    return EXIT_DESIGN if fc.failed_certificates(design.certificates) else 0


def cmd_simulate(args) -> int:
    cfg = read_config(args.config)
    design = read_design(args.design)
    seed = os.environ.get("PSF_SEED")
    if seed is not None:
        try:
            seed = int(seed)
        except ValueError as exc:
            raise ConfigError(f"PSF_SEED must be an integer, got {seed!r}") from exc
    try:
        summaries = simulate(cfg, design, args.output, seed=seed, jobs=args.jobs)
    except InitialInfeasible as exc:
        print(f"initial state infeasible: {exc}", file=sys.stderr)
        return EXIT_INIT
    except WarmstartInfeasible as exc:
        print(f"warmstart lost at step {exc.step}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for s in summaries:
        print(f"{run_name(s['rho'], s['plant'], s['seed'])}: max|p_y|={s['max_abs_p_y']:.4f} "
              f"interventions={s['interventions']} final|x|={s['final_state_norm']:.3e} "
              f"w outside W={s['w_outside_W']}")
    return 0


def cmd_report(args) -> int:
    try:
        written = report(args.input, args.output)
    except (ReportError, OSError, json.JSONDecodeError) as exc:
        print(f"report failed: {exc}", file=sys.stderr)
        return EXIT_REPORT
    for path in written:
        print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="psf", description="Robust predictive stability filter toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log solver fallbacks and resets")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("design", help="build and save a filter design")
    p.add_argument("-c", "--config", required=True, help="JSON config, or builtin:vehicle / builtin:toy")
    p.add_argument("-o", "--output", required=True, help="design artifact path")
    p.set_defaults(func=cmd_design)

    p = sub.add_parser("simulate", help="run closed-loop experiments")
    p.add_argument("-c", "--config", required=True)
    p.add_argument("-d", "--design", required=True)
    p.add_argument("-o", "--output", required=True, help="directory for run logs")
    p.add_argument("-j", "--jobs", type=int, default=os.cpu_count() or 1, help="parallel runs")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", help="plots and metrics table from run logs")
    p.add_argument("-i", "--input", required=True)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
