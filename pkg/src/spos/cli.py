"""Command-line experiment runner.

    spos run CONFIG
    spos compare-multimode [--seed --particles --steps --out ...]
    spos validate [--out DIR]

Exit codes: 0 success, 1 a validation criterion failed, 2 bad input
(malformed config or unwritable output), 3 sampler divergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np
import pydantic
import yaml

from . import config as config_mod
from .diagnostics import DiagnosticsConfig, find_modes_grid, mode_coverage, reference_for, sample_moments, w1_vs_reference
from .errors import DivergenceError, SamplerError, UnsupportedTargetError
from .kernel import KernelConfig
from .samplers import METRICS_STREAM, Kind, SamplerConfig, init_ensemble, resolve_threads, run, step_generator
from .targets import BayesLinReg, MultimodeTarget

log = logging.getLogger("spos")

EXIT_OK, EXIT_FAIL, EXIT_INPUT, EXIT_DIVERGED = 0, 1, 2, 3

# compare-multimode defaults
MM_PARTICLES, MM_STEPS, MM_STEP_SIZE, MM_INIT_SCALE = 200, 5000, 1e-3, 0.5
MM_GRID = (-5.0, 5.0, 1001)


class InputError(Exception):
    """Bad user input; maps to exit status 2."""


def format_json(obj, indent: int = 2, _level: int = 0) -> str:
    """JSON text with every float written to 17 significant digits."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {format_json(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        items = [f"{pad}{format_json(v, indent, _level + 1)}" for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    if isinstance(obj, np.ndarray):
        return format_json(obj.tolist(), indent, _level)
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x) or math.isinf(x):
            return json.dumps(None)
        return format(x, ".17g")
    return json.dumps(obj)


def write_json(path, obj) -> None:
    Path(path).write_text(format_json(obj) + "\n")


def check_writable(path: Path) -> None:
    path = Path(path)
    parent = path.parent if str(path.parent) else Path(".")
    if path.exists() and (path.is_dir() or not os.access(path, os.W_OK)):
        raise InputError(f"cannot write {path}")
    if not parent.is_dir() or not os.access(parent, os.W_OK | os.X_OK):
        raise InputError(f"directory {parent} is missing or not writable")


def ensure_out_dir(out_dir) -> Path:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise InputError(f"cannot create {out}: {exc}") from None
    if not os.access(out, os.W_OK | os.X_OK):
        raise InputError(f"output directory {out} is not writable")
    return out


def _describe_validation(exc: pydantic.ValidationError) -> str:
    lines = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"])
        lines.append(f"  {loc}: {err['msg']}")
    return "invalid config:\n" + "\n".join(lines)


def _final_summary(trace, model, cfg_dump: dict, seed: int) -> dict:
    final = trace.final.positions
    moments = sample_moments(final)
    summary = {
        "schema_version": config_mod.SCHEMA_VERSION,
        "config_echo": cfg_dump,
        "final_step": trace.final.step,
        "snapshots": len(trace.snapshots),
        "final_moments": {
            "mean": moments.mean,
            "covariance": moments.covariance if moments.covariance is not None else None,
        },
        "wall_time": trace.wall_time,
        "oracle_counts": trace.oracle_counts,
    }
    try:
        ref = reference_for(model)
    except UnsupportedTargetError:
        ref = None
    if ref is not None:
        rng = step_generator(seed, trace.final.step, METRICS_STREAM)
        summary["w1_vs_reference"] = [
            w1_vs_reference(final[:, c], lambda r, m, c=c: ref(c, r, m), rng) for c in range(final.shape[1])
        ]
    if model.dim == 1 and model.has_potential and not isinstance(model, BayesLinReg):
        modes = find_modes_grid(model, *MM_GRID)
        if len(modes):
            summary["modes"] = {"locations": list(modes.locations), "radius": modes.radius}
            summary["mode_coverage"] = mode_coverage(final, modes)
    if trace.metrics:
        summary["metrics"] = [{"step": s, **m} for s, m in trace.metrics]
    return summary


def cmd_run(config_path, threads=None) -> int:
    path = Path(config_path)
    try:
        text = path.read_text()
    except OSError as exc:
        print(f"error: cannot read config {path}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        cfg = config_mod.parse_config(text)
    except yaml.YAMLError as exc:
        print(f"error: malformed YAML in {path}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except pydantic.ValidationError as exc:
        print(f"error: {path}: {_describe_validation(exc)}", file=sys.stderr)
        return EXIT_INPUT
    except ValueError as exc:
        print(f"error: {path}: {exc}", file=sys.stderr)
        return EXIT_INPUT

    base = path.parent
    trace_path = config_mod.resolve(base, cfg.outputs.trace_path)
    summary_path = config_mod.resolve(base, cfg.outputs.summary_path)
    try:
        check_writable(trace_path)
        check_writable(summary_path)
        model = cfg.build_model(base)
        sampler_cfg = cfg.sampler_config()
        init = init_ensemble(cfg.particles, model.dim, sampler_cfg.seed, cfg.init.mean, cfg.init.scale)
    except (InputError, SamplerError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT

    diag = DiagnosticsConfig(
        snapshot_every=cfg.outputs.snapshot_every,
        metrics_every=cfg.diagnostics.metrics_every,
        w1_repeats=cfg.diagnostics.w1_repeats,
    )
    try:
        trace = run(init, model, sampler_cfg, cfg.kernel_config(), diag, threads=threads)
    except DivergenceError as exc:
        print(f"error: divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except SamplerError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT

    trace.write_csv(trace_path)
    write_json(summary_path, _final_summary(trace, model, config_mod.dump_config(cfg), sampler_cfg.seed))
    log.info("wrote %s and %s", trace_path, summary_path)
    return EXIT_OK


def compare_multimode(
    seed: int = 0,
    particles: int = MM_PARTICLES,
    steps: int = MM_STEPS,
    step_size: float = MM_STEP_SIZE,
    beta: float = 1.0,
    bandwidth=None,
    init_mean: float = 0.0,
    init_scale: float = MM_INIT_SCALE,
    radius=None,
    threads=None,
    snapshot_every=None,
) -> dict:
    """Run SVGD and SPOS from one shared tight cluster; returns traces and coverage report."""
    model = MultimodeTarget()
    modes = find_modes_grid(model, *MM_GRID, radius=radius)
    init = init_ensemble(particles, 1, seed, init_mean, init_scale)
    diag = DiagnosticsConfig(snapshot_every=snapshot_every or max(steps, 1))
    kernel = KernelConfig(bandwidth)
    traces, report = {}, {}
    for kind in (Kind.SPOS, Kind.SVGD):
        cfg = SamplerConfig(kind=kind, step_size=step_size, beta=beta, total_steps=steps, seed=seed)
        traces[kind] = run(init, model, cfg, kernel, diag, threads=threads)
    report.update(
        {
            "seed": seed,
            "particles": particles,
            "steps": steps,
            "step_size": step_size,
            "beta": beta,
            "bandwidth": "median_heuristic" if bandwidth is None else bandwidth,
            "init": {"mean": init_mean, "scale": init_scale},
            "modes": {"locations": list(modes.locations), "radius": modes.radius},
            "coverage_spos": mode_coverage(traces[Kind.SPOS].final, modes),
            "coverage_svgd": mode_coverage(traces[Kind.SVGD].final, modes),
            "wall_time": {k.value: traces[k].wall_time for k in traces},
        }
    )
    return {"traces": traces, "report": report}


def cmd_compare_multimode(args) -> int:
    try:
        out = ensure_out_dir(args.out)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        result = compare_multimode(
            seed=args.seed,
            particles=args.particles,
            steps=args.steps,
            step_size=args.step_size,
            beta=args.beta,
            bandwidth=args.bandwidth,
            init_mean=args.init_mean,
            radius=args.radius,
            threads=args.threads,
            snapshot_every=args.snapshot_every,
        )
    except DivergenceError as exc:
        print(f"error: divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except SamplerError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    result["traces"][Kind.SPOS].write_csv(out / "trace_spos.csv")
    result["traces"][Kind.SVGD].write_csv(out / "trace_svgd.csv")
    write_json(out / "report.json", result["report"])
    rep = result["report"]
    print(f"modes={len(rep['modes']['locations'])} coverage_spos={rep['coverage_spos']} coverage_svgd={rep['coverage_svgd']}")
    return EXIT_OK


def cmd_validate(args) -> int:
    from .validation import run_suite

    try:
        out = ensure_out_dir(args.out)
        check_writable(out / "scorecard.json")
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        results = run_suite(threads=args.threads)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    write_json(out / "scorecard.json", {"criteria": results, "passed": all(r["passed"] for r in results)})
    failed = [r["name"] for r in results if not r["passed"]]
    for r in results:
        print(f"{'PASS' if r['passed'] else 'FAIL'} {r['name']}")
    if failed:
        print(f"failed criteria: {', '.join(failed)}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spos", description=__doc__.splitlines()[0])
    parser.add_argument("--threads", type=int, default=None, help="worker cap (default: $SAMPLER_THREADS or 1)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one configured experiment")
    p_run.add_argument("config")

    p_mm = sub.add_parser("compare-multimode", help="SPOS vs SVGD mode coverage on the multimode target")
    p_mm.add_argument("--seed", type=int, default=0)
    p_mm.add_argument("--particles", type=int, default=MM_PARTICLES)
    p_mm.add_argument("--steps", type=int, default=MM_STEPS)
    p_mm.add_argument("--step-size", type=float, default=MM_STEP_SIZE)
    p_mm.add_argument("--beta", type=float, default=1.0)
    p_mm.add_argument("--bandwidth", type=float, default=None, help="fixed RBF bandwidth (default: median heuristic)")
    p_mm.add_argument("--init-mean", type=float, default=0.0)
    p_mm.add_argument("--radius", type=float, default=None, help="mode capture radius (default: 3 grid cells)")
    p_mm.add_argument("--snapshot-every", type=int, default=None)
    p_mm.add_argument("--out", default="multimode_out")

    p_val = sub.add_parser("validate", help="run the calibration suites and write a scorecard")
    p_val.add_argument("--out", default="validate_out")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.threads = resolve_threads(args.threads)
    except (SamplerError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    if args.command == "run":
        return cmd_run(args.config, args.threads)
    if args.command == "compare-multimode":
        return cmd_compare_multimode(args)
    return cmd_validate(args)


if __name__ == "__main__":
    sys.exit(main())
