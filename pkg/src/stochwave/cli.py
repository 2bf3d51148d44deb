"""Command-line front end.

Exit codes: 0 success, 2 configuration error, 3 numeric failure,
4 self-test failure.
"""

from __future__ import annotations

import argparse
import math
import sys
import time
from pathlib import Path

import numpy as np

from .config import VERBS, ConfigError, parse_config, write_config
from .experiments import RUNNERS
from .fem import DecompositionError, InvalidMeshError, NumericDomainError
from .integrators import DimensionError, StepError
from .noise import CovarianceModel, PathTooLargeError
from .report import PlotError, PlotSpec, emit_csv, emit_svg, write_manifest

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_SELFTEST = 0, 2, 3, 4
NUMERIC_ERRORS = (NumericDomainError, DecompositionError, StepError, DimensionError,
                  PathTooLargeError, FloatingPointError, np.linalg.LinAlgError, PlotError)


def _float_list(text: str) -> list[float]:
    try:
        return [float(parse_number(t)) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of numbers: {text!r}")


def parse_number(token: str) -> float:
    """Parse ``0.25`` or ``2^-3``."""
    token = token.strip()
    if "^" in token:
        base, exp = token.split("^", 1)
        return float(base) ** float(exp)
    return float(token)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stochwave",
                                description="Stochastic wave equation experiments.")
    p.add_argument("verb", choices=(*VERBS, "selftest"), help="study to run")
    p.add_argument("--config", type=Path, help="JSON file with configuration keys")
    p.add_argument("--out", type=Path, help="output directory (default: stochwave-out/VERB)")
    p.add_argument("--seed", type=int)
    p.add_argument("--M", type=int, help="number of Monte Carlo samples")
    p.add_argument("--T", type=float, help="final time")
    p.add_argument("--k", type=_float_list, help="step sizes, e.g. 2^-1,2^-2,2^-3")
    p.add_argument("--h", type=_float_list, help="mesh widths")
    p.add_argument("--paper-scale", action="store_true", default=None,
                   help="use the full published resolutions (slow)")
    p.add_argument("--threads", type=int, help="worker threads for sample batches")
    return p


def _finite_or_none(v):
    return v if isinstance(v, (int, str)) or (v is not None and math.isfinite(v)) else None


def _slope_summary(slopes: dict) -> dict:
    return {f"{sc}/h={h:g}/u{c}": _finite_or_none(v) for (sc, h, c), v in slopes.items()}


def _error_plot(table, title, slopes, group="scheme", xlabel="k") -> PlotSpec:
    series = {}
    for r in table.rows:
        if r.component != 1:
            continue
        label = r.scheme if group == "scheme" else f"h={r.h:g}"
        xs, ys = series.setdefault(label, ([], []))
        xs.append(getattr(r, table.resolution))
        ys.append(r.rmse)
    return PlotSpec(title=title, xlabel=xlabel, ylabel="strong error (position)",
                    series=series, slopes=sorted(set(slopes)))


def _energy_plot(curves, title, line=None, markers=False) -> PlotSpec:
    series = {}
    for r in curves.rows:
        xs, ys = series.setdefault(r.scheme, ([], []))
        xs.append(r.t)
        ys.append(r.energy)
    if line is not None:
        series["trace line"] = line
    return PlotSpec(title=title, xlabel="t", ylabel="expected energy", loglog=False,
                    series=series, markers=markers)


def run_study(cfg, out: Path) -> tuple[list[Path], dict, dict]:
    """Run one study and write its CSV and SVG files into ``out``."""
    out.mkdir(parents=True, exist_ok=True)
    beta = CovarianceModel(cfg.s).beta_nominal
    written: list[Path] = []
    t0 = time.perf_counter()
    result = RUNNERS[cfg.verb](cfg)
    elapsed = time.perf_counter() - t0
    summary: dict = {}

    def save(data, name):
        written.append(emit_csv(data, out / name))

    def plot(spec, name):
        written.append(emit_svg(spec, out / name))

    if cfg.verb in ("temporal", "compare"):
        save(result.table, f"{cfg.verb}_errors.csv")
        summary["slopes"] = _slope_summary(result.slopes)
        if cfg.verb == "temporal":
            plot(_error_plot(result.table, "Temporal errors", [min(beta, 1.0)], group="h"),
                 "temporal_errors.svg")
        else:
            save(result.stability, "compare_stability.csv")
            guides = [min(beta / 2, 1.0), min(2 * beta / 3, 1.0), min(beta, 1.0)]
            plot(_error_plot(result.table, "Scheme comparison", guides), "compare_errors.svg")
            summary["exploded"] = [[r.scheme, r.k] for r in result.stability if r.exploded]
    elif cfg.verb == "spatial":
        save(result.table, "spatial_errors.csv")
        summary["slopes"] = _slope_summary(result.slopes)
        plot(_error_plot(result.table, "Spatial errors", [min(2 * beta / 3, 2.0)], xlabel="h"),
             "spatial_errors.svg")
    elif cfg.verb == "trace":
        save(result.curve, "trace_mc.csv")
        save(result.exact, "trace_exact.csv")
        summary.update(trace=result.trace, initial_energy=result.initial_energy,
                       max_rel_deviation=result.max_rel_deviation)
        t = np.array([0.0, cfg.T])
        plot(_energy_plot(result.exact, "Expected energy, exact moments",
                          (t, result.line(t))), "trace_exact.svg")
        mc_t = np.array([0.0, cfg.mc_T])
        plot(_energy_plot(result.curve, "Expected energy, Monte Carlo",
                          (mc_t, result.line(mc_t)), markers=True), "trace_mc.svg")
    elif cfg.verb == "sine-gordon":
        save(result.curve, "sine_gordon_energy.csv")
        save(result.errors.table, "sine_gordon_errors.csv")
        summary.update(trace=result.trace, energy_slope=result.energy_slope,
                       energy_slope_ratio=result.energy_slope_ratio,
                       slopes=_slope_summary(result.errors.slopes))
        t = np.array([0.0, cfg.energy_T])
        plot(_energy_plot(result.curve, "Sine-Gordon expected energy",
                          (t, result.curve.rows[0].energy + 0.5 * t * result.trace)),
             "sine_gordon_energy.svg")
        plot(_error_plot(result.errors.table, "Sine-Gordon errors", [1.0]),
             "sine_gordon_errors.svg")
    elif cfg.verb == "defect":
        save(result.samples, "defect.csv")
        summary.update(exponent=result.exponent, target=result.target)
        spec = PlotSpec(title="Local defects", xlabel="k", ylabel="E |d1|^2",
                        series={"stm": ([d.k for d in result.samples],
                                        [d.d1_msq for d in result.samples])},
                        slopes=[result.target])
        plot(spec, "defect.svg")
    timings = {"run": elapsed, **getattr(result, "timings", {})}
    return written, timings, summary


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.verb == "selftest":
        from .selftest import run_selftest
        return EXIT_OK if run_selftest() else EXIT_SELFTEST

    overrides = {"seed": args.seed, "M": args.M, "T": args.T, "k": args.k, "h": args.h,
                 "paper_scale": args.paper_scale, "threads": args.threads}
    try:
        cfg = parse_config(args.config, overrides, verb=args.verb)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    out = args.out or Path("stochwave-out") / args.verb
    print(f"{cfg.verb}: seed={cfg.seed} M={cfg.M} T={cfg.T:g} out={out}")
    try:
        written, timings, summary = run_study(cfg, out)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    except NUMERIC_ERRORS as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except InvalidMeshError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    write_config(cfg, out / "config.json")
    written.append(out / "config.json")
    write_manifest(out / "manifest.json", cfg, written, timings, summary)
    for p in written:
        print(f"  wrote {p}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
