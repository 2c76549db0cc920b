"""Command-line front end.

Subcommands: ``value`` (per-datum valuations), ``removal-bench`` (the
data-removal experiment), ``synthetic-demo`` (end-to-end run on a
generated sine problem), ``plot`` (CSV to SVG).  Settings come from a
TOML config; ``--seed`` and ``--threads`` override the config.  The
``GPDV_LOG`` environment variable sets the log level.

Exit codes: 0 success, 2 bad input or config, 3 numerical breakdown.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

try:
    import tomllib
except ImportError:  # Python 3.10
    import tomli as tomllib

import numpy as np

from .errors import InputError, NumericalBreakdownError
from .harness import (
    Dataset,
    compute_valuation,
    default_quadrature,
    gen_synthetic_sinus,
    ingest_csv,
    load_removal_curves,
    removal_benchmark,
    split,
    write_removal_curves,
)
from .incremental import ResetPolicy
from .kernels import KernelSpec, TrendBasis
from .svg import render_bar_chart, render_line_chart
from .valuation import load_valuations, spearman

log = logging.getLogger("gpdv")

# section -> key -> (expected type, default); bool rejected where int/float
# expected would silently coerce it
_SCHEMA = {
    "dataset": {
        "kind": (str, "synthetic-sinus"),
        "n": (int, 20),
        "domain": (list, [0.0, 10.0]),
        "noise_sd": (float, 0.1),
        "seed": (int, 0),
        "cluster_size": (int, 5),
        "cluster_spread": (float, 0.02),
        "isolation": (float, 0.3),
        "isolated": (bool, True),
        "path": (str, ""),
        "target": (str, ""),
    },
    "kernel": {
        "family": (str, "squared-exponential"),
        "lengthscale": (float, 1.0),
        "variance": (float, 1.0),
        "nugget": (float, 0.01),
    },
    "trend": {"family": (str, "ordinary")},
    "split": {"test_fraction": (float, 0.2), "seed": (int, 0)},
    "quadrature": {"grid_points": (int, 256)},
    "valuation": {
        "methods": (list, ["loo-schur", "shapley-mc"]),
        "utility": (str, "integrated-variance"),
        "budget": (int, 500),
        "tolerance": (float, 0.0),
        "burn_in": (int, 0),
        "seed": (int, 0),
    },
    "benchmark": {
        "retention_grid": (list, [1.0, 0.8, 0.6, 0.4, 0.2]),
        "baseline_seeds": (list, [0, 1, 2, 3, 4]),
    },
    "reset": {
        "max_condition": (float, 1e10),
        "max_chained_updates": (int, 64),
        "max_abs_iv_step": (float, math.inf),
    },
}


def _coerce(section: str, key: str, want, value):
    if want is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise InputError(
                f"config [{section}] {key}: expected a number, got {value!r}"
            )
        return float(value)
    if want is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise InputError(
                f"config [{section}] {key}: expected an integer, got {value!r}"
            )
        return value
    if want is list:
        if not isinstance(value, list):
            raise InputError(
                f"config [{section}] {key}: expected an array, got {value!r}"
            )
        return list(value)
    if not isinstance(value, want):
        raise InputError(
            f"config [{section}] {key}: expected {want.__name__}, got {value!r}"
        )
    return value


def load_config(path: str | None) -> dict:
    """Parse and validate the TOML config, filling defaults.

    Unknown sections or keys are rejected: a typo should fail loudly,
    not silently fall back to a default.
    """
    raw = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise InputError(f"config file {p} does not exist")
        try:
            with open(p, "rb") as fh:
                raw = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise InputError(f"config file {p}: {exc}") from None
    cfg = {}
    for section, keys in _SCHEMA.items():
        got = raw.pop(section, {})
        if not isinstance(got, dict):
            raise InputError(f"config section [{section}] must be a table")
        cfg[section] = {}
        for key, (want, default) in keys.items():
            if key in got:
                cfg[section][key] = _coerce(section, key, want, got.pop(key))
            else:
                cfg[section][key] = default
        if got:
            raise InputError(
                f"config section [{section}] has unknown keys: {sorted(got)}"
            )
    if raw:
        raise InputError(f"config has unknown sections: {sorted(raw)}")
    return cfg


def build_dataset(cfg: dict) -> Dataset:
    ds = cfg["dataset"]
    if ds["kind"] == "synthetic-sinus":
        dom = ds["domain"]
        if len(dom) != 2:
            raise InputError(f"config [dataset] domain must be [lo, hi], got {dom}")
        return gen_synthetic_sinus(
            n=ds["n"],
            domain=(float(dom[0]), float(dom[1])),
            noise_sd=ds["noise_sd"],
            seed=ds["seed"],
            cluster_size=ds["cluster_size"],
            cluster_spread=ds["cluster_spread"],
            isolation=ds["isolation"],
            isolated=ds["isolated"],
        )
    if ds["kind"] == "csv":
        if not ds["path"] or not ds["target"]:
            raise InputError(
                "config [dataset] kind 'csv' needs both 'path' and 'target'"
            )
        return ingest_csv(ds["path"], ds["target"])
    raise InputError(
        f"config [dataset] kind {ds['kind']!r} unknown; choose "
        f"'synthetic-sinus' or 'csv'"
    )


def build_model(cfg: dict, input_dim: int) -> tuple[KernelSpec, TrendBasis, ResetPolicy]:
    k = cfg["kernel"]
    kernel = KernelSpec(
        family=k["family"],
        lengthscale=k["lengthscale"],
        variance=k["variance"],
        nugget=k["nugget"],
    )
    trend = TrendBasis(cfg["trend"]["family"], input_dim)
    r = cfg["reset"]
    policy = ResetPolicy(
        max_condition=r["max_condition"],
        max_chained_updates=r["max_chained_updates"],
        max_abs_iv_step=r["max_abs_iv_step"],
    )
    return kernel, trend, policy


def _prepare(cfg: dict):
    dataset = build_dataset(cfg)
    kernel, trend, policy = build_model(cfg, dataset.dim)
    frac = cfg["split"]["test_fraction"]
    if frac == 0.0:
        train, test = dataset, None
    else:
        train, test = split(dataset, frac, seed=cfg["split"]["seed"])
    if cfg["valuation"]["utility"] == "test-mse" and test is None:
        raise InputError("the test-mse utility needs [split] test_fraction > 0")
    quadrature = default_quadrature(
        train, test, grid_points=cfg["quadrature"]["grid_points"]
    )
    return dataset, kernel, trend, policy, train, test, quadrature


def _ensure_out(out: str) -> Path:
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _dump_json(obj, path: Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n")


def _apply_overrides(cfg: dict, args) -> dict:
    if args.seed is not None:
        cfg["valuation"]["seed"] = args.seed
    return cfg


def _write_reports(reports: dict, run_cfg: dict, out: Path, threads: int) -> dict:
    summary_methods = {}
    for method, report in reports.items():
        stem = f"valuations_{method.replace('-', '_')}"
        report.write_csv(out / f"{stem}.csv")
        sidecar = {"run": run_cfg, "threads": threads, **report.config_payload()}
        _dump_json(sidecar, out / f"{stem}.config.json")
        summary_methods[method] = {
            "total_utility_gap": report.total_utility_gap,
            "sum_of_values": float(report.values.sum()),
            "top_index": int(np.argmax(report.values)),
        }
    names = list(reports)
    correlations = {}
    for a in range(len(names)):
        for b in range(a + 1, len(names)):
            key = f"{names[a]}/{names[b]}"
            try:
                rho = spearman(reports[names[a]].values, reports[names[b]].values)
            except InputError:
                rho = None
            correlations[key] = rho
    return {"methods": summary_methods, "spearman": correlations}


def cmd_value(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    dataset, kernel, trend, policy, train, test, quadrature = _prepare(cfg)
    out = _ensure_out(args.out)
    val = cfg["valuation"]
    methods = list(val["methods"])
    if not methods:
        raise InputError("config [valuation] methods is empty")
    log.info("value: n_train=%d methods=%s", train.n, methods)
    reports = {}
    for method in methods:
        reports[method] = compute_valuation(
            method, kernel, trend, train, test, quadrature,
            utility_kind=val["utility"], budget=val["budget"],
            tolerance=val["tolerance"], burn_in=val["burn_in"],
            seed=val["seed"], threads=args.threads, policy=policy,
        )
    summary = _write_reports(reports, cfg, out, args.threads)
    summary["n_train"] = train.n
    summary["n_test"] = 0 if test is None else test.n
    _dump_json(summary, out / "summary.json")
    log.info("value: wrote %d report(s) to %s", len(reports), out)
    return 0


def cmd_removal_bench(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    dataset = build_dataset(cfg)
    kernel, trend, policy = build_model(cfg, dataset.dim)
    out = _ensure_out(args.out)
    val = cfg["valuation"]
    bench = cfg["benchmark"]
    frac = cfg["split"]["test_fraction"]
    if not 0.0 < frac < 1.0:
        raise InputError(
            f"removal-bench needs [split] test_fraction in (0, 1), got {frac}"
        )
    mse_curves, iv_curves, reports = removal_benchmark(
        dataset,
        val["methods"],
        bench["retention_grid"],
        bench["baseline_seeds"],
        kernel,
        trend,
        utility_kind=val["utility"],
        test_fraction=frac,
        split_seed=cfg["split"]["seed"],
        grid_points=cfg["quadrature"]["grid_points"],
        budget=val["budget"],
        tolerance=val["tolerance"],
        burn_in=val["burn_in"],
        seed=val["seed"],
        threads=args.threads,
        policy=policy,
    )
    write_removal_curves(mse_curves, out / "removal_curve.csv")
    write_removal_curves(iv_curves, out / "removal_curve_iv.csv")
    summary = _write_reports(reports, cfg, out, args.threads)
    _dump_json(summary, out / "summary.json")
    log.info("removal-bench: wrote curves for %d method(s) to %s", len(mse_curves), out)
    return 0


def _write_iv_trace(kernel, trend, train, quadrature, policy, path: Path) -> None:
    from .incremental import initial_state, iv_step

    state = initial_state(kernel, trend, train.features, quadrature, policy)
    lines = ["step,iv", f"0,{state.iv_cache!r}"]
    for i in range(train.n):
        state, iv = iv_step(state, i)
        lines.append(f"{i + 1},{iv!r}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def cmd_synthetic_demo(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    cfg["dataset"]["kind"] = "synthetic-sinus"
    dataset, kernel, trend, policy, train, test, quadrature = _prepare(cfg)
    out = _ensure_out(args.out)

    rows = ["x,z"] + [
        f"{float(dataset.features[i, 0])!r},{float(dataset.targets[i])!r}"
        for i in range(dataset.n)
    ]
    with open(out / "dataset.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(rows) + "\n")

    val = cfg["valuation"]
    reports = {}
    for method in val["methods"]:
        reports[method] = compute_valuation(
            method, kernel, trend, train, test, quadrature,
            utility_kind=val["utility"], budget=val["budget"],
            tolerance=val["tolerance"], burn_in=val["burn_in"],
            seed=val["seed"], threads=args.threads, policy=policy,
        )
    summary = _write_reports(reports, cfg, out, args.threads)
    _dump_json(summary, out / "summary.json")

    _write_iv_trace(kernel, trend, train, quadrature, policy, out / "iv_trace.csv")

    first = next(iter(reports.values()))
    with open(out / "valuations.svg", "w", encoding="utf-8") as fh:
        fh.write(
            render_bar_chart(
                first.values, first.std_errors,
                title=f"{first.method} values ({first.config.get('utility', '')})",
            )
        )
    trace = np.loadtxt(out / "iv_trace.csv", delimiter=",", skiprows=1)
    with open(out / "iv_trace.svg", "w", encoding="utf-8") as fh:
        fh.write(
            render_line_chart(
                [("integrated variance", trace[:, 0], trace[:, 1])],
                title="integrated variance along insertion order",
                xlabel="sites added",
                ylabel="integrated variance",
            )
        )
    log.info("synthetic-demo: artifacts in %s", out)
    return 0


_PLOT_KINDS = ("valuation-bars", "removal-curves", "iv-trace")


def cmd_plot(args) -> int:
    src = Path(args.input)
    if not src.is_file():
        raise InputError(f"input file {src} does not exist")
    out = _ensure_out(args.out)
    target = out / (src.stem + ".svg")
    if args.kind == "valuation-bars":
        report = load_valuations(src)
        svg = render_bar_chart(
            report.values, report.std_errors, title=f"{report.method} values"
        )
    elif args.kind == "removal-curves":
        curves = load_removal_curves(src)
        svg = render_line_chart(
            [(c.method, c.retention, c.metric) for c in curves],
            title="performance after ranked removal",
            xlabel="retained fraction",
            ylabel="metric",
            reverse_x=True,
        )
    elif args.kind == "iv-trace":
        with open(src, encoding="utf-8") as fh:
            rows = [ln.strip() for ln in fh if ln.strip()]
        if not rows or rows[0] != "step,iv":
            raise InputError(f"{src}: not an IV-trace CSV (expected 'step,iv' header)")
        try:
            table = np.array(
                [[float(v) for v in ln.split(",")] for ln in rows[1:]]
            )
        except ValueError:
            raise InputError(f"{src}: non-numeric entries in IV trace") from None
        if table.size == 0 or table.shape[1] != 2:
            raise InputError(f"{src}: malformed IV trace")
        svg = render_line_chart(
            [("integrated variance", table[:, 0], table[:, 1])],
            title="integrated variance trace",
            xlabel="sites added",
            ylabel="integrated variance",
        )
    else:
        raise InputError(f"unknown plot kind {args.kind!r}; choose from {_PLOT_KINDS}")
    with open(target, "w", encoding="utf-8") as fh:
        fh.write(svg)
    log.info("plot: wrote %s", target)
    return 0


def _setup_logging() -> None:
    name = os.environ.get("GPDV_LOG", "").strip()
    level = logging.WARNING
    if name:
        candidate = getattr(logging, name.upper(), None)
        if isinstance(candidate, int):
            level = candidate
        else:
            print(f"GPDV_LOG={name!r} is not a log level; using WARNING",
                  file=sys.stderr)
    logging.basicConfig(
        level=level, stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gpdv",
        description="Per-datum valuation for Gaussian-process regression",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", default=None, help="TOML config file")
        sp.add_argument("--out", default="gpdv-out", help="output directory")
        sp.add_argument("--threads", type=int, default=1,
                        help="worker threads for sampling")
        sp.add_argument("--seed", type=int, default=None,
                        help="override the sampling seed")

    sp = sub.add_parser("value", help="compute per-datum valuations")
    common(sp)
    sp.set_defaults(func=cmd_value)

    sp = sub.add_parser("removal-bench", help="ranked data-removal benchmark")
    common(sp)
    sp.set_defaults(func=cmd_removal_bench)

    sp = sub.add_parser("synthetic-demo", help="end-to-end run on a sine problem")
    common(sp)
    sp.set_defaults(func=cmd_synthetic_demo)

    sp = sub.add_parser("plot", help="render a result CSV as SVG")
    sp.add_argument("input", help="CSV produced by value/removal-bench")
    sp.add_argument("--kind", choices=_PLOT_KINDS, required=True)
    sp.add_argument("--out", default="gpdv-out", help="output directory")
    sp.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalBreakdownError as exc:
        print(f"numerical breakdown: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
