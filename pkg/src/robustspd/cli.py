"""Command-line interface: search, evaluate, verify, bench-updates.

Exit codes: 0 success; 1 numeric failure (singular design, oracle deviation);
2 configuration or parse errors; 3 infeasible search problems; 4 oracle
capacity guards.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import oracle
from ._backend import BACKEND
from .annealer import search as run_annealer
from .bench import bench_updates
from .config import RunConfig, load_config, parse_config
from .criterion import compute_state, loss
from .design import VarianceSpec, build_model_matrices, design_from_csv, design_to_csv
from .errors import (
    CapacityError,
    ConfigError,
    InfeasibleDesignError,
    InvalidTermError,
    MalformedDesignError,
    SingularDesignError,
)
from .presets import example_config

_REPORT_KEYS = (
    "phi", "pi_root", "loss_root", "log_pi", "log_loss",
    "alpha", "d", "sigma_eps_sq", "p", "N", "n", "b",
)


def _fmt6(value) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def _load_run_config(args) -> RunConfig:
    if args.config and args.example:
        raise ConfigError("<args>", "--config and --example are mutually exclusive")
    if args.config:
        cfg = load_config(args.config)
        doc = cfg.resolved_dict()
    elif args.example:
        doc = example_config(args.example)
    else:
        raise ConfigError("<args>", "one of --config or --example is required")
    # flag overrides land in the raw document so one validation path runs
    if getattr(args, "alpha", None) is not None:
        doc["alpha"] = args.alpha
    if getattr(args, "d", None) is not None:
        eps = doc.get("variance", {}).get("sigma_eps_sq", 1.0)
        doc.setdefault("variance", {})["sigma_gamma_sq"] = args.d * eps
    for flag, key in (("seed", "seed"), ("restarts", "restarts")):
        value = getattr(args, flag, None)
        if value is not None:
            doc.setdefault("anneal", {})[key] = value
    if getattr(args, "trace", None) is not None:
        doc.setdefault("output", {})["trace"] = args.trace
    if getattr(args, "format", None) is not None:
        doc.setdefault("output", {})["format"] = args.format
    return parse_config(doc)


def _report_dict(report) -> dict:
    raw = report.to_dict()
    return {k: (float(v) if isinstance(v, float) else v) for k, v in raw.items()}


def _print_report_text(report, out):
    for key, value in _report_dict(report).items():
        out.write(f"{key} = {_fmt6(value)}\n")


def _report_csv(report) -> str:
    d = _report_dict(report)
    head = ",".join(_REPORT_KEYS)
    row = ",".join(repr(d[k]) if isinstance(d[k], float) else str(d[k]) for k in _REPORT_KEYS)
    return head + "\n" + row + "\n"


def _evaluate_design(config: RunConfig, design):
    matrices = build_model_matrices(design, config.requirement)
    state = compute_state(matrices, design, config.variance)
    return loss(state, config.layout.n_full, config.alpha)


def _read_design(args, config: RunConfig):
    if not args.design:
        raise ConfigError("<args>", "--design PATH is required")
    try:
        with open(args.design, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise MalformedDesignError(f"cannot read {args.design}: {exc}") from None
    return design_from_csv(text, config.layout)


def _cmd_search(args) -> int:
    config = _load_run_config(args)
    result = run_annealer(
        config.layout, config.requirement, config.b, config.sizes,
        config.variance, config.alpha, config.anneal, threads=args.threads,
    )
    if (
        result.median_uphill_delta is not None
        and result.median_uphill_delta > 0
        and config.anneal.t0 > 1e3 * result.median_uphill_delta
    ):
        sys.stderr.write(
            f"warning: anneal.T0 = {config.anneal.t0:g} is more than 1000x the "
            f"median initial uphill loss step ({result.median_uphill_delta:.3g}); "
            "acceptance will be near-uniform for most of the schedule. Consider "
            f"anneal.T0 ~ {result.median_uphill_delta:.3g}.\n"
        )
    if config.trace_path:
        with open(config.trace_path, "w", encoding="utf-8") as fh:
            fh.write("temperature_step,iteration,current_loss_root,best_loss_root\n")
            for stage, sweep, cur, best in result.trace_rows():
                fh.write(f"{stage},{sweep},{cur!r},{best!r}\n")
    design_csv = design_to_csv(result.best_design)
    if config.out_format == "csv":
        sys.stdout.write(design_csv)
    elif config.out_format == "json":
        doc = {
            "config": config.resolved_dict(),
            "report": _report_dict(result.report),
            "design_csv": design_csv,
            "final_design_csv": design_to_csv(result.final_design),
            "diagnostics": {
                "best_restart": result.best_restart,
                "per_restart_best_loss_root": [
                    float(np.exp(r.best_log_loss / result.q)) for r in result.restarts
                ],
                "counters": result.counters_dict(),
                "median_uphill_delta": result.median_uphill_delta,
                "backend": BACKEND,
            },
        }
        json.dump(doc, sys.stdout, indent=2)
        sys.stdout.write("\n")
    else:
        sys.stdout.write("resolved config:\n")
        sys.stdout.write(json.dumps(config.resolved_dict(), indent=2) + "\n\n")
        sys.stdout.write("best design:\n")
        sys.stdout.write(design_csv + "\n")
        sys.stdout.write("report:\n")
        _print_report_text(result.report, sys.stdout)
    return 0


def _cmd_evaluate(args) -> int:
    config = _load_run_config(args)
    design = _read_design(args, config)
    report = _evaluate_design(config, design)
    if config.out_format == "json":
        doc = {"config": config.resolved_dict(), "report": _report_dict(report)}
        json.dump(doc, sys.stdout, indent=2)
        sys.stdout.write("\n")
    elif config.out_format == "csv":
        sys.stdout.write(_report_csv(report))
    else:
        _print_report_text(report, sys.stdout)
    return 0


def _cmd_verify(args) -> int:
    config = _load_run_config(args)
    design = _read_design(args, config)
    closed = _evaluate_design(config, design).loss
    naive = oracle.naive_loss(design, config.requirement, config.variance, config.alpha)
    ellip, _ = oracle.ellipsoid_max(design, config.requirement, config.variance, config.alpha)
    rng = np.random.default_rng(args.seed or 0)
    bound = oracle.sampling_lower_bound(
        design, config.requirement, config.variance, config.alpha, args.samples, rng
    )
    exact = [closed, naive, ellip]
    spread = max(
        abs(a - b) / max(abs(a), abs(b), 1e-300)
        for i, a in enumerate(exact)
        for b in exact[i + 1:]
    )
    dominated = bound <= closed * (1 + 1e-9)
    doc = {
        "closed_form_loss": closed,
        "naive_loss": naive,
        "ellipsoid_max": ellip,
        "sampling_lower_bound": bound,
        "max_pairwise_relative_deviation": spread,
        "lower_bound_dominated": bool(dominated),
        "samples": args.samples,
    }
    if config.out_format == "json":
        json.dump({"config": config.resolved_dict(), "verify": doc}, sys.stdout, indent=2)
        sys.stdout.write("\n")
    else:
        for key, value in doc.items():
            sys.stdout.write(f"{key} = {_fmt6(value)}\n")
    if spread > 1e-6 or not dominated:
        sys.stderr.write(
            f"error: oracle disagreement (spread {spread:.3g}, "
            f"dominated={dominated})\n"
        )
        return 1
    return 0


def _cmd_bench(args) -> int:
    rows = bench_updates(
        n_target=args.n, p_target=args.p, moves=args.moves, d=args.d or 1.0,
        seed=args.seed or 0,
    )
    sys.stdout.write("n,p,move_type,update_time,recompute_time,backend\n")
    for row in rows:
        sys.stdout.write(
            f"{row['n']},{row['p']},{row['move_type']},"
            f"{row['update_time']!r},{row['recompute_time']!r},{row['backend']}\n"
        )
    return 0


def _add_common(sub, with_design=False, with_search_flags=False):
    sub.add_argument("--config", help="JSON run configuration")
    sub.add_argument("--example", type=int, choices=(1, 2),
                     help="use a built-in example preset instead of --config")
    sub.add_argument("--alpha", type=float, help="misspecification radius override")
    sub.add_argument("--d", type=float,
                     help="variance ratio override (sets sigma_gamma_sq = d * sigma_eps_sq)")
    sub.add_argument("--seed", type=int, help="RNG seed override")
    sub.add_argument("--format", choices=("text", "json", "csv"), help="output format")
    if with_design:
        sub.add_argument("--design", help="design CSV to read")
    if with_search_flags:
        sub.add_argument("--restarts", type=int, help="independent annealing restarts")
        sub.add_argument("--threads", type=int, default=None,
                         help="worker threads for restarts (default: available cores)")
        sub.add_argument("--trace", help="write the winning restart's sweep trace CSV here")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="robustspd",
        description="Minimax-robust split-plot designs: search, evaluate, verify.",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    p_search = subs.add_parser("search", help="anneal for the minimax-optimal design")
    _add_common(p_search, with_search_flags=True)
    p_search.set_defaults(func=_cmd_search)

    p_eval = subs.add_parser("evaluate", help="evaluate a design file against a config")
    _add_common(p_eval, with_design=True)
    p_eval.set_defaults(func=_cmd_evaluate)

    p_verify = subs.add_parser("verify",
                               help="cross-check a design against the brute-force oracles")
    _add_common(p_verify, with_design=True)
    p_verify.add_argument("--samples", type=int, default=2000,
                          help="Monte Carlo boundary samples (default 2000)")
    p_verify.set_defaults(func=_cmd_verify)

    p_bench = subs.add_parser("bench-updates",
                              help="time incremental updates vs full recomputation")
    p_bench.add_argument("--n", type=int, default=60, help="target run count")
    p_bench.add_argument("--p", type=int, default=20, help="target model size")
    p_bench.add_argument("--moves", type=int, default=200, help="moves per benchmark")
    p_bench.add_argument("--d", type=float, default=1.0, help="variance ratio")
    p_bench.add_argument("--seed", type=int, default=0)
    p_bench.set_defaults(func=_cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, InvalidTermError, MalformedDesignError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2
    except InfeasibleDesignError as exc:
        sys.stderr.write(f"error: infeasible: {exc}\n")
        return 3
    except CapacityError as exc:
        sys.stderr.write(f"error: capacity guard: {exc} (limit {exc.limit})\n")
        return 4
    except SingularDesignError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
