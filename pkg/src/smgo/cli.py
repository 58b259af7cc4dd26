"""Command-line front end: ``list-problems``, ``run``, ``batch`` and ``sweep``.

Options come from an optional TOML or JSON file (``--config``) overridden
by flags.  Traces are JSON lines, summaries CSV.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from pathlib import Path

from . import harness
from .harness import BatchSpec
from .problems import NoiseSpec, evaluate, evaluate_noisy, get_problem, registry
from .solver import EvaluationError, SolverConfig, run

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_EVALUATION = 3
EXIT_NO_FEASIBLE = 4

# config-file keys that map one-to-one onto SolverConfig fields
SOLVER_KEYS = ("budget", "alpha", "delta", "beta", "phi", "B", "L", "tr_max", "tr_shrink", "tr_min")
KNOWN_KEYS = set(SOLVER_KEYS) | {
    "problem",
    "seed",
    "noisy",
    "noise_f",
    "noise_s",
    "runs",
    "out",
    "start",
    "workers",
    "alphas",
    "deltas",
}


class ConfigError(ValueError):
    pass


def load_config(path: str | os.PathLike) -> dict:
    """Read a TOML or JSON option file (chosen by extension) and check its keys."""
    p = Path(path)
    try:
        text = p.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from exc
    try:
        if p.suffix.lower() == ".json":
            data = json.loads(text)
        else:
            try:
                import tomllib
            except ModuleNotFoundError:  # Python < 3.11
                import tomli as tomllib
            data = tomllib.loads(text.decode())
    except (ValueError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot parse config {p}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a key-value document")
    unknown = set(data) - KNOWN_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    return data


def merged_options(args: argparse.Namespace) -> dict:
    opts = load_config(args.config) if getattr(args, "config", None) else {}
    flags = {
        "problem": args.problem,
        "budget": args.budget,
        "seed": args.seed,
        "alpha": args.alpha,
        "delta": args.delta,
        "beta": args.beta,
        "phi": args.phi,
        "B": args.grid_B,
        "L": args.sobol_L,
        "runs": getattr(args, "runs", None),
        "out": args.out,
        "start": getattr(args, "start", None),
        "workers": getattr(args, "workers", None),
        "alphas": getattr(args, "alphas", None),
        "deltas": getattr(args, "deltas", None),
    }
    opts.update({k: v for k, v in flags.items() if v is not None})
    if args.noisy:
        opts["noisy"] = True
    if "problem" not in opts:
        raise ConfigError("no problem given (use --problem or the config file)")
    return opts


def solver_overrides(opts: dict) -> dict:
    return {k: opts[k] for k in SOLVER_KEYS if k in opts}


def noise_spec(opts: dict, problem, seed: int) -> NoiseSpec | None:
    if not opts.get("noisy"):
        return None
    base = problem.noise or NoiseSpec(0.0, (0.0,) * problem.n_constraints)
    amp_f = float(opts.get("noise_f", base.amp_f))
    amp_s = tuple(float(a) for a in opts.get("noise_s", base.amp_s))
    return NoiseSpec(amp_f, amp_s, seed)


def out_dir(opts: dict) -> Path:
    return Path(opts.get("out") or os.environ.get("SMGO_OUT_DIR") or "smgo_out")


# -- commands ------------------------------------------------------------------


def cmd_list_problems(args: argparse.Namespace) -> int:
    rows = [
        {
            "name": p.name,
            "D": p.dimension,
            "S": p.n_constraints,
            "lower": " ".join(repr(float(v)) for v in p.lower),
            "upper": " ".join(repr(float(v)) for v in p.upper),
            "z_star": "N/A" if p.known_optimum is None else repr(p.known_optimum),
        }
        for p in registry()
    ]
    emit(rows, list(rows[0]), args.format)
    return EXIT_OK


def cmd_run(args: argparse.Namespace) -> int:
    opts = merged_options(args)
    problem = get_problem(opts["problem"])
    seed = int(opts.get("seed", 0))
    config = SolverConfig(**solver_overrides(opts), seed=seed, noisy=bool(opts.get("noisy", False)))
    noise = noise_spec(opts, problem, seed)
    x0 = harness.start_point(problem, opts.get("start", harness.FIXED), seed, 0)

    path = out_dir(opts) / f"{problem.name}_seed{seed}.jsonl"
    path.parent.mkdir(parents=True, exist_ok=True)
    status, error = "ok", None
    with open(path, "w") as fh:

        def sink(record):
            fh.write(json.dumps(harness.iteration_line(record), allow_nan=False) + "\n")

        def fn(x, n):
            return evaluate(problem, x) if noise is None else evaluate_noisy(problem, x, noise, n)

        try:
            history = run(fn, problem.lower, problem.upper, problem.n_constraints, config, x0, sink).history
        except EvaluationError as exc:
            status, error, history = "evaluation_error", str(exc), exc.history
        summary = harness.summary_line(problem, config, None, x0, history, status, error, noise)
        fh.write(json.dumps(summary, allow_nan=False) + "\n")

    print(f"trace written to {path}", file=sys.stderr)
    keys = ["problem", "status", "iterations", "found_feasible", "z_best", "x_best"]
    emit([{k: summary[k] for k in keys}], keys, args.format)
    if status != "ok":
        print(error, file=sys.stderr)
        return EXIT_EVALUATION
    return EXIT_OK if summary["found_feasible"] else EXIT_NO_FEASIBLE


def _batch_spec(opts: dict, config: dict) -> BatchSpec:
    problem = get_problem(opts["problem"])
    noise = None
    if opts.get("noisy"):
        noise = noise_spec(opts, problem, 0)
    return BatchSpec(
        problem=problem.name,
        runs=int(opts.get("runs", 10)),
        config=config,
        start=opts.get("start", harness.RANDOM),
        master_seed=int(opts.get("seed", 0)),
        noisy=bool(opts.get("noisy", False)),
        noise=noise,
        workers=int(opts.get("workers", 1)),
    )


def cmd_batch(args: argparse.Namespace) -> int:
    if args.recompute:
        return _recompute(args)
    opts = merged_options(args)
    summary = harness.run_batch(_batch_spec(opts, solver_overrides(opts)), out_dir(opts))
    _emit_summaries([summary], args.format)
    return EXIT_EVALUATION if summary.n_failed else EXIT_OK


def _float_list(value) -> list[float]:
    if isinstance(value, str):
        value = [v for v in value.split(",") if v.strip()]
    try:
        return [float(v) for v in value]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"expected a list of numbers, got {value!r}") from exc


def cmd_sweep(args: argparse.Namespace) -> int:
    if args.recompute:
        return _recompute(args)
    opts = merged_options(args)
    config = solver_overrides(opts)
    alphas = _float_list(opts.get("alphas", [config.get("alpha", SolverConfig.alpha)]))
    deltas = _float_list(opts.get("deltas", [config.get("delta", SolverConfig.delta)]))
    summaries = harness.run_sweep(alphas, deltas, _batch_spec(opts, config), out_dir(opts))
    _emit_summaries(summaries, args.format)
    return EXIT_EVALUATION if any(s.n_failed for s in summaries) else EXIT_OK


def _recompute(args: argparse.Namespace) -> int:
    opts = load_config(args.config) if args.config else {}
    if args.out is not None:
        opts["out"] = args.out
    root = out_dir(opts)
    try:
        summaries = harness.recompute(root)
    except FileNotFoundError as exc:
        raise ConfigError(str(exc)) from exc
    harness.write_summary_csv(root / "summary.csv", summaries)
    _emit_summaries(summaries, args.format)
    return EXIT_OK


# -- output --------------------------------------------------------------------


def _emit_summaries(summaries, fmt: str) -> None:
    emit([s.csv_row() for s in summaries], harness.CSV_COLUMNS, fmt)


def emit(rows: list[dict], columns: list[str], fmt: str) -> None:
    if fmt == "json":
        for r in rows:
            print(json.dumps(r))
        return
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
        sys.stdout.write(buf.getvalue())
        return
    cells = [[str(c) for c in columns]] + [[_cell(r[c]) for c in columns] for r in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(columns))]
    for row in cells:
        print("  ".join(v.ljust(w) for v, w in zip(row, widths)).rstrip())


def _cell(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.6g}"
    if isinstance(v, list):
        return "[" + ", ".join(_cell(x) for x in v) + "]"
    return str(v)


# -- parser --------------------------------------------------------------------


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML or JSON option file")
    p.add_argument("--problem", help="problem name, see list-problems")
    p.add_argument("--budget", type=int, help="iterations per run")
    p.add_argument("--seed", type=int, help="run seed (master seed for batches)")
    p.add_argument("--alpha", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--phi", type=float)
    p.add_argument("--grid-B", dest="grid_B", type=int, help="grid divisor B")
    p.add_argument("--sobol-L", dest="sobol_L", type=int, help="Sobol seed and filler count L")
    p.add_argument("--noisy", action="store_true", help="noisy evaluations with the problem's amplitudes")
    p.add_argument("--out", help="output directory (default $SMGO_OUT_DIR or ./smgo_out)")
    p.add_argument("--format", choices=("table", "csv", "json"), default="table")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="smgo", description="Set-membership global optimization")
    sub = parser.add_subparsers(dest="command", required=True)

    lp = sub.add_parser("list-problems", help="show the benchmark registry")
    lp.add_argument("--format", choices=("table", "csv", "json"), default="table")
    lp.set_defaults(func=cmd_list_problems)

    rp = sub.add_parser("run", help="single run, JSONL trace")
    _common(rp)
    rp.add_argument("--start", choices=(harness.FIXED, harness.RANDOM))
    rp.set_defaults(func=cmd_run)

    for name, func, helptext in (
        ("batch", cmd_batch, "repeated seeded runs"),
        ("sweep", cmd_sweep, "paired (alpha, delta) grid"),
    ):
        bp = sub.add_parser(name, help=helptext)
        _common(bp)
        bp.add_argument("--runs", type=int)
        bp.add_argument("--start", choices=(harness.FIXED, harness.RANDOM))
        bp.add_argument("--workers", type=int, help="parallel worker processes")
        bp.add_argument("--recompute", action="store_true", help="rebuild summary.csv from archived traces")
        if name == "sweep":
            bp.add_argument("--alphas", help="comma-separated alpha values")
            bp.add_argument("--deltas", help="comma-separated delta values")
        bp.set_defaults(func=func)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, KeyError, ValueError, TypeError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
