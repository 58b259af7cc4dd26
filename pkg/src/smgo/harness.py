"""Repeated seeded runs, paired parameter sweeps and their summary metrics.

Every metric is a pure function of the JSON-lines traces, so a summary can
be rebuilt bit-for-bit from an archive with :func:`summarize_traces`.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .problems import NoiseSpec, ProblemSpec, evaluate, evaluate_noisy, get_problem
from .solver import EXPLOIT, EvaluationError, IterationRecord, SolverConfig, run

FIXED = "fixed"
RANDOM = "random"

CSV_COLUMNS = [
    "problem",
    "alpha",
    "delta",
    "runs",
    "mean_gap",
    "median_gap",
    "std_gap",
    "mean_first_feasible",
    "pct_infeasible",
    "pct_exploit",
]


@dataclass(frozen=True)
class BatchSpec:
    """What to run: a problem, solver overrides, a run count and a start policy.

    ``config`` holds :class:`SolverConfig` overrides; ``seed`` inside it is
    ignored because every run gets its own seed derived from ``master_seed``.
    With ``noisy`` set, ``noise`` defaults to the problem's own amplitudes.
    """

    problem: str
    runs: int = 10
    config: dict = field(default_factory=dict)
    start: str = RANDOM
    master_seed: int = 0
    noisy: bool = False
    noise: NoiseSpec | None = None
    workers: int = 1

    def __post_init__(self):
        if self.runs < 1:
            raise ValueError("runs must be >= 1")
        if self.start not in (FIXED, RANDOM):
            raise ValueError(f"start policy must be {FIXED!r} or {RANDOM!r}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        unknown = set(self.config) - set(SolverConfig.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown solver options: {', '.join(sorted(unknown))}")

    def solver_config(self, run_seed: int) -> SolverConfig:
        opts = dict(self.config)
        opts["seed"] = run_seed
        opts["noisy"] = self.noisy
        return SolverConfig(**opts)


def run_seed(master_seed: int, index: int) -> int:
    """Per-run seed, a deterministic hash of the master seed and run index."""
    return int(np.random.SeedSequence([master_seed, index]).generate_state(1)[0])


def start_point(problem: ProblemSpec, policy: str, master_seed: int, index: int) -> list[float] | None:
    """Starting point of run ``index``; depends on the run index only, never on solver options."""
    if policy == FIXED:
        return None if problem.start is None else list(problem.start)
    rng = np.random.default_rng([master_seed, index, 1])
    return rng.uniform(problem.lower, problem.upper).tolist()


# -- single runs and traces ---------------------------------------------------


def execute_run(spec: BatchSpec, index: int) -> list[dict]:
    """Run ``index`` of a batch; returns its trace as a list of JSON-ready dicts.

    The last entry is a summary line.  A failing evaluation ends the run
    early with ``status = "evaluation_error"`` instead of raising.
    """
    problem = get_problem(spec.problem)
    seed = run_seed(spec.master_seed, index)
    config = spec.solver_config(seed)
    x0 = start_point(problem, spec.start, spec.master_seed, index)
    noise = None
    if spec.noisy:
        base = spec.noise or problem.noise or NoiseSpec()
        noise = NoiseSpec(base.amp_f, base.amp_s, seed)

    if noise is None:
        def fn(x, n):
            return evaluate(problem, x)
    else:
        def fn(x, n):
            return evaluate_noisy(problem, x, noise, n)

    status, error = "ok", None
    try:
        result = run(fn, problem.lower, problem.upper, problem.n_constraints, config, x0)
        history = result.history
    except EvaluationError as exc:
        status, error, history = "evaluation_error", str(exc), exc.history

    records = [iteration_line(r) for r in history]
    records.append(summary_line(problem, config, index, x0, history, status, error, noise))
    return records


def iteration_line(record: IterationRecord) -> dict:
    return {"type": "iteration", **record.to_dict()}


def summary_line(
    problem: ProblemSpec,
    config: SolverConfig,
    index: int | None,
    x0,
    history: Sequence[IterationRecord],
    status: str,
    error: str | None = None,
    noise: NoiseSpec | None = None,
) -> dict:
    best = None
    for r in history:
        if r.feasible and (best is None or r.z < best.z):
            best = r
    line = {
        "type": "summary",
        "status": status,
        "problem": problem.name,
        "known_optimum": problem.known_optimum,
        "run": index,
        "start": x0,
        "config": config.to_dict(),
        "noise": None if noise is None else asdict(noise),
        "iterations": len(history),
        "found_feasible": best is not None,
        "z_best": None if best is None else best.z,
        "x_best": None if best is None else best.x,
        "error": error,
    }
    if noise is not None and best is not None:
        # exact values at the returned point, free of measurement noise
        z, c = evaluate(problem, best.x)
        line["z_best_exact"] = z
        line["feasible_exact"] = bool(np.all(c >= 0.0))
    return line


def write_trace(path: Path, lines: Iterable[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for line in lines:
            fh.write(json.dumps(line, allow_nan=False) + "\n")


def read_trace(path: Path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(s) for s in fh if s.strip()]


# -- metrics -------------------------------------------------------------------


@dataclass(frozen=True)
class RunMetrics:
    run: int | None
    status: str
    best: float | None
    gap: float | None
    first_feasible: int | None
    started_feasible: bool
    pct_infeasible: float
    pct_exploit: float


def run_metrics(trace: Sequence[dict]) -> RunMetrics:
    """Metrics of one run computed from its trace lines."""
    its = [t for t in trace if t.get("type") == "iteration"]
    summary = next((t for t in trace if t.get("type") == "summary"), {})
    best = None
    first = None
    for t in its:
        if t["feasible"]:
            if first is None:
                first = t["n"]
            if best is None or t["z"] < best:
                best = t["z"]
    z_star = summary.get("known_optimum")
    gap = None if best is None else (best if z_star is None else best - z_star)
    n = len(its)
    return RunMetrics(
        run=summary.get("run"),
        status=summary.get("status", "ok"),
        best=best,
        gap=gap,
        first_feasible=first,
        started_feasible=bool(its and its[0]["feasible"]),
        pct_infeasible=100.0 * sum(not t["feasible"] for t in its) / n if n else 0.0,
        pct_exploit=100.0 * sum(t["mode"] == EXPLOIT for t in its) / n if n else 0.0,
    )


def _mean(values: list[float]) -> float:
    return float(np.mean(values)) if values else math.nan


@dataclass(frozen=True)
class BatchSummary:
    """Aggregate of a batch.

    Gap statistics use runs that found a feasible point; ``std_gap`` is the
    population standard deviation.  ``mean_first_feasible`` averages only
    runs that started infeasible and later found a feasible point.
    """

    problem: str
    alpha: float
    delta: float
    runs: int
    n_failed: int
    n_feasible: int
    known_optimum: float | None
    mean_best: float
    mean_gap: float
    median_gap: float
    std_gap: float
    mean_first_feasible: float
    pct_infeasible: float
    pct_exploit: float
    per_run: tuple[RunMetrics, ...]

    def csv_row(self) -> dict:
        row = {k: getattr(self, k) for k in CSV_COLUMNS}
        return {k: _fmt(v) for k, v in row.items()}


def _fmt(v) -> str:
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def summarize(problem: str, alpha: float, delta: float, traces: Sequence[Sequence[dict]]) -> BatchSummary:
    """Aggregate run traces (ordered by run index) into a :class:`BatchSummary`."""
    metrics = tuple(run_metrics(t) for t in traces)
    z_star = None
    for t in traces:
        for line in t:
            if line.get("type") == "summary":
                z_star = line.get("known_optimum")
    done = [m for m in metrics if m.status == "ok"]
    gaps = [m.gap for m in done if m.gap is not None]
    bests = [m.best for m in done if m.best is not None]
    firsts = [float(m.first_feasible) for m in done if not m.started_feasible and m.first_feasible is not None]
    return BatchSummary(
        problem=problem,
        alpha=float(alpha),
        delta=float(delta),
        runs=len(metrics),
        n_failed=len(metrics) - len(done),
        n_feasible=len(gaps),
        known_optimum=z_star,
        mean_best=_mean(bests),
        mean_gap=_mean(gaps),
        median_gap=float(np.median(gaps)) if gaps else math.nan,
        std_gap=float(np.std(gaps)) if gaps else math.nan,
        mean_first_feasible=_mean(firsts),
        pct_infeasible=_mean([m.pct_infeasible for m in done]),
        pct_exploit=_mean([m.pct_exploit for m in done]),
        per_run=metrics,
    )


def summarize_traces(paths: Sequence[Path]) -> BatchSummary:
    """Rebuild a batch summary from archived trace files."""
    traces = [read_trace(Path(p)) for p in paths]
    traces.sort(key=lambda t: _summary_of(t).get("run") or 0)
    head = _summary_of(traces[0]) if traces else {}
    cfg = head.get("config", {})
    return summarize(head.get("problem", ""), cfg.get("alpha", math.nan), cfg.get("delta", math.nan), traces)


def _summary_of(trace: Sequence[dict]) -> dict:
    return next((t for t in trace if t.get("type") == "summary"), {})


def write_summary_csv(path: Path, summaries: Sequence[BatchSummary]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        w.writeheader()
        for s in summaries:
            w.writerow(s.csv_row())


# -- batches and sweeps -------------------------------------------------------


def _run_all(spec: BatchSpec) -> list[list[dict]]:
    indices = range(spec.runs)
    if spec.workers == 1:
        return [execute_run(spec, i) for i in indices]
    with ProcessPoolExecutor(max_workers=spec.workers) as pool:
        # map preserves submission order, so aggregation stays deterministic
        return list(pool.map(execute_run, [spec] * spec.runs, indices))


def trace_name(index: int) -> str:
    return f"run_{index:03d}.jsonl"


def run_batch(spec: BatchSpec, out_dir: Path | str | None = None) -> BatchSummary:
    """Execute ``spec.runs`` seeded runs and aggregate them.

    With ``out_dir`` every trace is written to ``out_dir/run_XXX.jsonl``
    and the summary to ``out_dir/summary.csv``.
    """
    get_problem(spec.problem)
    traces = _run_all(spec)
    if out_dir is not None:
        out = Path(out_dir)
        for i, t in enumerate(traces):
            write_trace(out / trace_name(i), t)
    cfg = spec.solver_config(0)
    summary = summarize(get_problem(spec.problem).name, cfg.alpha, cfg.delta, traces)
    if out_dir is not None:
        write_summary_csv(Path(out_dir) / "summary.csv", [summary])
    return summary


def cell_name(alpha: float, delta: float) -> str:
    return f"alpha_{alpha!r}_delta_{delta!r}"


def run_sweep(
    alphas: Sequence[float],
    deltas: Sequence[float],
    base: BatchSpec,
    out_dir: Path | str | None = None,
) -> list[BatchSummary]:
    """One batch per ``(alpha, delta)`` pair, alpha-major, with paired starts and seeds.

    Per-run seeds and starting points depend on the run index only, so every
    cell sees the same set of starts.
    """
    if not alphas or not deltas:
        raise ValueError("sweep grid must be non-empty")
    out = None if out_dir is None else Path(out_dir)
    results = []
    for a in alphas:
        for d in deltas:
            spec = BatchSpec(
                problem=base.problem,
                runs=base.runs,
                config={**base.config, "alpha": a, "delta": d},
                start=base.start,
                master_seed=base.master_seed,
                noisy=base.noisy,
                noise=base.noise,
                workers=base.workers,
            )
            cell_dir = None if out is None else out / cell_name(a, d)
            results.append(run_batch(spec, cell_dir))
    if out is not None:
        write_summary_csv(out / "summary.csv", results)
        cells = [cell_name(a, d) for a in alphas for d in deltas]
        (out / "sweep.json").write_text(json.dumps({"cells": cells}, indent=1) + "\n")
    return results


def recompute(out_dir: Path | str) -> list[BatchSummary]:
    """Summaries rebuilt from a batch or sweep archive directory."""
    out = Path(out_dir)
    manifest = out / "sweep.json"
    if manifest.exists():
        cells = json.loads(manifest.read_text())["cells"]
        return [summarize_traces(sorted((out / c).glob("run_*.jsonl"))) for c in cells]
    paths = sorted(out.glob("run_*.jsonl"))
    if not paths:
        raise FileNotFoundError(f"no traces under {out}")
    return [summarize_traces(paths)]
