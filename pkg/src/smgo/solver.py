"""SMGO-Delta iteration: exploitation inside a trust region, else exploration.

The :class:`Solver` class exposes an ask/tell loop in problem units; the
free functions implement the individual routines in normalized coordinates
and are usable on their own.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .cache import CandidateBounds
from .candidates import CandidateStore, add_from_sample, prune_at, rows_in_box, seed_sobol, trust_fillers
from .surrogate import (
    DEFAULT_FLOOR,
    Dataset,
    Envelope,
    Sample,
    SurrogateState,
    blended_feasible,
    envelope,
    estimate_noise,
    insert_sample,
    update_lipschitz,
)

INITIAL = "initial"
EXPLOIT = "exploit"
EXPLORE = "explore"


class EvaluationError(RuntimeError):
    """Raised when the black-box callback fails; carries the partial history."""

    def __init__(self, message: str, history: list["IterationRecord"]):
        super().__init__(message)
        self.history = history


@dataclass(frozen=True)
class SolverConfig:
    alpha: float = 0.005
    delta: float = 0.20
    beta: float = 0.1
    phi: float = 1e-6
    B: int = 5
    L: int = 500
    tr_max: float = 0.1
    tr_shrink: float = 0.5
    tr_min: float | None = None
    budget: int = 500
    seed: int = 0
    noisy: bool = False
    gamma_floor: float = DEFAULT_FLOOR
    rho_floor: float = DEFAULT_FLOOR
    noise_radius: float | None = None

    def __post_init__(self):
        if self.tr_min is None:
            object.__setattr__(self, "tr_min", self.tr_shrink**10 * self.tr_max)
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if not 0.0 <= self.delta <= 1.0:
            raise ValueError("delta must lie in [0, 1]")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.phi <= 0:
            raise ValueError("phi must be > 0")
        if self.B < 2:
            raise ValueError("B must be >= 2")
        if self.L < 0:
            raise ValueError("L must be >= 0")
        if not 0.0 < self.tr_shrink < 1.0:
            raise ValueError("tr_shrink must lie in (0, 1)")
        if not 0.0 < self.tr_min <= self.tr_max:
            raise ValueError("need 0 < tr_min <= tr_max")
        if self.budget < 1:
            raise ValueError("budget must be >= 1")
        if self.gamma_floor <= 0 or self.rho_floor <= 0:
            raise ValueError("Lipschitz floors must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class TrustRegion:
    center: np.ndarray
    size: float

    def contains(self, points: np.ndarray) -> np.ndarray:
        return np.all(np.abs(points - self.center) <= self.size, axis=-1)


@dataclass
class IterationRecord:
    n: int
    x: list[float]
    z: float
    c: list[float]
    mode: str
    feasible: bool
    z_best: float | None
    trust_size: float | None
    gamma: float
    rho: list[float]
    eps_f: float
    eps_s: list[float]
    elapsed_ms: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RunResult:
    history: list[IterationRecord]
    x_best: np.ndarray | None
    z_best: float | None
    c_best: np.ndarray | None

    @property
    def found_feasible(self) -> bool:
        return self.z_best is not None


def _lexi_pick(points: np.ndarray, candidates: np.ndarray) -> int:
    """Index (into ``candidates``) of the lexicographically smallest point."""
    if candidates.size == 1:
        return int(candidates[0])
    sub = points[candidates]
    order = np.lexsort(sub.T[::-1])
    return int(candidates[order[0]])


def _stack(env: Envelope) -> tuple[np.ndarray, np.ndarray]:
    return np.column_stack([env.f_upper, env.g_upper]), np.column_stack([env.f_lower, env.g_lower])


def _blend(up: np.ndarray, lo: np.ndarray, delta: float) -> np.ndarray:
    return delta * (0.5 * (up + lo)) + (1.0 - delta) * lo


def _merit_bounds(nearest, ages, up_lo, up_hi, lo_lo, lo_hi, rho, delta: float, phi: float):
    """Lower and upper bound of the exploration merit given envelope intervals.

    Column 0 holds the objective, the remaining columns the constraints.  With
    degenerate intervals both outputs equal the exact merit.
    """
    lam_lo = np.maximum(up_lo[:, 0] - lo_hi[:, 0], 0.0)
    lam_hi = up_hi[:, 0] - lo_lo[:, 0]
    if up_lo.shape[1] > 1:
        gu_lo, gu_hi, gl_lo, gl_hi = up_lo[:, 1:], up_hi[:, 1:], lo_lo[:, 1:], lo_hi[:, 1:]
        sure = np.all(_blend(gu_lo, gl_lo, delta) >= 0.0, axis=1)
        maybe = np.all(_blend(gu_hi, gl_hi, delta) >= 0.0, axis=1)
        pi_lo = np.sum(np.maximum(gu_lo - gl_hi, 0.0) / rho, axis=1)
        pi_hi = np.sum((gu_hi - gl_lo) / rho, axis=1)
        wg_lo = 2.0 ** np.sum(0.5 * (gu_lo + gl_lo) >= 0.0, axis=1)
        wg_hi = 2.0 ** np.sum(0.5 * (gu_hi + gl_hi) >= 0.0, axis=1)
    else:
        sure = maybe = np.ones(up_lo.shape[0], dtype=bool)
        pi_lo = pi_hi = np.zeros(up_lo.shape[0])
        wg_lo = wg_hi = np.ones(up_lo.shape[0])
    age = phi * ages
    lb = nearest * ((1.0 - delta) * np.where(sure, lam_lo, 0.0) + delta * pi_lo * wg_lo) + age
    ub = nearest * ((1.0 - delta) * np.where(maybe, lam_hi, 0.0) + delta * pi_hi * wg_hi) + age
    return lb, ub


def exploitation_cost(env: Envelope, beta: float) -> np.ndarray:
    return env.f_central - beta * env.f_uncertainty


def exploration_merit(
    env: Envelope, ages: np.ndarray, state: SurrogateState, delta: float, phi: float
) -> np.ndarray:
    """Remoteness-weighted uncertainty merit plus the linear age bonus."""
    up, lo = _stack(env)
    merit, _ = _merit_bounds(env.nearest, ages, up, up, lo, lo, state.rho, delta, phi)
    return merit


def exploit(
    points: np.ndarray, dataset: Dataset, state: SurrogateState, config: SolverConfig
) -> tuple[np.ndarray, float] | None:
    """Best exploitation candidate among ``points`` and its objective lower bound.

    Only points passing the risk-blended constraint test are eligible; the
    winner minimizes ``central - beta * uncertainty``, ties going to the
    lexicographically smallest point.  Returns ``None`` when no point is
    eligible.
    """
    if dataset.best is None:
        raise ValueError("exploitation needs a feasible best point")
    points = np.atleast_2d(points)
    if points.shape[0] == 0:
        return None
    env = envelope(points, dataset, state)
    ok = blended_feasible(env.g_central, env.g_lower, config.delta)
    if not np.any(ok):
        return None
    cost = np.where(ok, exploitation_cost(env, config.beta), np.inf)
    best = np.flatnonzero(cost == cost.min())
    i = _lexi_pick(points, best)
    return points[i].copy(), float(env.f_lower[i])


def improvement_test(f_lower: float, best_z: float, gamma: float, alpha: float) -> bool:
    """Expected-improvement check on the objective lower bound."""
    return f_lower <= best_z - alpha * gamma


def _slack(v: np.ndarray) -> np.ndarray:
    # absorbs rounding differences between cached and freshly computed bounds
    return v + 1e-9 * np.abs(v) + 1e-12


def explore(
    store: CandidateStore,
    dataset: Dataset,
    state: SurrogateState,
    config: SolverConfig,
    n: int,
    cache: CandidateBounds | None = None,
) -> np.ndarray:
    """Candidate with the highest exploration merit (lexicographic tie-break).

    Without ``cache`` every live candidate is scored from scratch.  With a
    synchronized cache, merit intervals prune the candidates that cannot win
    and only the rest are re-evaluated exactly; the returned point is the
    same.
    """
    idx = store.active()
    if idx.size == 0:
        raise ValueError("candidate set is empty")
    X = store.x

    if cache is None:
        ages = (n - store.birth[idx]).astype(float)
        merit = np.empty(idx.size)
        for start in range(0, idx.size, 4096):
            sl = slice(start, start + 4096)
            env = envelope(X[idx[sl]], dataset, state)
            merit[sl] = exploration_merit(env, ages[sl], state, config.delta, config.phi)
        winners = idx[np.flatnonzero(merit == merit.max())]
        return X[_lexi_pick(X, winners)].copy()

    diameter = float(np.sqrt(dataset.dimension))
    lb, ub = cache.merit_bounds(store, state, n, config.delta, config.phi, diameter)
    with np.errstate(invalid="ignore"):
        # pruned rows carry -inf and never survive
        rows = np.flatnonzero(_slack(ub) >= lb.max())
    cache.refresh(rows, X[rows], dataset, state)
    merit, _ = _merit_bounds(
        store.nearest[rows],
        (n - store.birth[rows]).astype(float),
        *cache.intervals(rows, state, diameter),
        state.rho,
        config.delta,
        config.phi,
    )
    winners = rows[np.flatnonzero(merit == merit.max())]
    return X[_lexi_pick(X, winners)].copy()


def update_trust(
    size: float,
    mode: str,
    feasible: bool,
    new_z: float,
    best_z: float,
    gamma: float,
    config: SolverConfig,
) -> float:
    """New trust-region size after a sample taken in ``mode``.

    ``best_z`` and ``gamma`` are the values in force when the sample was
    chosen.  Exploration or a non-improving exploitation shrinks the region
    (floored at ``tr_min``); a feasible exploitation beating the expected
    improvement threshold expands it (capped at ``tr_max``).
    """
    if mode == EXPLOIT and feasible and new_z <= best_z - config.alpha * gamma:
        return min(config.tr_max, size / config.tr_shrink)
    if mode != EXPLOIT or not feasible or new_z >= best_z:
        return max(config.tr_min, config.tr_shrink * size)
    return size


class Solver:
    """Ask/tell driver over a box search space given in problem units.

    >>> s = Solver([0.0, 0.0], [1.0, 1.0], 1, SolverConfig(L=16, budget=3))
    >>> x = s.ask()
    >>> rec = s.tell(float(sum(x)), [1.0])
    """

    def __init__(
        self,
        lower: Sequence[float],
        upper: Sequence[float],
        n_constraints: int,
        config: SolverConfig | None = None,
        x0: Sequence[float] | None = None,
    ):
        self.config = config or SolverConfig()
        self.lower = np.asarray(lower, dtype=float)
        self.upper = np.asarray(upper, dtype=float)
        if self.lower.shape != self.upper.shape or self.lower.ndim != 1:
            raise ValueError("lower and upper must be 1-D arrays of equal length")
        if not np.all(self.lower < self.upper):
            raise ValueError("box needs lower < upper on every axis")
        D = self.lower.shape[0]
        self.dimension = D
        self.n_constraints = n_constraints
        cfg = self.config
        self.dataset = Dataset(D, n_constraints)
        self.state = SurrogateState.initial(n_constraints, cfg.gamma_floor, cfg.rho_floor)
        self.store = seed_sobol(D, cfg.L, seed=cfg.seed, grid_divisor=cfg.B)
        self.cache = CandidateBounds(1 + n_constraints)
        self.trust: TrustRegion | None = None
        self.noise_radius = cfg.noise_radius if cfg.noise_radius is not None else 0.1 * math.sqrt(D)
        self.n = 0
        self.history: list[IterationRecord] = []

        if x0 is None:
            start = np.full(D, 0.5)
        else:
            start = self.normalize(np.asarray(x0, dtype=float))
            if np.any(start < 0.0) or np.any(start > 1.0):
                raise ValueError("starting point outside the search box")
        self._next = start
        self._next_mode = INITIAL

    def normalize(self, x: np.ndarray) -> np.ndarray:
        return (x - self.lower) / (self.upper - self.lower)

    def denormalize(self, u: np.ndarray) -> np.ndarray:
        return np.clip(self.lower + u * (self.upper - self.lower), self.lower, self.upper)

    def ask(self) -> np.ndarray:
        """Next test point in problem units."""
        return self.denormalize(self._next)

    @property
    def next_mode(self) -> str:
        return self._next_mode

    def tell(self, z: float, c: Sequence[float]) -> IterationRecord:
        """Ingest the evaluation of the last asked point and pick the next one."""
        t0 = time.perf_counter()
        cfg = self.config
        x = self._next
        mode = self._next_mode
        c = np.asarray(c, dtype=float).reshape(-1)
        prev_best = self.dataset.best
        prev_best_z = None if prev_best is None else float(self.dataset.z[prev_best])
        prev_gamma = self.state.gamma

        previous = self.dataset.x.copy()
        insert_sample(self.dataset, Sample(x, float(z), c))
        self.n += 1
        n = self.n
        prune_at(self.store, x)
        if n > 1:
            self.cache.add_sample(x, np.concatenate([[z], c]), self.store)
        add_from_sample(self.store, x, previous, n)

        if cfg.noisy:
            eps_f, eps_s = estimate_noise(self.dataset, self.noise_radius)
            self.state = replace(self.state, eps_f=eps_f, eps_s=eps_s)
        self.state = update_lipschitz(self.dataset, self.state, noisy=cfg.noisy)
        self.cache.sync(self.store, self.dataset, self.state)

        feasible = bool(np.all(c >= 0.0))
        best = self.dataset.best
        if best is not None:
            center = self.dataset.x[best].copy()
            if self.trust is None:
                self.trust = TrustRegion(center, cfg.tr_max)
            else:
                size = update_trust(self.trust.size, mode, feasible, float(z), prev_best_z, prev_gamma, cfg)
                self.trust = TrustRegion(center, size)

        self._choose_next()
        elapsed = 1000.0 * (time.perf_counter() - t0)
        record = IterationRecord(
            n=n,
            x=self.denormalize(x).tolist(),
            z=float(z),
            c=c.tolist(),
            mode=mode,
            feasible=feasible,
            z_best=None if best is None else float(self.dataset.z[best]),
            trust_size=None if self.trust is None else float(self.trust.size),
            gamma=float(self.state.gamma),
            rho=self.state.rho.tolist(),
            eps_f=float(self.state.eps_f),
            eps_s=np.asarray(self.state.eps_s).tolist(),
            elapsed_ms=elapsed,
        )
        self.history.append(record)
        return record

    def _choose_next(self) -> None:
        cfg = self.config
        if self.dataset.best is not None:
            tr = self.trust
            pts = self.store.x[rows_in_box(self.store, tr.center, tr.size)]
            if cfg.L:
                pts = np.vstack([pts, trust_fillers(tr.center, tr.size, cfg.L, cfg.seed, self.n)])
            picked = exploit(pts, self.dataset, self.state, cfg)
            if picked is not None:
                x_theta, f_lower = picked
                best_z = float(self.dataset.z[self.dataset.best])
                if improvement_test(f_lower, best_z, self.state.gamma, cfg.alpha):
                    self._next, self._next_mode = x_theta, EXPLOIT
                    return
        self._next = explore(self.store, self.dataset, self.state, cfg, self.n, self.cache)
        self._next_mode = EXPLORE

    def result(self) -> RunResult:
        b = self.dataset.best
        if b is None:
            return RunResult(self.history, None, None, None)
        return RunResult(
            self.history,
            self.denormalize(self.dataset.x[b]),
            float(self.dataset.z[b]),
            self.dataset.c[b].copy(),
        )


Evaluator = Callable[[np.ndarray, int], tuple[float, Sequence[float]]]


def run(
    evaluate: Evaluator,
    lower: Sequence[float],
    upper: Sequence[float],
    n_constraints: int,
    config: SolverConfig | None = None,
    x0: Sequence[float] | None = None,
    sink: Callable[[IterationRecord], None] | None = None,
) -> RunResult:
    """Run ``config.budget`` iterations against ``evaluate(x, n) -> (z, c)``.

    ``n`` is the 1-based iteration index, useful for seeded noise draws.
    Evaluation errors and non-finite results raise :class:`EvaluationError`
    with the history collected so far.
    """
    solver = Solver(lower, upper, n_constraints, config, x0)
    for n in range(1, solver.config.budget + 1):
        x = solver.ask()
        try:
            z, c = evaluate(x, n)
            z = float(z)
            c = np.asarray(c, dtype=float).reshape(-1)
        except Exception as exc:
            raise EvaluationError(f"evaluation failed at iteration {n}: {exc}", solver.history) from exc
        if not (np.isfinite(z) and np.all(np.isfinite(c))):
            raise EvaluationError(f"non-finite evaluation at iteration {n}", solver.history)
        if c.shape[0] != n_constraints:
            raise EvaluationError(f"expected {n_constraints} constraint values, got {c.shape[0]}", solver.history)
        record = solver.tell(z, c)
        if sink is not None:
            sink(record)
    return solver.result()
