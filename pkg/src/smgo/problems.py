"""Benchmark problems in the ``g(x) >= 0`` constraint convention.

Sources state several constraints as ``g(x) <= 0``; those are negated here
so that every returned constraint value is satisfied when non-negative.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

Evaluator = Callable[[np.ndarray], tuple[float, np.ndarray]]


@dataclass(frozen=True)
class NoiseSpec:
    """Bounded uniform additive disturbances on objective and constraints."""

    amp_f: float = 0.0
    amp_s: tuple[float, ...] = ()
    seed: int = 0

    def __post_init__(self):
        if self.amp_f < 0 or any(a < 0 for a in self.amp_s):
            raise ValueError("noise amplitudes must be non-negative")


@dataclass(frozen=True)
class ProblemSpec:
    name: str
    dimension: int
    n_constraints: int
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    evaluator: Evaluator = field(repr=False)
    known_optimum: float | None = None
    start: tuple[float, ...] | None = None
    noise: NoiseSpec | None = None
    description: str = ""

    @property
    def box(self) -> list[tuple[float, float]]:
        return list(zip(self.lower, self.upper))


def _in_box(problem: ProblemSpec, x: np.ndarray) -> bool:
    lo = np.asarray(problem.lower)
    hi = np.asarray(problem.upper)
    tol = 1e-12 * (hi - lo)
    return bool(np.all(x >= lo - tol) and np.all(x <= hi + tol))


def evaluate(problem: ProblemSpec, x) -> tuple[float, np.ndarray]:
    """Exact objective and constraint values at ``x`` (problem units)."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != problem.dimension:
        raise ValueError(f"{problem.name} expects {problem.dimension} coordinates, got {x.shape[0]}")
    if not _in_box(problem, x):
        raise ValueError(f"point {x.tolist()} outside the {problem.name} box")
    z, c = problem.evaluator(x)
    z = float(z)
    c = np.asarray(c, dtype=float).reshape(-1)
    if not (np.isfinite(z) and np.all(np.isfinite(c))):
        raise FloatingPointError(f"{problem.name} returned non-finite values at {x.tolist()}")
    return z, c


def evaluate_noisy(problem: ProblemSpec, x, noise: NoiseSpec, index: int) -> tuple[float, np.ndarray]:
    """Exact values plus uniform disturbances drawn from ``(noise.seed, index)``."""
    z, c = evaluate(problem, x)
    amp_s = np.broadcast_to(np.asarray(noise.amp_s if noise.amp_s else 0.0, dtype=float), c.shape)
    rng = np.random.default_rng([noise.seed, index])
    e = rng.uniform(-1.0, 1.0, size=1 + c.shape[0])
    return z + noise.amp_f * e[0], c + amp_s * e[1:]


# -- problem definitions -----------------------------------------------------


def _g04(x):
    x1, x2, x3, x4, x5 = x
    f = 5.3578547 * x3**2 + 0.8356891 * x1 * x5 + 37.293239 * x1 - 40792.141
    u = 85.334407 + 0.0056858 * x2 * x5 + 0.0006262 * x1 * x4 - 0.0022053 * x3 * x5
    v = 80.51249 + 0.0071317 * x2 * x5 + 0.0029955 * x1 * x2 + 0.0021813 * x3**2
    w = 9.300961 + 0.0047026 * x3 * x5 + 0.0012547 * x1 * x3 + 0.0019085 * x3 * x4
    g = [u - 92.0, -u, v - 110.0, -v + 90.0, w - 25.0, -w + 20.0]
    return f, -np.array(g)


def _g05mod(x):
    x1, x2, x3, x4 = x
    f = 3 * x1 + 0.000001 * x1**3 + 2 * x2 + (0.000002 / 3) * x2**3
    g = [
        x3 - x4 - 0.55,
        x4 - x3 - 0.55,
        1000 * np.sin(-x3 - 0.25) + 1000 * np.sin(-x4 - 0.25) + 894.8 - x1,
        1000 * np.sin(x3 - 0.25) + 1000 * np.sin(x3 - x4 - 0.25) + 894.8 - x2,
        1000 * np.sin(x4 - 0.25) + 1000 * np.sin(x4 - x3 - 0.25) + 1294.8,
    ]
    return f, -np.array(g)


def _g08(x):
    x1, x2 = x
    # sin^3(2 pi x1) / x1^3 written through sinc so that x1 = 0 takes its limit
    s = (2 * np.pi * np.sinc(2 * x1)) ** 3
    if x1 + x2 > 0:
        f = -s * np.sin(2 * np.pi * x2) / (x1 + x2)
    else:
        f = -s * 2 * np.pi
    g = [x1**2 - x2 + 1, 1 - x1 + (x2 - 4) ** 2]
    return f, -np.array(g)


def _g09(x):
    x1, x2, x3, x4, x5, x6, x7 = x
    f = (
        (x1 - 10) ** 2
        + 5 * (x2 - 12) ** 2
        + x3**4
        + 3 * (x4 - 11) ** 2
        + 10 * x5**6
        + 7 * x6**2
        + x7**4
        - 4 * x6 * x7
        - 10 * x6
        - 8 * x7
    )
    g = [
        -127 + 2 * x1**2 + 3 * x2**4 + x3 + 4 * x4**2 + 5 * x5,
        -282 + 7 * x1 + 3 * x2 + 10 * x3**2 + x4 - x5,
        -196 + 23 * x1 + x2**2 + 6 * x6**2 - 8 * x7,
        4 * x1**2 + x2**2 - 3 * x1 * x2 + 2 * x3**2 + 5 * x6 - 11 * x7,
    ]
    return f, -np.array(g)


def g12_ball_distance2(x: np.ndarray) -> float:
    """Squared distance from ``x`` to the nearest node of the {1..9}^3 grid."""
    node = np.clip(np.round(x), 1, 9)
    return float(np.sum((x - node) ** 2))


def _g12(x):
    f = -(100 - np.sum((x - 5) ** 2)) / 100
    return f, np.array([0.0625 - g12_ball_distance2(x)])


def _g23mod(x):
    x1, x2, x3, x4, x5, x6, x7, x8, x9 = x
    f = -9 * x5 - 15 * x8 + 6 * x1 + 16 * x2 + 10 * (x6 + x7)
    g = [x9 * x3 + 0.02 * x6 - 0.025 * x5, x9 * x4 + 0.02 * x7 - 0.015 * x8]
    return f, -np.array(g)


def _g24(x):
    x1, x2 = x
    f = -x1 - x2
    g = [
        -2 * x1**4 + 8 * x1**3 - 8 * x1**2 + x2 - 2,
        -4 * x1**4 + 32 * x1**3 - 88 * x1**2 + 96 * x1 + x2 - 36,
    ]
    return f, -np.array(g)


def _t1(x):
    x1, x2 = x
    f = x1 + x2
    c = [
        0.5 * np.sin(2 * np.pi * (x1**2 - 2 * x2)) + x1 + 2 * x2 - 1.5,
        -(x1**2) - x2**2 + 1.5,
    ]
    return f, np.array(c)


def _t2(x):
    x1, x2 = x
    return np.sin(x1) + x2, -np.array([np.sin(x1) * np.sin(x2) + 0.95])


def _t3(x):
    x1, x2 = x
    f = np.cos(2 * x1) * np.cos(x2) + np.sin(x1)
    g = np.cos(x1) * np.cos(x2) - np.sin(x1) * np.sin(x2) - 0.5
    return f, -np.array([g])


STYBLINSKI_CONE_CENTER = np.array([-2.90, 2.90])
STYBLINSKI_RIPPLE_CENTER = np.array([-2.90, -2.90])


def _styblinski2d(x):
    f = 0.5 * np.sum(x**4 - 16 * x**2 + 5 * x) + 80
    g1 = -4 + np.linalg.norm(x - STYBLINSKI_CONE_CENTER)
    g2 = np.cos(2 * np.linalg.norm(x - STYBLINSKI_RIPPLE_CENTER))
    return f, np.array([g1, g2])


_PROBLEMS = [
    ProblemSpec("G04", 5, 6, (78, 33, 27, 27, 27), (102, 45, 45, 45, 45), _g04, -3.0665e04),
    ProblemSpec("G05MOD", 4, 5, (0, 0, -0.55, -0.55), (1200, 1200, 0.55, 0.55), _g05mod, 5.1265e03),
    ProblemSpec("G08", 2, 2, (0, 0), (10, 10), _g08, -0.0958),
    ProblemSpec("G09", 7, 4, (-10,) * 7, (10,) * 7, _g09, 680.6301),
    ProblemSpec("G12", 3, 1, (0, 0, 0), (9, 9, 9), _g12, -1.0),
    ProblemSpec(
        "G23MOD",
        9,
        2,
        (0, 0, 0, 0, 0, 0, 0, 0, 0.01),
        (300, 300, 100, 200, 100, 300, 100, 200, 0.03),
        _g23mod,
        None,
    ),
    ProblemSpec("G24", 2, 2, (0, 0), (3, 4), _g24, -5.5080),
    ProblemSpec("T1", 2, 2, (0, 0), (1, 1), _t1, None),
    ProblemSpec("T2", 2, 1, (0, 0), (6, 6), _t2, None),
    ProblemSpec("T3", 2, 1, (0, 0), (6, 6), _t3, None),
    ProblemSpec(
        "styblinski2d",
        2,
        2,
        (-5, -5),
        (5, 5),
        _styblinski2d,
        # constrained minimizer (-2.9035, -2.9035) lies inside the central ripple disc
        1.6676685924571,
        start=(0.4775, 0.0667),
        noise=NoiseSpec(0.25, (0.1, 0.05)),
        description="Styblinski-Tang with offset, cone and ripple constraints",
    ),
]

_BY_NAME = {p.name.lower(): p for p in _PROBLEMS}


def registry() -> list[ProblemSpec]:
    return list(_PROBLEMS)


def get_problem(name: str) -> ProblemSpec:
    try:
        return _BY_NAME[name.lower()]
    except KeyError:
        raise KeyError(f"unknown problem {name!r}; choose from {', '.join(p.name for p in _PROBLEMS)}") from None
