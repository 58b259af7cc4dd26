"""Set Membership surrogate: sample storage, Lipschitz cones and noise bounds.

All geometry is expressed in normalized coordinates, i.e. every sample
location lies in the unit hypercube ``[0, 1]^D``.  Objective and constraint
values stay in problem units.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial.distance import cdist

DEFAULT_FLOOR = 1e-6


@dataclass(frozen=True)
class Sample:
    """One tested point: location ``x``, objective ``z`` and constraints ``c``.

    A constraint is satisfied when its value is ``>= 0``.
    """

    x: np.ndarray
    z: float
    c: np.ndarray

    @property
    def feasible(self) -> bool:
        return bool(np.all(self.c >= 0.0))


@dataclass(frozen=True)
class BoundsEval:
    lower: float
    upper: float
    central: float
    uncertainty: float

    @classmethod
    def from_bounds(cls, lower: float, upper: float) -> "BoundsEval":
        return cls(float(lower), float(upper), 0.5 * (upper + lower), float(upper - lower))


class Dataset:
    """Growing collection of samples with best-feasible-point tracking.

    Storage is a set of preallocated numpy buffers that double when full, so
    that the ``x``, ``z`` and ``c`` views are cheap to hand to vectorized
    bound computations.
    """

    def __init__(self, dimension: int, n_constraints: int, capacity: int = 64):
        if dimension < 1:
            raise ValueError("dimension must be >= 1")
        if n_constraints < 0:
            raise ValueError("n_constraints must be >= 0")
        self.dimension = dimension
        self.n_constraints = n_constraints
        self._x = np.empty((capacity, dimension))
        self._z = np.empty(capacity)
        self._c = np.empty((capacity, n_constraints))
        self.size = 0
        self.best: int | None = None

    def __len__(self) -> int:
        return self.size

    @property
    def x(self) -> np.ndarray:
        return self._x[: self.size]

    @property
    def z(self) -> np.ndarray:
        return self._z[: self.size]

    @property
    def c(self) -> np.ndarray:
        return self._c[: self.size]

    def sample(self, i: int) -> Sample:
        return Sample(self._x[i].copy(), float(self._z[i]), self._c[i].copy())

    @property
    def best_sample(self) -> Sample | None:
        return None if self.best is None else self.sample(self.best)

    @property
    def feasible_mask(self) -> np.ndarray:
        return np.all(self.c >= 0.0, axis=1)

    def _grow(self) -> None:
        cap = 2 * self._x.shape[0]
        for name in ("_x", "_z", "_c"):
            old = getattr(self, name)
            new = np.empty((cap,) + old.shape[1:])
            new[: self.size] = old[: self.size]
            setattr(self, name, new)

    def _append(self, x: np.ndarray, z: float, c: np.ndarray) -> int:
        if self.size == self._x.shape[0]:
            self._grow()
        i = self.size
        self._x[i] = x
        self._z[i] = z
        self._c[i] = c
        self.size += 1
        return i


def _is_better(x_new: np.ndarray, z_new: float, x_old: np.ndarray, z_old: float) -> bool:
    if z_new != z_old:
        return z_new < z_old
    return tuple(x_new) < tuple(x_old)


def insert_sample(dataset: Dataset, sample: Sample) -> Dataset:
    """Append ``sample`` and refresh the best feasible index in place.

    Ties on the objective are broken by lexicographic order of ``x``.
    """
    x = np.asarray(sample.x, dtype=float).reshape(-1)
    c = np.asarray(sample.c, dtype=float).reshape(-1)
    z = float(sample.z)
    if x.shape[0] != dataset.dimension:
        raise ValueError(f"sample has dimension {x.shape[0]}, dataset expects {dataset.dimension}")
    if c.shape[0] != dataset.n_constraints:
        raise ValueError(f"sample has {c.shape[0]} constraints, dataset expects {dataset.n_constraints}")
    if not (np.all(np.isfinite(x)) and np.isfinite(z) and np.all(np.isfinite(c))):
        raise ValueError("sample contains non-finite values")
    if np.any(x < 0.0) or np.any(x > 1.0):
        raise ValueError("sample location outside the unit box")

    i = dataset._append(x, z, c)
    if np.all(c >= 0.0):
        b = dataset.best
        if b is None or _is_better(x, z, dataset._x[b], dataset._z[b]):
            dataset.best = i
    return dataset


@dataclass(frozen=True)
class SurrogateState:
    """Lipschitz constant and noise-bound estimates for the current dataset."""

    gamma: float
    rho: np.ndarray
    eps_f: float = 0.0
    eps_s: np.ndarray = field(default_factory=lambda: np.zeros(0))
    gamma_floor: float = DEFAULT_FLOOR
    rho_floor: np.ndarray = field(default_factory=lambda: np.zeros(0))
    # number of samples already folded into the incremental (noiseless) maxima
    n_seen: int = 0

    @classmethod
    def initial(
        cls,
        n_constraints: int,
        gamma_floor: float = DEFAULT_FLOOR,
        rho_floor: float | np.ndarray = DEFAULT_FLOOR,
    ) -> "SurrogateState":
        rho_floor = np.broadcast_to(np.asarray(rho_floor, dtype=float), (n_constraints,)).copy()
        if gamma_floor <= 0 or np.any(rho_floor <= 0):
            raise ValueError("Lipschitz floors must be positive")
        return cls(
            gamma=float(gamma_floor),
            rho=rho_floor.copy(),
            eps_f=0.0,
            eps_s=np.zeros(n_constraints),
            gamma_floor=float(gamma_floor),
            rho_floor=rho_floor,
        )


def estimate_noise(
    dataset: Dataset, radius: float, max_radius: float | None = None
) -> tuple[float, np.ndarray]:
    """Estimate additive noise bounds from local value spreads.

    For every sample, the spread is the largest absolute value difference to
    any sample within ``radius`` (itself included); the estimate is the mean
    spread.  When no sample has a neighbour inside ``radius`` the radius is
    doubled, up to ``max_radius`` (default: the unit-box diameter).
    """
    n = len(dataset)
    if n == 0:
        raise ValueError("cannot estimate noise on an empty dataset")
    if radius <= 0:
        raise ValueError("radius must be positive")
    if max_radius is None:
        max_radius = float(np.sqrt(dataset.dimension))
    S = dataset.n_constraints
    if n == 1:
        return 0.0, np.zeros(S)

    dist = cdist(dataset.x, dataset.x)
    np.fill_diagonal(dist, 0.0)
    off_diag = dist + np.diag(np.full(n, np.inf))
    r = radius
    while not np.any(off_diag <= r) and r < max_radius:
        r = min(2.0 * r, max_radius)
    near = dist <= r

    def spread(v: np.ndarray) -> float:
        diff = np.abs(v[:, None] - v[None, :])
        return float(np.mean(np.max(np.where(near, diff, 0.0), axis=1)))

    eps_f = spread(dataset.z)
    eps_s = np.array([spread(dataset.c[:, s]) for s in range(S)])
    return eps_f, eps_s


def _max_quotient(values: np.ndarray, dist: np.ndarray, eps: float, floor: float) -> float:
    """Largest noise-deflated difference quotient over the given pairs."""
    if values.size == 0:
        return floor
    diff = np.abs(values)
    keep = (dist > 0.0) & (diff >= 2.0 * eps)
    if not np.any(keep):
        return floor
    q = (diff[keep] - 2.0 * eps) / dist[keep]
    return max(float(np.max(q)), floor)


def update_lipschitz(dataset: Dataset, state: SurrogateState, noisy: bool = False) -> SurrogateState:
    """Refresh the Lipschitz estimates from the dataset.

    Noiseless: incremental, only pairs involving samples not yet seen are
    scanned and the estimates never decrease.  Noisy: every pair is rescanned
    with differences deflated by twice the current noise estimates, and
    pairs whose difference is within the noise band contribute only the floor.
    Coincident pairs are always skipped.
    """
    n = len(dataset)
    S = dataset.n_constraints
    X, Z, C = dataset.x, dataset.z, dataset.c

    if noisy:
        if n < 2:
            return replace(state, gamma=state.gamma_floor, rho=state.rho_floor.copy(), n_seen=n)
        iu, ju = np.triu_indices(n, k=1)
        dist = np.linalg.norm(X[iu] - X[ju], axis=1)
        gamma = _max_quotient(Z[iu] - Z[ju], dist, state.eps_f, state.gamma_floor)
        rho = np.array(
            [
                _max_quotient(C[iu, s] - C[ju, s], dist, state.eps_s[s], state.rho_floor[s])
                for s in range(S)
            ]
        )
        return replace(state, gamma=gamma, rho=rho, n_seen=n)

    gamma = state.gamma
    rho = state.rho.copy()
    for i in range(state.n_seen, n):
        if i == 0:
            continue
        dist = np.linalg.norm(X[:i] - X[i], axis=1)
        gamma = max(gamma, _max_quotient(Z[:i] - Z[i], dist, 0.0, state.gamma_floor))
        for s in range(S):
            rho[s] = max(rho[s], _max_quotient(C[:i, s] - C[i, s], dist, 0.0, state.rho_floor[s]))
    return replace(state, gamma=gamma, rho=rho, n_seen=n)


@dataclass
class Envelope:
    """Vectorized bounds at ``m`` query points.

    ``f_upper``/``f_lower`` have shape ``(m,)``; ``g_upper``/``g_lower`` have
    shape ``(m, S)``.  ``nearest`` is the distance to the closest sample.
    """

    f_upper: np.ndarray
    f_lower: np.ndarray
    g_upper: np.ndarray
    g_lower: np.ndarray
    nearest: np.ndarray

    @property
    def f_central(self) -> np.ndarray:
        return 0.5 * (self.f_upper + self.f_lower)

    @property
    def f_uncertainty(self) -> np.ndarray:
        return self.f_upper - self.f_lower

    @property
    def g_central(self) -> np.ndarray:
        return 0.5 * (self.g_upper + self.g_lower)

    @property
    def g_uncertainty(self) -> np.ndarray:
        return self.g_upper - self.g_lower


def envelope(points: np.ndarray, dataset: Dataset, state: SurrogateState) -> Envelope:
    """Cone bounds for the objective and every constraint at many points."""
    if len(dataset) == 0:
        raise ValueError("bounds need at least one sample")
    P = np.atleast_2d(np.asarray(points, dtype=float))
    d = cdist(P, dataset.x)
    cone = state.gamma * d
    f_up = np.min(dataset.z + cone, axis=1) + state.eps_f
    f_lo = np.max(dataset.z - cone, axis=1) - state.eps_f
    S = dataset.n_constraints
    g_up = np.empty((P.shape[0], S))
    g_lo = np.empty((P.shape[0], S))
    for s in range(S):
        cone = state.rho[s] * d
        cs = dataset.c[:, s]
        g_up[:, s] = np.min(cs + cone, axis=1) + state.eps_s[s]
        g_lo[:, s] = np.max(cs - cone, axis=1) - state.eps_s[s]
    # at a sampled location the zero-distance cone is exact; other cones may
    # undercut it by a rounding step when gamma is attained by that very pair
    for r, k in zip(*np.nonzero(d == 0.0)):
        f_up[r] = max(f_up[r], dataset.z[k] + state.eps_f)
        f_lo[r] = min(f_lo[r], dataset.z[k] - state.eps_f)
        g_up[r] = np.maximum(g_up[r], dataset.c[k] + state.eps_s)
        g_lo[r] = np.minimum(g_lo[r], dataset.c[k] - state.eps_s)
    # same rounding issue on segments between the extremal pair
    np.maximum(f_up, f_lo, out=f_up)
    np.maximum(g_up, g_lo, out=g_up)
    return Envelope(f_up, f_lo, g_up, g_lo, np.min(d, axis=1))


def objective_bounds(x: np.ndarray, dataset: Dataset, state: SurrogateState) -> BoundsEval:
    env = envelope(np.asarray(x, dtype=float)[None, :], dataset, state)
    return BoundsEval.from_bounds(env.f_lower[0], env.f_upper[0])


def constraint_bounds(x: np.ndarray, dataset: Dataset, state: SurrogateState) -> list[BoundsEval]:
    env = envelope(np.asarray(x, dtype=float)[None, :], dataset, state)
    return [BoundsEval.from_bounds(env.g_lower[0, s], env.g_upper[0, s]) for s in range(dataset.n_constraints)]


def blended_feasible(g_central: np.ndarray, g_lower: np.ndarray, delta: float) -> np.ndarray:
    """Row-wise risk-blended feasibility test over ``(m, S)`` arrays."""
    blend = delta * g_central + (1.0 - delta) * g_lower
    return np.all(blend >= 0.0, axis=-1)


def delta_feasible(bounds: list[BoundsEval], delta: float) -> bool:
    """True iff ``delta*central + (1-delta)*lower >= 0`` for every constraint."""
    if not 0.0 <= delta <= 1.0:
        raise ValueError("delta must lie in [0, 1]")
    return all(delta * b.central + (1.0 - delta) * b.lower >= 0.0 for b in bounds)
