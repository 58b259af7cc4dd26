"""Candidate point set for exploitation and exploration.

Candidates are generated cumulatively from every new sample (axis rays and
segment gridding towards previous samples), on top of an optional Sobol seed
set.  Each candidate remembers the iteration it was created at, so that its
age can be rewarded by the exploration merit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np
from scipy.stats import qmc

DUPLICATE_TOL = 1e-9


def _key(p: np.ndarray) -> bytes:
    return np.round(p / DUPLICATE_TOL).astype(np.int64).tobytes()


def sobol_points(dimension: int, count: int, seed) -> np.ndarray:
    """First ``count`` points of a scrambled, seeded Sobol sequence."""
    if dimension < 1:
        raise ValueError("dimension must be >= 1")
    if count <= 0:
        return np.empty((0, dimension))
    engine = qmc.Sobol(dimension, scramble=True, rng=np.random.default_rng(seed))
    m = int(np.ceil(np.log2(count)))
    return engine.random_base2(m)[:count]


@dataclass(frozen=True)
class Candidate:
    x: np.ndarray
    birth: int


class CandidateStore:
    """Growing candidate set with birth iterations and nearest-sample distances.

    Removed candidates are masked out rather than deleted; ``active`` gives the
    indices of live entries.  ``nearest[i]`` is the distance from candidate
    ``i`` to the closest sample seen so far (``inf`` before any sample).
    """

    def __init__(self, dimension: int, grid_divisor: int = 5, sobol_seed: int = 0, prune: bool = True):
        if dimension < 1:
            raise ValueError("dimension must be >= 1")
        if grid_divisor < 2:
            raise ValueError("grid divisor B must be >= 2")
        self.dimension = dimension
        self.grid_divisor = grid_divisor
        self.sobol_seed = sobol_seed
        self.prune = prune
        cap = 1024
        self._x = np.empty((cap, dimension))
        self._birth = np.empty(cap, dtype=np.int64)
        self._alive = np.zeros(cap, dtype=bool)
        self._nearest = np.empty(cap)
        self.size = 0
        self._index: dict[bytes, int] = {}
        self._blocked: set[bytes] = set()

    def __len__(self) -> int:
        return int(np.count_nonzero(self._alive[: self.size]))

    @property
    def x(self) -> np.ndarray:
        return self._x[: self.size]

    @property
    def birth(self) -> np.ndarray:
        return self._birth[: self.size]

    @property
    def alive(self) -> np.ndarray:
        return self._alive[: self.size]

    @property
    def nearest(self) -> np.ndarray:
        return self._nearest[: self.size]

    def active(self) -> np.ndarray:
        return np.flatnonzero(self.alive)

    def candidates(self) -> list[Candidate]:
        return [Candidate(self._x[i].copy(), int(self._birth[i])) for i in self.active()]

    def ages(self, n: int) -> np.ndarray:
        return n - self.birth

    def _reserve(self, extra: int) -> None:
        need = self.size + extra
        cap = self._x.shape[0]
        if need <= cap:
            return
        while cap < need:
            cap *= 2
        for name in ("_x", "_birth", "_alive", "_nearest"):
            old = getattr(self, name)
            new = np.zeros((cap,) + old.shape[1:], dtype=old.dtype)
            new[: self.size] = old[: self.size]
            setattr(self, name, new)

    def _extend(self, points: np.ndarray, birth: int, nearest: np.ndarray) -> int:
        """Append points not already present; returns the number added."""
        keep = []
        q = np.round(points / DUPLICATE_TOL).astype(np.int64)
        for j, row in enumerate(q):
            k = row.tobytes()
            if k in self._index or k in self._blocked:
                continue
            self._index[k] = self.size + len(keep)
            keep.append(j)
        if not keep:
            return 0
        self._reserve(len(keep))
        sl = slice(self.size, self.size + len(keep))
        self._x[sl] = points[keep]
        self._birth[sl] = birth
        self._alive[sl] = True
        self._nearest[sl] = nearest[keep]
        self.size += len(keep)
        return len(keep)


def seed_sobol(dimension: int, count: int, seed: int = 0, grid_divisor: int = 5, prune: bool = True) -> CandidateStore:
    """New store holding the first ``count`` Sobol points, born at iteration 0."""
    if count < 0:
        raise ValueError("count must be >= 0")
    store = CandidateStore(dimension, grid_divisor=grid_divisor, sobol_seed=seed, prune=prune)
    pts = sobol_points(dimension, count, seed)
    store._extend(pts, 0, np.full(len(pts), np.inf))
    return store


def generated_points(x_new: np.ndarray, previous: np.ndarray, grid_divisor: int) -> np.ndarray:
    """Axis-ray and segment grid points stemming from ``x_new``.

    Along each coordinate direction the ray runs to the unit-box boundary and
    is gridded at fractions ``k/B``; directions with zero reach are skipped.
    Towards every previous sample the connecting segment is gridded likewise.
    """
    D = x_new.shape[0]
    fracs = np.arange(1, grid_divisor) / grid_divisor
    blocks = []
    for d in range(D):
        for sign, reach in ((1.0, 1.0 - x_new[d]), (-1.0, x_new[d])):
            if reach <= 0.0:
                continue
            pts = np.repeat(x_new[None, :], fracs.size, axis=0)
            pts[:, d] += sign * fracs * reach
            blocks.append(pts)
    if len(previous):
        seg = x_new[None, None, :] + fracs[None, :, None] * (previous[:, None, :] - x_new[None, None, :])
        blocks.append(seg.reshape(-1, D))
    if not blocks:
        return np.empty((0, D))
    return np.clip(np.concatenate(blocks), 0.0, 1.0)


def add_from_sample(store: CandidateStore, x_new: np.ndarray, previous: np.ndarray, n: int) -> CandidateStore:
    """Add the candidates generated by sample ``x_new`` at iteration ``n``.

    ``previous`` holds the earlier sample locations (shape ``(n-1, D)``).
    Nearest-sample distances of existing candidates are refreshed as well.
    """
    x_new = np.asarray(x_new, dtype=float)
    if x_new.shape != (store.dimension,):
        raise ValueError("x_new has the wrong dimension")
    if np.any(x_new < 0.0) or np.any(x_new > 1.0):
        raise ValueError("x_new outside the unit box")
    previous = np.asarray(previous, dtype=float).reshape(-1, store.dimension)

    if store.size:
        _nearest_update(store._nearest, store._x, store.size, x_new[None, :])

    pts = generated_points(x_new, previous, store.grid_divisor)
    if len(pts):
        near = np.full(len(pts), np.inf)
        _nearest_update(near, pts, len(pts), np.vstack([previous, x_new[None, :]]))
        store._extend(pts, n, near)
    return store


def rows_in_box(store: CandidateStore, center: np.ndarray, size: float) -> np.ndarray:
    """Indices of live candidates with ``|x - center|_inf <= size``."""
    mask = np.zeros(store.size, dtype=np.bool_)
    _in_box(store._x, store._alive, store.size, np.asarray(center, dtype=float), float(size), mask)
    return np.flatnonzero(mask)


def prune_at(store: CandidateStore, x: np.ndarray) -> CandidateStore:
    """Remove the candidate coinciding with ``x`` (no-op if there is none).

    With pruning enabled the location is also blocked from future generation.
    """
    k = _key(np.asarray(x, dtype=float))
    i = store._index.pop(k, None)
    if i is not None:
        store._alive[i] = False
    if store.prune:
        store._blocked.add(k)
    return store


def trust_fillers(center: np.ndarray, size: float, count: int, seed: int, iteration: int) -> np.ndarray:
    """Sobol filler points inside the box ``|x - center|_inf <= size`` clipped to the unit cube.

    The unit pattern depends only on ``(seed, iteration)`` and is mapped
    affinely onto the intersection box, so changing ``size`` rescales the
    pattern about ``center`` wherever the box is not clipped.
    """
    if size <= 0:
        raise ValueError("trust region size must be positive")
    center = np.asarray(center, dtype=float)
    u = sobol_points(center.shape[0], count, [seed, iteration])
    lo = np.maximum(center - size, 0.0)
    hi = np.minimum(center + size, 1.0)
    return lo + u * (hi - lo)


@numba.njit(cache=True)
def _nearest_update(nearest, X, m, samples):
    D = X.shape[1]
    for i in range(m):
        best = nearest[i]
        for k in range(samples.shape[0]):
            acc = 0.0
            for j in range(D):
                t = X[i, j] - samples[k, j]
                acc += t * t
            if acc < best * best:
                best = np.sqrt(acc)
        nearest[i] = best


@numba.njit(cache=True)
def _in_box(X, alive, m, center, size, out):
    D = X.shape[1]
    for i in range(m):
        if not alive[i]:
            continue
        ok = True
        for j in range(D):
            if abs(X[i, j] - center[j]) > size:
                ok = False
                break
        out[i] = ok
