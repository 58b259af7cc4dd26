"""Incremental cone-bound cache over the candidate store.

For every candidate and every modelled function (objective first, then the
constraints) the cache keeps the upper and lower cone envelopes evaluated at
the Lipschitz constant in force when the entry was last refreshed, together
with the distance to the sample attaining each envelope.  New samples are
folded in at the cached constants in O(|E|), which keeps every entry exact at
its own constant.  When the current constant differs, the stored argmin
distance gives a rigorous interval for the current envelope, used to prune
the exploration search before exact re-evaluation.

Noise bounds are not stored; they are added when intervals are produced.
"""

from __future__ import annotations

import numba
import numpy as np

from .candidates import CandidateStore
from .surrogate import Dataset, SurrogateState

def _values(dataset: Dataset) -> np.ndarray:
    return np.column_stack([dataset.z, dataset.c])


def _constants(state: SurrogateState) -> np.ndarray:
    return np.concatenate([[state.gamma], state.rho])


def _noise(state: SurrogateState) -> np.ndarray:
    return np.concatenate([[state.eps_f], np.asarray(state.eps_s, dtype=float)])


class CandidateBounds:
    def __init__(self, n_functions: int):
        self.F = n_functions
        self.size = 0
        cap = 1024
        self.upper = np.empty((cap, n_functions))
        self.d_upper = np.empty((cap, n_functions))
        self.lower = np.empty((cap, n_functions))
        self.d_lower = np.empty((cap, n_functions))
        self.const = np.empty((cap, n_functions))

    def _reserve(self, need: int) -> None:
        cap = self.upper.shape[0]
        if need <= cap:
            return
        while cap < need:
            cap *= 2
        for name in ("upper", "d_upper", "lower", "d_lower", "const"):
            old = getattr(self, name)
            new = np.empty((cap, self.F))
            new[: self.size] = old[: self.size]
            setattr(self, name, new)

    def refresh(self, rows: np.ndarray, points: np.ndarray, dataset: Dataset, state: SurrogateState) -> None:
        """Exact envelopes (without noise) at ``points``, stored into ``rows``."""
        if rows.size:
            _refresh_kernel(
                np.ascontiguousarray(points, dtype=float), rows, dataset.x, _values(dataset), _constants(state),
                self.upper, self.d_upper, self.lower, self.d_lower, self.const,
            )

    def add_sample(self, x_new: np.ndarray, values: np.ndarray, store: CandidateStore) -> None:
        """Fold a new sample into every existing entry at its cached constant."""
        if self.size:
            _fold_sample(
                store.x, np.asarray(x_new, dtype=float), np.asarray(values, dtype=float), self.size,
                self.const, self.upper, self.d_upper, self.lower, self.d_lower,
            )

    def sync(self, store: CandidateStore, dataset: Dataset, state: SurrogateState) -> None:
        """Create exact entries for candidates appended to the store since last sync."""
        if store.size == self.size:
            return
        self._reserve(store.size)
        rows = np.arange(self.size, store.size)
        self.size = store.size
        self.refresh(rows, store.x[rows], dataset, state)

    def intervals(self, rows: np.ndarray, state: SurrogateState, diameter: float):
        """Bracketing intervals of the current upper and lower envelopes.

        Returns ``(up_lo, up_hi, lo_lo, lo_hi)``, each of shape ``(len(rows), F)``,
        with noise bounds already applied.
        """
        C = _constants(state)
        eps = _noise(state)
        diff = C - self.const[rows]
        neg = np.minimum(diff, 0.0) * diameter
        U = self.upper[rows]
        Lw = self.lower[rows]
        up_lo = U + neg + eps
        up_hi = U + diff * self.d_upper[rows] + eps
        lo_lo = Lw - diff * self.d_lower[rows] - eps
        lo_hi = Lw - neg - eps
        # mirrors the rounding repair upper = max(upper, lower) of the exact envelope
        return np.maximum(up_lo, lo_lo), np.maximum(up_hi, lo_hi), lo_lo, lo_hi

    def merit_bounds(
        self,
        store: CandidateStore,
        state: SurrogateState,
        n: int,
        delta: float,
        phi: float,
        diameter: float,
    ) -> tuple[np.ndarray, np.ndarray]:
        """Exploration-merit brackets for every stored candidate (``-inf`` if pruned)."""
        m = self.size
        lb = np.empty(m)
        ub = np.empty(m)
        _merit_kernel(
            store.alive, store.nearest, store.birth, n,
            self.const, self.upper, self.d_upper, self.lower, self.d_lower,
            _constants(state), _noise(state), diameter, delta, phi, lb, ub,
        )
        return lb, ub


@numba.njit(cache=True)
def _refresh_kernel(points, rows, X, V, C, upper, d_upper, lower, d_lower, const):
    n, D = X.shape
    F = C.shape[0]
    for r in range(rows.shape[0]):
        i = rows[r]
        for f in range(F):
            upper[i, f] = np.inf
            lower[i, f] = -np.inf
            const[i, f] = C[f]
        for k in range(n):
            acc = 0.0
            for j in range(D):
                t = points[r, j] - X[k, j]
                acc += t * t
            d = np.sqrt(acc)
            for f in range(F):
                t = V[k, f] + C[f] * d
                if t < upper[i, f]:
                    upper[i, f] = t
                    d_upper[i, f] = d
                t = V[k, f] - C[f] * d
                if t > lower[i, f]:
                    lower[i, f] = t
                    d_lower[i, f] = d


@numba.njit(cache=True)
def _fold_sample(X, x_new, values, m, const, upper, d_upper, lower, d_lower):
    D = X.shape[1]
    F = values.shape[0]
    for i in range(m):
        acc = 0.0
        for j in range(D):
            t = X[i, j] - x_new[j]
            acc += t * t
        d = np.sqrt(acc)
        for f in range(F):
            t = values[f] + const[i, f] * d
            if t < upper[i, f]:
                upper[i, f] = t
                d_upper[i, f] = d
            t = values[f] - const[i, f] * d
            if t > lower[i, f]:
                lower[i, f] = t
                d_lower[i, f] = d


@numba.njit(cache=True)
def _merit_kernel(alive, nearest, birth, n, const, upper, d_upper, lower, d_lower, C, eps, diameter, delta, phi, lb, ub):
    m = lb.shape[0]
    F = C.shape[0]
    for i in range(m):
        if not alive[i]:
            lb[i] = -np.inf
            ub[i] = -np.inf
            continue
        lam_lo = 0.0
        lam_hi = 0.0
        sure = True
        maybe = True
        pi_lo = 0.0
        pi_hi = 0.0
        wg_lo = 1.0
        wg_hi = 1.0
        for f in range(F):
            diff = C[f] - const[i, f]
            neg = min(diff, 0.0) * diameter
            up_lo = upper[i, f] + neg + eps[f]
            up_hi = upper[i, f] + diff * d_upper[i, f] + eps[f]
            lo_lo = lower[i, f] - diff * d_lower[i, f] - eps[f]
            lo_hi = lower[i, f] - neg - eps[f]
            up_lo = max(up_lo, lo_lo)
            up_hi = max(up_hi, lo_hi)
            if f == 0:
                lam_lo = max(up_lo - lo_hi, 0.0)
                lam_hi = up_hi - lo_lo
                continue
            if delta * (0.5 * (up_lo + lo_lo)) + (1.0 - delta) * lo_lo < 0.0:
                sure = False
            if delta * (0.5 * (up_hi + lo_hi)) + (1.0 - delta) * lo_hi < 0.0:
                maybe = False
            pi_lo += max(up_lo - lo_hi, 0.0) / C[f]
            pi_hi += (up_hi - lo_lo) / C[f]
            if 0.5 * (up_lo + lo_lo) >= 0.0:
                wg_lo *= 2.0
            if 0.5 * (up_hi + lo_hi) >= 0.0:
                wg_hi *= 2.0
        age = phi * (n - birth[i])
        d = nearest[i]
        lb[i] = d * ((1.0 - delta) * (lam_lo if sure else 0.0) + delta * pi_lo * wg_lo) + age
        ub[i] = d * ((1.0 - delta) * (lam_hi if maybe else 0.0) + delta * pi_hi * wg_hi) + age
