"""Gaussian and Gaussian-mixture primitives.

Provides density evaluation, moment computation, sampling, moment-preserving
pairwise merging, and greedy KL-bound mixture reduction (Runnalls' algorithm).
All types are immutable values; all operations are pure functions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from .exceptions import ContractError, FactorizationError

SYMMETRY_ATOL = 1e-10
NORMALIZATION_ATOL = 1e-9

_LOG_2PI = float(np.log(2.0 * np.pi))


def _as_vector(x) -> np.ndarray:
    v = np.atleast_1d(np.asarray(x, dtype=float))
    if v.ndim != 1:
        raise ContractError(f"expected a vector, got shape {v.shape}")
    return v


def _as_matrix(m) -> np.ndarray:
    a = np.asarray(m, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ContractError(f"expected a square matrix, got shape {a.shape}")
    return a


def cholesky_spd(cov: np.ndarray, context: str = "covariance") -> np.ndarray:
    """Lower Cholesky factor of a symmetric positive-definite matrix."""
    cov = _as_matrix(cov)
    if not bool((np.abs(cov - cov.T) <= SYMMETRY_ATOL).all()):
        raise FactorizationError(f"{context} is not symmetric (atol {SYMMETRY_ATOL})")
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise FactorizationError(f"{context} is not positive definite: {exc}") from exc


def symmetrize(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.T)


@dataclass(frozen=True)
class GaussianComponent:
    """One weighted Gaussian: nonnegative weight, mean vector, SPD covariance."""

    weight: float
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = _as_vector(self.mean)
        cov = _as_matrix(self.cov)
        object.__setattr__(self, "weight", float(self.weight))
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        if self.weight < 0.0:
            raise ContractError(f"component weight must be >= 0, got {self.weight}")
        if cov.shape[0] != mean.shape[0]:
            raise ContractError(
                f"mean dimension {mean.shape[0]} != covariance dimension {cov.shape[0]}"
            )
        cholesky_spd(cov, context=f"component covariance (dim {mean.shape[0]})")

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def logpdf(self, x) -> float:
        return gaussian_logpdf(x, self.mean, self.cov)


@dataclass(frozen=True)
class GaussianMixture:
    """Ordered list of same-dimension components, optionally normalized."""

    components: tuple[GaussianComponent, ...]
    normalized: bool = False

    def __post_init__(self):
        comps = tuple(self.components)
        object.__setattr__(self, "components", comps)
        if not comps:
            raise ContractError("mixture must have at least one component")
        d = comps[0].dim
        if any(c.dim != d for c in comps):
            raise ContractError("all mixture components must share one dimension")
        if self.normalized:
            total = sum(c.weight for c in comps)
            if abs(total - 1.0) > NORMALIZATION_ATOL:
                raise ContractError(
                    f"normalized mixture weights sum to {total}, not 1"
                )

    def __len__(self) -> int:
        return len(self.components)

    @property
    def dim(self) -> int:
        return self.components[0].dim

    def weights(self) -> np.ndarray:
        return np.array([c.weight for c in self.components])

    def means(self) -> np.ndarray:
        return np.stack([c.mean for c in self.components])

    def covs(self) -> np.ndarray:
        return np.stack([c.cov for c in self.components])

    def total_weight(self) -> float:
        return float(self.weights().sum())

    def logpdf(self, x) -> float:
        """Log density of the mixture at x (weights used as given)."""
        terms = [np.log(c.weight) + c.logpdf(x) if c.weight > 0 else -np.inf
                 for c in self.components]
        return float(logsumexp(terms))

    def pdf(self, x) -> float:
        return float(np.exp(self.logpdf(x)))


def from_arrays(weights, means, covs, normalized: bool = False) -> GaussianMixture:
    """Build a mixture from stacked parameter arrays."""
    weights = np.asarray(weights, dtype=float)
    means = np.atleast_2d(np.asarray(means, dtype=float))
    covs = np.asarray(covs, dtype=float)
    if covs.ndim == 1:
        covs = covs.reshape(-1, 1, 1)
    comps = tuple(
        GaussianComponent(float(w), m, c) for w, m, c in zip(weights, means, covs)
    )
    return GaussianMixture(comps, normalized=normalized)


def gaussian_logpdf(x, mean, cov) -> float:
    """Log of the multivariate normal density, via triangular factorization."""
    x = _as_vector(x)
    mean = _as_vector(mean)
    if x.shape != mean.shape:
        raise ContractError(f"x shape {x.shape} != mean shape {mean.shape}")
    L = cholesky_spd(cov, context="gaussian_logpdf covariance")
    z = solve_triangular(L, x - mean, lower=True)
    log_det = 2.0 * float(np.sum(np.log(np.diag(L))))
    d = x.shape[0]
    return -0.5 * (d * _LOG_2PI + log_det + float(z @ z))


def mixture_moments(m: GaussianMixture) -> tuple[np.ndarray, np.ndarray]:
    """Overall mean and covariance of a normalized mixture."""
    if not m.normalized:
        raise ContractError("mixture_moments requires a normalized mixture")
    w = m.weights()
    mu = m.means()
    P = m.covs()
    mean = w @ mu
    diff = mu - mean
    cov = np.einsum("k,kij->ij", w, P) + np.einsum("k,ki,kj->ij", w, diff, diff)
    return mean, symmetrize(cov)


def mixture_sample(m: GaussianMixture, n: int, seed) -> np.ndarray:
    """n i.i.d. draws from a normalized mixture; reproducible given seed."""
    if not m.normalized:
        raise ContractError("mixture_sample requires a normalized mixture")
    if n < 1:
        raise ContractError("n must be >= 1")
    rng = np.random.default_rng(seed)
    w = m.weights()
    w = w / w.sum()
    idx = rng.choice(len(m), size=n, p=w)
    out = np.empty((n, m.dim))
    for k, comp in enumerate(m.components):
        sel = idx == k
        cnt = int(sel.sum())
        if cnt == 0:
            continue
        L = np.linalg.cholesky(comp.cov)
        out[sel] = comp.mean + rng.standard_normal((cnt, m.dim)) @ L.T
    return out


def merge_moment_preserving(a: GaussianComponent, b: GaussianComponent) -> GaussianComponent:
    """Merge two components into one preserving their combined first two moments."""
    if a.dim != b.dim:
        raise ContractError("cannot merge components of different dimension")
    w = a.weight + b.weight
    if w <= 0.0:
        raise ContractError("cannot merge two zero-weight components")
    wa, wb = a.weight / w, b.weight / w
    mean = wa * a.mean + wb * b.mean
    d = a.mean - b.mean
    cov = wa * a.cov + wb * b.cov + wa * wb * np.outer(d, d)
    return GaussianComponent(w, mean, symmetrize(cov))


def _pair_logdets(wi, mi, Pi, w, mu, P) -> np.ndarray:
    """log det of the moment-matched merge of component i with every component."""
    ws = np.maximum(wi + w, 1e-300)
    fa = (wi / ws)[:, None, None]
    fb = (w / ws)[:, None, None]
    d = mi - mu
    spread = (wi * w / ws**2)[:, None, None] * d[:, :, None] * d[:, None, :]
    merged = fa * Pi + fb * P + spread
    dim = P.shape[-1]
    if dim == 1:
        return np.log(merged[:, 0, 0])
    if dim == 2:
        det = merged[:, 0, 0] * merged[:, 1, 1] - merged[:, 0, 1] * merged[:, 1, 0]
        return np.log(det)
    return np.linalg.slogdet(merged)[1]


def _runnalls_cost_row(i: int, w, mu, P, logdets, active) -> np.ndarray:
    """Runnalls KL upper bound B(i, j) against all active j (inf elsewhere)."""
    merged_logdet = _pair_logdets(w[i], mu[i], P[i], w, mu, P)
    cost = 0.5 * ((w[i] + w) * merged_logdet - w[i] * logdets[i] - w * logdets)
    cost[~active] = np.inf
    cost[i] = np.inf
    return cost


def reduce_runnalls(m: GaussianMixture, target: int) -> GaussianMixture:
    """Greedy pairwise merging ranked by Runnalls' KL upper bound.

    Preserves the global mixture mean and covariance exactly (moment-matched
    merges) and the normalized flag. Returns the input unchanged when it
    already has <= target components.
    """
    if target < 1:
        raise ContractError("reduction target must be >= 1")
    if len(m) <= target:
        return m
    w, mu, P = reduce_runnalls_arrays(m.weights(), m.means(), m.covs(), target)
    return from_arrays(w, mu, P, normalized=m.normalized)


try:  # compiled greedy-merge loop; the numpy path below is the reference
    from numba import njit

    @njit(cache=True)
    def _logdet_nb(M):
        d = M.shape[0]
        if d == 1:
            return np.log(M[0, 0])
        if d == 2:
            return np.log(M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0])
        L = np.linalg.cholesky(M)
        s = 0.0
        for a in range(d):
            s += np.log(L[a, a])
        return 2.0 * s

    @njit(cache=True)
    def _pair_cost_big_nb(w, mu, P, logdets, i, j, fa, fb):
        # generic dimension; allocation kept out of _pair_cost_nb so the
        # common d<=2 path stays allocation-free and inlinable
        d = mu.shape[1]
        M = fa * P[i] + fb * P[j]
        for a in range(d):
            for b in range(d):
                M[a, b] += fa * fb * (mu[i, a] - mu[j, a]) * (mu[i, b] - mu[j, b])
        return _logdet_nb(M)

    @njit(cache=True, inline="always")
    def _pair_cost_nb(w, mu, P, logdets, i, j):
        ws = w[i] + w[j]
        if ws < 1e-300:
            ws = 1e-300
        fa = w[i] / ws
        fb = w[j] / ws
        d = mu.shape[1]
        if d == 1:
            dm = mu[i, 0] - mu[j, 0]
            ld = np.log(fa * P[i, 0, 0] + fb * P[j, 0, 0] + fa * fb * dm * dm)
        elif d == 2:
            d0 = mu[i, 0] - mu[j, 0]
            d1 = mu[i, 1] - mu[j, 1]
            c = fa * fb
            m00 = fa * P[i, 0, 0] + fb * P[j, 0, 0] + c * d0 * d0
            m01 = fa * P[i, 0, 1] + fb * P[j, 0, 1] + c * d0 * d1
            m11 = fa * P[i, 1, 1] + fb * P[j, 1, 1] + c * d1 * d1
            ld = np.log(m00 * m11 - m01 * m01)
        else:
            ld = _pair_cost_big_nb(w, mu, P, logdets, i, j, fa, fb)
        return 0.5 * ((w[i] + w[j]) * ld - w[i] * logdets[i] - w[j] * logdets[j])

    @njit(cache=True)
    def _cost_row_d1_nb(w, mu, P, logdets, active, i, out, j0):
        # fill out[j] = merge cost of (i, j) for active j != i, j >= j0;
        # i-indexed values are hoisted to scalars so the stores into `out`
        # cannot force their reload (numba carries no aliasing info)
        n = w.shape[0]
        wi = w[i]
        mi = mu[i, 0]
        pi = P[i, 0, 0]
        ldi_w = wi * logdets[i]
        for j in range(j0, n):
            if not active[j] or j == i:
                out[j] = np.inf
                continue
            wj = w[j]
            ws = wi + wj
            if ws < 1e-300:
                ws = 1e-300
            fa = wi / ws
            fb = wj / ws
            dm = mi - mu[j, 0]
            ld = np.log(fa * pi + fb * P[j, 0, 0] + fa * fb * dm * dm)
            out[j] = 0.5 * ((wi + wj) * ld - ldi_w - wj * logdets[j])

    @njit(cache=True)
    def _cost_row_d2_nb(w, mu, P, logdets, active, i, out, j0):
        n = w.shape[0]
        wi = w[i]
        mi0 = mu[i, 0]
        mi1 = mu[i, 1]
        pi00 = P[i, 0, 0]
        pi01 = P[i, 0, 1]
        pi11 = P[i, 1, 1]
        ldi_w = wi * logdets[i]
        for j in range(j0, n):
            if not active[j] or j == i:
                out[j] = np.inf
                continue
            wj = w[j]
            ws = wi + wj
            if ws < 1e-300:
                ws = 1e-300
            fa = wi / ws
            fb = wj / ws
            d0 = mi0 - mu[j, 0]
            d1 = mi1 - mu[j, 1]
            c = fa * fb
            m00 = fa * pi00 + fb * P[j, 0, 0] + c * d0 * d0
            m01 = fa * pi01 + fb * P[j, 0, 1] + c * d0 * d1
            m11 = fa * pi11 + fb * P[j, 1, 1] + c * d1 * d1
            out[j] = 0.5 * (
                (wi + wj) * np.log(m00 * m11 - m01 * m01) - ldi_w - wj * logdets[j]
            )

    @njit(cache=True)
    def _cost_row_nb(w, mu, P, logdets, active, i, out, j0):
        d = mu.shape[1]
        if d == 1:
            _cost_row_d1_nb(w, mu, P, logdets, active, i, out, j0)
        elif d == 2:
            _cost_row_d2_nb(w, mu, P, logdets, active, i, out, j0)
        else:
            n = w.shape[0]
            for j in range(j0, n):
                if not active[j] or j == i:
                    out[j] = np.inf
                else:
                    out[j] = _pair_cost_nb(w, mu, P, logdets, i, j)

    @njit(cache=True)
    def _reduce_kernel_nb(w, mu, P, target):
        # Greedy Runnalls merging without the O(M^2) cost matrix. Each row
        # caches its two cheapest partners (b1/a1 exact best, b2/a2 second).
        # When a cached partner is consumed by a merge, the second is
        # promoted in O(1); a full O(M) row recomputation happens only when
        # both cached partners are gone and the row surfaces as the global
        # argmin (its cached value then is a lower bound on its true row
        # minimum, which keeps the greedy order exact).
        # a2 sentinel values: -1 = nothing cached, -2 = b2 is only a lower
        # bound on the true second-smallest cost (actual partner unknown).
        n = w.shape[0]
        d = mu.shape[1]
        active = np.ones(n, np.bool_)
        logdets = np.empty(n)
        for i in range(n):
            logdets[i] = _logdet_nb(P[i])
        out = np.empty(n)
        b1 = np.full(n, np.inf)
        b2 = np.full(n, np.inf)
        a1 = np.full(n, -1, np.int64)
        a2 = np.full(n, -1, np.int64)
        stale = np.zeros(n, np.bool_)
        for i in range(n):
            _cost_row_nb(w, mu, P, logdets, active, i, out, i + 1)
            for j in range(i + 1, n):
                c = out[j]
                if c < b1[i]:
                    b2[i] = b1[i]
                    a2[i] = a1[i]
                    b1[i] = c
                    a1[i] = j
                elif c < b2[i]:
                    b2[i] = c
                    a2[i] = j
                if c < b1[j]:
                    b2[j] = b1[j]
                    a2[j] = a1[j]
                    b1[j] = c
                    a1[j] = i
                elif c < b2[j]:
                    b2[j] = c
                    a2[j] = i
        remaining = n
        while remaining > target:
            while True:
                i = int(np.argmin(b1))
                if stale[i]:
                    # revalidate: recompute the full row exactly
                    _cost_row_nb(w, mu, P, logdets, active, i, out, 0)
                    bb1 = np.inf
                    aa1 = -1
                    bb2 = np.inf
                    aa2 = -1
                    for r in range(n):
                        c = out[r]
                        if c < bb1:
                            bb2 = bb1
                            aa2 = aa1
                            bb1 = c
                            aa1 = r
                        elif c < bb2:
                            bb2 = c
                            aa2 = r
                    b1[i] = bb1
                    a1[i] = aa1
                    b2[i] = bb2
                    a2[i] = aa2
                    stale[i] = False
                    continue
                if not np.isfinite(b1[i]):
                    return active, w, mu, P, -1  # signal failure to caller
                break
            j = int(a1[i])
            ws = w[i] + w[j]
            if ws <= 0.0:
                fa = 0.5
                fb = 0.5
            else:
                fa = w[i] / ws
                fb = w[j] / ws
            for a in range(d):
                for b in range(d):
                    P[i, a, b] = (
                        fa * P[i, a, b]
                        + fb * P[j, a, b]
                        + fa * fb * (mu[i, a] - mu[j, a]) * (mu[i, b] - mu[j, b])
                    )
            for a in range(d):
                for b in range(a + 1, d):
                    s = 0.5 * (P[i, a, b] + P[i, b, a])
                    P[i, a, b] = s
                    P[i, b, a] = s
                mu[i, a] = fa * mu[i, a] + fb * mu[j, a]
            w[i] = ws
            logdets[i] = _logdet_nb(P[i])
            active[j] = False
            b1[j] = np.inf
            b2[j] = np.inf
            a1[j] = -1
            a2[j] = -1
            stale[j] = False
            remaining -= 1
            # drop cache entries that referenced the merged components
            for r in range(n):
                if not active[r] or r == i or stale[r]:
                    continue
                inv1 = a1[r] == i or a1[r] == j
                inv2 = a2[r] == i or a2[r] == j
                if inv1:
                    if a2[r] >= 0 and not inv2:
                        # promote the exact second-best partner
                        b1[r] = b2[r]
                        a1[r] = a2[r]
                        a2[r] = -2  # b2 keeps its value as a lower bound
                    else:
                        # b2 (if informative) bounds the surviving minimum
                        if b2[r] > b1[r] and a2[r] != -1:
                            b1[r] = b2[r]
                        a1[r] = -1
                        a2[r] = -1
                        b2[r] = np.inf
                        stale[r] = True
                elif inv2:
                    a2[r] = -2  # b2 keeps its value as a lower bound
            # recompute the merged row; opportunistically lower other caches
            _cost_row_nb(w, mu, P, logdets, active, i, out, 0)
            bb1 = np.inf
            aa1 = -1
            bb2 = np.inf
            aa2 = -1
            for r in range(n):
                c = out[r]
                if c < bb1:
                    bb2 = bb1
                    aa2 = aa1
                    bb1 = c
                    aa1 = r
                elif c < bb2:
                    bb2 = c
                    aa2 = r
                if not active[r] or r == i:
                    continue
                if stale[r]:
                    if c < b1[r]:
                        b1[r] = c  # keep the lower bound valid
                elif c < b1[r]:
                    b2[r] = b1[r]
                    a2[r] = a1[r]
                    b1[r] = c
                    a1[r] = i
                elif c < b2[r]:
                    b2[r] = c
                    a2[r] = i
            b1[i] = bb1
            a1[i] = aa1
            b2[i] = bb2
            a2[i] = aa2
            stale[i] = False
        return active, w, mu, P, 0

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is an optional speedup
    _HAVE_NUMBA = False


def _logdet_single(P: np.ndarray) -> float:
    d = P.shape[-1]
    if d == 1:
        return float(np.log(P[0, 0]))
    if d == 2:
        return float(np.log(P[0, 0] * P[1, 1] - P[0, 1] * P[1, 0]))
    return float(np.linalg.slogdet(P)[1])


def reduce_runnalls_arrays(
    w: np.ndarray, mu: np.ndarray, P: np.ndarray, target: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Array-level Runnalls reduction (no component objects built).

    The compiled path keeps, per row, its exact best merge partner plus a
    second-best fallback, and revalidates a row only when its cached value
    (a proven lower bound once the best partner is consumed) surfaces as the
    global minimum. This keeps the greedy merge order exact while avoiding
    both the O(M^2) cost matrix and most O(M) row rescans. The numpy path
    below is the straightforward cached-row-minima reference implementation.
    """
    w = np.ascontiguousarray(np.asarray(w, dtype=float))
    mu = np.ascontiguousarray(np.atleast_2d(np.asarray(mu, dtype=float)))
    P = np.ascontiguousarray(np.asarray(P, dtype=float))
    n = len(w)
    if n <= target:
        return w, mu, P
    if _HAVE_NUMBA:
        active, w, mu, P, status = _reduce_kernel_nb(w.copy(), mu.copy(), P.copy(), target)
        if status != 0:
            raise ContractError("no finite merge cost found during reduction")
        keep = np.flatnonzero(active)
        return w[keep], mu[keep], P[keep]
    w = w.copy()
    mu = mu.copy()
    P = P.copy()
    active = np.ones(n, dtype=bool)
    sign, logdets = np.linalg.slogdet(P)
    cost = np.empty((n, n))
    for i in range(n):
        cost[i] = _runnalls_cost_row(i, w, mu, P, logdets, active)
    row_min = cost.min(axis=1)
    row_arg = cost.argmin(axis=1)

    def rescan(r: int) -> None:
        row_min[r] = cost[r].min()
        row_arg[r] = cost[r].argmin()

    remaining = n
    while remaining > target:
        i = int(np.argmin(row_min))
        j = int(row_arg[i])
        if not np.isfinite(row_min[i]):
            raise ContractError("no finite merge cost found during reduction")
        ws = w[i] + w[j]
        if ws <= 0.0:
            mean = 0.5 * (mu[i] + mu[j])
            covm = 0.5 * (P[i] + P[j])
        else:
            fa, fb = w[i] / ws, w[j] / ws
            mean = fa * mu[i] + fb * mu[j]
            d = mu[i] - mu[j]
            covm = fa * P[i] + fb * P[j] + fa * fb * np.outer(d, d)
        w[i], mu[i], P[i] = ws, mean, symmetrize(covm)
        logdets[i] = _logdet_single(P[i])
        active[j] = False
        remaining -= 1
        cost[j, :] = np.inf
        cost[:, j] = np.inf
        row_min[j] = np.inf
        row = _runnalls_cost_row(i, w, mu, P, logdets, active)
        cost[i, :] = row
        cost[:, i] = row
        rescan(i)
        # Rows whose cached minimum referenced i or j, or that now beat their
        # cached minimum against the merged component, need refreshing.
        stale = np.flatnonzero(active & ((row_arg == i) | (row_arg == j)))
        for r in stale:
            if r != i:
                rescan(r)
        improved = np.flatnonzero(active & (row < row_min))
        for r in improved:
            if r != i:
                row_min[r] = row[r]
                row_arg[r] = i

    keep = np.flatnonzero(active)
    return w[keep], mu[keep], P[keep]


def normalize_log_weights(log_w: np.ndarray) -> tuple[np.ndarray, float]:
    """Exponentiate-and-normalize in the log domain; returns (weights, log-norm)."""
    log_w = np.asarray(log_w, dtype=float)
    total = logsumexp(log_w)
    if not np.isfinite(total):
        raise ContractError("all log-weights are -inf; cannot normalize")
    w = np.exp(log_w - total)
    return w / w.sum(), float(total)
