"""GMM approximation of quantizer-region indicator functions.

A univariate GMM is trained offline (EM) to approximate the uniform density
on [0,1]. Affine scaling moves it to an arbitrary interval [a,b], producing
an unnormalized model with total mass (b-a); a tensor product lifts it to a
p-dimensional hyperrectangle; a constant added to the variances smooths the
fit. The result approximates the 0/1 indicator of a quantizer region.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from . import gmm
from .exceptions import ContractError, ModelFileError
from .system import UniformQuantizer, region_bounds

_LOG_2PI = float(np.log(2.0 * np.pi))

try:  # compiled EM inner loop; the numpy path below is the reference
    from numba import njit

    @njit(cache=True, fastmath=True)
    def _em_pass_numba(x, log_w, mu, var):
        n = x.shape[0]
        k = mu.shape[0]
        const = np.empty(k)
        inv2v = np.empty(k)
        for j in range(k):
            const[j] = log_w[j] - 0.5 * (_LOG_2PI + np.log(var[j]))
            inv2v[j] = 0.5 / var[j]
        nk = np.zeros(k)
        sx = np.zeros(k)
        sxx = np.zeros(k)
        tmp = np.empty(k)
        ll = 0.0
        for i in range(n):
            xi = x[i]
            top = -1e300
            for j in range(k):
                d = xi - mu[j]
                t = const[j] - d * d * inv2v[j]
                tmp[j] = t
                if t > top:
                    top = t
            s = 0.0
            for j in range(k):
                tmp[j] = np.exp(tmp[j] - top)
                s += tmp[j]
            ll += top + np.log(s)
            for j in range(k):
                r = tmp[j] / s
                nk[j] += r
                sx[j] += r * xi
                sxx[j] += r * xi * xi
        return ll / n, nk, sx, sxx

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is an optional speedup
    _HAVE_NUMBA = False


def _em_pass_numpy(x, log_w, mu, var):
    d = x[:, None] - mu
    log_comp = log_w - 0.5 * (_LOG_2PI + np.log(var)) - 0.5 * d * d / var
    log_norm = logsumexp(log_comp, axis=1)
    resp = np.exp(log_comp - log_norm[:, None])
    nk = resp.sum(axis=0)
    sx = resp.T @ x
    sxx = resp.T @ (x * x)
    return float(log_norm.mean()), nk, sx, sxx


def _em_pass(x, log_w, mu, var):
    if _HAVE_NUMBA:
        return _em_pass_numba(x, log_w, mu, var)
    return _em_pass_numpy(x, log_w, mu, var)


DEFAULT_MAX_ITER = 500
DEFAULT_TOL = 1e-7
DEFAULT_TRAIN_SAMPLES = 1_000_000
VARIANCE_FLOOR = 1e-12


@dataclass(frozen=True)
class UnitIntervalGMM:
    """Univariate normalized GMM fitted to the uniform density on [0,1]."""

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    n_samples: int
    seed: int
    em_iterations: int
    final_loglik: float
    n_resets: int = 0

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        mu = np.atleast_1d(np.asarray(self.means, dtype=float))
        var = np.atleast_1d(np.asarray(self.variances, dtype=float))
        if not (w.shape == mu.shape == var.shape):
            raise ContractError("weights/means/variances shapes disagree")
        if abs(w.sum() - 1.0) > 1e-9:
            raise ContractError(f"unit-interval GMM weights sum to {w.sum()}, not 1")
        if np.any(var <= 0.0):
            raise ContractError("all variances must be > 0")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "variances", var)

    @property
    def k1(self) -> int:
        return self.weights.shape[0]

    def density(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        d = x[..., None] - self.means
        logs = (
            np.log(self.weights)
            - 0.5 * (_LOG_2PI + np.log(self.variances))
            - 0.5 * d * d / self.variances
        )
        return np.exp(logsumexp(logs, axis=-1))


@dataclass(frozen=True)
class ScaledIntervalGMM:
    """Unnormalized 1-D GMM approximating the indicator of [lower, upper)."""

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    lower: float
    upper: float

    @property
    def total_mass(self) -> float:
        return float(self.weights.sum())

    def density(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        d = x[..., None] - self.means
        logs = (
            np.log(self.weights)
            - 0.5 * (_LOG_2PI + np.log(self.variances))
            - 0.5 * d * d / self.variances
        )
        return np.exp(logsumexp(logs, axis=-1))


@dataclass(frozen=True)
class IndicatorGMM:
    """Unnormalized p-dimensional GMM approximating a hyperrectangle indicator."""

    weights: np.ndarray  # (K,)
    means: np.ndarray  # (K, p)
    covs: np.ndarray  # (K, p, p)
    bounds: tuple[tuple[float, float], ...]
    alpha: float

    def __post_init__(self):
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))
        object.__setattr__(self, "means", np.atleast_2d(np.asarray(self.means, dtype=float)))
        covs = np.asarray(self.covs, dtype=float)
        if covs.ndim == 1:
            covs = covs.reshape(-1, 1, 1)
        object.__setattr__(self, "covs", covs)
        object.__setattr__(self, "bounds", tuple(tuple(b) for b in self.bounds))

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]

    @property
    def total_mass(self) -> float:
        return float(self.weights.sum())

    def to_mixture(self) -> gmm.GaussianMixture:
        return gmm.from_arrays(self.weights, self.means, self.covs, normalized=False)

    def density(self, z) -> float:
        z = np.atleast_1d(np.asarray(z, dtype=float))
        logs = np.array(
            [
                np.log(w) + gmm.gaussian_logpdf(z, m, c) if w > 0 else -np.inf
                for w, m, c in zip(self.weights, self.means, self.covs)
            ]
        )
        return float(np.exp(logsumexp(logs)))


def em_fit_unit(samples, k1: int, max_iter: int = DEFAULT_MAX_ITER,
                tol: float = DEFAULT_TOL, seed: int = 0) -> UnitIntervalGMM:
    """Fit a univariate GMM to samples by EM.

    Deterministic initialization: means at the (j-0.5)/k1 sample quantiles,
    variances (1/k1)^2, uniform weights. Stops when the per-sample mean
    log-likelihood improves by less than tol. Components whose variance
    collapses below 1e-12 are re-seeded from a random sample.
    """
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise ContractError("samples must be nonempty")
    if k1 < 1:
        raise ContractError("k1 must be >= 1")
    rng = np.random.default_rng(seed)
    qs = (np.arange(k1) + 0.5) / k1
    mu = np.quantile(x, qs)
    var = np.full(k1, (1.0 / k1) ** 2)
    w = np.full(k1, 1.0 / k1)
    n = x.size
    prev_ll = -np.inf
    n_resets = 0
    iterations = 0
    ll = -np.inf
    for iterations in range(1, max_iter + 1):
        # E-step (responsibilities in the log domain) fused with the M-step
        # sufficient statistics; see _em_pass.
        ll, nk, sx, sxx = _em_pass(x, np.log(w), mu, var)
        ll = float(ll)
        nk = np.maximum(nk, 1e-300)
        w = nk / n
        mu = sx / nk
        var = sxx / nk - mu * mu
        collapsed = var < VARIANCE_FLOOR
        if np.any(collapsed):
            n_resets += int(collapsed.sum())
            mu[collapsed] = rng.choice(x, size=int(collapsed.sum()))
            var[collapsed] = (1.0 / k1) ** 2
        if ll - prev_ll < tol and np.isfinite(prev_ll):
            break
        prev_ll = ll
    w = w / w.sum()
    return UnitIntervalGMM(
        weights=w,
        means=mu,
        variances=var,
        n_samples=n,
        seed=int(seed),
        em_iterations=iterations,
        final_loglik=ll,
        n_resets=n_resets,
    )


def train_unit_gmm(n_samples: int, k1: int, seed: int,
                   max_iter: int = DEFAULT_MAX_ITER,
                   tol: float = DEFAULT_TOL) -> UnitIntervalGMM:
    """Draw uniform [0,1] samples and fit the unit-interval GMM by EM."""
    if n_samples < 10 * k1:
        raise ContractError(
            f"n_samples must be >= 10*k1 ({10 * k1}), got {n_samples}"
        )
    rng = np.random.default_rng(seed)
    samples = rng.random(n_samples)
    return em_fit_unit(samples, k1, max_iter=max_iter, tol=tol, seed=seed)


def scale_to_interval(g: UnitIntervalGMM, a: float, b: float) -> ScaledIntervalGMM:
    """Affine move of the unit model to [a,b): weights *= (b-a),
    means -> a + (b-a)*mean, variances *= (b-a)^2."""
    if b <= a:
        raise ContractError(f"interval requires b > a, got [{a}, {b})")
    width = b - a
    return ScaledIntervalGMM(
        weights=width * g.weights,
        means=a + width * g.means,
        variances=width**2 * g.variances,
        lower=float(a),
        upper=float(b),
    )


def tensor_product(per_dim: Sequence[ScaledIntervalGMM]) -> IndicatorGMM:
    """Lift scaled 1-D models to a p-dimensional diagonal-covariance GMM.

    Component weights are products of per-dimension weights; means concatenate;
    covariances are diagonal with the per-dimension variances.
    """
    if len(per_dim) == 0:
        raise ContractError("tensor_product requires at least one dimension")
    p = len(per_dim)
    sizes = [g.weights.shape[0] for g in per_dim]
    n_comp = int(np.prod(sizes))
    weights = np.empty(n_comp)
    means = np.empty((n_comp, p))
    covs = np.zeros((n_comp, p, p))
    for idx, combo in enumerate(itertools.product(*[range(s) for s in sizes])):
        wprod = 1.0
        for j, cj in enumerate(combo):
            g = per_dim[j]
            wprod *= g.weights[cj]
            means[idx, j] = g.means[cj]
            covs[idx, j, j] = g.variances[cj]
        weights[idx] = wprod
    bounds = tuple((g.lower, g.upper) for g in per_dim)
    return IndicatorGMM(weights=weights, means=means, covs=covs, bounds=bounds, alpha=0.0)


def regularize(g: IndicatorGMM, alpha: float) -> IndicatorGMM:
    """Add alpha to every diagonal variance entry; weights and means unchanged."""
    if alpha < 0.0:
        raise ContractError("alpha must be >= 0")
    if alpha == 0.0:
        return g
    covs = g.covs + alpha * np.eye(g.dim)
    return replace(g, covs=covs, alpha=g.alpha + alpha)


def default_alpha(q: UniformQuantizer) -> float:
    """Regularization default: 1e-6 * step^2 (largest step for mixed-step quantizers).

    Kept small on purpose: larger values visibly widen the indicator's edges
    and break the likelihood's agreement with the exact region probability
    (at 1e-3 * step^2 the relative error near region edges exceeds 100%,
    versus ~4% here for a 20-component base model).
    """
    return 1e-6 * float(np.max(q.step)) ** 2


def indicator_for_output(y, q: UniformQuantizer, base: UnitIntervalGMM,
                         alpha: float | None = None,
                         pre_reduce: int | None = None) -> IndicatorGMM:
    """Indicator GMM for the quantizer region of measurement y.

    Scales the unit model to [y_j - step_j/2, y_j + step_j/2) per dimension,
    takes the tensor product, and adds the regularization constant. An
    optional Runnalls pre-reduction caps the component count (useful for
    p >= 2 where the tensor construction yields k1^p components).
    """
    bounds = region_bounds(y, q)
    scaled = [scale_to_interval(base, a, b) for a, b in bounds]
    ind = tensor_product(scaled)
    if alpha is None:
        alpha = default_alpha(q)
    ind = regularize(ind, alpha)
    if pre_reduce is not None and ind.n_components > pre_reduce:
        w, mu, covs = gmm.reduce_runnalls_arrays(
            ind.weights, ind.means, ind.covs, pre_reduce
        )
        ind = IndicatorGMM(
            weights=w,
            means=mu,
            covs=covs,
            bounds=ind.bounds,
            alpha=ind.alpha,
        )
    return ind


_MODEL_FIELDS = (
    "K1", "weights", "means", "variances",
    "n_samples", "seed", "em_iterations", "final_loglik",
)


def save_model(g: UnitIntervalGMM, path) -> None:
    """Persist a trained unit-interval model as JSON."""
    payload = {
        "K1": g.k1,
        "weights": g.weights.tolist(),
        "means": g.means.tolist(),
        "variances": g.variances.tolist(),
        "n_samples": g.n_samples,
        "seed": g.seed,
        "em_iterations": g.em_iterations,
        "final_loglik": g.final_loglik,
        "n_resets": g.n_resets,
    }
    Path(path).write_text(json.dumps(payload, indent=1))


def load_model(path) -> UnitIntervalGMM:
    """Load a model saved by save_model, revalidating all invariants."""
    try:
        payload = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ModelFileError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    for field_name in _MODEL_FIELDS:
        if field_name not in payload:
            raise ModelFileError(f"{path}: missing field '{field_name}'")
    try:
        model = UnitIntervalGMM(
            weights=np.asarray(payload["weights"], dtype=float),
            means=np.asarray(payload["means"], dtype=float),
            variances=np.asarray(payload["variances"], dtype=float),
            n_samples=int(payload["n_samples"]),
            seed=int(payload["seed"]),
            em_iterations=int(payload["em_iterations"]),
            final_loglik=float(payload["final_loglik"]),
            n_resets=int(payload.get("n_resets", 0)),
        )
    except (TypeError, ValueError) as exc:
        raise ModelFileError(f"{path}: {exc}") from exc
    if model.k1 != int(payload["K1"]):
        raise ModelFileError(
            f"{path}: field 'K1'={payload['K1']} != {model.k1} stored components"
        )
    return model
