"""Bayesian filters for linear systems with quantized outputs.

The main filter is a Gaussian sum filter whose measurement update multiplies
each prior component against every component of the GMM indicator
approximation (a bank of Kalman updates with pseudo-measurements). Baselines:
bootstrap particle filter with the exact region likelihood, an unscented
Kalman filter propagating sigma points through the quantizer, and a Kalman
filter treating quantization as additive uniform noise. A point-mass grid
filter serves as a near-exact oracle for scalar states.

All step functions follow the same convention: the filter state holds the
predicted (prior) distribution for time t; step(y_t, u_t) corrects with the
measurement, records posterior moments, then predicts forward with u_t.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .exceptions import (
    ContractError,
    DegenerateUpdateError,
    DegenerateWeightsError,
    FactorizationError,
    GridTooSmallError,
    UnsupportedConfigError,
)
from .gmm import (
    GaussianComponent,
    GaussianMixture,
    from_arrays,
    mixture_moments,
    reduce_runnalls_arrays,
    symmetrize,
)
from .indicator import IndicatorGMM, UnitIntervalGMM, indicator_for_output
from .system import (
    StateSpaceModel,
    UniformQuantizer,
    exact_region_loglik,
    interval_log_prob,
    quantize,
    region_bounds,
    sqrt_psd,
)

logger = logging.getLogger(__name__)

_LOG_2PI = float(np.log(2.0 * np.pi))

DEFAULT_REDUCTION_CAP = 20
DEFAULT_PRE_REDUCE_2D = 50
DEFAULT_PRUNE_REL = 1e-4


def initial_prior(model: StateSpaceModel) -> GaussianMixture:
    """Single-component mixture at the initial state moments."""
    return GaussianMixture(
        (GaussianComponent(1.0, model.mu1, model.P1),), normalized=True
    )


def gsf_correct(
    prior: GaussianMixture,
    y,
    u,
    model: StateSpaceModel,
    quantizer: UniformQuantizer,
    indicator: IndicatorGMM | UnitIntervalGMM,
    cap: int | None = DEFAULT_REDUCTION_CAP,
    prune_rel: float = DEFAULT_PRUNE_REL,
) -> GaussianMixture:
    """Measurement update of the Gaussian sum filter.

    Each (indicator component j, prior component k) pair yields one posterior
    component via a Kalman update with pseudo-measurement rho_j and noise
    R + Phi_j; unnormalized weights combine the indicator weight, the prior
    weight, and the Gaussian evaluation of rho_j under the innovation
    covariance. Weights are normalized in the log domain, negligible
    components (relative weight < prune_rel) are dropped, and the mixture is
    reduced to `cap` components. Pass a UnitIntervalGMM to build the indicator
    for y's region with default settings.
    """
    if not prior.normalized:
        raise ContractError("gsf_correct requires a normalized prior")
    if isinstance(indicator, UnitIntervalGMM):
        indicator = indicator_for_output(y, quantizer, indicator)
    region_bounds(y, quantizer)  # validates y is on the lattice
    u = np.atleast_1d(np.asarray(u, dtype=float))
    C = model.C
    R = model.R
    p = model.p
    n = model.n
    du = model.D @ u
    K_ind = indicator.n_components
    rho = indicator.means  # (K, p)
    phi = indicator.covs  # (K, p, p)
    log_beta = np.where(indicator.weights > 0, np.log(np.maximum(indicator.weights, 1e-300)), -np.inf)

    log_w = []
    means = []
    covs = []
    eye = np.eye(n)
    for comp in prior.components:
        c = C @ comp.mean + du  # (p,)
        cgct = C @ comp.cov @ C.T
        S = R + phi + cgct  # (K, p, p)
        innov = rho - c  # (K, p)
        sign, logdet = np.linalg.slogdet(S)
        sol = np.linalg.solve(S, innov[..., None])  # (K, p, 1)
        quad = np.einsum("kp,kp->k", innov, sol[..., 0])
        log_norm = -0.5 * (p * _LOG_2PI + logdet + quad)
        gain = np.linalg.solve(
            np.transpose(S, (0, 2, 1)), (comp.cov @ C.T).T[None, :, :]
        ).transpose(0, 2, 1)  # (K, n, p) = Gamma C^T S^{-1}
        upd_mean = comp.mean + np.einsum("knp,kp->kn", gain, innov)
        upd_cov = (eye[None] - gain @ C[None]) @ comp.cov[None]
        upd_cov = 0.5 * (upd_cov + np.transpose(upd_cov, (0, 2, 1)))
        log_prior_w = np.log(comp.weight) if comp.weight > 0 else -np.inf
        log_w.append(log_beta + log_prior_w + log_norm)
        means.append(upd_mean)
        covs.append(upd_cov)

    log_w = np.concatenate(log_w)
    means = np.concatenate(means)
    covs = np.concatenate(covs)
    if not np.isfinite(log_w.max()):
        raise DegenerateUpdateError(
            f"correction underflowed for measurement y={np.asarray(y)} "
            f"(prior had {len(prior)} components; model/measurement mismatch)"
        )
    log_w = log_w - logsumexp(log_w)
    needs_reduction = cap is not None and len(log_w) > cap
    if needs_reduction and prune_rel > 0.0:
        # negligible components are dropped only when the mixture must be
        # reduced anyway, so the pre-reduction component count stays exact
        keep = log_w >= log_w.max() + np.log(prune_rel)
        log_w, means, covs = log_w[keep], means[keep], covs[keep]
        log_w = log_w - logsumexp(log_w)
    w = np.exp(log_w)
    w = w / w.sum()
    if cap is not None and len(w) > cap:
        w, means, covs = reduce_runnalls_arrays(w, means, covs, cap)
        w = w / w.sum()
    return from_arrays(w, means, covs, normalized=True)


def gsf_predict(posterior: GaussianMixture, u, model: StateSpaceModel) -> GaussianMixture:
    """Time update: weights unchanged, mean A x + B u, covariance Q + A P A^T."""
    if not posterior.normalized:
        raise ContractError("gsf_predict requires a normalized posterior")
    u = np.atleast_1d(np.asarray(u, dtype=float))
    bu = model.B @ u
    comps = tuple(
        GaussianComponent(
            c.weight,
            model.A @ c.mean + bu,
            symmetrize(model.Q + model.A @ c.cov @ model.A.T),
        )
        for c in posterior.components
    )
    return GaussianMixture(comps, normalized=True)


def gsf_estimate(mixture: GaussianMixture) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and error covariance of the mixture."""
    return mixture_moments(mixture)


class GaussianSumFilter:
    """Recursive GSF with per-measurement indicator construction and caching.

    The indicator GMM depends only on the quantizer region of y, so built
    models are cached per lattice point. A correction that underflows is
    skipped (posterior := prior) with a warning instead of aborting a run.
    """

    def __init__(
        self,
        model: StateSpaceModel,
        quantizer: UniformQuantizer,
        base: UnitIntervalGMM,
        alpha: float | None = None,
        pre_reduce: int | None = None,
        cap: int = DEFAULT_REDUCTION_CAP,
        prune_rel: float = DEFAULT_PRUNE_REL,
    ):
        self.model = model
        self.quantizer = quantizer
        self.base = base
        self.alpha = alpha
        if pre_reduce is None and quantizer.p >= 2:
            pre_reduce = DEFAULT_PRE_REDUCE_2D
        self.pre_reduce = pre_reduce
        self.cap = cap
        self.prune_rel = prune_rel
        self.prior = initial_prior(model)
        self.posterior: GaussianMixture | None = None
        self.degenerate_steps = 0
        self._cache: dict[tuple[int, ...], IndicatorGMM] = {}

    def indicator_for(self, y) -> IndicatorGMM:
        key = tuple(int(k) for k in np.round(np.asarray(y, dtype=float) / self.quantizer.step))
        if key not in self._cache:
            self._cache[key] = indicator_for_output(
                y, self.quantizer, self.base, alpha=self.alpha, pre_reduce=self.pre_reduce
            )
        return self._cache[key]

    def step(self, y, u) -> tuple[np.ndarray, np.ndarray]:
        ind = self.indicator_for(y)
        try:
            post = gsf_correct(
                self.prior, y, u, self.model, self.quantizer, ind,
                cap=self.cap, prune_rel=self.prune_rel,
            )
        except DegenerateUpdateError:
            logger.warning("GSF correction underflowed at y=%s; keeping prior", y)
            self.degenerate_steps += 1
            post = self.prior
        self.posterior = post
        mean, cov = mixture_moments(post)
        self.prior = gsf_predict(post, u, self.model)
        return mean, cov


@dataclass
class PfSnapshot:
    """Posterior particle cloud captured at one time step."""

    particles: np.ndarray
    weights: np.ndarray


class BootstrapParticleFilter:
    """Bootstrap PF: prior proposal, exact region likelihood, systematic resampling."""

    def __init__(
        self,
        model: StateSpaceModel,
        quantizer: UniformQuantizer,
        n_particles: int = 300,
        seed=0,
        resample_threshold: float = 0.5,
    ):
        if not model.r_is_diagonal():
            raise UnsupportedConfigError("particle filter weights require diagonal R")
        self.model = model
        self.quantizer = quantizer
        self.n = n_particles
        self.threshold = resample_threshold
        self.rng = np.random.default_rng(seed)
        Lp = sqrt_psd(model.P1, "P1")
        self.particles = model.mu1 + self.rng.standard_normal((n_particles, model.n)) @ Lp.T
        self.log_w = np.full(n_particles, -np.log(n_particles))
        self._Lq = sqrt_psd(model.Q, "Q")
        self.last: PfSnapshot | None = None

    def _weight(self, y, u) -> np.ndarray:
        return np.array(
            [
                exact_region_loglik(y, xi, u, self.model, self.quantizer)
                for xi in self.particles
            ]
        )

    def step(self, y, u) -> tuple[np.ndarray, np.ndarray]:
        u = np.atleast_1d(np.asarray(u, dtype=float))
        log_w = self.log_w + self._weight(y, u)
        if not np.isfinite(log_w.max()):
            raise DegenerateWeightsError(
                f"all particle weights vanished at y={np.asarray(y)}"
            )
        log_w = log_w - logsumexp(log_w)
        w = np.exp(log_w)
        w = w / w.sum()
        mean = w @ self.particles
        diff = self.particles - mean
        cov = symmetrize((diff * w[:, None]).T @ diff)
        self.last = PfSnapshot(self.particles.copy(), w.copy())
        ess = 1.0 / float(np.sum(w * w))
        if ess < self.threshold * self.n:
            idx = systematic_resample(w, self.rng)
            self.particles = self.particles[idx]
            self.log_w = np.full(self.n, -np.log(self.n))
        else:
            self.log_w = log_w
        noise = self.rng.standard_normal((self.n, self.model.n)) @ self._Lq.T
        self.particles = self.particles @ self.model.A.T + self.model.B @ u + noise
        return mean, cov


def systematic_resample(weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Systematic resampling: one uniform offset, N evenly spaced positions."""
    n = weights.shape[0]
    positions = (np.arange(n) + rng.random()) / n
    cumulative = np.cumsum(weights)
    cumulative[-1] = 1.0
    return np.searchsorted(cumulative, positions)


class UnscentedKalmanFilter:
    """UKF whose measurement map is the quantizer applied to C x + D u.

    Sigma-point spread follows the (alpha, beta, kappa) parameterization with
    defaults alpha=1, beta=2, kappa=3-n. Measurement noise R is additive and
    folded into the innovation covariance.
    """

    def __init__(
        self,
        model: StateSpaceModel,
        quantizer: UniformQuantizer,
        alpha: float = 1.0,
        beta: float = 2.0,
        kappa: float | None = None,
    ):
        self.model = model
        self.quantizer = quantizer
        n = model.n
        if kappa is None:
            kappa = 3.0 - n
        lam = alpha**2 * (n + kappa) - n
        self.lam = lam
        self.wm = np.full(2 * n + 1, 1.0 / (2.0 * (n + lam)))
        self.wc = self.wm.copy()
        self.wm[0] = lam / (n + lam)
        self.wc[0] = lam / (n + lam) + (1.0 - alpha**2 + beta)
        self.mean = model.mu1.copy()
        self.cov = model.P1.copy()

    def _sigma_points(self, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
        n = self.model.n
        scaled = (n + self.lam) * cov
        try:
            L = np.linalg.cholesky(scaled)
        except np.linalg.LinAlgError:
            jitter = 1e-9 * max(np.trace(cov), 1e-300) * np.eye(n)
            try:
                L = np.linalg.cholesky(scaled + (n + self.lam) * jitter)
            except np.linalg.LinAlgError as exc:
                raise FactorizationError(f"sigma-point covariance not SPD: {exc}") from exc
        pts = np.empty((2 * n + 1, n))
        pts[0] = mean
        pts[1 : n + 1] = mean + L.T
        pts[n + 1 :] = mean - L.T
        return pts

    def step(self, y, u) -> tuple[np.ndarray, np.ndarray]:
        u = np.atleast_1d(np.asarray(u, dtype=float))
        model = self.model
        y = np.atleast_1d(np.asarray(y, dtype=float))
        # Correction through the quantized measurement map.
        pts = self._sigma_points(self.mean, self.cov)
        zpts = quantize(pts @ model.C.T + model.D @ u, self.quantizer)
        zbar = self.wm @ zpts
        dz = zpts - zbar
        S = symmetrize((dz * self.wc[:, None]).T @ dz + model.R)
        dx = pts - self.mean
        Pxz = (dx * self.wc[:, None]).T @ dz
        try:
            gain = np.linalg.solve(S.T, Pxz.T).T
        except np.linalg.LinAlgError:
            jitter = 1e-9 * max(np.trace(S), 1e-300) * np.eye(model.p)
            gain = np.linalg.solve((S + jitter).T, Pxz.T).T
        self.mean = self.mean + gain @ (y - zbar)
        self.cov = symmetrize(self.cov - gain @ S @ gain.T)
        mean_post, cov_post = self.mean.copy(), self.cov.copy()
        # Prediction through the linear dynamics.
        pts = self._sigma_points(self.mean, self.cov)
        xpts = pts @ model.A.T + model.B @ u
        xbar = self.wm @ xpts
        dxp = xpts - xbar
        self.mean = xbar
        self.cov = symmetrize((dxp * self.wc[:, None]).T @ dxp + model.Q)
        return mean_post, cov_post


class QuantizedNoiseKalmanFilter:
    """Kalman filter treating y as a linear measurement with inflated noise.

    Quantization is modeled as additive uniform noise on [-step/2, step/2],
    adding diag(step^2 / 12) to the measurement covariance.
    """

    def __init__(self, model: StateSpaceModel, quantizer: UniformQuantizer):
        self.model = model
        self.R_eff = model.R + np.diag(quantizer.step**2 / 12.0)
        self.mean = model.mu1.copy()
        self.cov = model.P1.copy()

    def step(self, y, u) -> tuple[np.ndarray, np.ndarray]:
        u = np.atleast_1d(np.asarray(u, dtype=float))
        y = np.atleast_1d(np.asarray(y, dtype=float))
        model = self.model
        c = model.C @ self.mean + model.D @ u
        S = self.R_eff + model.C @ self.cov @ model.C.T
        gain = np.linalg.solve(S.T, (self.cov @ model.C.T).T).T
        self.mean = self.mean + gain @ (y - c)
        self.cov = symmetrize(
            (np.eye(model.n) - gain @ model.C) @ self.cov
        )
        mean_post, cov_post = self.mean.copy(), self.cov.copy()
        self.mean = model.A @ self.mean + model.B @ u
        self.cov = symmetrize(model.Q + model.A @ self.cov @ model.A.T)
        return mean_post, cov_post


class GridFilter:
    """Point-mass Bayes recursion on a regular scalar grid (oracle filter)."""

    def __init__(
        self,
        model: StateSpaceModel,
        quantizer: UniformQuantizer,
        lo: float,
        hi: float,
        n_points: int = 4001,
        edge_tol: float = 1e-6,
    ):
        if model.n != 1:
            raise UnsupportedConfigError("grid filter supports scalar states only")
        if not model.r_is_diagonal():
            raise UnsupportedConfigError("grid filter requires diagonal R")
        if float(model.Q[0, 0]) <= 0.0:
            raise UnsupportedConfigError("grid filter requires Q > 0")
        self.model = model
        self.quantizer = quantizer
        self.grid = np.linspace(lo, hi, n_points)
        self.cell = self.grid[1] - self.grid[0]
        self.edge_tol = edge_tol
        d = self.grid - float(model.mu1[0])
        p1 = float(model.P1[0, 0])
        if p1 > 0:
            logm = -0.5 * d * d / p1
        else:
            logm = np.where(np.abs(d) == np.abs(d).min(), 0.0, -np.inf)
        m = np.exp(logm - logm.max())
        self.masses = m / m.sum()

    def _check_edges(self):
        if self.masses[0] + self.masses[-1] > self.edge_tol:
            raise GridTooSmallError(
                f"mass {self.masses[0] + self.masses[-1]:.3e} at grid edges; enlarge the grid"
            )

    def step(self, y, u) -> tuple[np.ndarray, np.ndarray]:
        model = self.model
        u = np.atleast_1d(np.asarray(u, dtype=float))
        bounds = region_bounds(y, self.quantizer)
        du = model.D @ u
        sig = np.sqrt(np.diag(model.R))
        log_like = np.zeros_like(self.grid)
        for j, (a, b) in enumerate(bounds):
            c = model.C[j, 0] * self.grid + du[j]
            log_like += interval_log_prob(a, b, c, sig[j])
        log_post = np.log(np.maximum(self.masses, 1e-300)) + log_like
        m = np.exp(log_post - log_post.max())
        self.masses = m / m.sum()
        self._check_edges()
        mean = float(self.masses @ self.grid)
        var = float(self.masses @ (self.grid - mean) ** 2)
        mean_post = np.array([mean])
        cov_post = np.array([[var]])
        # Prediction: discrete convolution with the Gaussian transition kernel.
        shift = model.A[0, 0] * self.grid + float((model.B @ u)[0])
        sq = float(np.sqrt(model.Q[0, 0]))
        diff = (self.grid[:, None] - shift[None, :]) / sq
        kernel = np.exp(-0.5 * diff * diff)
        pred = kernel @ self.masses
        total = pred.sum()
        if total <= 0.0:
            raise GridTooSmallError("predicted mass vanished; enlarge the grid")
        self.masses = pred / total
        self._check_edges()
        return mean_post, cov_post

    def density(self) -> np.ndarray:
        """Current point masses converted to a density on the grid."""
        return self.masses / self.cell


def run_filter(filt, trajectory) -> tuple[np.ndarray, np.ndarray]:
    """Run any filter over a trajectory; returns (means (T,n), covs (T,n,n))."""
    T = trajectory.horizon
    n = filt.model.n
    means = np.empty((T, n))
    covs = np.empty((T, n, n))
    for t in range(T):
        means[t], covs[t] = filt.step(trajectory.y[t], trajectory.u[t])
    return means, covs
