"""Linear MIMO state-space model with a uniform midtread output quantizer.

Covers trajectory simulation, the quantizer map and its region geometry, and
the exact (CDF-product) log-probability of a quantized measurement.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import log_ndtr, ndtr

from .exceptions import ContractError, UnsupportedConfigError

_LATTICE_RTOL = 1e-9


def _mat(x, name: str) -> np.ndarray:
    a = np.asarray(x, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a.reshape(1, -1)
    if a.ndim != 2:
        raise ContractError(f"{name} must be a matrix, got ndim {a.ndim}")
    return a


def _vec(x, name: str) -> np.ndarray:
    v = np.atleast_1d(np.asarray(x, dtype=float))
    if v.ndim != 1:
        raise ContractError(f"{name} must be a vector, got shape {v.shape}")
    return v


def sqrt_psd(m: np.ndarray, name: str = "covariance") -> np.ndarray:
    """Matrix square root of a symmetric PSD matrix (Cholesky, eigh fallback).

    Zero covariances are accepted so noise-free configurations can be
    simulated (the square root is then zero).
    """
    m = np.asarray(m, dtype=float)
    if not np.allclose(m, m.T, atol=1e-10, rtol=0.0):
        raise ContractError(f"{name} must be symmetric")
    try:
        return np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(m)
        if vals.min() < -1e-10 * max(1.0, abs(vals.max())):
            raise ContractError(f"{name} is not positive semidefinite")
        return vecs * np.sqrt(np.clip(vals, 0.0, None))


@dataclass(frozen=True)
class StateSpaceModel:
    """x_{t+1} = A x + B u + w,  z = C x + D u + v,  y = quantize(z)."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    mu1: np.ndarray
    P1: np.ndarray

    def __post_init__(self):
        A = _mat(self.A, "A")
        n = A.shape[0]
        if A.shape != (n, n):
            raise ContractError("A must be square")
        B = _mat(self.B, "B")
        if B.shape[0] != n:
            raise ContractError(f"B must have {n} rows, got {B.shape}")
        m = B.shape[1]
        C = _mat(self.C, "C")
        if C.shape[1] != n:
            raise ContractError(f"C must have {n} columns, got {C.shape}")
        p = C.shape[0]
        D = _mat(self.D, "D")
        if D.shape != (p, m):
            raise ContractError(f"D must be {p}x{m}, got {D.shape}")
        Q = _mat(self.Q, "Q")
        if Q.shape != (n, n):
            raise ContractError(f"Q must be {n}x{n}")
        R = _mat(self.R, "R")
        if R.shape != (p, p):
            raise ContractError(f"R must be {p}x{p}")
        mu1 = _vec(self.mu1, "mu1")
        if mu1.shape != (n,):
            raise ContractError(f"mu1 must have length {n}")
        P1 = _mat(self.P1, "P1")
        if P1.shape != (n, n):
            raise ContractError(f"P1 must be {n}x{n}")
        for name, mat in (("Q", Q), ("R", R), ("P1", P1)):
            sqrt_psd(mat, name)
        for name, val in zip(
            ("A", "B", "C", "D", "Q", "R", "mu1", "P1"),
            (A, B, C, D, Q, R, mu1, P1),
        ):
            object.__setattr__(self, name, val)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def p(self) -> int:
        return self.C.shape[0]

    def r_is_diagonal(self, tol: float = 1e-12) -> bool:
        off = self.R - np.diag(np.diag(self.R))
        return bool(np.max(np.abs(off)) <= tol)


@dataclass(frozen=True)
class UniformQuantizer:
    """Per-dimension step sizes of a uniform midtread quantizer."""

    step: np.ndarray

    def __post_init__(self):
        step = _vec(self.step, "step")
        if np.any(step <= 0.0):
            raise ContractError("all quantizer steps must be > 0")
        object.__setattr__(self, "step", step)

    @property
    def p(self) -> int:
        return self.step.shape[0]


@dataclass(frozen=True)
class InputSpec:
    """Gaussian sampling spec for exogenous inputs u_t ~ N(mean, cov)."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = _vec(self.mean, "input mean")
        cov = _mat(self.cov, "input cov")
        if cov.shape != (mean.shape[0],) * 2:
            raise ContractError("input mean/cov dimensions disagree")
        sqrt_psd(cov, "input cov")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)


@dataclass(frozen=True)
class Trajectory:
    """A simulated run: states, linear outputs, quantized outputs, inputs."""

    x: np.ndarray  # (T, n)
    z: np.ndarray  # (T, p)
    y: np.ndarray  # (T, p)
    u: np.ndarray  # (T, m)
    seed: int

    def __post_init__(self):
        T = self.x.shape[0]
        if not (self.z.shape[0] == self.y.shape[0] == self.u.shape[0] == T):
            raise ContractError("trajectory arrays must have equal length")

    @property
    def horizon(self) -> int:
        return self.x.shape[0]


def quantize(z, q: UniformQuantizer) -> np.ndarray:
    """y_j = step_j * round(z_j / step_j), with ties mapped to the upper region.

    round(x) = floor(x + 0.5), so a boundary point z = y + step/2 belongs to
    the half-open region above it.
    """
    z = np.asarray(z, dtype=float)
    return q.step * np.floor(z / q.step + 0.5)


def region_bounds(y, q: UniformQuantizer) -> list[tuple[float, float]]:
    """Half-open interval [y_j - step_j/2, y_j + step_j/2) per dimension."""
    y = _vec(y, "y")
    if y.shape[0] != q.p:
        raise ContractError("measurement dimension != quantizer dimension")
    ratio = y / q.step
    if np.any(np.abs(ratio - np.round(ratio)) > _LATTICE_RTOL):
        raise ContractError(f"measurement {y} is not on the quantizer lattice")
    half = 0.5 * q.step
    return [(float(a), float(b)) for a, b in zip(y - half, y + half)]


def interval_log_prob(a, b, c, sigma) -> np.ndarray:
    """log P(a <= Z < b) for Z ~ N(c, sigma^2), stable in both tails.

    Broadcasts over array-valued c. When the interval lies deep in one tail
    the difference is formed in the log domain from the nearer endpoint.
    """
    c = np.asarray(c, dtype=float)
    alpha = (a - c) / sigma
    beta = (b - c) / sigma
    out = np.empty(np.broadcast(alpha, beta).shape)
    alpha, beta = np.broadcast_arrays(alpha, beta)
    right = alpha >= 0.0  # interval in the right tail: use survival functions
    left = beta <= 0.0
    mid = ~(right | left)
    if np.any(right):
        la = log_ndtr(-alpha[right])
        lb = log_ndtr(-beta[right])
        out[right] = la + np.log1p(-np.exp(np.minimum(lb - la, 0.0)))
    if np.any(left):
        lb = log_ndtr(beta[left])
        la = log_ndtr(alpha[left])
        out[left] = lb + np.log1p(-np.exp(np.minimum(la - lb, 0.0)))
    if np.any(mid):
        out[mid] = np.log(ndtr(beta[mid]) - ndtr(alpha[mid]))
    return out


def exact_region_loglik(y, x, u, model: StateSpaceModel, q: UniformQuantizer) -> float:
    """Exact log P(y | x): Gaussian mass of the quantizer region around C x + D u.

    Requires diagonal R (the product form factorizes across output channels).
    """
    if not model.r_is_diagonal():
        raise UnsupportedConfigError(
            "exact_region_loglik requires diagonal R; use the GMM likelihood"
        )
    x = _vec(x, "x")
    u = _vec(u, "u")
    c = model.C @ x + model.D @ u
    bounds = region_bounds(y, q)
    sig = np.sqrt(np.diag(model.R))
    total = 0.0
    for j, (a, b) in enumerate(bounds):
        total += float(interval_log_prob(a, b, c[j], sig[j]))
    return total


def simulate(model: StateSpaceModel, q: UniformQuantizer, inputs, T: int, seed) -> Trajectory:
    """Simulate T steps of the model; deterministic given the seed.

    `inputs` is either an explicit (T, m) array or an InputSpec to sample from.
    """
    if T < 1:
        raise ContractError("T must be >= 1")
    if q.p != model.p:
        raise ContractError("quantizer dimension != output dimension")
    rng = np.random.default_rng(seed)
    if isinstance(inputs, InputSpec):
        L = sqrt_psd(inputs.cov, "input cov")
        u = inputs.mean + rng.standard_normal((T, model.m)) @ L.T
    else:
        u = np.asarray(inputs, dtype=float).reshape(T, model.m)
    Lq = sqrt_psd(model.Q, "Q")
    Lr = sqrt_psd(model.R, "R")
    Lp = sqrt_psd(model.P1, "P1")
    x = np.empty((T, model.n))
    z = np.empty((T, model.p))
    x[0] = model.mu1 + Lp @ rng.standard_normal(model.n)
    for t in range(T):
        v = Lr @ rng.standard_normal(model.p)
        z[t] = model.C @ x[t] + model.D @ u[t] + v
        if t + 1 < T:
            w = Lq @ rng.standard_normal(model.n)
            x[t + 1] = model.A @ x[t] + model.B @ u[t] + w
    y = quantize(z, q)
    seed_val = seed if isinstance(seed, int) else -1
    return Trajectory(x=x, z=z, y=y, u=u, seed=seed_val)


def trajectory_to_csv(traj: Trajectory, path) -> None:
    """Write a trajectory as CSV with header t,x1..xn,z1..zp,y1..yp,u1..um."""
    n = traj.x.shape[1]
    p = traj.z.shape[1]
    m = traj.u.shape[1]
    header = (
        ["t"]
        + [f"x{i + 1}" for i in range(n)]
        + [f"z{i + 1}" for i in range(p)]
        + [f"y{i + 1}" for i in range(p)]
        + [f"u{i + 1}" for i in range(m)]
    )
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for t in range(traj.horizon):
            row = [t + 1]
            row += [repr(float(v)) for v in traj.x[t]]
            row += [repr(float(v)) for v in traj.z[t]]
            row += [repr(float(v)) for v in traj.y[t]]
            row += [repr(float(v)) for v in traj.u[t]]
            writer.writerow(row)


def trajectory_from_csv(path) -> Trajectory:
    """Read a trajectory written by trajectory_to_csv."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [list(map(float, row)) for row in reader]
    n = sum(1 for h in header if h.startswith("x"))
    p = sum(1 for h in header if h.startswith("z"))
    m = sum(1 for h in header if h.startswith("u"))
    data = np.asarray(rows, dtype=float)
    if data.size == 0:
        raise ContractError(f"{path} contains no trajectory rows")
    x = data[:, 1 : 1 + n]
    z = data[:, 1 + n : 1 + n + p]
    y = data[:, 1 + n + p : 1 + n + 2 * p]
    u = data[:, 1 + n + 2 * p :]
    return Trajectory(x=x, z=z, y=y, u=u, seed=-1)
