"""State-space model, quantizer geometry, exact region likelihood, simulation."""
from __future__ import annotations

import numpy as np
import pytest
from scipy import integrate, stats

from qgsf import system as sysm
from qgsf.exceptions import ContractError, UnsupportedConfigError

Q10 = sysm.UniformQuantizer(step=[10.0])

# ---------------------------------------------------------------------------
# quantizer map and region geometry
# ---------------------------------------------------------------------------


def test_quantize_examples():
    assert sysm.quantize([3.0], Q10)[0] == 0.0
    assert sysm.quantize([7.0], Q10)[0] == 10.0
    # boundary point belongs to the upper region
    assert sysm.quantize([5.0], Q10)[0] == 10.0
    assert sysm.quantize([-5.0], Q10)[0] == 0.0


def test_quantize_frozen_2d_oracle():
    q = sysm.UniformQuantizer(step=[7.0, 7.0])
    np.testing.assert_array_equal(sysm.quantize([10.4, -3.6], q), [7.0, -7.0])


def test_region_bounds_examples():
    assert sysm.region_bounds([0.0], Q10) == [(-5.0, 5.0)]
    assert sysm.region_bounds([20.0], Q10) == [(15.0, 25.0)]
    q = sysm.UniformQuantizer(step=[7.0, 7.0])
    assert sysm.region_bounds([7.0, -7.0], q) == [(3.5, 10.5), (-10.5, -3.5)]


def test_region_bounds_rejects_off_lattice():
    with pytest.raises(ContractError):
        sysm.region_bounds([3.0], Q10)


def test_quantizer_region_duality_bulk():
    # quantize(z) = y  <=>  z in region(y), over many random points and steps
    rng = np.random.default_rng(42)
    for step in (1.0, 7.0, 10.0):
        q = sysm.UniformQuantizer(step=[step])
        z = rng.uniform(-1000.0, 1000.0, size=100_000)
        y = sysm.quantize(z[:, None], q).ravel()
        lo = y - step / 2
        hi = y + step / 2
        assert np.all((z >= lo) & (z < hi))


def test_quantizer_validation():
    with pytest.raises(ContractError):
        sysm.UniformQuantizer(step=[0.0])
    with pytest.raises(ContractError):
        sysm.UniformQuantizer(step=[1.0, -2.0])


# ---------------------------------------------------------------------------
# interval_log_prob / exact_region_loglik
# ---------------------------------------------------------------------------


def test_interval_log_prob_central():
    # nearly all mass: [-50, 50] for N(0,1)
    assert sysm.interval_log_prob(-50.0, 50.0, 0.0, 1.0) == pytest.approx(0.0, abs=1e-12)


def test_interval_log_prob_oracle():
    # P(-29.09 <= Z < 2.5298) for Z ~ N(0,1)
    expect = np.log(stats.norm.cdf(2.5298) - stats.norm.cdf(-29.09))
    got = float(sysm.interval_log_prob(-29.09, 2.5298, 0.0, 1.0))
    assert got == pytest.approx(expect, rel=1e-12)


def test_interval_log_prob_deep_tail_stable():
    # region far in the right tail; direct CDF subtraction underflows to log(0)
    val = float(sysm.interval_log_prob(40.0, 41.0, 0.0, 1.0))
    assert np.isfinite(val)
    # frozen oracle: 60-digit arithmetic gives log(Phi(-40) - Phi(-41))
    assert val == pytest.approx(-804.6084420137538, rel=1e-12)
    # symmetric left-tail case must agree exactly
    left = float(sysm.interval_log_prob(-41.0, -40.0, 0.0, 1.0))
    assert left == pytest.approx(val, rel=1e-12)


def _model_ex1():
    return sysm.StateSpaceModel(
        A=0.8, B=1.5, C=2.8, D=1.8, Q=1.0, R=0.1, mu1=1.0, P1=2.0
    )


def test_exact_region_loglik_quadrature_cross_check():
    model = _model_ex1()
    x, u = np.array([1.3]), np.array([-0.4])
    c = float((model.C @ x + model.D @ u)[0])
    sig = np.sqrt(0.1)
    y = sysm.quantize([c + 1.0], Q10)
    (a, b), = sysm.region_bounds(y, Q10)
    mass = integrate.quad(lambda z: stats.norm.pdf(z, c, sig), a, b)[0]
    got = sysm.exact_region_loglik(y, x, u, model, Q10)
    assert got == pytest.approx(np.log(mass), rel=1e-9)


def test_exact_region_loglik_requires_diagonal_r():
    model = sysm.StateSpaceModel(
        A=np.eye(2), B=np.eye(2), C=np.eye(2), D=np.zeros((2, 2)),
        Q=np.eye(2), R=[[0.2, 0.05], [0.05, 0.2]], mu1=[0.0, 0.0], P1=np.eye(2),
    )
    q = sysm.UniformQuantizer(step=[1.0, 1.0])
    with pytest.raises(UnsupportedConfigError):
        sysm.exact_region_loglik([0.0, 0.0], [0.0, 0.0], [0.0, 0.0], model, q)


def test_region_probs_sum_to_one():
    # sum over lattice outputs of P(y | x) = 1
    model = _model_ex1()
    x, u = np.array([0.7]), np.array([1.1])
    ys = np.arange(-30, 31) * 10.0
    total = sum(
        np.exp(sysm.exact_region_loglik([y], x, u, model, Q10)) for y in ys
    )
    assert total == pytest.approx(1.0, abs=1e-9)


def test_region_loglik_additive_over_channels():
    model = sysm.StateSpaceModel(
        A=np.eye(2), B=np.eye(2), C=np.eye(2), D=np.zeros((2, 2)),
        Q=np.eye(2), R=np.diag([0.1, 0.3]), mu1=[0.0, 0.0], P1=np.eye(2),
    )
    q = sysm.UniformQuantizer(step=[7.0, 7.0])
    x = np.array([2.0, -1.0])
    u = np.zeros(2)
    joint = sysm.exact_region_loglik([7.0, 0.0], x, u, model, q)
    m1 = sysm.StateSpaceModel(A=1.0, B=1.0, C=1.0, D=0.0, Q=1.0, R=0.1, mu1=0.0, P1=1.0)
    m2 = sysm.StateSpaceModel(A=1.0, B=1.0, C=1.0, D=0.0, Q=1.0, R=0.3, mu1=0.0, P1=1.0)
    q1 = sysm.UniformQuantizer(step=[7.0])
    sep = sysm.exact_region_loglik([7.0], x[:1], u[:1], m1, q1) + sysm.exact_region_loglik(
        [0.0], x[1:], u[1:], m2, q1
    )
    assert joint == pytest.approx(sep, rel=1e-12)


# ---------------------------------------------------------------------------
# model validation and simulation
# ---------------------------------------------------------------------------


def test_model_shape_validation():
    with pytest.raises(ContractError):
        sysm.StateSpaceModel(
            A=np.eye(2), B=1.0, C=2.8, D=1.8, Q=np.eye(2), R=0.1,
            mu1=[0.0, 0.0], P1=np.eye(2),
        )
    with pytest.raises(ContractError):
        sysm.StateSpaceModel(A=1.0, B=1.0, C=1.0, D=1.0, Q=-1.0, R=0.1, mu1=0.0, P1=1.0)


def test_model_accepts_psd_zero_noise():
    m = sysm.StateSpaceModel(A=1.0, B=1.0, C=1.0, D=0.0, Q=0.0, R=0.0, mu1=0.0, P1=0.0)
    assert m.n == m.m == m.p == 1


def test_simulate_deterministic_given_seed():
    model = _model_ex1()
    spec = sysm.InputSpec(mean=[0.0], cov=[[2.0]])
    a = sysm.simulate(model, Q10, spec, 20, seed=7)
    b = sysm.simulate(model, Q10, spec, 20, seed=7)
    c = sysm.simulate(model, Q10, spec, 20, seed=8)
    np.testing.assert_array_equal(a.x, b.x)
    np.testing.assert_array_equal(a.y, b.y)
    assert not np.array_equal(a.x, c.x)


def test_simulate_noise_free_recursion():
    model = sysm.StateSpaceModel(
        A=0.8, B=1.5, C=2.8, D=1.8, Q=0.0, R=0.0, mu1=1.0, P1=0.0
    )
    u = np.linspace(-1.0, 1.0, 10).reshape(-1, 1)
    traj = sysm.simulate(model, Q10, u, 10, seed=0)
    x = 1.0
    for t in range(10):
        assert traj.x[t, 0] == pytest.approx(x, abs=1e-12)
        z = 2.8 * x + 1.8 * u[t, 0]
        assert traj.z[t, 0] == pytest.approx(z, abs=1e-12)
        assert traj.y[t, 0] == sysm.quantize([z], Q10)[0]
        x = 0.8 * x + 1.5 * u[t, 0]


def test_simulate_outputs_quantized_consistently():
    model = _model_ex1()
    spec = sysm.InputSpec(mean=[0.0], cov=[[2.0]])
    traj = sysm.simulate(model, Q10, spec, 200, seed=3)
    np.testing.assert_array_equal(traj.y, sysm.quantize(traj.z, Q10))


def test_trajectory_csv_round_trip(tmp_path):
    model = _model_ex1()
    spec = sysm.InputSpec(mean=[0.0], cov=[[2.0]])
    traj = sysm.simulate(model, Q10, spec, 30, seed=5)
    path = tmp_path / "traj.csv"
    sysm.trajectory_to_csv(traj, path)
    back = sysm.trajectory_from_csv(path)
    np.testing.assert_array_equal(back.x, traj.x)
    np.testing.assert_array_equal(back.z, traj.z)
    np.testing.assert_array_equal(back.y, traj.y)
    np.testing.assert_array_equal(back.u, traj.u)
