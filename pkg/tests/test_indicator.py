"""Indicator-as-GMM construction: EM fit, scaling, tensor product, persistence."""
from __future__ import annotations

import json

import numpy as np
import pytest

from qgsf import indicator as ind
from qgsf.exceptions import ContractError, ModelFileError
from qgsf.system import UniformQuantizer

# ---------------------------------------------------------------------------
# EM fitting on the unit interval
# ---------------------------------------------------------------------------


def test_em_single_component_matches_sample_moments():
    rng = np.random.default_rng(1)
    x = rng.random(10_000)
    g = ind.em_fit_unit(x, 1, max_iter=100, tol=0.0)
    assert g.weights[0] == pytest.approx(1.0)
    # a 1-component EM fixed point is the sample mean/variance
    assert g.means[0] == pytest.approx(x.mean(), abs=1e-10)
    assert g.variances[0] == pytest.approx(x.var(), rel=1e-8)


def test_em_two_cluster_recovery():
    rng = np.random.default_rng(2)
    x = np.concatenate(
        [rng.normal(0.2, 0.02, 7000), rng.normal(0.8, 0.02, 3000)]
    )
    g = ind.em_fit_unit(x, 2, max_iter=300, seed=0)
    order = np.argsort(g.means)
    np.testing.assert_allclose(g.means[order], [0.2, 0.8], atol=0.01)
    np.testing.assert_allclose(g.weights[order], [0.7, 0.3], atol=0.02)


def test_em_loglik_monotone_in_iterations():
    rng = np.random.default_rng(3)
    x = rng.random(5000)
    # final_loglik reports the likelihood of the parameters reached so far,
    # so sweeping the iteration cap with tol=0 exposes EM's ascent property
    lls = [
        ind.em_fit_unit(x, 5, max_iter=m, tol=0.0, seed=0).final_loglik
        for m in (2, 5, 10, 25, 60)
    ]
    diffs = np.diff(lls)
    assert np.all(diffs >= -1e-9)


def test_em_rejects_empty_and_bad_k():
    with pytest.raises(ContractError):
        ind.em_fit_unit([], 2)
    with pytest.raises(ContractError):
        ind.em_fit_unit([0.5, 0.6], 0)


def test_train_guards_sample_count():
    with pytest.raises(ContractError):
        ind.train_unit_gmm(100, 20, seed=0)


def test_unit_model_density_integrates_to_one(unit_gmm_k5):
    xs = np.linspace(-2.0, 3.0, 100_001)
    mass = np.trapezoid(unit_gmm_k5.density(xs), xs)
    assert mass == pytest.approx(1.0, abs=1e-6)


def test_unit_model_approximates_uniform(unit_gmm_k5):
    xs = np.linspace(0.1, 0.9, 17)
    dens = unit_gmm_k5.density(xs)
    assert np.all(np.abs(dens - 1.0) < 0.25)  # loose for K1=5


def test_unit_model_validation():
    with pytest.raises(ContractError):
        ind.UnitIntervalGMM(
            weights=[0.5, 0.4], means=[0.2, 0.8], variances=[0.01, 0.01],
            n_samples=10, seed=0, em_iterations=1, final_loglik=0.0,
        )
    with pytest.raises(ContractError):
        ind.UnitIntervalGMM(
            weights=[1.0], means=[0.5], variances=[0.0],
            n_samples=10, seed=0, em_iterations=1, final_loglik=0.0,
        )


# ---------------------------------------------------------------------------
# interval scaling
# ---------------------------------------------------------------------------


def test_scaling_identity(unit_gmm_k5):
    a, b = -5.0, 5.0
    s = ind.scale_to_interval(unit_gmm_k5, a, b)
    zs = np.linspace(a - 2, b + 2, 57)
    expect = unit_gmm_k5.density((zs - a) / (b - a))
    np.testing.assert_allclose(s.density(zs), expect, rtol=1e-12, atol=1e-300)


def test_scaling_mass(unit_gmm_k5):
    s = ind.scale_to_interval(unit_gmm_k5, 2.0, 9.0)
    assert s.total_mass == pytest.approx(7.0, rel=1e-9)
    assert (s.lower, s.upper) == (2.0, 9.0)


def test_scaling_rejects_empty_interval(unit_gmm_k5):
    with pytest.raises(ContractError):
        ind.scale_to_interval(unit_gmm_k5, 1.0, 1.0)


# ---------------------------------------------------------------------------
# tensor product
# ---------------------------------------------------------------------------


def test_tensor_mass_is_region_volume(unit_gmm_k5):
    s1 = ind.scale_to_interval(unit_gmm_k5, -3.5, 3.5)
    s2 = ind.scale_to_interval(unit_gmm_k5, 3.5, 10.5)
    g = ind.tensor_product([s1, s2])
    assert g.n_components == unit_gmm_k5.k1 ** 2
    assert g.total_mass == pytest.approx(49.0, rel=1e-9)


def test_tensor_density_separable(unit_gmm_k5):
    s1 = ind.scale_to_interval(unit_gmm_k5, -3.5, 3.5)
    s2 = ind.scale_to_interval(unit_gmm_k5, 3.5, 10.5)
    g = ind.tensor_product([s1, s2])
    rng = np.random.default_rng(5)
    for _ in range(10):
        z = rng.uniform(-6, 13, size=2)
        expect = float(s1.density(z[0]) * s2.density(z[1]))
        assert g.density(z) == pytest.approx(expect, rel=1e-9, abs=1e-300)


def test_tensor_requires_dimensions():
    with pytest.raises(ContractError):
        ind.tensor_product([])


# ---------------------------------------------------------------------------
# regularization and per-measurement construction
# ---------------------------------------------------------------------------


def test_regularize_adds_alpha_exactly(unit_gmm_k5):
    s = ind.scale_to_interval(unit_gmm_k5, 0.0, 10.0)
    g = ind.tensor_product([s])
    reg = ind.regularize(g, 0.1)
    np.testing.assert_allclose(reg.covs, g.covs + 0.1 * np.eye(1), rtol=0, atol=0)
    np.testing.assert_array_equal(reg.weights, g.weights)
    np.testing.assert_array_equal(reg.means, g.means)
    assert reg.alpha == pytest.approx(0.1)
    with pytest.raises(ContractError):
        ind.regularize(g, -0.1)


def test_default_alpha():
    q = UniformQuantizer(step=[10.0])
    assert ind.default_alpha(q) == pytest.approx(1e-6 * 100.0)
    q2 = UniformQuantizer(step=[7.0, 2.0])
    assert ind.default_alpha(q2) == pytest.approx(1e-6 * 49.0)


def test_indicator_for_output_bounds_and_mass(unit_gmm_k5):
    q = UniformQuantizer(step=[10.0])
    g = ind.indicator_for_output([20.0], q, unit_gmm_k5)
    assert g.bounds == ((15.0, 25.0),)
    assert g.total_mass == pytest.approx(10.0, rel=1e-9)
    assert g.alpha == pytest.approx(1e-4)


def test_indicator_for_output_2d_mass_and_prereduce(unit_gmm_k5):
    q = UniformQuantizer(step=[7.0, 7.0])
    g = ind.indicator_for_output([7.0, -7.0], q, unit_gmm_k5)
    assert g.n_components == 25
    assert g.total_mass == pytest.approx(49.0, rel=1e-9)
    red = ind.indicator_for_output([7.0, -7.0], q, unit_gmm_k5, pre_reduce=8)
    assert red.n_components == 8
    # moment-preserving merges keep the total mass exact
    assert red.total_mass == pytest.approx(49.0, rel=1e-9)
    assert red.bounds == ((3.5, 10.5), (-10.5, -3.5))


def test_indicator_tracks_uniform_inside_region(unit_gmm_k20):
    q = UniformQuantizer(step=[10.0])
    g = ind.indicator_for_output([0.0], q, unit_gmm_k20, alpha=0.0)
    zs = np.linspace(-4.0, 4.0, 33)
    vals = np.array([g.density([z]) for z in zs])
    assert np.mean(np.abs(vals - 1.0)) < 0.05


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def test_save_load_round_trip(tmp_path, unit_gmm_k5):
    path = tmp_path / "model.json"
    ind.save_model(unit_gmm_k5, path)
    back = ind.load_model(path)
    np.testing.assert_array_equal(back.weights, unit_gmm_k5.weights)
    np.testing.assert_array_equal(back.means, unit_gmm_k5.means)
    np.testing.assert_array_equal(back.variances, unit_gmm_k5.variances)
    assert back.n_samples == unit_gmm_k5.n_samples
    assert back.seed == unit_gmm_k5.seed
    assert back.final_loglik == unit_gmm_k5.final_loglik


def test_load_rejects_bad_weight_sum(tmp_path, unit_gmm_k5):
    path = tmp_path / "model.json"
    ind.save_model(unit_gmm_k5, path)
    payload = json.loads(path.read_text())
    payload["weights"] = [0.5 * w for w in payload["weights"]]
    path.write_text(json.dumps(payload))
    with pytest.raises(ModelFileError):
        ind.load_model(path)


def test_load_rejects_missing_field_and_garbage(tmp_path):
    path = tmp_path / "model.json"
    path.write_text("{\"weights\": [1.0]}")
    with pytest.raises(ModelFileError):
        ind.load_model(path)
    path.write_text("not json")
    with pytest.raises(ModelFileError):
        ind.load_model(path)
