import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from adakrig.errors import (
    ArgumentError,
    DegenerateDesignError,
    SingularTrendError,
    UndefinedQ2Error,
)
from adakrig.forward import bastos_h
from adakrig.gp import (
    Kernel,
    KrigingModel,
    conditional_sample,
    fit_kriging,
    gls_beta,
    kernel_eval,
    loo_predictions,
    q2_from_predictions,
    q2_loocv,
    trend_matrix,
    virtual_update,
)


def bordered_oracle(Z, h, Zs, kernel, trend):
    """Universal kriging through the bordered (saddle-point) system.

    Mean and covariance follow from solving ``[[K, F], [F', 0]]`` with a dense
    solver, independently of the Cholesky/GLS route used by the model.
    """
    K = kernel.cov(Z, Z) + kernel.nugget * np.eye(len(Z))
    F = trend_matrix(trend, Z)
    k = kernel.cov(Zs, Z)
    Fs = trend_matrix(trend, Zs)
    p = F.shape[1]
    A = np.block([[K, F], [F.T, np.zeros((p, p))]])
    B = np.hstack([k, Fs])
    W = np.linalg.solve(A, B.T)
    mean = W[: len(Z)].T @ h
    cov = kernel.cov(Zs, Zs) - B @ W
    return mean, cov


def plain_conditioning(Z, h, Zs, kernel):
    """Zero-mean Gaussian conditioning with an explicit inverse."""
    K = kernel.cov(Z, Z) + kernel.nugget * np.eye(len(Z))
    Kinv = np.linalg.inv(K)
    k = kernel.cov(Zs, Z)
    return k @ Kinv @ h, kernel.cov(Zs, Zs) - k @ Kinv @ k.T


def random_instance(rng, trend):
    N = int(rng.integers(2, 6))
    Q = int(rng.integers(1, 3))
    Z = rng.random((N, Q))
    h = rng.standard_normal(N)
    variance = float(rng.uniform(0.5, 2.0))
    # a small explicit nugget keeps both routes well conditioned
    kernel = Kernel(
        variance, tuple(rng.uniform(0.1, 0.6, Q)), 1e-6 * variance,
        rng.choice(["sqexp", "matern52"]),
    )
    return Z, h, rng.random((4, Q)), kernel


@pytest.mark.parametrize("trend", ["none", "constant"])
def test_prediction_matches_gaussian_conditioning(trend):
    rng = np.random.default_rng(11)
    for _ in range(60):
        Z, h, Zs, kernel = random_instance(rng, trend)
        model = KrigingModel(Z, h, kernel, trend=trend)
        assert model.nugget_used == kernel.nugget
        pred = model.predict(Zs)
        cov = model.cov(Zs, Zs)
        if trend == "none":
            mean_ref, cov_ref = plain_conditioning(Z, h, Zs, kernel)
        else:
            mean_ref, cov_ref = bordered_oracle(Z, h, Zs, kernel, trend)
        # relative to the magnitude of each quantity, so near-zero entries do not dominate
        mean_scale = np.abs(mean_ref).max()
        np.testing.assert_allclose(pred.mean, mean_ref, rtol=0, atol=1e-10 * mean_scale)
        np.testing.assert_allclose(cov, cov_ref, rtol=0, atol=1e-10 * kernel.variance)
        np.testing.assert_allclose(
            pred.variance, np.clip(np.diag(cov_ref), 0, None), rtol=0, atol=1e-10 * kernel.variance
        )


def test_interpolates_design_points():
    rng = np.random.default_rng(2)
    Z = rng.random((6, 2))
    h = rng.standard_normal(6)
    model = KrigingModel(Z, h, Kernel(1.0, (0.4, 0.4)), trend="constant")
    pred = model.predict(Z)
    np.testing.assert_allclose(pred.mean, h, atol=1e-6)
    assert np.all(pred.variance < 1e-6)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_adding_a_point_never_increases_variance(seed):
    rng = np.random.default_rng(seed)
    Z = rng.random((4, 2))
    model = KrigingModel(Z, rng.standard_normal(4), Kernel(1.0, (0.5, 0.3)), trend="constant")
    z_new = rng.random((1, 2))
    if model.is_design_point(z_new):
        return
    updated = virtual_update(model, z_new, 0.3)
    grid = rng.random((50, 2))
    assert np.all(updated.predict(grid).variance <= model.predict(grid).variance + 1e-12)


def test_kernel_nugget_only_on_identical_points():
    k = Kernel(2.0, (0.5,), nugget=0.1)
    assert kernel_eval(k, [0.3], [0.3]) == pytest.approx(2.1)
    assert kernel_eval(k, [0.3], [0.3 + 1e-9]) == pytest.approx(2.0, rel=1e-6)
    with pytest.raises(ArgumentError):
        kernel_eval(k, [0.3, 0.1], [0.3, 0.1])


def test_kernel_rejects_bad_parameters():
    with pytest.raises(ArgumentError):
        Kernel(-1.0, (1.0,))
    with pytest.raises(ArgumentError):
        Kernel(1.0, (0.0,))
    with pytest.raises(ArgumentError):
        Kernel(1.0, (1.0,), family="cubic")


def test_gls_rank_deficient_trend():
    Z = np.array([[0.1, 0.5], [0.4, 0.5], [0.9, 0.5]])
    F = trend_matrix("linear", Z)
    L = np.linalg.cholesky(Kernel(1.0, (0.3, 0.3)).cov(Z, Z) + 1e-8 * np.eye(3))
    with pytest.raises(SingularTrendError):
        gls_beta(F, L, np.ones(3))


def test_virtual_update_rejects_coincident_point():
    Z = np.array([[0.1], [0.7]])
    model = KrigingModel(Z, [1.0, 2.0], Kernel(1.0, (0.3,)))
    with pytest.raises(DegenerateDesignError):
        virtual_update(model, [0.7], 5.0)


def test_virtual_update_is_exact_refit_with_fixed_kernel():
    rng = np.random.default_rng(5)
    Z = rng.random((5, 2))
    h = rng.standard_normal(5)
    kernel = Kernel(1.3, (0.4, 0.6))
    base = KrigingModel(Z, h, kernel)
    z = np.array([[0.5, 0.5]])
    up = virtual_update(base, z, 0.7)
    direct = KrigingModel(np.vstack([Z, z]), np.append(h, 0.7), kernel)
    grid = rng.random((10, 2))
    np.testing.assert_allclose(up.predict(grid).mean, direct.predict(grid).mean, rtol=1e-12)


def test_conditional_sample_coincident_points_identical():
    Z = np.array([[0.2], [0.8]])
    model = KrigingModel(Z, [0.0, 1.0], Kernel(1.0, (0.3,)))
    draws = conditional_sample(model, [[0.5], [0.5]], np.random.default_rng(0), size=20)
    np.testing.assert_array_equal(draws[:, 0], draws[:, 1])


def test_conditional_sample_moments():
    Z = np.array([[0.2], [0.8]])
    model = KrigingModel(Z, [0.0, 1.0], Kernel(1.0, (0.3,)))
    pts = np.array([[0.4], [0.5]])
    draws = conditional_sample(model, pts, np.random.default_rng(1), size=40_000)
    np.testing.assert_allclose(draws.mean(axis=0), model.predict(pts).mean, atol=0.02)
    np.testing.assert_allclose(np.cov(draws.T), model.cov(pts, pts), atol=0.02)


def test_fit_kriging_on_bastos_is_predictive():
    rng = np.random.default_rng(0)
    Z = rng.random((30, 2)) * [1.0, 0.9] + [0.0, 0.1]
    h = bastos_h(Z[:, 0], Z[:, 1])
    model = fit_kriging(Z, h, bounds=([0, 0], [1, 1]), rng=rng)
    grid = rng.random((200, 2)) * [1.0, 0.9] + [0.0, 0.1]
    err = model.predict(grid).mean - bastos_h(grid[:, 0], grid[:, 1])
    assert np.sqrt(np.mean(err**2)) < 0.15 * np.std(bastos_h(grid[:, 0], grid[:, 1]))
    assert q2_loocv(model) > 0.9


def test_fit_rejects_coincident_design():
    Z = np.array([[0.1, 0.1], [0.1, 0.1], [0.5, 0.9]])
    with pytest.raises(DegenerateDesignError):
        fit_kriging(Z, [1.0, 1.0, 2.0])


def test_loo_matches_brute_force_refit():
    rng = np.random.default_rng(3)
    Z = rng.random((6, 1))
    h = np.sin(6 * Z[:, 0])
    model = KrigingModel(Z, h, Kernel(1.0, (0.3,)))
    loo = loo_predictions(model)
    for i in range(6):
        keep = np.arange(6) != i
        sub = KrigingModel(Z[keep], h[keep], Kernel(1.0, (0.3,)))
        assert loo[i] == pytest.approx(sub.predict(Z[i : i + 1]).mean[0], rel=1e-12)


def test_q2_undefined_for_constant_observations():
    with pytest.raises(UndefinedQ2Error):
        q2_from_predictions([1.0, 1.0, 1.0], [1.0, 1.1, 0.9])


def test_q2_perfect_prediction_is_one():
    assert q2_from_predictions([1.0, 2.0, 4.0], [1.0, 2.0, 4.0]) == 1.0


def test_model_json_roundtrip():
    rng = np.random.default_rng(4)
    Z = rng.random((7, 2))
    model = fit_kriging(Z, Z.sum(axis=1) ** 2, rng=rng)
    again = KrigingModel.from_json(model.to_json())
    grid = rng.random((5, 2))
    np.testing.assert_allclose(again.predict(grid).mean, model.predict(grid).mean, rtol=1e-12)
    np.testing.assert_allclose(again.predict(grid).variance, model.predict(grid).variance, rtol=1e-10)
