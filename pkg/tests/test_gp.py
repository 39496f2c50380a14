import math

import numpy as np
import pytest
from scipy.stats import multivariate_normal

from ladder.gp import (
    NOISE_FLOOR,
    FitConfig,
    GPHyper,
    GPModel,
    fit_hyperparams,
    log_marginal_likelihood,
    posterior_predict,
    select_string_params_loo,
    surrogate_mae,
)
from ladder.kernels import MaternParams, StringKernelParams, matern52_gram
from ladder.expr import ExpressionBenchmark


def triples_from(codebook, idx):
    bench = ExpressionBenchmark()
    Z = codebook.embeddings[idx]
    X = [codebook.structures[i] for i in idx]
    return Z, X, np.array([bench(x) for x in X])


def test_mll_standard_normal_at_zero():
    h = GPHyper((1.0,), 1.0, 0.0, 0.0)
    val = log_marginal_likelihood((np.zeros((1, 1)), ["v"], np.zeros(1)), h)
    assert val == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-6)


def test_mll_two_points_direct_density():
    h = GPHyper((0.8,), 1.5, 0.1, 0.3)
    Z = np.array([[0.0], [0.5]])
    y = np.array([1.0, -0.4])
    C = matern52_gram(Z, Z, h.matern) + 0.1 * np.eye(2)
    ref = multivariate_normal(mean=[0.3, 0.3], cov=C).logpdf(y)
    assert log_marginal_likelihood((Z, ["v", "1"], y), h) == pytest.approx(ref, rel=1e-12)


def test_mll_centered_targets_drop_quadratic():
    h = GPHyper((1.0, 1.0), 2.0, 0.05, 4.0)
    Z = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 2.0]])
    C = matern52_gram(Z, Z, h.matern) + 0.05 * np.eye(3)
    ref = -0.5 * np.linalg.slogdet(C)[1] - 1.5 * math.log(2 * math.pi)
    assert log_marginal_likelihood((Z, ["v"] * 3, np.full(3, 4.0)), h) == pytest.approx(ref, rel=1e-12)


def test_modes_share_marginal_likelihood(small_codebook, rng):
    idx = rng.choice(len(small_codebook), 25, replace=False)
    Z, X, y = triples_from(small_codebook, idx)
    h = GPHyper(tuple(rng.uniform(0.5, 2.0, small_codebook.dim)), 3.0, 1e-3, float(np.mean(y)))
    a = log_marginal_likelihood((Z, X, y), h, "latent")
    b = log_marginal_likelihood((Z, X, y), h, "coupled")
    assert b == pytest.approx(a, rel=1e-6)


def test_lengthscale_recovery():
    ratios = []
    for rep in range(10):
        rng = np.random.default_rng(100 + rep)
        Z = rng.uniform(0, 10, size=(100, 1))
        C = matern52_gram(Z, Z, MaternParams((1.0,), 1.0)) + 1e-4 * np.eye(100)
        y = np.linalg.cholesky(C) @ rng.standard_normal(100)
        gp = fit_hyperparams((Z, ["v"] * 100, y), "latent", FitConfig(seed=rep))
        ratios.append(gp.hyper.lengthscales[0])
    ratios = np.array(ratios)
    assert np.all((ratios > 0.5) & (ratios < 2.0)), ratios


def test_constant_targets():
    Z = np.linspace(0, 1, 8)[:, None]
    y = np.full(8, 2.5)
    gp = fit_hyperparams((Z, ["v"] * 8, y))
    assert gp.hyper.mean == pytest.approx(2.5, abs=1e-3)
    init = GPHyper.initial(1, y)
    assert gp.log_marginal_likelihood() >= log_marginal_likelihood((Z, ["v"] * 8, y), init)
    mae = surrogate_mae(gp, Z, ["v"] * 8, y)
    assert mae == pytest.approx(0.0, abs=1e-3)


@pytest.mark.parametrize("mode", ["latent", "coupled"])
def test_fit_improves_on_initialization(small_codebook, rng, mode):
    Z, X, y = triples_from(small_codebook, rng.choice(len(small_codebook), 30, replace=False))
    gp = fit_hyperparams((Z, X, y), mode)
    init = GPHyper.initial(small_codebook.dim, y)
    assert gp.log_marginal_likelihood() >= log_marginal_likelihood((Z, X, y), init, "latent") - 1e-9
    assert gp.hyper.noise >= NOISE_FLOOR
    # alpha solves the training system
    Cn = gp.C_train + gp.hyper.noise * np.eye(len(y))
    assert np.linalg.norm(Cn @ gp.alpha - (y - gp.hyper.mean)) <= 1e-8 * max(1.0, np.linalg.norm(y))


@pytest.mark.parametrize("mode", ["latent", "coupled"])
def test_interpolation_at_training_points(small_codebook, rng, mode):
    Z, X, y = triples_from(small_codebook, rng.choice(len(small_codebook), 20, replace=False))
    h = GPHyper((1.0,) * small_codebook.dim, float(np.var(y)), NOISE_FLOOR, float(np.mean(y)))
    gp = GPModel(mode, Z, X, y, h)
    tol = 3 * math.sqrt(NOISE_FLOOR + gp.jitter + gp.struct_jitter)
    for j in range(20):
        assert abs(posterior_predict(Z[j], X[j], gp).mean - y[j]) <= tol * max(1.0, abs(y[j]))


def test_single_point_variance():
    h = GPHyper((1.0,), 1.0, 1e-4, 0.0)
    gp = GPModel("latent", [[0.3]], ["v"], [1.0], h)
    p = posterior_predict([0.3], "v", gp)
    assert 0 <= p.variance <= 1e-4 + 1e-10


def test_two_point_closed_form():
    h = GPHyper((1.0,), 1.0, 0.01, 0.0)
    Z = np.array([[0.0], [1.0]])
    y = np.array([1.0, -1.0])
    gp = GPModel("latent", Z, ["v", "1"], y, h)
    k01 = 0.5239941088318203  # Matérn-5/2 at r = 1
    zs = np.array([[0.5]])
    r = 0.5
    kh = (1 + math.sqrt(5) * r + 5 / 3 * r * r) * math.exp(-math.sqrt(5) * r)
    a, b = 1.01, k01
    det = a * a - b * b
    inv = np.array([[a, -b], [-b, a]]) / det
    ks = np.array([kh, kh])
    mu_ref = ks @ inv @ y
    var_ref = 1.0 - ks @ inv @ ks
    p = posterior_predict(zs[0], "2", gp)
    assert p.mean == pytest.approx(mu_ref, abs=1e-12)
    assert p.variance == pytest.approx(var_ref, rel=1e-10)


def test_mae_equal_train_and_test(small_codebook, rng):
    Z, X, y = triples_from(small_codebook, rng.choice(len(small_codebook), 15, replace=False))
    h = GPHyper((1.0,) * small_codebook.dim, float(np.var(y)), NOISE_FLOOR, float(np.mean(y)))
    gp = GPModel("latent", Z, X, y, h)
    assert surrogate_mae(gp, Z, X, y) <= 3 * math.sqrt(NOISE_FLOOR) * max(1.0, np.abs(y).max())


def test_mae_three_point_hand_check():
    h = GPHyper((1.0,), 1.0, 0.01, 0.0)
    Z = np.array([[0.0], [1.0], [3.0]])
    y = np.array([0.5, -0.5, 1.0])
    gp = GPModel("latent", Z, ["v"] * 3, y, h)
    Zt = np.array([[0.5], [2.0], [4.0]])
    yt = np.array([0.0, 0.0, 2.0])
    C = matern52_gram(Z, Z, h.matern) + 0.01 * np.eye(3)
    mu = matern52_gram(Zt, Z, h.matern) @ np.linalg.solve(C, y)
    assert surrogate_mae(gp, Zt, ["v"] * 3, yt) == pytest.approx(np.mean(np.abs(mu - yt)), rel=1e-12)


def test_variance_nonnegative_and_continuous(small_codebook, rng):
    Z, X, y = triples_from(small_codebook, rng.choice(len(small_codebook), 20, replace=False))
    for mode in ("latent", "coupled"):
        gp = fit_hyperparams((Z, X, y), mode)
        Zc = rng.standard_normal((40, small_codebook.dim))
        Xc = small_codebook.decode_many(Zc)
        mu, var = gp.predict(Zc, Xc, clamp=False)
        _, prior = gp.cross_and_prior(Zc, Xc)
        assert np.all(var >= -1e-8 * np.maximum(prior, 1e-300))
        dz = Zc + 1e-9
        mu2, var2 = gp.predict(dz, small_codebook.decode_many(dz))
        np.testing.assert_allclose(mu2, mu, rtol=1e-6, atol=1e-6)
        np.testing.assert_allclose(var2, np.maximum(var, 0), rtol=1e-6, atol=1e-6 * gp.hyper.outputscale)


def test_mll_finite_difference_sign(small_codebook, rng):
    Z, X, y = triples_from(small_codebook, rng.choice(len(small_codebook), 25, replace=False))
    base = GPHyper(tuple(rng.uniform(0.5, 2, small_codebook.dim)), float(np.var(y)), 0.1, float(np.mean(y)))

    def mll_at(delta):
        ls = np.array(base.lengthscales)
        ls[0] *= math.exp(delta)
        return log_marginal_likelihood((Z, X, y), GPHyper(tuple(ls), base.outputscale, base.noise, base.mean))

    small = mll_at(1e-4) - mll_at(-1e-4)
    large = mll_at(1e-3) - mll_at(-1e-3)
    assert np.sign(small) == np.sign(large)
    assert small / 2e-4 == pytest.approx(large / 2e-3, rel=1e-2)


def test_loo_selection_returns_grid_member(small_codebook, rng):
    Z, X, y = triples_from(small_codebook, rng.choice(len(small_codebook), 12, replace=False))
    gp = fit_hyperparams((Z, X, y))
    p = select_string_params_loo((Z, X, y), gp.hyper, StringKernelParams())
    assert p.gap_decay in (0.25, 0.5, 0.75) and p.match_decay in (0.5, 0.8, 1.0)


def test_bad_mode_and_tiny_fit():
    with pytest.raises(ValueError):
        GPModel("other", [[0.0]], ["v"], [0.0], GPHyper((1.0,), 1.0, 0.1, 0.0))
    with pytest.raises(ValueError):
        fit_hyperparams((np.zeros((1, 1)), ["v"], np.zeros(1)))
