"""Gaussian-process regression over evaluated triples.

Two kernel modes share everything except the covariance between a candidate
and the training points:

* ``latent``  -- Matérn-5/2 ARD on latent vectors (naive latent-space BO);
* ``coupled`` -- the structure-coupled kernel of :mod:`ladder.coupled`.

On the training set the coupled Gram reduces to the latent Gram ``L``, so the
marginal likelihood, and with it the fitted Matérn hyperparameters, are the
same in both modes.  Hyperparameters are always fitted against ``L``; the
coupled model then builds its state with the fitted values.
"""
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import minimize

from .coupled import fit_state
from .errors import NotPositiveDefinite, OptimizationFailed
from .kernels import (
    MaternParams,
    StringKernel,
    StringKernelParams,
    matern52_gram,
    matern52_gram_from_sqdiff,
    pairwise_sqdiff,
)
from .linalg import cho_solve, cholesky_psd, logdet_from_factor, solve_lower, sym_eigendecomp

NOISE_FLOOR = 1e-6
LOG_2PI = math.log(2.0 * math.pi)
MODES = ("latent", "coupled")


@dataclass(frozen=True)
class GPHyper:
    lengthscales: tuple
    outputscale: float
    noise: float
    mean: float

    def __post_init__(self):
        object.__setattr__(self, "lengthscales", tuple(float(x) for x in self.lengthscales))
        object.__setattr__(self, "noise", max(float(self.noise), NOISE_FLOOR))

    @property
    def matern(self):
        return MaternParams(self.lengthscales, self.outputscale)

    @classmethod
    def initial(cls, d, y):
        y = np.asarray(y, dtype=float)
        var = float(np.var(y)) if y.size > 1 else 1.0
        var = var if var > 0 else 1.0
        return cls((1.0,) * d, var, max(1e-2 * var, NOISE_FLOOR), float(np.mean(y)))


@dataclass(frozen=True)
class Posterior:
    mean: float
    variance: float

    @property
    def std(self):
        return math.sqrt(self.variance)


@dataclass(frozen=True)
class FitConfig:
    restarts: int = 5
    max_evals: int = 200
    seed: int = 0
    lengthscale_bounds: tuple = (1e-2, 1e2)


def _split(triples):
    if isinstance(triples, tuple) and len(triples) == 3:
        Z, X, y = triples
    else:
        Z = [t.z for t in triples]
        X = [t.x for t in triples]
        y = [t.y for t in triples]
    return np.atleast_2d(np.asarray(Z, dtype=float)), list(X), np.asarray(y, dtype=float)


def _gaussian_logpdf(C, r, base_jitter=0.0):
    G, jitter = cholesky_psd(C, base_jitter=base_jitter)
    a = solve_lower(G, r)
    m = r.shape[0]
    return -0.5 * float(a @ a) - 0.5 * logdet_from_factor(G) - 0.5 * m * LOG_2PI, G, jitter


def train_gram(Z, X, hyper, mode="latent", struct_kernel=None, base_jitter=None):
    """Noise-free training covariance for the given mode (and coupled state)."""
    if mode == "latent":
        return matern52_gram(Z, Z, hyper.matern), None
    state = fit_state((Z, X), hyper.matern, struct_kernel or StringKernel(), base_jitter)
    F = state.features(X)
    C = F @ F.T
    return 0.5 * (C + C.T), state


def log_marginal_likelihood(triples, hyper, mode="latent", struct_kernel=None):
    """Gaussian log evidence of the targets with constant mean ``hyper.mean``."""
    Z, X, y = _split(triples)
    C, _ = train_gram(Z, X, hyper, mode, struct_kernel)
    C = C + hyper.noise * np.eye(len(y))
    return _gaussian_logpdf(C, y - hyper.mean)[0]


def _mll_latent(D, y, hyper):
    m = len(y)
    C = matern52_gram_from_sqdiff(D, m, hyper.matern)
    C[np.diag_indices_from(C)] += hyper.noise
    return _gaussian_logpdf(C, y - hyper.mean)[0]


class GPModel:
    """Fitted GP; immutable after construction."""

    def __init__(self, mode, Z, X, y, hyper, struct_kernel=None, base_jitter=None):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        self.mode = mode
        self.Z = np.atleast_2d(np.asarray(Z, dtype=float))
        self.X = tuple(X)
        self.y = np.asarray(y, dtype=float)
        self.hyper = hyper
        self.struct_kernel = struct_kernel
        self.coupled_state = None
        if mode == "coupled" and len(self.X) < 2:
            raise ValueError("coupled mode needs at least two training points")
        if mode == "coupled":
            self.struct_kernel = struct_kernel or StringKernel()
            C, self.coupled_state = train_gram(
                self.Z, self.X, hyper, mode, self.struct_kernel, base_jitter
            )
            self._F_train = self.coupled_state.features(self.X)
        else:
            C, _ = train_gram(self.Z, self.X, hyper, mode)
        self.C_train = C
        Cn = C + hyper.noise * np.eye(len(self.y))
        self.train_factor, self.jitter = cholesky_psd(Cn, base_jitter=0.0)
        self.alpha = cho_solve(self.train_factor, self.y - hyper.mean)

    @property
    def noise_variance(self):
        return self.hyper.noise

    @property
    def mean_const(self):
        return self.hyper.mean

    @property
    def struct_jitter(self):
        return self.coupled_state.jitter if self.coupled_state is not None else 0.0

    def log_marginal_likelihood(self):
        r = self.y - self.hyper.mean
        a = solve_lower(self.train_factor, r)
        return -0.5 * float(a @ a) - 0.5 * logdet_from_factor(self.train_factor) - 0.5 * len(r) * LOG_2PI

    def cross_and_prior(self, Z, X):
        """Cross-covariance to the training set and prior variance at candidates."""
        if self.mode == "latent":
            Z = np.atleast_2d(np.asarray(Z, dtype=float))
            Cs = matern52_gram(Z, self.Z, self.hyper.matern)
            prior = np.full(Z.shape[0], self.hyper.outputscale)
        else:
            F = self.coupled_state.features(list(X))
            Cs = F @ self._F_train.T
            prior = np.einsum("ij,ij->i", F, F)
        return Cs, prior

    def predict(self, Z, X, clamp=True):
        """Posterior mean and variance arrays at candidates ``(Z[i], X[i])``."""
        Cs, prior = self.cross_and_prior(Z, X)
        mu = self.hyper.mean + Cs @ self.alpha
        W = solve_lower(self.train_factor, Cs.T)
        var = prior - np.einsum("ij,ij->j", W, W)
        if clamp:
            var = np.maximum(var, 0.0)
        return mu, var


def posterior_predict(z, x, model):
    mu, var = model.predict(np.atleast_2d(z), [x])
    return Posterior(float(mu[0]), float(var[0]))


def _bounds(d, y, cfg):
    y = np.asarray(y, dtype=float)
    var = float(np.var(y))
    var = var if var > 0 else 1.0
    rng_y = float(np.ptp(y)) + 1.0
    lo_l, hi_l = (math.log(b) for b in cfg.lengthscale_bounds)
    return (
        [(lo_l, hi_l)] * d
        + [(math.log(1e-4 * var), math.log(1e4 * var))]
        + [(math.log(NOISE_FLOOR), math.log(10.0 * var))]
        + [(float(y.min()) - rng_y, float(y.max()) + rng_y)]
    )


def _pack(h):
    return np.concatenate([np.log(h.lengthscales), [math.log(h.outputscale), math.log(h.noise), h.mean]])


def _unpack(theta, d):
    return GPHyper(
        tuple(np.exp(theta[:d])), float(np.exp(theta[d])), float(np.exp(theta[d + 1])), float(theta[d + 2])
    )


def fit_hyperparams(triples, mode="latent", config=FitConfig(), struct_kernel=None, warm_start=None):
    """Maximize the marginal likelihood with multi-start Nelder-Mead.

    Optimizes log-lengthscales, log-outputscale, log-noise and the constant
    mean.  Restart 0 starts from the default initialization, restart 1 from
    ``warm_start`` when given; the rest from seeded perturbations.
    """
    Z, X, y = _split(triples)
    m, d = Z.shape
    if m < 2:
        raise ValueError("fit_hyperparams needs at least two points")
    bounds = _bounds(d, y, config)
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])

    D = pairwise_sqdiff(Z)

    def neg_mll(theta):
        try:
            return -_mll_latent(D, y, _unpack(np.clip(theta, lo, hi), d))
        except NotPositiveDefinite:
            return 1e300

    init = GPHyper.initial(d, y)
    rng = np.random.default_rng(config.seed)
    starts = [_pack(init)]
    if warm_start is not None:
        starts.append(_pack(warm_start))
    while len(starts) < max(config.restarts, 1):
        t = _pack(init) + rng.normal(0.0, 1.0, size=d + 3) * np.r_[np.ones(d + 2), math.sqrt(init.outputscale)]
        starts.append(t)

    best_theta, best_val = None, np.inf
    for t0 in starts:
        t0 = np.clip(t0, lo, hi)
        f0 = neg_mll(t0)
        if f0 < best_val:
            best_theta, best_val = t0, f0
        res = minimize(
            neg_mll, t0, method="Nelder-Mead", bounds=bounds,
            options={"maxfev": config.max_evals, "xatol": 1e-6, "fatol": 1e-9},
        )
        if np.isfinite(res.fun) and res.fun < best_val:
            best_theta, best_val = np.clip(res.x, lo, hi), float(res.fun)
    if best_theta is None or best_val >= 1e299:
        raise OptimizationFailed("every restart failed to factorize the training covariance")
    hyper = _unpack(best_theta, d)
    return GPModel(mode, Z, X, y, hyper, struct_kernel)


def surrogate_mae(model, Z, X, y):
    """Mean absolute error of the posterior mean on a test set."""
    y = np.asarray(y, dtype=float)
    if y.size == 0:
        raise ValueError("empty test set")
    mu, _ = model.predict(Z, X)
    return float(np.mean(np.abs(mu - y)))


LOO_GAP_GRID = (0.25, 0.5, 0.75)
LOO_MATCH_GRID = (0.5, 0.8, 1.0)


def coupled_loo_errors(L, K, y, hyper, base_jitter=None):
    """Leave-one-out absolute errors of the coupled GP from full Grams.

    Each held-out point gets its own coupled state built from the remaining
    ``m - 1`` points, so the errors reflect the structural kernel.
    """
    m = len(y)
    errs = np.empty(m)
    for i in range(m):
        keep = np.arange(m) != i
        Kk = K[np.ix_(keep, keep)]
        G, _ = cholesky_psd(Kk, base_jitter)
        V = sym_eigendecomp(L[np.ix_(keep, keep)]).sqrt_scaled()
        F = cho_solve(G, Kk).T @ V
        f = cho_solve(G, K[keep, i]) @ V
        C = F @ F.T
        C[np.diag_indices_from(C)] += hyper.noise
        Gc, _ = cholesky_psd(C, base_jitter=0.0)
        mu = hyper.mean + (F @ f) @ cho_solve(Gc, y[keep] - hyper.mean)
        errs[i] = abs(mu - y[i])
    return errs


def select_string_params_loo(triples, hyper, base=StringKernelParams(), normalize=True,
                             gaps=LOO_GAP_GRID, matches=LOO_MATCH_GRID):
    """Grid-search string-kernel decays by leave-one-out absolute error.

    The training Gram of the coupled model does not depend on the structural
    kernel, so the marginal likelihood cannot select it.  Ties keep the
    earliest grid point.
    """
    Z, X, y = _split(triples)
    if len(y) < 3:
        return base
    L = matern52_gram(Z, Z, hyper.matern)
    best, best_err = base, np.inf
    for g in gaps:
        for mt in matches:
            p = replace(base, gap_decay=g, match_decay=mt)
            K = StringKernel(p, normalize=normalize).gram(X)
            try:
                err = float(np.mean(coupled_loo_errors(L, K, y, hyper)))
            except NotPositiveDefinite:
                continue
            if err < best_err:
                best, best_err = p, err
    return best
