"""Expected improvement and its optimizer (CMA-ES over the latent space)."""
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .errors import AllCandidatesDuplicate, DegenerateCovariance

INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
SIGMA_EPS = 1e-12


def expected_improvement(mu, sigma, incumbent):
    """EI for minimization: ``E[max(incumbent - Y, 0)]`` with ``Y ~ N(mu, sigma^2)``.

    Accepts scalars or arrays; returns the same shape.  ``sigma`` is a
    standard deviation.
    """
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    delta = incumbent - mu
    safe = np.where(sigma > SIGMA_EPS, sigma, 1.0)
    u = delta / safe
    ei = delta * ndtr(u) + safe * INV_SQRT_2PI * np.exp(-0.5 * u * u)
    ei = np.where(sigma > SIGMA_EPS, ei, np.maximum(delta, 0.0))
    ei = np.maximum(ei, 0.0)
    return float(ei) if ei.ndim == 0 else ei


@dataclass(frozen=True)
class CmaConfig:
    sigma0: float = 0.2
    population: int = 50
    iterations: int = 10
    restarts: int = 10

    def __post_init__(self):
        if self.population < 4:
            raise ValueError("population must be >= 4")
        if not self.sigma0 > 0:
            raise ValueError("sigma0 must be positive")
        if self.iterations < 1 or self.restarts < 1:
            raise ValueError("iterations and restarts must be positive")


class CMAES:
    """(mu/mu_w, lambda)-CMA-ES with cumulative step-size adaptation.

    Learning rates follow Hansen's tutorial; the step-size constants
    ``cs`` and ``ds`` use the population-aware defaults of pycma.  ``rng`` is owned by the instance.
    """

    def __init__(self, start, sigma0, population, rng):
        self.mean = np.array(start, dtype=float)
        n = self.n = self.mean.size
        self.sigma0 = float(sigma0)
        self.lam = int(population)
        self.rng = rng
        mu = self.mu = self.lam // 2
        w = np.log(mu + 0.5) - np.log(np.arange(1, mu + 1))
        self.weights = w / w.sum()
        self.mueff = 1.0 / np.sum(self.weights ** 2)
        me = self.mueff
        self.cs = (me + 2.0) / (n + me + 3.0)
        self.ds = 2.0 * me / self.lam + 0.3 + self.cs
        self.cc = (4.0 + me / n) / (n + 4.0 + 2.0 * me / n)
        self.c1 = 2.0 / ((n + 1.3) ** 2 + me)
        self.cmu = min(1.0 - self.c1, 2.0 * (me - 2.0 + 1.0 / me) / ((n + 2.0) ** 2 + me))
        self.chin = math.sqrt(n) * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n))
        self.generation = 0
        self.resets = 0
        self.reset()

    def reset(self):
        self.sigma = self.sigma0
        self.C = np.eye(self.n)
        self.B = np.eye(self.n)
        self.D = np.ones(self.n)
        self.ps = np.zeros(self.n)
        self.pc = np.zeros(self.n)
        self._age = 0

    def _decompose(self):
        C = 0.5 * (self.C + self.C.T)
        if not np.all(np.isfinite(C)):
            raise DegenerateCovariance("non-finite covariance")
        w, B = np.linalg.eigh(C)
        if w[0] <= 0 or not math.isfinite(self.sigma) or self.sigma <= 0:
            raise DegenerateCovariance("covariance lost positive definiteness")
        if self.sigma * math.sqrt(w[-1]) < 1e-300 or w[-1] / w[0] > 1e14:
            raise DegenerateCovariance("covariance collapsed")
        self.C, self.B, self.D = C, B, np.sqrt(w)

    def ask(self):
        try:
            self._decompose()
        except DegenerateCovariance:
            self.resets += 1
            self.reset()
        Zs = self.rng.standard_normal((self.lam, self.n))
        Y = (Zs * self.D) @ self.B.T
        return self.mean + self.sigma * Y

    def tell(self, X, f):
        X = np.asarray(X, dtype=float)
        f = np.asarray(f, dtype=float)
        order = np.argsort(f, kind="stable")[: self.mu]
        Y = (X[order] - self.mean) / self.sigma
        yw = self.weights @ Y
        self.mean = self.mean + self.sigma * yw
        self._age += 1
        inv_sqrt_C_yw = self.B @ ((self.B.T @ yw) / self.D)
        self.ps = (1 - self.cs) * self.ps + math.sqrt(self.cs * (2 - self.cs) * self.mueff) * inv_sqrt_C_yw
        norm_ps = float(np.linalg.norm(self.ps))
        hsig = norm_ps / math.sqrt(1 - (1 - self.cs) ** (2 * self._age)) < (1.4 + 2.0 / (self.n + 1)) * self.chin
        self.pc = (1 - self.cc) * self.pc + hsig * math.sqrt(self.cc * (2 - self.cc) * self.mueff) * yw
        rank_mu = (Y.T * self.weights) @ Y
        self.C = (
            (1 - self.c1 - self.cmu + (1 - hsig) * self.c1 * self.cc * (2 - self.cc)) * self.C
            + self.c1 * np.outer(self.pc, self.pc)
            + self.cmu * rank_mu
        )
        self.sigma *= math.exp(min(1.0, (self.cs / self.ds) * (norm_ps / self.chin - 1.0)))
        self.generation += 1


def cmaes_minimize(objective, start, cfg=CmaConfig(), rng=None, vectorized=False, iterations=None):
    """Minimize ``objective`` from ``start`` for ``cfg.iterations`` generations.

    With ``vectorized`` the objective receives the whole (population, d)
    matrix and returns one value per row.  Returns the best evaluated point
    and its value.
    """
    if rng is None or isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    es = CMAES(start, cfg.sigma0, cfg.population, rng)
    best_x, best_f = None, math.inf
    for _ in range(iterations or cfg.iterations):
        X = es.ask()
        f = np.asarray(objective(X) if vectorized else [objective(x) for x in X], dtype=float)
        f = np.where(np.isnan(f), np.inf, f)
        k = int(np.argmin(f))
        if best_x is None or f[k] < best_f:
            best_x, best_f = X[k].copy(), float(f[k])
        es.tell(X, f)
    return best_x, best_f


@dataclass(frozen=True)
class Proposal:
    z: np.ndarray
    x: str
    ei: float
    duplicate: bool = False


class _AcquisitionObjective:
    """Negated EI over a population, decoding every point first."""

    def __init__(self, gp, latent_model, incumbent, exclude):
        self.gp = gp
        self.model = latent_model
        self.incumbent = incumbent
        self.exclude = exclude
        self.by_structure = gp.mode == "coupled"
        self._cache = {}
        self.best = None
        self.best_dup = None

    def _ei_by_index(self, idx):
        new = [i for i in dict.fromkeys(idx.tolist()) if i not in self._cache]
        if new:
            X = [self.model.structures[i] for i in new]
            mu, var = self.gp.predict(None, X)
            for i, ei in zip(new, expected_improvement(mu, np.sqrt(var), self.incumbent)):
                self._cache[i] = float(ei)
        return np.array([self._cache[i] for i in idx.tolist()])

    def __call__(self, Zpop):
        idx = self.model.decode_index(Zpop)
        if self.by_structure:
            ei = self._ei_by_index(idx)
        else:
            X = [self.model.structures[i] for i in idx]
            mu, var = self.gp.predict(Zpop, X)
            ei = expected_improvement(mu, np.sqrt(var), self.incumbent)
        dup = np.array([self.model.structures[i] in self.exclude for i in idx], dtype=bool)
        for k in range(len(ei)):
            slot = "best_dup" if dup[k] else "best"
            cur = getattr(self, slot)
            if cur is None or ei[k] > cur[2]:
                setattr(self, slot, (Zpop[k].copy(), int(idx[k]), float(ei[k])))
        return np.where(dup, np.inf, -ei)


def optimize_acquisition(gp, latent_model, incumbent, cfg=CmaConfig(), rng=None,
                         exclude=(), penalize_duplicates=True, expand=0.1):
    """Maximize EI over the latent space with restarted CMA-ES.

    Each restart starts from a point drawn uniformly from the embedding
    bounding box (expanded by ``expand`` per side) and runs
    ``cfg.iterations`` generations.  Candidates whose decoding is in
    ``exclude`` are scored as EI = -inf when ``penalize_duplicates``.
    """
    if rng is None or isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    lo, hi = latent_model.bounds(expand)
    excl = frozenset(exclude) if penalize_duplicates else frozenset()
    obj = _AcquisitionObjective(gp, latent_model, incumbent, excl)
    for _ in range(cfg.restarts):
        start = rng.uniform(lo, hi)
        child = np.random.default_rng(rng.integers(2 ** 63))
        cmaes_minimize(obj, start, cfg, rng=child, vectorized=True)
    if obj.best is None:
        z, i, ei = obj.best_dup
        raise AllCandidatesDuplicate(
            "every candidate decodes to an already-evaluated structure", best_z=z
        )
    z, i, ei = obj.best
    return Proposal(z=z, x=latent_model.structures[i], ei=ei)
