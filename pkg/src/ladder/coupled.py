"""Structure-coupled kernel.

Given evaluated points ``z_1..z_m`` with decoded structures ``x_1..x_m``,
the latent Gram ``L`` is eigendecomposed as ``L = V V^T`` with
``V = U diag(sqrt(eigvals))``.  A latent point ``z`` decoding to ``x`` is
mapped to the m-vector

    xi(z) = V^T K^{-1} k_x,    k_x = [k(x, x_1), ..., k(x, x_m)]

where ``K`` is the structural Gram of ``x_1..x_m``.  The kernel is
``c(z, z') = xi(z) . xi(z') = k_x^T K^{-1} L K^{-1} k_x'``, which reduces to
``L`` on the training points.  Only ``K`` is jittered, so the reduction is
exact up to the jitter.
"""
from dataclasses import dataclass

import numpy as np

from .kernels import MaternParams, StringKernel, matern52_gram
from .linalg import EigenDecomp, cho_solve, cholesky_psd, sym_eigendecomp


@dataclass(frozen=True)
class EvaluatedTriple:
    z: np.ndarray
    x: str
    y: float


@dataclass(frozen=True, eq=False)
class CoupledKernelState:
    Z_train: np.ndarray
    X_train: tuple
    L: np.ndarray
    K: np.ndarray
    K_factor: np.ndarray
    jitter: float
    eig: EigenDecomp
    V: np.ndarray
    latent_params: MaternParams
    struct_kernel: object

    @property
    def m(self):
        return len(self.X_train)

    def k_vectors(self, X):
        """Rows ``k_x`` for each structure in ``X`` (shape (n, m))."""
        return self.struct_kernel.cross(list(X), list(self.X_train))

    def features(self, X):
        """Feature vectors ``xi`` for decoded structures ``X`` (shape (n, m))."""
        Kc = self.k_vectors(X)
        return cho_solve(self.K_factor, Kc.T).T @ self.V


def fit_state(triples, latent_params, struct_kernel=None, base_jitter=None):
    """Build the frozen per-fit state from evaluated triples.

    ``triples`` is a list of EvaluatedTriple or a ``(Z, X)`` pair.
    """
    if struct_kernel is None:
        struct_kernel = StringKernel()
    if isinstance(triples, tuple) and len(triples) == 2:
        Z, X = triples
    else:
        Z = [t.z for t in triples]
        X = [t.x for t in triples]
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    X = tuple(X)
    if len(X) < 2 or Z.shape[0] != len(X):
        raise ValueError("need m >= 2 triples with one latent vector each")
    L = matern52_gram(Z, Z, latent_params)
    K = np.asarray(struct_kernel.gram(list(X)), dtype=float)
    return state_from_grams(Z, X, L, K, latent_params, struct_kernel, base_jitter)


def state_from_grams(Z, X, L, K, latent_params, struct_kernel, base_jitter=None):
    """State from precomputed Grams (used when refitting on subsets)."""
    Z = np.array(Z, dtype=float)
    X = tuple(X)
    L = np.array(L, dtype=float)
    K = 0.5 * (np.asarray(K, dtype=float) + np.asarray(K, dtype=float).T)
    G, jitter = cholesky_psd(K, base_jitter)
    eig = sym_eigendecomp(L)
    V = eig.sqrt_scaled()
    for a in (Z, L, K, G, V):
        a.setflags(write=False)
    return CoupledKernelState(Z, X, L, K, G, jitter, eig, V, latent_params, struct_kernel)


def feature_map(z, x, state):
    """``xi(z)``; depends on ``z`` only through its decoding ``x``."""
    return state.features([x])[0]


def coupled_kernel(zA, xA, zB, xB, state):
    F = state.features([xA, xB])
    return float(F[0] @ F[1])


def coupled_cross(XA, XB, state):
    FA = state.features(XA)
    FB = FA if XA is XB else state.features(XB)
    return FA @ FB.T


def coupled_gram(candidates, state):
    """Coupled Gram over ``(z, x)`` pairs (or bare structures)."""
    X = [c[1] if isinstance(c, tuple) else c for c in candidates]
    F = state.features(X)
    C = F @ F.T
    return 0.5 * (C + C.T)


def coupling_matrix(state):
    """Explicit ``K^{-1} L K^{-1}`` (for checks; predictions use the feature map)."""
    A = cho_solve(state.K_factor, state.L)
    M = cho_solve(state.K_factor, A.T)
    return 0.5 * (M + M.T)
