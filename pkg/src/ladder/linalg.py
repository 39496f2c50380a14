"""Dense symmetric linear algebra shared by the kernel and GP code."""
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import NotPositiveDefinite, NotPSD, ZeroPivot

MAX_ESCALATIONS = 6
DEFAULT_RELATIVE_JITTER = 1e-8
PSD_TOLERANCE = 1e-10


def default_jitter(A):
    """Base jitter for ``A``: ``1e-8 * mean(diag(A))``."""
    d = np.abs(np.diagonal(A))
    scale = float(d.mean()) if d.size else 1.0
    return DEFAULT_RELATIVE_JITTER * (scale if scale > 0 else 1.0)


def _check_symmetric(A):
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] < 1:
        raise ValueError(f"expected a non-empty square matrix, got shape {A.shape}")
    if not np.array_equal(A, A.T):
        # tolerate round-off asymmetry from products like X @ M @ X.T
        if not np.allclose(A, A.T, rtol=1e-10, atol=1e-12 * max(1.0, np.abs(A).max())):
            raise ValueError("matrix is not symmetric")
        A = 0.5 * (A + A.T)
    return A


def cholesky_psd(A, base_jitter=None):
    """Lower Cholesky factor of ``A + jitter * I`` with jitter escalation.

    The first attempt uses ``base_jitter`` (default ``1e-8 * mean(diag)``);
    each failure multiplies it by 10, up to six escalations.  Returns the
    factor and the jitter actually added.
    """
    A = _check_symmetric(A)
    if base_jitter is None:
        base_jitter = default_jitter(A)
    if base_jitter < 0:
        raise ValueError("base_jitter must be nonnegative")

    step = base_jitter if base_jitter > 0 else default_jitter(A)
    schedule = [base_jitter]
    for k in range(1, MAX_ESCALATIONS + 1):
        schedule.append(step * 10.0 ** (k if base_jitter > 0 else k - 1))

    n = A.shape[0]
    eye = np.eye(n)
    for jitter in schedule:
        try:
            G = sla.cholesky(A + jitter * eye if jitter else A, lower=True, check_finite=True)
        except (sla.LinAlgError, ValueError):
            continue
        if np.all(np.diagonal(G) > 0):
            return G, float(jitter)
    raise NotPositiveDefinite(
        f"Cholesky failed on {n}x{n} matrix after jitter {schedule[-1]:.3g}"
    )


@dataclass(frozen=True)
class EigenDecomp:
    eigvecs: np.ndarray  # columns, orthonormal
    eigvals: np.ndarray  # descending, >= 0

    def sqrt_scaled(self):
        """``U diag(sqrt(eigvals))``."""
        return self.eigvecs * np.sqrt(self.eigvals)[None, :]


def sym_eigendecomp(A):
    """Eigendecomposition of a symmetric PSD matrix.

    Eigenvalues are sorted descending and small negatives (down to
    ``-1e-10 * trace``) are clamped to exactly zero.  Each eigenvector is
    signed so that its largest-magnitude component is nonnegative.
    """
    A = _check_symmetric(A)
    w, U = np.linalg.eigh(A)
    tol = PSD_TOLERANCE * abs(float(np.trace(A)))
    if w.size and w[0] < -tol:
        raise NotPSD(f"eigenvalue {w[0]:.3g} below -{tol:.3g}")
    w = np.where(w < 0.0, 0.0, w)
    order = np.argsort(-w, kind="stable")
    w = w[order]
    U = U[:, order]
    idx = np.argmax(np.abs(U), axis=0)
    signs = np.where(U[idx, np.arange(U.shape[1])] < 0, -1.0, 1.0)
    U = U * signs[None, :]
    return EigenDecomp(eigvecs=np.ascontiguousarray(U), eigvals=w)


def _check_pivots(G):
    d = np.abs(np.diagonal(G))
    if d.size == 0 or d.min() <= np.finfo(float).tiny or d.min() <= 1e-300 * d.max():
        raise ZeroPivot("triangular factor has a vanishing diagonal entry")


def solve_lower(G, B):
    """Forward substitution: returns ``G^{-1} B`` for lower-triangular ``G``."""
    G = np.asarray(G, dtype=float)
    _check_pivots(G)
    return sla.solve_triangular(G, B, lower=True, check_finite=False)


def solve_lower_transpose(G, B):
    """Back substitution: returns ``G^{-T} B``."""
    G = np.asarray(G, dtype=float)
    _check_pivots(G)
    return sla.solve_triangular(G, B, lower=True, trans="T", check_finite=False)


def cho_solve(G, B):
    """``(G G^T)^{-1} B`` from the lower factor ``G``."""
    return solve_lower_transpose(G, solve_lower(G, B))


def logdet_from_factor(G):
    return 2.0 * float(np.sum(np.log(np.diagonal(G))))
