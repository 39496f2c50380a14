"""Base kernels: Matérn-5/2 ARD over latent vectors, the subsequence string
kernel over token sequences, and a dot-product kernel over binary
fingerprints.
"""
import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from . import _accel
from ._accel import njit
from .errors import DegenerateSelfSimilarity, DimensionMismatch, WidthMismatch

SQRT5 = math.sqrt(5.0)


# --------------------------------------------------------------------------
# Matérn 5/2 with automatic relevance determination
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class MaternParams:
    lengthscales: tuple
    outputscale: float = 1.0

    def __post_init__(self):
        ls = tuple(float(x) for x in np.atleast_1d(self.lengthscales))
        object.__setattr__(self, "lengthscales", ls)
        if not ls or min(ls) <= 0:
            raise ValueError("lengthscales must be nonempty and positive")
        if not self.outputscale > 0:
            raise ValueError("outputscale must be positive")

    @property
    def dim(self):
        return len(self.lengthscales)

    @classmethod
    def default(cls, d):
        return cls(lengthscales=(1.0,) * d, outputscale=1.0)


def _matern_from_r(r, outputscale):
    sr = SQRT5 * r
    return outputscale * (1.0 + sr + sr * sr / 3.0) * np.exp(-sr)


def matern52(z1, z2, p):
    """Matérn-5/2 ARD kernel between two latent vectors."""
    z1 = np.atleast_1d(np.asarray(z1, dtype=float))
    z2 = np.atleast_1d(np.asarray(z2, dtype=float))
    if z1.shape != z2.shape or z1.shape[0] != p.dim:
        raise DimensionMismatch(
            f"vectors of dims {z1.shape[0]} and {z2.shape[0]} vs {p.dim} lengthscales"
        )
    r = math.sqrt(float(np.sum(((z1 - z2) / np.asarray(p.lengthscales)) ** 2)))
    return float(_matern_from_r(r, p.outputscale))


@njit(cache=True)
def _sqdist_jit(A, B, symmetric):
    na, d = A.shape
    nb = B.shape[0]
    out = np.zeros((na, nb))
    for i in range(na):
        j0 = i + 1 if symmetric else 0
        for j in range(j0, nb):
            s = 0.0
            for k in range(d):
                t = A[i, k] - B[j, k]
                s += t * t
            out[i, j] = s
            if symmetric:
                out[j, i] = s
    return out


def scaled_sqdist(Z1, Z2, lengthscales, symmetric=False):
    """Squared distances after dividing each dimension by its lengthscale."""
    A = np.ascontiguousarray(np.asarray(Z1, dtype=float) / lengthscales)
    B = A if symmetric else np.ascontiguousarray(np.asarray(Z2, dtype=float) / lengthscales)
    if _accel.HAVE_NUMBA:
        return _sqdist_jit(A, B, symmetric)
    d2 = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    d2 = np.maximum(d2, 0.0)
    if symmetric:
        d2 = 0.5 * (d2 + d2.T)
        np.fill_diagonal(d2, 0.0)
    return d2


def matern52_gram(Z1, Z2, p):
    """Matrix of ``matern52(Z1[i], Z2[j])``; exactly symmetric when Z1 is Z2."""
    Z1 = np.atleast_2d(np.asarray(Z1, dtype=float))
    Z2 = np.atleast_2d(np.asarray(Z2, dtype=float))
    if Z1.shape[1] != p.dim or Z2.shape[1] != p.dim:
        raise DimensionMismatch(f"latent dim {Z1.shape[1]}/{Z2.shape[1]} vs {p.dim}")
    sym = Z1 is Z2 or (Z1.shape == Z2.shape and np.array_equal(Z1, Z2))
    r = np.sqrt(scaled_sqdist(Z1, Z2, np.asarray(p.lengthscales), symmetric=sym))
    return _matern_from_r(r, p.outputscale)


def pairwise_sqdiff(Z):
    """Per-dimension squared differences, shape (m*m, d); for repeated Gram
    evaluation at fixed inputs and varying lengthscales."""
    Z = np.asarray(Z, dtype=float)
    D = (Z[:, None, :] - Z[None, :, :]) ** 2
    return D.reshape(-1, Z.shape[1])


def matern52_gram_from_sqdiff(D, m, p):
    inv = 1.0 / np.asarray(p.lengthscales) ** 2
    r = np.sqrt((D @ inv).reshape(m, m))
    K = _matern_from_r(r, p.outputscale)
    return 0.5 * (K + K.T)


# --------------------------------------------------------------------------
# Subsequence string kernel
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class StringKernelParams:
    """Gap decay, match decay and maximum subsequence length.

    With ``exact_length`` the kernel only counts subsequences of length
    exactly ``max_subseq_len``; by default lengths 1..max are summed.
    """

    gap_decay: float = 0.5
    match_decay: float = 0.8
    max_subseq_len: int = 3
    exact_length: bool = False

    def __post_init__(self):
        if not (0 < self.gap_decay <= 1 and 0 < self.match_decay <= 1):
            raise ValueError("decays must lie in (0, 1]")
        if int(self.max_subseq_len) < 1:
            raise ValueError("max_subseq_len must be >= 1")


@njit(cache=True)
def _ssk_pair_jit(a, b, gap, match, n, exact, A, newA, P):
    # A, newA: (>=la, >=lb) scratch; P: (>=lb,) scratch
    la = a.shape[0]
    lb = b.shape[0]
    if la == 0 or lb == 0:
        return 0.0
    s = 0.0
    for i in range(la):
        for j in range(lb):
            if a[i] == b[j]:
                A[i, j] = 1.0
                s += 1.0
            else:
                A[i, j] = 0.0
    w = match * match
    total = 0.0
    if not exact or n == 1:
        total += w * s
    for p in range(2, n + 1):
        if s == 0.0:
            break
        w *= match * match
        s = 0.0
        for j in range(lb):
            P[j] = 0.0
        for i in range(la):
            if i > 0:
                for j in range(lb):
                    P[j] = gap * (P[j] + A[i - 1, j])
            run = 0.0
            for j in range(lb):
                if j > 0:
                    run = gap * (run + P[j - 1])
                if a[i] == b[j]:
                    newA[i, j] = run
                    s += run
                else:
                    newA[i, j] = 0.0
        A, newA = newA, A
        if not exact or p == n:
            total += w * s
    return total


@njit(cache=True)
def _ssk_cross_jit(flat_a, off_a, flat_b, off_b, gap, match, n, exact, symmetric):
    na = off_a.shape[0] - 1
    nb = off_b.shape[0] - 1
    out = np.zeros((na, nb))
    ma = 1
    for i in range(na):
        ma = max(ma, off_a[i + 1] - off_a[i])
    mb = 1
    for j in range(nb):
        mb = max(mb, off_b[j + 1] - off_b[j])
    A = np.empty((ma, mb))
    newA = np.empty((ma, mb))
    P = np.empty(mb)
    for i in range(na):
        a = flat_a[off_a[i]:off_a[i + 1]]
        j0 = i if symmetric else 0
        for j in range(j0, nb):
            v = _ssk_pair_jit(a, flat_b[off_b[j]:off_b[j + 1]], gap, match, n, exact, A, newA, P)
            out[i, j] = v
            if symmetric:
                out[j, i] = v
    return out


def _decay_matrix(L, gap):
    idx = np.arange(L)
    diff = idx[:, None] - idx[None, :]
    return np.where(diff > 0, gap ** np.maximum(diff, 0).astype(float), 0.0)


def _ssk_batch_numpy(A_ids, B_ids, gap, match, n, exact):
    """Kernel values for aligned batches of padded id arrays.

    ``A_ids`` is (batch, La) and ``B_ids`` (batch, Lb); padding uses
    negative ids that never match.  The gap-decayed prefix sum is the
    product ``Da @ A @ Db.T`` with strictly-lower decay matrices.
    """
    M = (A_ids[:, :, None] == B_ids[:, None, :]) & (A_ids[:, :, None] >= 0)
    M = M.astype(float)
    Da = _decay_matrix(A_ids.shape[1], gap)
    Db = _decay_matrix(B_ids.shape[1], gap)
    A = M
    w = match * match
    total = np.zeros(A_ids.shape[0])
    if not exact or n == 1:
        total += w * A.sum(axis=(1, 2))
    for p in range(2, n + 1):
        A = M * np.matmul(np.matmul(Da, A), Db.T)
        w *= match * match
        if not exact or p == n:
            total += w * A.sum(axis=(1, 2))
    return total


def _pad(seqs):
    L = max((len(s) for s in seqs), default=0)
    out = np.full((len(seqs), max(L, 1)), -1, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
    return out


class _Vocab:
    def __init__(self):
        self.ids = {}

    def encode(self, tokens):
        get = self.ids.setdefault
        return np.array([get(t, len(self.ids)) for t in tokens], dtype=np.int64)


def _encode_all(*groups):
    vocab = _Vocab()
    return [[vocab.encode(t) for t in g] for g in groups]


def string_kernel_cross(seqs_a, seqs_b, p, symmetric=False, use_numba=None):
    """Raw string-kernel matrix between two lists of token sequences."""
    if use_numba is None:
        use_numba = _accel.HAVE_NUMBA
    ea, eb = _encode_all(seqs_a, seqs_b)
    na, nb = len(ea), len(eb)
    if na == 0 or nb == 0:
        return np.zeros((na, nb))
    args = (float(p.gap_decay), float(p.match_decay), int(p.max_subseq_len), bool(p.exact_length))
    if use_numba:
        fa = np.concatenate(ea + [np.zeros(0, np.int64)])
        fb = np.concatenate(eb + [np.zeros(0, np.int64)])
        oa = np.concatenate([[0], np.cumsum([len(s) for s in ea])]).astype(np.int64)
        ob = np.concatenate([[0], np.cumsum([len(s) for s in eb])]).astype(np.int64)
        return _ssk_cross_jit(fa, oa, fb, ob, *args, symmetric and na == nb)

    # numpy path: all pairs in chunks, sorted by length to limit padding
    ii, jj = np.meshgrid(np.arange(na), np.arange(nb), indexing="ij")
    ii, jj = ii.ravel(), jj.ravel()
    if symmetric and na == nb:
        keep = jj >= ii
        ii, jj = ii[keep], jj[keep]
    lens = np.array([len(ea[i]) + len(eb[j]) for i, j in zip(ii, jj)])
    order = np.argsort(lens, kind="stable")
    out = np.zeros((na, nb))
    chunk = 1024
    for start in range(0, len(order), chunk):
        sel = order[start:start + chunk]
        A_ids = _pad([ea[i] for i in ii[sel]])
        B_ids = _pad([eb[j] for j in jj[sel]])
        B_ids[B_ids < 0] = -2
        vals = _ssk_batch_numpy(A_ids, B_ids, *args)
        out[ii[sel], jj[sel]] = vals
    if symmetric and na == nb:
        out = np.triu(out) + np.triu(out, 1).T
    return out


def string_kernel(s1, s2, p=StringKernelParams()):
    """Subsequence string kernel between two token sequences.

    Sums, over common subsequences ``u`` of length 1..n (or exactly n),
    ``match**(2|u|) * gap**(span1 + span2)`` where a span is the distance
    between the first and last matched index of an occurrence.  O(n |s1| |s2|).
    """
    return float(string_kernel_cross([list(s1)], [list(s2)], p)[0, 0])


def string_kernel_normalized(s1, s2, p=StringKernelParams()):
    k11 = string_kernel(s1, s1, p)
    k22 = string_kernel(s2, s2, p)
    if k11 <= 0 or k22 <= 0:
        raise DegenerateSelfSimilarity("string kernel self-similarity is zero")
    return string_kernel(s1, s2, p) / math.sqrt(k11 * k22)


# --------------------------------------------------------------------------
# Binary fingerprints
# --------------------------------------------------------------------------

def _as_bits(f):
    return np.asarray(f, dtype=bool).ravel()


def fingerprint_dot(f1, f2):
    """Number of bits set in both fingerprints."""
    a, b = _as_bits(f1), _as_bits(f2)
    if a.shape != b.shape:
        raise WidthMismatch(f"fingerprint widths {a.size} and {b.size}")
    return float(np.count_nonzero(a & b))


def stable_hash(tokens):
    """64-bit blake2b hash of a token tuple; identical across runs and platforms."""
    data = "\x1f".join(tokens).encode("utf-8")
    return int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), "little")


def ngrams(tokens, max_ngram):
    tokens = list(tokens)
    for n in range(1, max_ngram + 1):
        for i in range(len(tokens) - n + 1):
            yield tuple(tokens[i:i + n])


def expr_fingerprint(tokens, width=2048, max_ngram=3):
    """Hashed contiguous n-gram fingerprint (n = 1..max_ngram)."""
    if width < 64:
        raise ValueError("width must be >= 64")
    bits = np.zeros(width, dtype=bool)
    for g in ngrams(tokens, max_ngram):
        bits[stable_hash(g) % width] = True
    return bits


def ngram_counts(tokens, width, max_ngram=3):
    """Hashed n-gram count vector, same hashing as ``expr_fingerprint``."""
    counts = np.zeros(width)
    for g in ngrams(tokens, max_ngram):
        counts[stable_hash(g) % width] += 1.0
    return counts


# --------------------------------------------------------------------------
# Structured kernels over decoded structures (pluggable into the coupled kernel)
# --------------------------------------------------------------------------

def _default_tokenizer(x):
    return x.split() if isinstance(x, str) else list(x)


@dataclass
class StringKernel:
    """String kernel over structures, cosine-normalized by default."""

    params: StringKernelParams = field(default_factory=StringKernelParams)
    normalize: bool = True
    tokenizer: object = _default_tokenizer
    name = "string"

    def __post_init__(self):
        self._self_cache = {}

    def _self_values(self, xs):
        missing = [x for x in dict.fromkeys(xs) if x not in self._self_cache]
        if missing:
            for x in missing:
                t = self.tokenizer(x)
                self._self_cache[x] = string_kernel_cross([t], [t], self.params)[0, 0]
        return np.array([self._self_cache[x] for x in xs])

    def cross(self, X1, X2):
        sym = X1 is X2
        K = string_kernel_cross(
            [self.tokenizer(x) for x in X1],
            [self.tokenizer(x) for x in X2],
            self.params,
            symmetric=sym,
        )
        if not self.normalize:
            return K
        d1 = self._self_values(X1)
        d2 = d1 if sym else self._self_values(X2)
        if np.any(d1 <= 0) or np.any(d2 <= 0):
            raise DegenerateSelfSimilarity("string kernel self-similarity is zero")
        K = K / np.sqrt(d1[:, None] * d2[None, :])
        if sym:
            np.fill_diagonal(K, 1.0)
        return K

    def gram(self, X):
        return self.cross(X, X)


@dataclass
class FingerprintKernel:
    """Dot product of hashed n-gram fingerprints of decoded structures."""

    width: int = 2048
    max_ngram: int = 3
    tokenizer: object = _default_tokenizer
    name = "fingerprint"

    def __post_init__(self):
        self._fp_cache = {}

    def fingerprints(self, xs):
        out = np.empty((len(xs), self.width))
        for i, x in enumerate(xs):
            fp = self._fp_cache.get(x)
            if fp is None:
                fp = expr_fingerprint(self.tokenizer(x), self.width, self.max_ngram)
                self._fp_cache[x] = fp
            out[i] = fp
        return out

    def cross(self, X1, X2):
        F1 = self.fingerprints(X1)
        F2 = F1 if X1 is X2 else self.fingerprints(X2)
        return F1 @ F2.T

    def gram(self, X):
        return self.cross(X, X)
