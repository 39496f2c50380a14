"""Deterministic encoder/decoder over a fixed structure database.

The codebook model embeds each structure as a seeded random projection of
its hashed n-gram counts and decodes a latent point to the database entry
with the nearest embedding.  Decoded structures therefore always lie in the
database.  ``load_external_model`` gives the same nearest-neighbour semantics
to embeddings exported from any other encoder.
"""
import math

import numpy as np

from . import _accel
from ._accel import njit
from .errors import DimensionMismatch, EmbeddingCollision, ParseError
from .kernels import ngram_counts


@njit(cache=True)
def _nearest_jit(Q, E):
    nq, d = Q.shape
    ne = E.shape[0]
    out = np.empty(nq, dtype=np.int64)
    for i in range(nq):
        best = np.inf
        arg = 0
        for j in range(ne):
            s = 0.0
            for k in range(d):
                t = Q[i, k] - E[j, k]
                s += t * t
            if s < best:
                best = s
                arg = j
        out[i] = arg
    return out


def _nearest_numpy(Q, E, chunk=256):
    # expansion formula to shortlist, exact differences to settle ties
    e2 = (E * E).sum(1)
    out = np.empty(len(Q), dtype=np.int64)
    for s in range(0, len(Q), chunk):
        q = Q[s:s + chunk]
        approx = (q * q).sum(1)[:, None] + e2[None, :] - 2.0 * q @ E.T
        lo = approx.min(axis=1, keepdims=True)
        slack = 1e-9 * (np.abs(lo) + (q * q).sum(1)[:, None] + e2.max()) + 1e-300
        for r in range(len(q)):
            cand = np.flatnonzero(approx[r] <= lo[r] + slack[r])
            exact = ((E[cand] - q[r]) ** 2).sum(1)
            out[s + r] = cand[np.argmin(exact)]
    return out


def nearest_indices(Q, E):
    """Index of the nearest row of ``E`` for each row of ``Q`` (ties: lowest)."""
    Q = np.ascontiguousarray(np.atleast_2d(Q), dtype=float)
    E = np.ascontiguousarray(E, dtype=float)
    if _accel.HAVE_NUMBA:
        return _nearest_jit(Q, E)
    return _nearest_numpy(Q, E)


class CodebookModel:
    """Nearest-neighbour latent model over ``(structure, embedding)`` pairs.

    Parameters
    ----------
    structures : list of str
    embeddings : (N, d) array
    featurize : callable, optional
        Maps an unknown structure to a latent vector; without it, encoding
        is limited to database members.
    """

    def __init__(self, structures, embeddings, featurize=None, meta=None):
        self.structures = list(structures)
        self.embeddings = np.ascontiguousarray(embeddings, dtype=float)
        if self.embeddings.ndim != 2 or len(self.structures) != self.embeddings.shape[0]:
            raise DimensionMismatch("need one embedding row per structure")
        if not self.structures:
            raise ValueError("empty database")
        self.index = {}
        for i, s in enumerate(self.structures):
            self.index.setdefault(s, i)
        if len(self.index) != len(self.structures):
            raise ValueError("duplicate structures in database")
        self._featurize = featurize
        self.meta = dict(meta or {})
        self.embeddings.setflags(write=False)
        _check_distinct(self.embeddings)

    @property
    def dim(self):
        return self.embeddings.shape[1]

    @property
    def database(self):
        return self.structures

    def __len__(self):
        return len(self.structures)

    def encode(self, x):
        i = self.index.get(x)
        if i is not None:
            return self.embeddings[i].copy()
        if self._featurize is None:
            raise KeyError(f"structure not in database and no featurizer: {x!r}")
        return self._featurize(x)

    def decode_index(self, Z):
        """Database indices of the decodings of the rows of ``Z``."""
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        if Z.shape[1] != self.dim:
            raise DimensionMismatch(f"latent dim {Z.shape[1]} != {self.dim}")
        return nearest_indices(Z, self.embeddings)

    def decode(self, z):
        return self.structures[int(self.decode_index(z)[0])]

    def decode_many(self, Z):
        return [self.structures[i] for i in self.decode_index(Z)]

    def bounds(self, expand=0.1):
        """Bounding box of the embeddings, expanded by ``expand`` of its width per side."""
        lo = self.embeddings.min(axis=0)
        hi = self.embeddings.max(axis=0)
        w = hi - lo
        return lo - expand * w, hi + expand * w

    def check_roundtrip(self):
        idx = self.decode_index(self.embeddings)
        bad = np.flatnonzero(idx != np.arange(len(self)))
        if bad.size:
            raise EmbeddingCollision(
                f"{bad.size} database entries do not decode to themselves"
            )


def _check_distinct(E):
    if len(np.unique(E, axis=0)) != len(E):
        raise EmbeddingCollision("two database entries share an embedding")


class _NgramProjector:
    """Structure -> standardized projection of normalized hashed n-gram counts."""

    def __init__(self, d, width, max_ngram, seed, tokenizer):
        self.d, self.width, self.max_ngram = d, width, max_ngram
        self.tokenizer = tokenizer
        rng = np.random.default_rng(seed)
        self.projection = rng.standard_normal((d, width))
        self.mu = np.zeros(d)
        self.sd = np.ones(d)

    def raw(self, x):
        c = ngram_counts(self.tokenizer(x), self.width, self.max_ngram)
        n = np.linalg.norm(c)
        return self.projection @ (c / n if n > 0 else c)

    def fit(self, xs):
        R = np.array([self.raw(x) for x in xs])
        # column-sorted so the statistics do not depend on database order
        Rs = np.sort(R, axis=0)
        self.mu = Rs.mean(axis=0)
        sd = np.sort(np.abs(Rs - self.mu), axis=0)
        sd = np.sqrt((sd * sd).mean(axis=0))
        self.sd = np.where(sd > 0, sd, 1.0)
        return (R - self.mu) / self.sd

    def __call__(self, x):
        return (self.raw(x) - self.mu) / self.sd


def _tokens(x):
    return x.split()


def build_codebook(structures, d=16, seed=0, width=512, max_ngram=3, tokenizer=_tokens):
    """Codebook latent model over ``structures`` (duplicates dropped).

    On an embedding collision the projection is re-drawn once from a derived
    seed before giving up.
    """
    xs = list(dict.fromkeys(structures))
    if not xs:
        raise ValueError("structures must be nonempty")
    seeds = [seed, int(np.random.SeedSequence([seed, 1]).generate_state(1)[0])]
    last = None
    for s in seeds:
        proj = _NgramProjector(d, width, max_ngram, s, tokenizer)
        E = proj.fit(xs)
        try:
            model = CodebookModel(
                xs, E, featurize=proj,
                meta={"kind": "codebook", "d": d, "seed": s, "width": width, "max_ngram": max_ngram},
            )
            model.check_roundtrip()
            return model
        except EmbeddingCollision as exc:
            last = exc
    raise last


def save_model(model, path):
    """Write ``structure TAB v1,...,vd`` lines (exact float round-trip)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# ladder latent model: {len(model)} entries, d={model.dim}\n")
        for x, z in zip(model.structures, model.embeddings):
            fh.write(x + "\t" + ",".join(repr(float(v)) for v in z) + "\n")


def load_external_model(path, validate=None):
    """Load exported embeddings; decoding is nearest neighbour over the file.

    ``validate`` (e.g. the benchmark parser) is called on every structure
    string; any exception it raises becomes a ParseError for that line.
    """
    structures, rows, seen = [], [], set()
    d = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip() or line.startswith("#"):
                continue
            if "\t" not in line:
                raise ParseError("expected 'structure<TAB>v1,...,vd'", lineno)
            x, vec = line.rsplit("\t", 1)
            x = x.strip()
            if not x:
                raise ParseError("empty structure string", lineno)
            try:
                z = [float(t) for t in vec.split(",")]
            except ValueError:
                raise ParseError(f"bad vector {vec[:40]!r}", lineno) from None
            if not all(math.isfinite(v) for v in z):
                raise ParseError("non-finite component", lineno)
            if d is None:
                d = len(z)
            elif len(z) != d:
                raise DimensionMismatch(f"line {lineno}: vector has {len(z)} components, expected {d}")
            if validate is not None:
                try:
                    validate(x)
                except Exception as exc:
                    raise ParseError(f"unparseable structure: {exc}", lineno) from None
            if x in seen:
                raise ParseError(f"duplicate structure {x!r}", lineno)
            seen.add(x)
            structures.append(x)
            rows.append(z)
    if not structures:
        raise ParseError("no records", None)
    model = CodebookModel(structures, np.array(rows), meta={"kind": "external", "path": str(path)})
    model.check_roundtrip()
    return model
