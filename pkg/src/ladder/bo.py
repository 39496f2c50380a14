"""Latent-space Bayesian optimization loop.

``method="ladder"`` fits the structure-coupled GP, ``method="naive-lsbo"``
the plain Matérn GP on latent vectors; everything else is shared.
"""
import json
import math
import time
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .acquisition import CmaConfig, optimize_acquisition
from .coupled import EvaluatedTriple
from .errors import AllCandidatesDuplicate, EmptyRecord
from .expr import ExpressionBenchmark, generate_database
from .gp import FitConfig, fit_hyperparams
from .kernels import FingerprintKernel, StringKernel
from .latent import build_codebook

METHODS = ("ladder", "naive-lsbo")
STRUCT_KERNELS = ("string", "fingerprint")
STREAM_FIELDS = ("t", "z", "x", "y", "best", "seconds")

DB_SIZE = 5000
DB_SEED = 20240
DB_DEPTH = 6
LATENT_DIM = 16


@lru_cache(maxsize=4)
def default_codebook(size=DB_SIZE, seed=DB_SEED, d=LATENT_DIM, max_depth=DB_DEPTH):
    """Codebook over the default expression database (cached per process)."""
    return build_codebook(generate_database(size, seed=seed, max_depth=max_depth), d=d, seed=seed)


@dataclass(frozen=True)
class BOConfig:
    method: str = "ladder"
    structured_kernel: str = "string"
    iterations: int = 100
    init_count: int = 10
    seed: int = 0
    cma: CmaConfig = CmaConfig()
    fit: FitConfig = FitConfig()
    penalize_duplicates: bool = True
    timing: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if self.structured_kernel not in STRUCT_KERNELS:
            raise ValueError(f"structured_kernel must be one of {STRUCT_KERNELS}")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.init_count < 2:
            raise ValueError("init_count must be >= 2")

    @property
    def mode(self):
        return "coupled" if self.method == "ladder" else "latent"

    def make_struct_kernel(self):
        return StringKernel() if self.structured_kernel == "string" else FingerprintKernel()


@dataclass
class RunEntry:
    t: int
    z: np.ndarray
    x: str
    y: float
    best: float
    seconds: float = 0.0
    jitter: float = 0.0
    struct_jitter: float = 0.0
    duplicate: bool = False

    def stream_dict(self, timing=False):
        return {
            "t": self.t,
            "z": [float(v) for v in self.z],
            "x": self.x,
            "y": float(self.y),
            "best": float(self.best),
            "seconds": float(self.seconds) if timing else 0.0,
        }


@dataclass
class BORunRecord:
    config: BOConfig
    entries: list = field(default_factory=list)

    @property
    def triples(self):
        return [EvaluatedTriple(e.z, e.x, e.y) for e in self.entries]

    def incumbents(self):
        return np.array([e.best for e in self.entries])

    def iteration_entries(self):
        return [e for e in self.entries if e.t > 0]


def incumbent(record):
    """Best (structure, value); ties go to the earliest entry."""
    entries = record.entries if isinstance(record, BORunRecord) else list(record)
    if not entries:
        raise EmptyRecord("record has no entries")
    best = entries[0]
    for e in entries[1:]:
        if e.y < best.y:
            best = e
    return best.x, best.y


def _rng(seed, t):
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, int(t)]))


def init_dataset(latent_model, benchmark, init_count, rng):
    """Evaluate ``init_count`` distinct database structures drawn uniformly."""
    n = len(latent_model)
    if init_count > n:
        raise ValueError(f"init_count {init_count} exceeds database size {n}")
    idx = rng.choice(n, size=init_count, replace=False)
    out = []
    for i in idx:
        x = latent_model.structures[int(i)]
        z = latent_model.encode(x)
        out.append(EvaluatedTriple(z, x, float(benchmark(x))))
    return out


class _Stream:
    def __init__(self, path, timing):
        self.timing = timing
        self.fh = open(path, "w", encoding="utf-8") if path is not None else None

    def write(self, entry):
        if self.fh is not None:
            self.fh.write(json.dumps(entry.stream_dict(self.timing)) + "\n")
            self.fh.flush()

    def close(self):
        if self.fh is not None:
            self.fh.close()


def run(config, latent_model=None, benchmark=None, stream=None):
    """Run one BO trajectory and return its record.

    Rows are streamed to ``stream`` (a path) as they are produced, so a
    crashed run leaves every completed iteration on disk.  Initialization
    rows carry ``t = 0``; iterations are numbered from 1.
    """
    latent_model = latent_model if latent_model is not None else default_codebook()
    benchmark = benchmark if benchmark is not None else ExpressionBenchmark()
    record = BORunRecord(config)
    out = _Stream(stream, config.timing)
    try:
        best = math.inf
        for tr in init_dataset(latent_model, benchmark, config.init_count, _rng(config.seed, 0)):
            best = min(best, tr.y)
            entry = RunEntry(0, np.asarray(tr.z, dtype=float), tr.x, tr.y, best)
            record.entries.append(entry)
            out.write(entry)

        struct_kernel = config.make_struct_kernel() if config.mode == "coupled" else None
        hyper = None
        for t in range(1, config.iterations + 1):
            start = time.perf_counter()
            rng = _rng(config.seed, t)
            Z = np.array([e.z for e in record.entries])
            X = [e.x for e in record.entries]
            y = np.array([e.y for e in record.entries])
            fit_cfg = FitConfig(
                restarts=config.fit.restarts, max_evals=config.fit.max_evals,
                seed=int(rng.integers(2 ** 31)), lengthscale_bounds=config.fit.lengthscale_bounds,
            )
            gp = fit_hyperparams((Z, X, y), config.mode, fit_cfg, struct_kernel, warm_start=hyper)
            hyper = gp.hyper
            dup = False
            try:
                prop = optimize_acquisition(
                    gp, latent_model, float(y.min()), config.cma, rng,
                    exclude=set(X), penalize_duplicates=config.penalize_duplicates,
                )
                z = prop.z
            except AllCandidatesDuplicate as exc:
                z, dup = exc.best_z, True
            x = latent_model.decode(z)
            yt = float(benchmark(x))
            best = min(best, yt)
            entry = RunEntry(
                t, np.asarray(z, dtype=float), x, yt, best,
                seconds=time.perf_counter() - start,
                jitter=gp.jitter, struct_jitter=gp.struct_jitter, duplicate=dup or x in X,
            )
            record.entries.append(entry)
            out.write(entry)
    finally:
        out.close()
    return record


def read_stream(path):
    """Parse a streamed record back into dicts (field order preserved)."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rows.append(json.loads(line))
    return rows
