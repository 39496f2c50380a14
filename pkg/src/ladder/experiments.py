"""Experiment drivers: surrogate-fit comparison, paired BO comparison, single run.

Every output file starts with ``#`` lines holding the resolved configuration,
and every aggregate is recomputable from the raw rows written next to it.
"""
import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from .acquisition import CmaConfig
from .bo import BOConfig, default_codebook, incumbent, run
from .errors import ConfigError, LadderError
from .expr import ExpressionBenchmark, parse
from .gp import GPModel, fit_hyperparams, select_string_params_loo, surrogate_mae
from .kernels import StringKernel
from .latent import load_external_model

EXPERIMENTS = ("surrogate-fit", "bo-compare", "run")
METHOD_ALIASES = {
    "ladder": ("ladder", "string"),
    "ladder-string": ("ladder", "string"),
    "ladder-fingerprint": ("ladder", "fingerprint"),
    "naive-lsbo": ("naive-lsbo", "string"),
}
SURROGATE_MODELS = ("matern-only", "structure-coupled")


def _ints(v):
    if isinstance(v, str):
        return tuple(int(s) for s in v.replace(" ", "").split(",") if s)
    return tuple(int(s) for s in v)


def _strs(v):
    if isinstance(v, str):
        return tuple(s.strip() for s in v.split(",") if s.strip())
    return tuple(v)


def _bool(v):
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str = "run"
    benchmark: str = "expr"
    methods: tuple = ("ladder", "naive-lsbo")
    method: str = "ladder"
    sizes: tuple = (10, 20, 50, 100, 200)
    train_sets: int = 50
    test_sets: int = 20
    test_size: int = 50
    seeds: int = 10
    seed: int = 0
    iterations: int = 100
    init_count: int = 10
    out: str = "results"
    latent: str = "codebook"
    workers: int = 1
    loo_select: bool = False
    penalize_duplicates: bool = True
    timing: bool = False
    cma_sigma0: float = 0.2
    cma_population: int = 50
    cma_restarts: int = 10
    cma_iterations: int = 10

    _CASTS = {
        "methods": _strs, "sizes": _ints, "train_sets": int, "test_sets": int,
        "test_size": int, "seeds": int, "seed": int, "iterations": int,
        "init_count": int, "workers": int, "loo_select": _bool,
        "penalize_duplicates": _bool, "timing": _bool, "cma_sigma0": float,
        "cma_population": int, "cma_restarts": int, "cma_iterations": int,
    }

    @classmethod
    def from_mapping(cls, values, base=None):
        """Build from string-valued settings; unknown keys are errors."""
        base = base or cls()
        names = {f.name for f in fields(cls)}
        updates = {}
        for k, v in values.items():
            key = k.strip().replace("-", "_")
            if key not in names:
                raise ConfigError(key, "unknown setting")
            cast = cls._CASTS.get(key, str)
            try:
                updates[key] = cast(v)
            except (TypeError, ValueError) as exc:
                raise ConfigError(key, f"bad value {v!r}: {exc}") from None
        cfg = replace(base, **updates)
        cfg.validate()
        return cfg

    def validate(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError("experiment", f"must be one of {EXPERIMENTS}")
        if self.benchmark != "expr":
            raise ConfigError("benchmark", "only 'expr' is available")
        for m in self.methods + (self.method,):
            if m not in METHOD_ALIASES:
                raise ConfigError("method", f"unknown method {m!r}")
        for name in ("train_sets", "test_sets", "test_size", "seeds", "init_count", "workers"):
            if getattr(self, name) < 1:
                raise ConfigError(name, "must be positive")
        if self.init_count < 2:
            raise ConfigError("init_count", "must be >= 2")
        if self.iterations < 0:
            raise ConfigError("iterations", "must be >= 0")
        if not self.sizes or min(self.sizes) < 2:
            raise ConfigError("sizes", "need sizes >= 2")
        if not self.methods:
            raise ConfigError("methods", "empty")
        try:
            self.cma
        except ValueError as exc:
            raise ConfigError("cma", str(exc)) from None

    @property
    def cma(self):
        return CmaConfig(self.cma_sigma0, self.cma_population, self.cma_iterations, self.cma_restarts)

    def as_dict(self):
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self).items()}


def read_config_file(path):
    """Flat ``key = value`` text; ``#`` starts a comment."""
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}", "expected key = value")
            k, v = line.split("=", 1)
            values[k.strip()] = v.strip()
    return values


def load_latent(cfg):
    if cfg.latent == "codebook":
        return default_codebook()
    return load_external_model(cfg.latent, validate=parse)


def _header(cfg):
    return "".join(f"# {k}={json.dumps(v)}\n" for k, v in cfg.as_dict().items())


def _write_csv(path, cfg, columns, rows):
    buf = io.StringIO()
    buf.write(_header(cfg))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in r])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def read_csv(path):
    """Rows of a result CSV as dicts (comment header skipped, floats parsed)."""
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    out = []
    for row in csv.DictReader(lines):
        parsed = {}
        for k, v in row.items():
            try:
                parsed[k] = int(v)
            except ValueError:
                try:
                    parsed[k] = float(v)
                except ValueError:
                    parsed[k] = v
        out.append(parsed)
    return out


def mean_2se(values):
    """(mean, 2 * standard error, median, n) of a sample."""
    a = np.asarray(values, dtype=float)
    n = a.size
    se = float(np.std(a, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return float(np.mean(a)), 2.0 * se, float(np.median(a)), n


def _seq_rng(*keys):
    return np.random.default_rng(np.random.SeedSequence([int(k) & 0xFFFFFFFF for k in keys]))


# -- surrogate fit ---------------------------------------------------------

def _surrogate_cell(args):
    cfg, size, ti, model = args
    model = model if model is not None else load_latent(cfg)
    bench = ExpressionBenchmark()
    n = len(model)
    rng = _seq_rng(cfg.seed, size, ti)
    perm = rng.permutation(n)
    train = perm[:size]
    pool = perm[size:]
    if pool.size < cfg.test_size:
        raise ConfigError("test_size", "database too small for disjoint test sets")
    Z = model.embeddings[train]
    X = [model.structures[i] for i in train]
    y = np.array([bench(x) for x in X])
    matern = fit_hyperparams((Z, X, y), "latent")
    kernel = StringKernel()
    if cfg.loo_select:
        kernel = StringKernel(select_string_params_loo((Z, X, y), matern.hyper))
    coupled = GPModel("coupled", Z, X, y, matern.hyper, kernel)
    rows = []
    for si in range(cfg.test_sets):
        test = rng.choice(pool, size=cfg.test_size, replace=False)
        Zt = model.embeddings[test]
        Xt = [model.structures[i] for i in test]
        yt = np.array([bench(x) for x in Xt])
        rows.append(("matern-only", size, ti, si, surrogate_mae(matern, Zt, Xt, yt)))
        rows.append(("structure-coupled", size, ti, si, surrogate_mae(coupled, Zt, Xt, yt)))
    return rows


def _map(fn, jobs, workers):
    if workers <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, jobs))


def surrogate_summary(cells):
    """Per (model, size) aggregates from raw cell rows."""
    groups = {}
    for r in cells:
        groups.setdefault((r[0], r[1]), []).append(r[4])
    out = []
    for (model, size) in sorted(groups, key=lambda k: (SURROGATE_MODELS.index(k[0]), k[1])):
        mean, two_se, med, n = mean_2se(groups[(model, size)])
        out.append((model, size, mean, two_se, med, n))
    return out


def cmd_surrogate_fit(cfg, latent_model=None):
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    model = latent_model
    if model is None and cfg.latent != "codebook":
        model = load_latent(cfg)
    jobs = [(cfg, s, ti, model) for s in cfg.sizes for ti in range(cfg.train_sets)]
    cells = [row for rows in _map(_surrogate_cell, jobs, cfg.workers) for row in rows]
    cells.sort(key=lambda r: (SURROGATE_MODELS.index(r[0]), r[1], r[2], r[3]))
    _write_csv(out / "surrogate_cells.csv", cfg, ("model", "size", "train_set", "test_set", "mae"), cells)
    summary = surrogate_summary(cells)
    _write_csv(out / "surrogate_summary.csv", cfg,
               ("model", "size", "mean_mae", "two_se", "median_mae", "n"), summary)
    return out / "surrogate_summary.csv"


# -- BO ------------------------------------------------------------------

def bo_config(cfg, method, seed):
    name, kernel = METHOD_ALIASES[method]
    return BOConfig(
        method=name, structured_kernel=kernel, iterations=cfg.iterations,
        init_count=cfg.init_count, seed=seed, cma=cfg.cma, penalize_duplicates=cfg.penalize_duplicates,
        timing=cfg.timing,
    )


def trace_path(out, method, seed):
    return Path(out) / "traces" / f"{method}_seed{seed}.jsonl"


def _bo_job(args):
    cfg, method, seed, model = args
    model = model if model is not None else load_latent(cfg)
    path = trace_path(cfg.out, method, seed)
    try:
        rec = run(bo_config(cfg, method, seed), model, ExpressionBenchmark(), stream=path)
    except (LadderError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        return method, seed, None, f"{type(exc).__name__}: {exc}"
    return method, seed, [e.best for e in rec.entries], None


def incumbent_curve(bests, init_count):
    """Incumbent after initialization (t=0) and after each iteration."""
    return list(bests[init_count - 1:])


def bo_summary(curves):
    """Per (method, t) aggregate rows from ``{(method, seed): curve}``."""
    methods = sorted({m for m, _ in curves}, key=str)
    out = []
    for m in methods:
        cs = [curves[k] for k in sorted(curves) if k[0] == m]
        T = min(len(c) for c in cs)
        for t in range(T):
            mean, two_se, med, n = mean_2se([c[t] for c in cs])
            out.append((m, t, mean, two_se, med, n))
    return out


def cmd_bo_compare(cfg, latent_model=None):
    """Every (method, seed) pair; returns the summary path and failures."""
    out = Path(cfg.out)
    (out / "traces").mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.as_dict(), indent=1, sort_keys=True) + "\n")
    model = latent_model
    if model is None and cfg.latent != "codebook":
        model = load_latent(cfg)
    seeds = [cfg.seed + i for i in range(cfg.seeds)]
    jobs = [(cfg, m, s, model) for m in cfg.methods for s in seeds]
    results = sorted(_map(_bo_job, jobs, cfg.workers), key=lambda r: (r[0], r[1]))
    curves, failures = {}, []
    for method, seed, bests, err in results:
        if err is None:
            curves[(method, seed)] = incumbent_curve(bests, cfg.init_count)
        else:
            failures.append((method, seed, err))
    _write_csv(out / "bo_summary.csv", cfg,
               ("method", "t", "mean_best", "two_se", "median_best", "n"), bo_summary(curves))
    _write_csv(out / "bo_failures.csv", cfg, ("method", "seed", "error"), failures)
    return out / "bo_summary.csv", failures


def cmd_single_run(cfg, latent_model=None):
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    model = latent_model if latent_model is not None else load_latent(cfg)
    path = out / f"run_{cfg.method}_seed{cfg.seed}.jsonl"
    (out / f"run_{cfg.method}_seed{cfg.seed}.config.json").write_text(
        json.dumps(cfg.as_dict(), indent=1, sort_keys=True) + "\n"
    )
    rec = run(bo_config(cfg, cfg.method, cfg.seed), model, ExpressionBenchmark(), stream=path)
    return path, incumbent(rec)
