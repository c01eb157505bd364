"""End-to-end runs: activations -> SAE -> concept selection -> DAG -> CFS, per dataset and seed.

Each (dataset, seed) job is independent, so jobs can be farmed out to worker
processes without changing any output byte. Stage randomness is derived from
the run seed by XOR with a fixed per-stage tag.
"""

import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict, fields, replace
from pathlib import Path

import numpy as np

from . import io as ccg_io
from . import __version__
from .errors import InvalidArgumentError
from .graph import GraphTrainConfig, concept_frequencies, select_top_concepts, train_graph
from .intervene import METHODS, CfsConfig, run_cfs_evaluation
from .sae import SaeTrainConfig, calibrate_encoder_bias, encode, train_sae
from .synth import SynthConfig, generate

STAGE_TAGS = {"sae": 0x5AE1, "graph": 0x6A9F, "bootstrap": 0xB007}
DEFAULT_SEEDS = (42, 43, 44, 45, 46)
OVER_SPARSE_EDGES = 50
SOURCES = ("activations", "concepts")


def stage_seed(seed, stage):
    return int(seed) ^ STAGE_TAGS[stage]


def f32(a):
    """Round through float32, the precision of every on-disk matrix."""
    return np.asarray(a, dtype=np.float32).astype(np.float64)


def _from_dict(cls, d, where):
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise InvalidArgumentError(f"{where}: unknown keys {sorted(unknown)}")
    return cls(**d)


def synth_config_from_dict(d):
    d = dict(d)
    preset = d.pop("preset", "default")
    if preset == "default":
        return _from_dict(SynthConfig, d, "synth")
    if preset == "planted_hubs":
        base = asdict(SynthConfig.planted_hubs())
        base.update(d)
        return _from_dict(SynthConfig, base, "synth")
    raise InvalidArgumentError(f"unknown synth preset {preset!r}")


@dataclass
class ExperimentConfig:
    datasets: dict = field(default_factory=dict)
    synth: SynthConfig = None
    source: str = "activations"
    sae: SaeTrainConfig = field(default_factory=SaeTrainConfig)
    graph: GraphTrainConfig = field(default_factory=GraphTrainConfig)
    cfs: CfsConfig = field(default_factory=CfsConfig)
    seeds: list = field(default_factory=lambda: list(DEFAULT_SEEDS))
    methods: list = field(default_factory=lambda: list(METHODS))
    split: float = None

    def validate(self):
        if not self.datasets and self.synth is None:
            raise InvalidArgumentError("config needs at least one dataset or a synth section")
        if len(set(self.seeds)) != len(self.seeds) or not self.seeds:
            raise InvalidArgumentError("seeds must be a non-empty list of distinct integers")
        if self.source not in SOURCES:
            raise InvalidArgumentError(f"source must be one of {SOURCES}")
        bad = [m for m in self.methods if m not in METHODS]
        if bad or not self.methods:
            raise InvalidArgumentError(f"unknown methods {bad}; expected a subset of {METHODS}")
        if self.split is not None and not 0 < self.split < 1:
            raise InvalidArgumentError("split must lie in (0, 1)")
        self.sae.validate()
        self.graph.validate()
        self.cfs.validate()
        if self.synth is not None:
            self.synth.validate()

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise InvalidArgumentError(f"config: unknown keys {sorted(unknown)}")
        cfg = cls()
        if "datasets" in d:
            if not isinstance(d["datasets"], dict):
                raise InvalidArgumentError("config: datasets must map names to paths")
            cfg.datasets = dict(d["datasets"])
        if d.get("synth") is not None:
            cfg.synth = synth_config_from_dict(d["synth"])
        cfg.source = d.get("source", cfg.source)
        cfg.sae = _from_dict(SaeTrainConfig, d.get("sae", {}), "sae")
        cfg.graph = _from_dict(GraphTrainConfig, d.get("graph", {}), "graph")
        cfg.cfs = _from_dict(CfsConfig, d.get("cfs", {}), "cfs")
        cfg.seeds = [int(s) for s in d.get("seeds", cfg.seeds)]
        cfg.methods = list(d.get("methods", cfg.methods))
        cfg.split = d.get("split")
        return cfg

    def to_dict(self):
        return {"datasets": dict(self.datasets),
                "synth": self.synth.to_dict() if self.synth else None,
                "source": self.source, "sae": asdict(self.sae), "graph": asdict(self.graph),
                "cfs": asdict(self.cfs), "seeds": list(self.seeds),
                "methods": list(self.methods), "split": self.split}


# ---- stages ------------------------------------------------------------------

def fit_sae(acts, cfg, seed):
    """Train an SAE with the stage seed and return a float32-exact model and its log.

    The model is rounded to checkpoint precision before encoding, so codes
    computed here match codes recomputed from the saved checkpoint.
    """
    model, log = train_sae(acts, replace(cfg, seed=stage_seed(seed, "sae")))
    for name, a in model.params().items():
        a[...] = f32(a)
    # rounding can nudge a k-th pre-activation to zero; re-centre with a margin above f32 noise
    shift = calibrate_encoder_bias(model, acts, margin=1e-4)
    if shift:
        model.b_enc[...] = f32(model.b_enc)
        log.b_enc_shift += shift
    return model, log


def select_concepts(c, m):
    """Top-``m`` concepts by activation frequency, warning when padding with inactive ones."""
    c = np.asarray(c, dtype=np.float64)
    if m > c.shape[1]:
        raise InvalidArgumentError(f"m={m} exceeds the {c.shape[1]} available concepts")
    active = int(np.sum(concept_frequencies(c) > 0))
    if m > active:
        warnings.warn(f"only {active} concepts are ever active; padding the selection to m={m} "
                      "in frequency order", RuntimeWarning)
    return select_top_concepts(c, m)


def fit_graph(c_sub, cfg, seed, node_ids=None):
    res = train_graph(c_sub, replace(cfg, seed=stage_seed(seed, "graph"), m=c_sub.shape[1]),
                      node_ids=node_ids)
    if res.stats.edge_count < OVER_SPARSE_EDGES and cfg.lambda1 > GraphTrainConfig.lambda1:
        warnings.warn(f"lambda1={cfg.lambda1} left only {res.stats.edge_count} edges "
                      f"(< {OVER_SPARSE_EDGES}); the graph is likely over-sparsified",
                      RuntimeWarning)
    return res


def evaluate(c_sub, g, methods, cfg, seed):
    return [run_cfs_evaluation(c_sub, g, method, replace(cfg, seed=int(seed)))
            for method in sorted(methods)]


@dataclass
class SeedRun:
    dataset: str
    seed: int
    node_ids: np.ndarray
    graph: object
    stats: object
    reports: list
    model: object = None
    sae_log: object = None
    graph_log: list = None
    timings: dict = field(default_factory=dict)


def run_seed(data, cfg, seed, dataset="data", out_dir=None):
    """One full pipeline pass for a single dataset matrix and seed.

    ``data`` holds activations or, when ``cfg.source == "concepts"``, an
    already-encoded concept matrix (the SAE stage is skipped).
    """
    data = np.asarray(data, dtype=np.float64)
    n_train = data.shape[0] if cfg.split is None else int(round(cfg.split * data.shape[0]))
    if cfg.split is not None and not 2 <= n_train <= data.shape[0] - 2:
        raise InvalidArgumentError(f"split={cfg.split} leaves too few rows on one side")
    timings = {}
    model = sae_log = None
    t0 = time.perf_counter()
    if cfg.source == "activations":
        model, sae_log = fit_sae(data[:n_train], cfg.sae, seed)
        concepts = f32(encode(data, model))
    else:
        concepts = data
    timings["sae"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    idx, _ = select_concepts(concepts[:n_train], cfg.graph.m)
    c_train = concepts[:n_train][:, idx]
    res = fit_graph(c_train, cfg.graph, seed, node_ids=idx)
    timings["graph"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    c_eval = concepts[n_train:][:, idx] if cfg.split is not None else c_train
    reports = evaluate(c_eval, res.graph, cfg.methods, cfg.cfs, seed)
    timings["cfs"] = time.perf_counter() - t0

    run = SeedRun(dataset, int(seed), idx, res.graph, res.stats, reports, model, sae_log,
                  res.log, timings)
    if out_dir is not None:
        write_seed_run(run, concepts, out_dir)
    return run


def seed_dir(out_dir, dataset, seed):
    return Path(out_dir) / dataset / f"seed{seed}"


def write_seed_run(run, concepts, out_dir):
    d = seed_dir(out_dir, run.dataset, run.seed)
    if run.model is not None:
        ccg_io.write_ccgm(d / "sae.ccgm", run.model)
        ccg_io.write_train_log(d / "sae_log.json", run.sae_log)
    ccg_io.write_ccga(d / "concepts.ccga", concepts)
    ccg_io.write_graph(d / "graph.json", run.graph)
    ccg_io.write_graph_log(d / "graph_log.csv", run.graph_log)
    ccg_io.write_edges(d / "edges.csv", run.graph)
    for r in run.reports:
        ccg_io.write_cfs_report(d / f"cfs_{r.method}.json", r)


# ---- aggregation --------------------------------------------------------------

@dataclass
class Score:
    dataset: str
    seed: int
    method: str
    cfs: float

    def __post_init__(self):
        # held at report precision so aggregates rebuilt from the JSON reports
        # (ccg report) or from scores.csv match the ones written at run time
        self.cfs = float(ccg_io.fmt(self.cfs))


def scores_from_runs(runs):
    out = [Score(r.dataset, r.seed, rep.method, rep.cfs) for r in runs for rep in r.reports]
    return sorted(out, key=lambda s: (s.method, s.dataset, s.seed))


def summarize(scores):
    """``{method: (mean, std, n)}`` with the sample standard deviation (ddof=1)."""
    by = {}
    for s in scores:
        by.setdefault(s.method, []).append(s.cfs)
    out = {}
    for method in sorted(by):
        v = np.asarray(by[method])
        out[method] = (float(v.mean()), float(v.std(ddof=1)) if v.size > 1 else 0.0, int(v.size))
    return out


def write_scores(path, scores):
    return ccg_io.write_csv_rows(path, ["dataset", "seed", "method", "cfs"],
                                 [(s.dataset, s.seed, s.method, float(s.cfs)) for s in scores])


def read_scores(path):
    header, rows = ccg_io.read_csv_rows(path)
    if header != ["dataset", "seed", "method", "cfs"]:
        raise ccg_io.FormatError(f"{path}: expected header dataset,seed,method,cfs")
    out = []
    for lineno, row in enumerate(rows, start=2):
        try:
            out.append(Score(row[0], int(row[1]), row[2], float(row[3])))
        except (IndexError, ValueError):
            raise ccg_io.FormatError(f"{path}:{lineno}: malformed score row") from None
    return out


def write_summary(path, summary, fmt="csv"):
    if fmt == "json":
        return ccg_io.write_json(path, [{"method": m, "mean": mu, "std": sd, "n": n}
                                        for m, (mu, sd, n) in summary.items()])
    rows = [(m, mu, sd, n, f"{mu:.3f} ± {sd:.3f}") for m, (mu, sd, n) in summary.items()]
    return ccg_io.write_csv_rows(path, ["method", "mean", "std", "n", "display"], rows)


def write_aggregates(out_dir, scores, reports_by_dataset, fmt="csv"):
    out_dir = Path(out_dir)
    write_scores(out_dir / "scores.csv", scores)
    write_summary(out_dir / f"summary.{fmt}", summarize(scores), fmt)
    rows = []
    for dataset, reports in sorted(reports_by_dataset.items()):
        for r in sorted(reports, key=lambda r: (r.method, r.seed)):
            for role, recs in (("causal", r.causal_records), ("random", r.random_records)):
                rows.extend((dataset, r.method, r.seed, role, rec.target_node,
                             rec.downstream_set_size, float(rec.delta_value)) for rec in recs)
    ccg_io.write_csv_rows(out_dir / "deltas.csv",
                          ["dataset", "method", "seed", "role", "node", "out_degree", "delta"], rows)


def write_manifest(out_dir, config_dict, timings=None):
    """Hash every artifact under ``out_dir`` into ``manifest.json``.

    ``timings`` (stage name -> seconds) is optional because wall-clock values
    make the manifest itself non-reproducible.
    """
    out_dir = Path(out_dir)
    artifacts = {}
    for p in sorted(out_dir.rglob("*")):
        if p.is_file() and p.name != "manifest.json" and not p.name.startswith("."):
            artifacts[p.relative_to(out_dir).as_posix()] = ccg_io.sha256_file(p)
    manifest = {"tool_version": __version__, "config_hash": ccg_io.config_hash(config_dict),
                "artifacts": artifacts}
    if timings is not None:
        manifest["wall_clock_s"] = timings
    ccg_io.write_json(out_dir / "manifest.json", manifest)
    return manifest


def verify_manifest(out_dir):
    """Names of artifacts that are missing or whose hash no longer matches."""
    out_dir = Path(out_dir)
    manifest = ccg_io.read_json(out_dir / "manifest.json")
    bad = []
    for rel, digest in manifest["artifacts"].items():
        p = out_dir / rel
        if not p.is_file() or ccg_io.sha256_file(p) != digest:
            bad.append(rel)
    return bad


# ---- experiments ------------------------------------------------------------------

def load_datasets(cfg):
    """Name -> matrix for every configured source, in name order."""
    out = {}
    for name, path in sorted(cfg.datasets.items()):
        out[name] = ccg_io.read_matrix(path)
    if cfg.synth is not None:
        gt = generate(cfg.synth)
        out["synth"] = f32(gt.activations if cfg.source == "activations" else gt.c_star)
    return out


def _job(args):
    data, cfg, seed, dataset, out_dir = args
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        run = run_seed(data, cfg, seed, dataset, out_dir)
    return run, [str(w.message) for w in caught]


def run_experiment(cfg, out_dir=None, threads=1, data=None, fmt="csv"):
    """Every (dataset, seed) job of ``cfg``; returns the runs sorted by dataset then seed.

    Warnings raised inside jobs are re-emitted in job order so that the output
    does not depend on ``threads``.
    """
    cfg.validate()
    data = data if data is not None else load_datasets(cfg)
    jobs = [(mat, cfg, seed, name, out_dir) for name, mat in sorted(data.items())
            for seed in cfg.seeds]
    t0 = time.perf_counter()
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_job, jobs))
    else:
        results = [_job(j) for j in jobs]
    runs = []
    for run, messages in results:
        for msg in messages:
            warnings.warn(f"[{run.dataset} seed {run.seed}] {msg}", RuntimeWarning)
        runs.append(run)
    if out_dir is not None:
        by_dataset = {}
        for r in runs:
            by_dataset.setdefault(r.dataset, []).extend(r.reports)
        write_aggregates(out_dir, scores_from_runs(runs), by_dataset, fmt)
        timings = {"total": time.perf_counter() - t0}
        write_manifest(out_dir, cfg.to_dict(), timings)
    return runs
