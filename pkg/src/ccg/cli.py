"""Command-line interface: ``ccg <command> [options]``.

Exit codes: 0 success, 2 input or configuration error, 3 numeric failure,
4 sweep finished with failed cells.
"""

import argparse
import itertools
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io as ccg_io
from . import pipeline
from .errors import CCGError, DivergenceError, InvalidArgumentError, NumericError
from .graph import ConceptGraph
from .intervene import METHODS
from .sae import encode, l0_rate
from .stats import compare_paired, pearson_corr_matrix
from .synth import SynthConfig, generate

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_PARTIAL = 0, 2, 3, 4
SWEEP_KEYS = {"k": ("sae", "k"), "lambda1": ("graph", "lambda1"),
              "lambda2": ("graph", "lambda2"), "beta": ("sae", "beta"), "method": (None, None)}


class UsageError(InvalidArgumentError):
    pass


def _warn(message, category, filename, lineno, file=None, line=None):
    print(f"warning: {message}", file=sys.stderr)


def _csv_list(text, cast=str):
    try:
        return [cast(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"cannot parse list {text!r}") from None


def _load_config(args):
    if getattr(args, "config", None):
        return pipeline.ExperimentConfig.from_dict(ccg_io.read_json(args.config))
    return pipeline.ExperimentConfig()


def _out(args):
    if not args.out:
        raise UsageError("--out is required for this command")
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"{out}: cannot create output directory ({exc.strerror})") from None
    return out


def _set(cfg, **values):
    return replace(cfg, **{k: v for k, v in values.items() if v is not None})


def _activations(path):
    p = Path(path)
    if p.is_dir():
        p = p / "activations.ccga"
    return ccg_io.read_matrix(p)


# ---- commands -----------------------------------------------------------------

def cmd_synth(args):
    out = _out(args)
    base = SynthConfig.planted_hubs() if args.preset == "planted_hubs" else SynthConfig()
    cfg = _set(base, m=args.m, dag_density=args.density, n_examples=args.n,
               noise_sigma=args.noise, dict_dim=args.dict_dim,
               concept_sparsity=args.sparsity, hub_count=args.hub_count,
               hub_boost=args.hub_boost, seed=args.seed)
    gt = generate(cfg)
    ccg_io.write_ccga(out / "activations.ccga", gt.activations)
    ccg_io.write_ccga(out / "c_star.ccga", gt.c_star)
    ccg_io.write_ccga(out / "dictionary.ccga", gt.dictionary)
    ccg_io.write_json(out / "ground_truth.json", {
        "w_star": gt.w_star.tolist(), "dictionary_path": "dictionary.ccga",
        "c_star_path": "c_star.ccga", "activations_path": "activations.ccga",
        "config": cfg.to_dict(), "hubs": gt.hubs.tolist(),
        "node_permutation": gt.node_permutation.tolist(), "clamp_rate": gt.clamp_rate,
        "edge_count": int(np.sum(gt.w_star > 0))}, digits=None)
    pipeline.write_manifest(out, cfg.to_dict(), None)
    print(f"wrote synth bundle to {out} ({int(np.sum(gt.w_star > 0))} planted edges, "
          f"clamp rate {gt.clamp_rate:.4f})")
    return EXIT_OK


def cmd_train_sae(args):
    cfg = _load_config(args)
    out = _out(args)
    sae_cfg = _set(cfg.sae, k=args.k, n_concepts=args.n_concepts, epochs=args.epochs,
                   lambda_l1=args.lambda_l1, beta=args.beta)
    acts = _activations(args.input)
    model, log = pipeline.fit_sae(acts, sae_cfg, args.seed)
    concepts = pipeline.f32(encode(acts, model))
    ccg_io.write_ccgm(out / "sae.ccgm", model)
    ccg_io.write_train_log(out / "sae_log.json", log)
    ccg_io.write_ccga(out / "concepts.ccga", concepts)
    pipeline.write_manifest(out, {"sae": sae_cfg.__dict__, "seed": args.seed}, None)
    print(f"K={model.n_concepts} k={model.k} final mse={log[-1].mse:.6g} "
          f"l0_rate={l0_rate(concepts):.6g}")
    return EXIT_OK


def cmd_train_graph(args):
    cfg = _load_config(args)
    out = _out(args)
    gcfg = _set(cfg.graph, m=args.m, lambda1=args.lambda1, lambda2=args.lambda2,
                epochs=args.epochs, lambda2_growth=args.lambda2_growth)
    if args.unnormalized:
        gcfg = replace(gcfg, normalize=False)
    if args.center:
        gcfg = replace(gcfg, center=True)
    if args.concepts:
        concepts = ccg_io.read_matrix(args.concepts)
    elif args.model and args.input:
        concepts = pipeline.f32(encode(_activations(args.input), ccg_io.read_ccgm(args.model)))
    else:
        raise UsageError("train-graph needs --concepts, or --model together with --input")
    idx, c_sub = pipeline.select_concepts(concepts, gcfg.m)
    try:
        res = pipeline.fit_graph(c_sub, gcfg, args.seed, node_ids=idx)
    except DivergenceError as exc:
        w = np.array(exc.last_good)
        np.fill_diagonal(w, 0.0)
        dump = out / "graph_last_good.json"
        ccg_io.write_graph(dump, ConceptGraph(w, idx, gcfg.edge_threshold))
        raise NumericError(f"{exc}; last good weights (epoch {exc.epoch}) saved to {dump}") from exc
    ccg_io.write_graph(out / "graph.json", res.graph)
    ccg_io.write_graph_log(out / "graph_log.csv", res.log)
    ccg_io.write_edges(out / "edges.csv", res.graph)
    pipeline.write_manifest(out, {"graph": gcfg.__dict__, "seed": args.seed}, None)
    s = res.stats
    print(f"edges={s.edge_count} density={s.density:.4f} dag_violation={s.dag_violation:.3g} "
          f"sem_loss={s.sem_loss:.6g}")
    return EXIT_OK


def cmd_eval_cfs(args):
    cfg = _load_config(args)
    out = _out(args)
    cfs_cfg = _set(cfg.cfs, s=args.s, delta=args.delta, tau=args.tau)
    if args.condition_random:
        cfs_cfg = replace(cfs_cfg, condition_random_on_outdegree=True)
    methods = _csv_list(args.methods) if args.methods else cfg.methods
    seeds = _csv_list(args.seeds, int) if args.seeds else cfg.seeds
    if len(set(seeds)) != len(seeds):
        raise UsageError("seeds must be distinct")
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise UsageError(f"unknown methods {bad}; expected a subset of {METHODS}")
    g = ccg_io.read_graph(args.graph)
    concepts = ccg_io.read_matrix(args.concepts)
    if g.node_ids.max() >= concepts.shape[1] or g.node_ids.min() < 0:
        raise UsageError(f"{args.graph}: node_ids reach {int(g.node_ids.max())} but "
                         f"{args.concepts} has only {concepts.shape[1]} columns")
    c_sub = concepts[:, g.node_ids]
    reports = []
    for seed in sorted(seeds):
        for r in pipeline.evaluate(c_sub, g, methods, cfs_cfg, seed):
            ccg_io.write_cfs_report(pipeline.seed_dir(out, args.dataset, seed) /
                                    f"cfs_{r.method}.json", r)
            reports.append(r)
    scores = sorted((pipeline.Score(args.dataset, r.seed, r.method, r.cfs) for r in reports),
                    key=lambda s: (s.method, s.dataset, s.seed))
    pipeline.write_aggregates(out, scores, {args.dataset: reports}, args.format)
    pipeline.write_manifest(out, {"cfs": cfs_cfg.__dict__, "methods": methods, "seeds": seeds,
                                  "graph": str(args.graph), "concepts": str(args.concepts)})
    for method, (mu, sd, n) in pipeline.summarize(scores).items():
        print(f"{method:10s} {mu:.3f} ± {sd:.3f} (n={n})")
    return EXIT_OK


def cmd_stats(args):
    out = _out(args)
    scores = []
    for path in args.scores:
        scores.extend(pipeline.read_scores(path))
    table = {}
    for s in scores:
        key = (s.dataset, s.seed)
        if key in table.setdefault(s.method, {}):
            raise UsageError(f"duplicate score for method {s.method} at {key}")
        table[s.method][key] = s.cfs
    if args.reference not in table:
        raise UsageError(f"reference method {args.reference!r} not found in the scores")
    others = sorted(m for m in table if m != args.reference)
    if not others:
        raise UsageError("stats needs at least two methods")
    ref = table[args.reference]
    keys = sorted(ref)
    results = []
    for method in others:
        if set(table[method]) != set(keys):
            missing = sorted(set(keys) ^ set(table[method]))
            raise UsageError(f"method {method} has unmatched (dataset, seed) pairs: {missing[:5]}")
        x = [ref[k] for k in keys]
        y = [table[method][k] for k in keys]
        results.append(compare_paired(
            x, y, comparisons=len(others), replicates=args.replicates, level=args.level,
            seed=pipeline.stage_seed(args.seed, "bootstrap"),
            comparison=f"{args.reference} vs {method}"))
    ccg_io.write_stats(out / "stats.json", out / "stats.csv", results)
    pipeline.write_manifest(out, {"reference": args.reference, "replicates": args.replicates,
                                  "level": args.level, "seed": args.seed})
    for r in results:
        print(f"{r.comparison:24s} t={r.t_stat:.4g} p={r.p_raw:.4g} p_corr={r.p_corrected:.4g} "
              f"d={r.cohens_d:.4g} ci=[{r.ci_low:.4g}, {r.ci_high:.4g}]")
    return EXIT_OK


def sweep_cells(grid):
    """Cartesian product of the grid in key-sorted order; each cell is a dict."""
    if not isinstance(grid, dict) or not grid:
        raise UsageError("sweep grid is empty")
    unknown = set(grid) - set(SWEEP_KEYS)
    if unknown:
        raise UsageError(f"sweep grid has unsupported keys {sorted(unknown)}; "
                         f"allowed: {sorted(SWEEP_KEYS)}")
    names = sorted(grid)
    values = [list(grid[n]) if isinstance(grid[n], (list, tuple)) else [grid[n]] for n in names]
    if any(len(v) == 0 for v in values):
        raise UsageError("sweep grid has an empty value list")
    return [dict(zip(names, combo)) for combo in itertools.product(*values)]


def cell_config(base, cell):
    cfg = replace(base, sae=replace(base.sae), graph=replace(base.graph), cfs=replace(base.cfs))
    for key, value in cell.items():
        section, attr = SWEEP_KEYS[key]
        if section is None:
            continue
        setattr(getattr(cfg, section), attr, value)
    return cfg


def _run_cell(job):
    index, cell, cfg, out_dir, data = job
    method = cell.get("method", "graph")
    row = {"cell": index, **{k: cell.get(k, "") for k in sorted(SWEEP_KEYS)}, "method": method}
    try:
        cfg.validate()
        if method not in cfg.methods:
            cfg = replace(cfg, methods=sorted(set(cfg.methods) | {method}))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            runs = pipeline.run_experiment(cfg, out_dir, threads=1, data=data)
        vals = np.array([r.cfs for run in runs for r in run.reports if r.method == method])
        row.update(mean_cfs=float(vals.mean()),
                   std_cfs=float(vals.std(ddof=1)) if vals.size > 1 else 0.0,
                   density=float(np.mean([run.stats.density for run in runs])),
                   dag_violation=float(np.mean([run.stats.dag_violation for run in runs])),
                   status="ok", error="")
    except (CCGError, ValueError, FloatingPointError) as exc:
        row.update(mean_cfs=float("nan"), std_cfs=float("nan"), density=float("nan"),
                   dag_violation=float("nan"), status="failed", error=str(exc))
    return row


SWEEP_COLUMNS = ["cell", "k", "lambda1", "lambda2", "beta", "method", "mean_cfs", "std_cfs",
                 "density", "dag_violation", "status", "error"]


def run_sweep(base, grid, out_dir, threads=1, fmt="csv"):
    """Run every grid cell with the base config's seeds; returns the aggregate rows."""
    cells = sweep_cells(grid)
    base.validate()
    data = pipeline.load_datasets(base)
    out_dir = Path(out_dir)
    jobs = [(i, cell, cell_config(base, cell), out_dir / f"cell_{i:03d}", data)
            for i, cell in enumerate(cells)]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(_run_cell, jobs))
    else:
        rows = [_run_cell(j) for j in jobs]
    if fmt == "json":
        ccg_io.write_json(out_dir / "sweep.json", rows)
    else:
        ccg_io.write_csv_rows(out_dir / "sweep.csv", SWEEP_COLUMNS,
                              [[row[c] for c in SWEEP_COLUMNS] for row in rows])
    return rows


def cmd_sweep(args):
    spec = ccg_io.read_json(args.grid)
    if not isinstance(spec, dict):
        raise UsageError(f"{args.grid}: grid must be a JSON object")
    grid = spec.get("grid", {k: v for k, v in spec.items() if k != "base"})
    base = (pipeline.ExperimentConfig.from_dict(spec["base"]) if "base" in spec
            else _load_config(args))
    if args.seeds:
        base.seeds = _csv_list(args.seeds, int)
    out = _out(args)
    rows = run_sweep(base, grid, out, args.threads, args.format)
    pipeline.write_manifest(out, {"base": base.to_dict(), "grid": grid})
    failed = [r for r in rows if r["status"] != "ok"]
    for r in rows:
        cell = " ".join(f"{k}={r[k]}" for k in sorted(SWEEP_KEYS) if r[k] != "")
        if r["status"] == "ok":
            print(f"cell {r['cell']:3d} {cell}: cfs {r['mean_cfs']:.3f} ± {r['std_cfs']:.3f}")
        else:
            print(f"cell {r['cell']:3d} {cell}: FAILED ({r['error']})")
    return EXIT_PARTIAL if failed else EXIT_OK


def cmd_run(args):
    cfg = _load_config(args)
    if args.seeds:
        cfg.seeds = _csv_list(args.seeds, int)
    if args.split is not None:
        cfg.split = args.split
    out = _out(args)
    runs = pipeline.run_experiment(cfg, out, threads=args.threads, fmt=args.format)
    for method, (mu, sd, n) in pipeline.summarize(pipeline.scores_from_runs(runs)).items():
        print(f"{method:10s} {mu:.3f} ± {sd:.3f} (n={n})")
    return EXIT_OK


def cmd_report(args):
    out = Path(args.out) if args.out else None
    if out is None or not out.is_dir():
        raise UsageError(f"report needs an existing --out directory, got {args.out!r}")
    reports_by_dataset = {}
    scores = []
    for path in sorted(out.glob("*/seed*/cfs_*.json")):
        r = ccg_io.read_cfs_report(path)
        dataset = path.parent.parent.name
        reports_by_dataset.setdefault(dataset, []).append(r)
        scores.append(pipeline.Score(dataset, r.seed, r.method, r.cfs))
    if not scores:
        raise UsageError(f"{out}: no CFS reports found under <dataset>/seed*/")
    scores.sort(key=lambda s: (s.method, s.dataset, s.seed))
    pipeline.write_aggregates(out, scores, reports_by_dataset, args.format)
    for concepts_path in sorted(out.glob("*/seed*/concepts.ccga")):
        c = ccg_io.read_matrix(concepts_path)
        q = min(args.top, c.shape[1])
        idx, c_top = pipeline.select_top_concepts(c, q)
        ccg_io.write_corr_csv(concepts_path.parent / f"corr_top{q}.csv",
                              pearson_corr_matrix(c_top), labels=idx.tolist())
    for method, (mu, sd, n) in pipeline.summarize(scores).items():
        print(f"{method:10s} {mu:.3f} ± {sd:.3f} (n={n})")
    return EXIT_OK


# ---- parser ------------------------------------------------------------------------

def _common_flags(seed_default=42):
    # built fresh per command: argparse parents share action objects, so a
    # per-command default set through them would leak into every command
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config JSON")
    common.add_argument("--seed", type=int, default=seed_default,
                        help=f"run seed (default {seed_default})")
    common.add_argument("--out", help="output directory")
    common.add_argument("--threads", type=int, default=1,
                        help="worker processes for independent runs")
    common.add_argument("--format", choices=("json", "csv"), default="csv",
                        help="format of summary tables")
    return [common]


def build_parser():
    parser = argparse.ArgumentParser(prog="ccg", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=_common_flags(seed_default=0),
                       help="write a planted ground-truth bundle")
    p.add_argument("--preset", choices=("default", "planted_hubs"), default="default")
    p.add_argument("--m", type=int)
    p.add_argument("--density", type=float)
    p.add_argument("--n", type=int, help="number of examples")
    p.add_argument("--noise", type=float)
    p.add_argument("--dict-dim", type=int)
    p.add_argument("--sparsity", type=int)
    p.add_argument("--hub-count", type=int)
    p.add_argument("--hub-boost", type=float)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train-sae", parents=_common_flags(), help="train a TopK SAE on activations")
    p.add_argument("--input", required=True, help="CCGA/CSV activations or a synth bundle dir")
    p.add_argument("--k", type=int)
    p.add_argument("--n-concepts", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lambda-l1", type=float)
    p.add_argument("--beta", type=float)
    p.set_defaults(func=cmd_train_sae)

    p = sub.add_parser("train-graph", parents=_common_flags(), help="learn a concept DAG")
    p.add_argument("--concepts", help="N x K concept matrix (CCGA/CSV)")
    p.add_argument("--model", help="CCGM checkpoint, used with --input")
    p.add_argument("--input", help="activations to encode with --model")
    p.add_argument("--m", type=int)
    p.add_argument("--lambda1", type=float)
    p.add_argument("--lambda2", type=float)
    p.add_argument("--lambda2-growth", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--unnormalized", action="store_true",
                   help="use the raw sum of squares instead of dividing by N")
    p.add_argument("--center", action="store_true", help="mean-centre concept columns first")
    p.set_defaults(func=cmd_train_graph)

    p = sub.add_parser("eval-cfs", parents=_common_flags(), help="score target-selection methods")
    p.add_argument("--graph", required=True)
    p.add_argument("--concepts", required=True)
    p.add_argument("--methods", help=f"comma list from {','.join(METHODS)}")
    p.add_argument("--seeds", help="comma list (default 42..46)")
    p.add_argument("--dataset", default="data", help="dataset label used in outputs")
    p.add_argument("--s", type=int, help="intervention pairs per run")
    p.add_argument("--delta", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--condition-random", action="store_true",
                   help="draw random targets among nodes with positive out-degree")
    p.set_defaults(func=cmd_eval_cfs)

    p = sub.add_parser("stats", parents=_common_flags(), help="paired significance tests on scores")
    p.add_argument("--scores", nargs="+", required=True, help="scores.csv file(s)")
    p.add_argument("--reference", default="graph")
    p.add_argument("--replicates", type=int, default=2000)
    p.add_argument("--level", type=float, default=0.95)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("sweep", parents=_common_flags(), help="run a hyperparameter grid")
    p.add_argument("--grid", required=True, help="JSON grid over k, lambda1, lambda2, beta, method")
    p.add_argument("--seeds", help="comma list overriding the config seeds")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("run", parents=_common_flags(), help="full pipeline from a config")
    p.add_argument("--seeds", help="comma list overriding the config seeds")
    p.add_argument("--split", type=float,
                   help="fit on this leading fraction of rows, score on the rest")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", parents=_common_flags(), help="re-aggregate an output directory")
    p.add_argument("--top", type=int, default=30, help="concepts in the correlation export")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    showwarning = warnings.showwarning
    warnings.showwarning = _warn
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InvalidArgumentError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error: {exc.filename or ''}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_INPUT
    finally:
        warnings.showwarning = showwarning


if __name__ == "__main__":
    sys.exit(main())
