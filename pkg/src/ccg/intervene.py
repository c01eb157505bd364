"""Do-style ablations on concept nodes and the Causal Fidelity Score (CFS).

Zeroing concept i changes ``C W`` only through row i of W, so the effect on a
downstream column j is ``|C[:, i]| * |w_ij|`` elementwise. :func:`ablation_effect`
recomputes it literally; :func:`ablation_effect_closed_form` uses the identity.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError
from .graph import out_degree_centrality

METHODS = ("graph", "variance", "magnitude", "random")

# seed ^ tag keeps the causal and random target streams independent
CAUSAL_STREAM_TAG = 0xCA05
RANDOM_STREAM_TAG = 0x7A4D


@dataclass
class CfsConfig:
    s: int = 20
    delta: float = 1e-3
    tau: float = 10.0
    edge_threshold: float = 0.01
    condition_random_on_outdegree: bool = False
    seed: int = 42

    def validate(self):
        if self.delta <= 0 or self.tau <= 1 or self.s < 1:
            raise InvalidArgumentError("CFS config needs delta > 0, tau > 1, s >= 1")


@dataclass
class InterventionRecord:
    target_node: int
    downstream_set_size: int
    delta_value: float


@dataclass
class CfsReport:
    method: str
    seed: int
    s: int
    delta: float
    tau: float
    ratios: list
    cfs: float
    clipped_at_tau: int
    floored_at_delta: int
    causal_records: list = field(default_factory=list)
    random_records: list = field(default_factory=list)
    overlap: int = 0
    conditioned_random: bool = False

    def to_dict(self):
        def rec(r):
            return {"node": r.target_node, "out_degree": r.downstream_set_size,
                    "delta": r.delta_value}
        return {"method": self.method, "seed": self.seed, "s": self.s,
                "delta": self.delta, "tau": self.tau, "ratios": list(self.ratios),
                "cfs": self.cfs, "clipped_at_tau": self.clipped_at_tau,
                "floored_at_delta": self.floored_at_delta,
                "causal": [rec(r) for r in self.causal_records],
                "random": [rec(r) for r in self.random_records],
                "overlap": self.overlap, "conditioned_random": self.conditioned_random}


def _check_node(g, i):
    if not 0 <= i < g.m:
        raise InvalidArgumentError(f"node index {i} out of range for M={g.m}")


def downstream_set(g, i):
    """Children ``{j : w_ij > edge_threshold}`` of node ``i``."""
    _check_node(g, i)
    return set(np.flatnonzero(g.w[i] > g.edge_threshold).tolist())


def ablation_effect(c_sub, g, i):
    """Mean L1 change of the SEM prediction on i's children when column i is zeroed."""
    _check_node(g, i)
    c_sub = np.asarray(c_sub, dtype=np.float64)
    if c_sub.shape[1] != g.m:
        raise InvalidArgumentError(f"concept matrix has {c_sub.shape[1]} columns, graph has {g.m}")
    children = sorted(downstream_set(g, i))
    if not children:
        return InterventionRecord(i, 0, 0.0)
    ablated = c_sub.copy()
    ablated[:, i] = 0.0
    diff = ablated @ g.w[:, children] - c_sub @ g.w[:, children]
    value = float(np.sum(np.abs(diff)) / len(children))
    return InterventionRecord(i, len(children), value)


def ablation_effect_closed_form(c_sub, g, i):
    """``||C[:, i]||_1 * mean_{j in D_i} |w_ij|`` (0 for an empty downstream set)."""
    _check_node(g, i)
    children = g.w[i] > g.edge_threshold
    if not children.any():
        return 0.0
    return float(np.sum(np.abs(np.asarray(c_sub)[:, i])) * np.mean(np.abs(g.w[i, children])))


def _top_by(score, s):
    return np.argsort(-np.asarray(score), kind="stable")[:s].tolist()


def select_targets(method, g, c_sub, s, rng=None):
    """Pick ``s`` intervention targets.

    ``graph`` ranks by out-degree, ``variance`` by the sample variance of each
    concept column, ``magnitude`` by mean absolute activation (ties to the
    lower index in all three), and ``random`` draws ``s`` distinct nodes
    uniformly from ``rng``.
    """
    if s > g.m or s < 1:
        raise InvalidArgumentError(f"s={s} must lie in [1, M={g.m}]")
    c_sub = np.asarray(c_sub, dtype=np.float64)
    if method == "graph":
        return _top_by(out_degree_centrality(g), s)
    if method == "variance":
        return _top_by(c_sub.var(axis=0, ddof=1), s)
    if method == "magnitude":
        return _top_by(np.mean(np.abs(c_sub), axis=0), s)
    if method == "random":
        if rng is None:
            raise InvalidArgumentError("random target selection needs an rng")
        return rng.choice(g.m, size=s, replace=False).tolist()
    raise InvalidArgumentError(f"unknown method {method!r}; expected one of {METHODS}")


def cfs_score(causal_deltas, random_deltas, delta=1e-3, tau=10.0):
    """CFS from paired effects: mean of ``min(causal / max(random, delta), tau)``.

    Returns
    -------
    cfs : float
    ratios : ndarray
    clipped : int
        Pairs whose ratio hit ``tau``.
    floored : int
        Pairs whose denominator was raised to ``delta``.
    """
    causal = np.asarray(causal_deltas, dtype=np.float64)
    rand = np.asarray(random_deltas, dtype=np.float64)
    if causal.shape != rand.shape or causal.ndim != 1 or causal.size == 0:
        raise InvalidArgumentError("causal and random effects must be equal-length, non-empty")
    if np.any(causal < 0) or np.any(rand < 0):
        raise InvalidArgumentError("ablation effects must be non-negative")
    denom = np.maximum(rand, delta)
    raw = causal / denom
    ratios = np.minimum(raw, tau)
    return float(ratios.mean()), ratios, int(np.sum(raw > tau)), int(np.sum(rand < delta))


def random_targets(g, s, seed, conditioned=False):
    """The denominator targets for a seed; shared by every method."""
    rng = np.random.default_rng(seed ^ RANDOM_STREAM_TAG)
    if not conditioned:
        return rng.choice(g.m, size=s, replace=False).tolist()
    pool = np.flatnonzero(out_degree_centrality(g) > 0)
    if pool.size == 0:
        raise InvalidArgumentError("no node has positive out-degree to condition on")
    return rng.choice(pool, size=s, replace=pool.size < s).tolist()


def run_cfs_evaluation(c_sub, g, method, cfg=None):
    """Full CFS protocol for one method and one seed.

    Causal targets come from :func:`select_targets`; random targets come from
    a separate stream of ``cfg.seed`` and are paired with causal targets in
    draw order. All methods propagate through the same ``g``.
    """
    cfg = cfg or CfsConfig()
    cfg.validate()
    if g.edge_threshold != cfg.edge_threshold:
        g = type(g)(g.w, g.node_ids, cfg.edge_threshold)
    causal_rng = np.random.default_rng(cfg.seed ^ CAUSAL_STREAM_TAG)
    causal = select_targets(method, g, c_sub, cfg.s, causal_rng)
    rand = random_targets(g, cfg.s, cfg.seed, cfg.condition_random_on_outdegree)
    causal_rec = [ablation_effect(c_sub, g, i) for i in causal]
    random_rec = [ablation_effect(c_sub, g, i) for i in rand]
    cfs, ratios, clipped, floored = cfs_score(
        [r.delta_value for r in causal_rec], [r.delta_value for r in random_rec],
        cfg.delta, cfg.tau)
    return CfsReport(method=method, seed=cfg.seed, s=cfg.s, delta=cfg.delta, tau=cfg.tau,
                     ratios=ratios.tolist(), cfs=cfs, clipped_at_tau=clipped,
                     floored_at_delta=floored, causal_records=causal_rec,
                     random_records=random_rec, overlap=len(set(causal) & set(rand)),
                     conditioned_random=cfg.condition_random_on_outdegree)


def report_from_dict(d):
    def rec(r):
        return InterventionRecord(r["node"], r["out_degree"], r["delta"])
    return CfsReport(method=d["method"], seed=d["seed"], s=d["s"], delta=d["delta"],
                     tau=d["tau"], ratios=list(d["ratios"]), cfs=d["cfs"],
                     clipped_at_tau=d["clipped_at_tau"], floored_at_delta=d["floored_at_delta"],
                     causal_records=[rec(r) for r in d["causal"]],
                     random_records=[rec(r) for r in d["random"]],
                     overlap=d.get("overlap", 0),
                     conditioned_random=d.get("conditioned_random", False))

