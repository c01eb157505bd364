"""Planted ground truth: random DAGs, SEM-generated concept matrices, dictionary activations.

Everything here is seed-deterministic and exists so the learning stages can be
checked against a known answer.
"""

from dataclasses import dataclass, asdict
from typing import NamedTuple

import numpy as np

from .errors import InvalidArgumentError
from .graph import EDGE_THRESHOLD, ConceptGraph


@dataclass
class SynthConfig:
    m: int = 64
    dag_density: float = 0.055
    n_examples: int = 2000
    noise_sigma: float = 0.05
    dict_dim: int = 128
    concept_sparsity: int = 4
    hub_count: int = 4
    hub_boost: float = 3.0
    seed: int = 0

    def validate(self):
        if not 0 <= self.dag_density <= 0.5:
            raise InvalidArgumentError("dag_density must lie in [0, 0.5]")
        for name in ("m", "n_examples", "dict_dim", "concept_sparsity"):
            if getattr(self, name) < 1:
                raise InvalidArgumentError(f"{name} must be >= 1")
        if self.hub_count < 0 or self.noise_sigma < 0:
            raise InvalidArgumentError("hub_count and noise_sigma must be non-negative")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def planted_hubs(cls, **overrides):
        """Few strong hubs and many sinks, the regime targeted ablation is meant for."""
        base = dict(hub_count=7, hub_boost=10.0)
        base.update(overrides)
        return cls(**base)


class SemSample(NamedTuple):
    c: np.ndarray
    exogenous: np.ndarray
    clamp_rate: float


@dataclass
class GroundTruth:
    w_star: np.ndarray
    dictionary: np.ndarray
    c_star: np.ndarray
    node_permutation: np.ndarray
    activations: np.ndarray
    hubs: np.ndarray
    clamp_rate: float = 0.0


def gen_dag(m, density, hub_count, rng, hub_boost=3.0):
    """Random weighted DAG with ``floor(density * m * (m - 1))`` edges.

    A hidden permutation fixes the topological order and edges only run from
    earlier to later nodes. ``hub_count`` nodes drawn from the first half of
    the order get ``hub_boost`` times the mean out-degree (capped by how many
    successors they have); the remaining budget is spread uniformly over the
    other forward pairs. Weights are uniform in [0.3, 1.0].

    Returns
    -------
    w : ndarray, shape (m, m)
    order : ndarray
        Topological order (``order[0]`` is a source).
    hubs : ndarray
        Node ids of the planted hubs.
    """
    if not 0 <= density <= 0.5:
        raise InvalidArgumentError("density must lie in [0, 0.5]")
    n_edges = int(np.floor(density * m * (m - 1) + 1e-9))
    if n_edges > m * (m - 1) // 2:
        raise InvalidArgumentError("edge budget exceeds the number of forward pairs")
    if n_edges < hub_count:
        raise InvalidArgumentError(
            f"edge budget {n_edges} cannot give {hub_count} hubs an outgoing edge")
    order = rng.permutation(m)
    w = np.zeros((m, m))
    if n_edges == 0:
        return w, order, np.array([], dtype=np.int64)

    hub_pos = np.sort(rng.choice(max(m // 2, hub_count), size=hub_count, replace=False)) \
        if hub_count else np.array([], dtype=np.int64)
    hub_pos = hub_pos[hub_pos < m - 1]
    chosen = np.zeros((m, m), dtype=bool)  # indexed by topological position
    target = int(np.ceil(hub_boost * n_edges / m))
    budget = n_edges
    for n_done, p in enumerate(hub_pos):
        later_hubs = len(hub_pos) - n_done - 1
        deg = max(min(m - 1 - p, target, budget - later_hubs), 1)
        succ = rng.choice(np.arange(p + 1, m), size=deg, replace=False)
        chosen[p, succ] = True
        budget -= deg
    if budget > 0:
        iu, ju = np.triu_indices(m, k=1)
        free = ~chosen[iu, ju] & ~np.isin(iu, hub_pos)
        cand = np.flatnonzero(free)
        if budget > cand.size:
            cand = np.flatnonzero(~chosen[iu, ju])
        pick = rng.choice(cand, size=budget, replace=False)
        chosen[iu[pick], ju[pick]] = True

    pi, pj = np.nonzero(chosen)
    weights = rng.uniform(0.3, 1.0, size=pi.size)
    w[order[pi], order[pj]] = weights
    return w, order, order[hub_pos]


def topological_order(w):
    """Kahn ordering of the support of ``w``; raises if it has a cycle."""
    adj = np.asarray(w) != 0
    indeg = adj.sum(axis=0)
    ready = sorted(np.flatnonzero(indeg == 0).tolist())
    order = []
    while ready:
        i = ready.pop(0)
        order.append(i)
        for j in np.flatnonzero(adj[i]):
            indeg[j] -= 1
            if indeg[j] == 0:
                ready.append(int(j))
    if len(order) != adj.shape[0]:
        raise InvalidArgumentError("support of w contains a directed cycle")
    return np.array(order)


def sample_sem(w_star, n, sparsity_k, noise_sigma, rng):
    """Draw ``C = E (I - W*)^-1`` with k-sparse nonnegative exogenous rows.

    Each row of E has ``sparsity_k`` nonzeros uniform in [0.5, 2.0] plus
    Gaussian noise of scale ``noise_sigma`` on those entries. Values are
    propagated node by node in topological order and negatives are clamped
    to zero at the end.
    """
    w_star = np.asarray(w_star, dtype=np.float64)
    m = w_star.shape[0]
    if sparsity_k > m:
        raise InvalidArgumentError(f"sparsity_k={sparsity_k} exceeds m={m}")
    e = np.zeros((n, m))
    cols = np.argsort(rng.random((n, m)), axis=1)[:, :sparsity_k]
    vals = rng.uniform(0.5, 2.0, size=(n, sparsity_k))
    if noise_sigma > 0:
        vals = vals + noise_sigma * rng.standard_normal((n, sparsity_k))
    np.put_along_axis(e, cols, vals, axis=1)

    c = e.copy()
    for j in topological_order(w_star):
        parents = np.flatnonzero(w_star[:, j])
        if parents.size:
            c[:, j] += c[:, parents] @ w_star[parents, j]
    negative = c < 0
    clamp_rate = float(negative.mean())
    c[negative] = 0.0
    return SemSample(c, e, clamp_rate)


def gen_concepts(w_star, n, sparsity_k, noise_sigma, rng):
    """Concept matrix from the linear SEM over ``w_star`` (see :func:`sample_sem`)."""
    return sample_sem(w_star, n, sparsity_k, noise_sigma, rng).c


def gen_activations(c_star, d, noise_sigma, rng):
    """Activations ``H = C* D^T + noise`` with a random unit-norm d x K dictionary D."""
    c_star = np.asarray(c_star, dtype=np.float64)
    if d < 8:
        raise InvalidArgumentError("dict_dim must be >= 8")
    dictionary = rng.standard_normal((d, c_star.shape[1]))
    dictionary /= np.linalg.norm(dictionary, axis=0, keepdims=True)
    h = c_star @ dictionary.T
    if noise_sigma > 0:
        h = h + noise_sigma * rng.standard_normal(h.shape)
    return h, dictionary


def generate(cfg=None):
    """Full ground-truth instance from a :class:`SynthConfig`."""
    cfg = cfg or SynthConfig()
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    w_star, order, hubs = gen_dag(cfg.m, cfg.dag_density, cfg.hub_count, rng, cfg.hub_boost)
    sample = sample_sem(w_star, cfg.n_examples, cfg.concept_sparsity, cfg.noise_sigma, rng)
    h, dictionary = gen_activations(sample.c, cfg.dict_dim, cfg.noise_sigma, rng)
    return GroundTruth(w_star=w_star, dictionary=dictionary, c_star=sample.c,
                       node_permutation=order, activations=h, hubs=hubs,
                       clamp_rate=sample.clamp_rate)


def _support(w, threshold):
    if isinstance(w, ConceptGraph):
        return w.adjacency()
    return np.asarray(w) > threshold


def shd(w_learned, w_star, edge_threshold=EDGE_THRESHOLD):
    """Structural Hamming distance: missing + extra + reversed edges (a reversal costs 1)."""
    a = _support(w_learned, edge_threshold)
    b = _support(w_star, edge_threshold)
    if a.shape != b.shape:
        raise InvalidArgumentError(f"graphs have different sizes: {a.shape} vs {b.shape}")
    reversed_ = a & b.T & ~b
    extra = a & ~b & ~reversed_
    missing = b & ~a & ~reversed_.T
    return int(reversed_.sum() + extra.sum() + missing.sum())


def dictionary_match_score(model_or_dec, dictionary):
    """Mean over true atoms of the best absolute cosine with any learned decoder column."""
    dec = getattr(model_or_dec, "w_dec", model_or_dec)
    dec = np.asarray(dec, dtype=np.float64)
    dictionary = np.asarray(dictionary, dtype=np.float64)
    if dec.shape[0] != dictionary.shape[0]:
        raise InvalidArgumentError("learned and true dictionaries have different d")

    def unit(x):
        norms = np.linalg.norm(x, axis=0)
        out = np.zeros_like(x)
        ok = norms > 0
        out[:, ok] = x[:, ok] / norms[ok]
        return out

    cos = np.abs(unit(dictionary).T @ unit(dec))
    return float(np.mean(cos.max(axis=1)))


def random_direction_baseline(d, n_true, n_learned, rng, trials=20):
    """Monte-Carlo expectation of :func:`dictionary_match_score` for random directions."""
    scores = []
    for _ in range(trials):
        true = rng.standard_normal((d, n_true))
        learned = rng.standard_normal((d, n_learned))
        scores.append(dictionary_match_score(learned, true))
    return float(np.mean(scores))


def planted_graph(gt, edge_threshold=EDGE_THRESHOLD):
    """The planted DAG as a :class:`ConceptGraph` over node ids ``0..M-1``."""
    return ConceptGraph(gt.w_star, np.arange(gt.w_star.shape[0]), edge_threshold)
