"""Concept selection and continuous DAG learning over concept activations.

A weighted adjacency W is fit to the linear structural equation model C ~ C W
by minimising

    ||C - C W||_F^2 / N + lambda1 ||W||_1 + lambda2 (tr(exp(W o W)) - M)

with full-batch Adam under a cosine-annealed learning rate. The diagonal of W
is held at zero throughout.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DivergenceError, InvalidArgumentError, NumericError
from .optim import Adam, cosine_lr

EDGE_THRESHOLD = 0.01


def expm(a, tol=1e-12):
    """Matrix exponential by scaling and squaring of a truncated Taylor series.

    The series order is the smallest q with ||A/2^s||^(q+1) / (q+1)! < tol,
    where s makes the scaled 1-norm at most 1/2.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InvalidArgumentError("expm needs a square matrix")
    if not np.all(np.isfinite(a)):
        raise NumericError("expm input is not finite; clip the weights")
    norm = np.max(np.sum(np.abs(a), axis=0)) if a.size else 0.0
    s = 0
    if norm > 0.5:
        s = int(math.ceil(math.log2(norm / 0.5)))
    scaled = a / (2.0 ** s)
    snorm = norm / (2.0 ** s)

    result = np.eye(a.shape[0])
    term = np.eye(a.shape[0])
    q = 0
    bound = 1.0
    while True:
        q += 1
        term = term @ scaled / q
        result = result + term
        bound = bound * snorm / (q + 1)
        if bound < tol or not term.any():
            break
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(s):
            result = result @ result
    if not np.all(np.isfinite(result)):
        raise NumericError("matrix exponential overflowed; clip the weights")
    return result


def acyclicity(w):
    """Trace-exponential acyclicity measure and its gradient.

    Returns ``h = tr(exp(W o W)) - M`` and ``grad = exp(W o W)^T o 2W``.
    ``h`` is zero exactly when the support of ``w`` has no directed cycle.
    """
    w = np.asarray(w, dtype=np.float64)
    if not np.all(np.isfinite(w)):
        raise NumericError("acyclicity: weights are not finite; clip the weights")
    e = expm(w * w)
    h = float(np.trace(e) - w.shape[0])
    return h, e.T * (2.0 * w)


def sem_loss(c_sub, w, normalize=True):
    """Least-squares SEM loss ``||C - CW||_F^2`` (divided by N by default) and its gradient.

    The gradient's diagonal is zeroed, matching the masked parameterisation.
    """
    c_sub = np.asarray(c_sub, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if c_sub.ndim != 2 or w.shape != (c_sub.shape[1], c_sub.shape[1]):
        raise InvalidArgumentError(
            f"sem_loss: concept matrix {c_sub.shape} incompatible with W {w.shape}")
    scale = c_sub.shape[0] if normalize else 1.0
    resid = c_sub - c_sub @ w
    loss = float(np.sum(resid * resid) / scale)
    grad = -2.0 * (c_sub.T @ resid) / scale
    np.fill_diagonal(grad, 0.0)
    return loss, grad


def concept_frequencies(c):
    return np.sum(np.asarray(c) > 0, axis=0)


def select_top_concepts(c, m):
    """Indices of the ``m`` most frequently active concepts and the matching columns.

    Frequency counts examples with a strictly positive entry; ties go to the
    lower concept index. Columns are returned in descending-frequency order.
    """
    c = np.asarray(c, dtype=np.float64)
    if c.ndim != 2:
        raise InvalidArgumentError("select_top_concepts needs an N x K matrix")
    if m > c.shape[1] or m < 1:
        raise InvalidArgumentError(f"m={m} must lie in [1, K={c.shape[1]}]")
    freq = concept_frequencies(c)
    idx = np.argsort(-freq, kind="stable")[:m]
    return idx, c[:, idx]


@dataclass
class GraphTrainConfig:
    m: int = 64
    lambda1: float = 0.02
    lambda2: float = 0.05
    epochs: int = 300
    learning_rate: float = 0.01
    lr_min: float = 1e-4
    init_scale: float = 0.01
    normalize: bool = True
    edge_threshold: float = EDGE_THRESHOLD
    lambda2_growth: float = 1e4
    center: bool = False
    seed: int = 42

    def validate(self):
        if self.m < 2:
            raise InvalidArgumentError("graph needs m >= 2 nodes")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise InvalidArgumentError("lambda1 and lambda2 must be non-negative")
        if self.epochs < 1 or self.learning_rate <= 0:
            raise InvalidArgumentError("epochs must be >= 1 and learning_rate > 0")


@dataclass
class GraphStats:
    sem_loss: float
    dag_violation: float
    edge_count: int
    density: float

    def to_dict(self):
        return {"sem_loss": self.sem_loss, "dag_violation": self.dag_violation,
                "edge_count": self.edge_count, "density": self.density}


@dataclass
class ConceptGraph:
    """Weighted adjacency over selected concepts; ``w[i, j]`` is the edge i -> j."""

    w: np.ndarray
    node_ids: np.ndarray = None
    edge_threshold: float = EDGE_THRESHOLD
    stats: GraphStats = None

    def __post_init__(self):
        self.w = np.array(self.w, dtype=np.float64)
        m = self.w.shape[0]
        if self.w.ndim != 2 or self.w.shape != (m, m):
            raise InvalidArgumentError("graph weights must be square")
        if np.any(np.diag(self.w) != 0):
            raise InvalidArgumentError("graph diagonal must be exactly zero")
        if self.node_ids is None:
            self.node_ids = np.arange(m)
        self.node_ids = np.asarray(self.node_ids, dtype=np.int64)
        if self.node_ids.shape != (m,) or len(set(self.node_ids.tolist())) != m:
            raise InvalidArgumentError("node_ids must be M distinct concept indices")
        self.w.setflags(write=False)

    @property
    def m(self):
        return self.w.shape[0]

    def adjacency(self):
        """Boolean support ``w > edge_threshold`` (signed, strict)."""
        return self.w > self.edge_threshold

    def compute_stats(self, c_sub=None, normalize=True):
        adj = self.adjacency()
        n_edges = int(adj.sum())
        loss = sem_loss(c_sub, self.w, normalize)[0] if c_sub is not None else float("nan")
        return GraphStats(sem_loss=loss, dag_violation=acyclicity(self.w)[0],
                          edge_count=n_edges, density=n_edges / (self.m * (self.m - 1)))


def edges(g):
    """``(source, target, weight)`` for every ``w_ij > edge_threshold``, heaviest first."""
    src, dst = np.nonzero(g.adjacency())
    out = [(int(i), int(j), float(g.w[i, j])) for i, j in zip(src, dst)]
    out.sort(key=lambda e: (-e[2], e[0], e[1]))
    return out


def out_degree_centrality(g):
    return g.adjacency().sum(axis=1).astype(np.int64)


@dataclass
class GraphEpoch:
    epoch: int
    lr: float
    objective: float
    sem_loss: float
    l1: float
    dag_violation: float


@dataclass
class GraphTrainResult:
    graph: ConceptGraph
    stats: GraphStats
    log: list = field(default_factory=list)

    def __iter__(self):
        return iter((self.graph, self.stats, self.log))


def train_graph(c_sub, cfg=None, node_ids=None, w_init=None):
    """Learn a weighted DAG over the columns of ``c_sub``.

    Parameters
    ----------
    c_sub : array_like, shape (N, M)
    cfg : GraphTrainConfig, optional
    node_ids : array_like, optional
        Concept indices of the columns; defaults to ``0..M-1``.
    w_init : array_like, optional
        Starting weights; by default uniform in ``[-init_scale, init_scale]``
        from ``cfg.seed`` with zero diagonal.

    Notes
    -----
    ``lambda2`` is the acyclicity weight at the first epoch; it grows
    geometrically to ``lambda2 * lambda2_growth`` at the last one, so early
    epochs fit the data and late epochs push cycles out. ``lambda2_growth=1``
    keeps it fixed. With ``center=True`` the columns are mean-centred before
    fitting (and the reported SEM loss refers to the centred data), which
    stops the all-positive column means from acting as a shared intercept.

    Returns
    -------
    GraphTrainResult
        Unpacks as ``(graph, stats, log)``.
    """
    cfg = cfg or GraphTrainConfig()
    cfg.validate()
    c_sub = np.asarray(c_sub, dtype=np.float64)
    if c_sub.ndim != 2 or c_sub.shape[0] < 2 or c_sub.shape[1] < 2:
        raise InvalidArgumentError("train_graph needs an N x M matrix with N, M >= 2")
    if not np.all(np.isfinite(c_sub)):
        raise InvalidArgumentError("concept matrix contains non-finite values")
    if cfg.center:
        c_sub = c_sub - c_sub.mean(axis=0)
    m = c_sub.shape[1]
    if w_init is None:
        rng = np.random.default_rng(cfg.seed)
        w = rng.uniform(-cfg.init_scale, cfg.init_scale, size=(m, m))
    else:
        w = np.array(w_init, dtype=np.float64)
        if w.shape != (m, m):
            raise InvalidArgumentError("w_init has the wrong shape")
    np.fill_diagonal(w, 0.0)

    opt = Adam({"w": w}, lr=cfg.learning_rate)
    log = []
    last_good = w.copy()
    for epoch in range(cfg.epochs):
        loss, grad = sem_loss(c_sub, w, cfg.normalize)
        try:
            h, h_grad = acyclicity(w)
        except NumericError as exc:
            raise DivergenceError(f"graph training diverged at epoch {epoch + 1}: {exc}",
                                  epoch, last_good) from exc
        l1 = float(np.sum(np.abs(w)))
        objective = loss + cfg.lambda1 * l1 + cfg.lambda2 * h
        if not math.isfinite(objective) or objective > 1e6:
            raise DivergenceError(
                f"graph training diverged at epoch {epoch + 1} (objective={objective:.6g})",
                epoch, last_good)
        last_good = w.copy()
        lr = cosine_lr(epoch, cfg.epochs, cfg.learning_rate, cfg.lr_min)
        log.append(GraphEpoch(epoch + 1, lr, objective, loss, l1, h))
        lam2 = cfg.lambda2 * cfg.lambda2_growth ** (epoch / max(cfg.epochs - 1, 1))
        grad = grad + cfg.lambda1 * np.sign(w) + lam2 * h_grad
        np.fill_diagonal(grad, 0.0)
        opt.step({"w": grad}, lr=lr)
        np.fill_diagonal(w, 0.0)

    graph = ConceptGraph(w, node_ids, cfg.edge_threshold)
    stats = graph.compute_stats(c_sub, cfg.normalize)
    graph.stats = stats
    return GraphTrainResult(graph, stats, log)
