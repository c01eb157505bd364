"""Paired significance testing and auxiliary analyses.

The Student-t tail is computed from the regularized incomplete beta function
(Lentz continued fraction), so nothing here depends on scipy.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError, UndefinedTestError

_CF_EPS = 1e-16
_CF_TINY = 1e-300
_CF_MAXIT = 100000


def _beta_cf(a, b, x):
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _CF_TINY:
        d = _CF_TINY
    d = 1.0 / d
    h = d
    for m in range(1, _CF_MAXIT + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_TINY:
            d = _CF_TINY
        c = 1.0 + aa / c
        if abs(c) < _CF_TINY:
            c = _CF_TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_TINY:
            d = _CF_TINY
        c = 1.0 + aa / c
        if abs(c) < _CF_TINY:
            c = _CF_TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _CF_EPS:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def betainc(a, b, x, y=None):
    """Regularized incomplete beta ``I_x(a, b)``.

    ``y`` may carry ``1 - x`` computed without cancellation by the caller.
    """
    if y is None:
        y = 1.0 - x
    if a <= 0 or b <= 0:
        raise InvalidArgumentError("betainc needs a, b > 0")
    if x <= 0:
        return 0.0
    if y <= 0:
        return 1.0
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log(y))
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_cf(a, b, x) / a
    return 1.0 - front * _beta_cf(b, a, y) / b


def t_sf(t, df):
    """Survival function ``P(T_df > t)`` of Student's t."""
    if df <= 0:
        raise InvalidArgumentError("degrees of freedom must be positive")
    if math.isnan(t):
        raise InvalidArgumentError("t is NaN")
    if math.isinf(t):
        return 0.0 if t > 0 else 1.0
    if t == 0:
        return 0.5
    t2 = t * t
    tail = 0.5 * betainc(df / 2.0, 0.5, df / (df + t2), t2 / (df + t2))
    return tail if t > 0 else 1.0 - tail


@dataclass
class PairedSample:
    x: np.ndarray
    y: np.ndarray
    labels: list = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.x.shape != self.y.shape or self.x.ndim != 1:
            raise InvalidArgumentError("paired samples must be equal-length vectors")
        if self.x.size < 2:
            raise InvalidArgumentError("paired samples need n >= 2")

    @property
    def diffs(self):
        return self.x - self.y

    @property
    def n(self):
        return self.x.size


def paired_t_one_sided(s):
    """One-sided paired t-test of ``mean(x - y) > 0``. Returns ``(t, p)``."""
    d = s.diffs
    n = d.size
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    if sd == 0:
        if mean == 0:
            raise UndefinedTestError("all paired differences are zero; t is undefined")
        return (math.inf, 0.0) if mean > 0 else (-math.inf, 1.0)
    t = mean / (sd / math.sqrt(n))
    return t, t_sf(t, n - 1)


def bonferroni(p, m):
    if not 0 <= p <= 1 or m < 1:
        raise InvalidArgumentError("bonferroni needs p in [0, 1] and m >= 1")
    return min(1.0, p * m)


def cohens_d_paired(s):
    """Mean paired difference over its sample standard deviation."""
    d = s.diffs
    sd = float(d.std(ddof=1))
    if sd == 0:
        raise UndefinedTestError("Cohen's d is undefined when the differences have zero spread")
    return float(d.mean()) / sd


def bootstrap_ci(diffs, replicates=2000, level=0.95, rng=None):
    """Percentile bootstrap interval for the mean of ``diffs``."""
    diffs = np.asarray(diffs, dtype=np.float64)
    if diffs.ndim != 1 or diffs.size < 2:
        raise InvalidArgumentError("bootstrap needs at least two values")
    if replicates < 100:
        raise InvalidArgumentError("bootstrap needs at least 100 replicates")
    if not 0 < level < 1:
        raise InvalidArgumentError("level must lie in (0, 1)")
    rng = rng if rng is not None else np.random.default_rng(0)
    idx = rng.integers(0, diffs.size, size=(replicates, diffs.size))
    means = diffs[idx].mean(axis=1)
    alpha = (1.0 - level) / 2.0
    low, high = np.quantile(means, [alpha, 1.0 - alpha], method="linear")
    return float(low), float(high)


@dataclass
class SignificanceResult:
    comparison: str
    t_stat: float
    p_raw: float
    p_corrected: float
    cohens_d: float
    ci_low: float
    ci_high: float
    n: int
    comparisons: int
    replicates: int
    alpha: float = 0.05
    degenerate: bool = False

    @property
    def significant(self):
        return self.p_corrected < self.alpha

    def to_dict(self):
        return {"comparison": self.comparison, "t_stat": self.t_stat, "p_raw": self.p_raw,
                "p_corrected": self.p_corrected, "significant": self.significant,
                "cohens_d": self.cohens_d, "ci": [self.ci_low, self.ci_high], "n": self.n,
                "replicates": self.replicates}


def compare_paired(x, y, comparisons=1, replicates=2000, level=0.95, seed=0,
                   comparison="", alpha=0.05):
    """t-test, Bonferroni correction, Cohen's d and bootstrap CI for one comparison.

    Identical samples are reported with ``t = 0``, ``p = 0.5`` and zero
    effect rather than raising, and flagged ``degenerate``.
    """
    s = PairedSample(x, y)
    lo, hi = bootstrap_ci(s.diffs, replicates, level, np.random.default_rng(seed))
    try:
        t, p = paired_t_one_sided(s)
    except UndefinedTestError:
        return SignificanceResult(comparison, 0.0, 0.5, bonferroni(0.5, comparisons), 0.0,
                                  lo, hi, s.n, comparisons, replicates, alpha, degenerate=True)
    try:
        d = cohens_d_paired(s)
    except UndefinedTestError:
        d = math.copysign(math.inf, float(s.diffs.mean()))
    return SignificanceResult(comparison, t, p, bonferroni(p, comparisons), d, lo, hi,
                              s.n, comparisons, replicates, alpha)


def linear_probe_accuracy(c, labels, folds=5, iterations=500, lr=0.1, l2=1e-4, seed=0):
    """Stratified k-fold accuracy of a softmax-regression probe.

    Features are standardised with training-fold statistics; the probe is
    fit by full-batch gradient descent.
    """
    x = np.asarray(c, dtype=np.float64)
    y_raw = np.asarray(labels)
    if x.ndim != 2 or x.shape[0] != y_raw.shape[0]:
        raise InvalidArgumentError("features and labels disagree in length")
    classes, y = np.unique(y_raw, return_inverse=True)
    if classes.size < 2:
        raise InvalidArgumentError("probe needs at least two classes")
    counts = np.bincount(y)
    if counts.min() < folds:
        raise InvalidArgumentError(f"every class needs at least {folds} examples")

    rng = np.random.default_rng(seed)
    fold_of = np.empty(y.size, dtype=int)
    for k in range(classes.size):
        members = rng.permutation(np.flatnonzero(y == k))
        fold_of[members] = np.arange(members.size) % folds

    correct = 0
    n_classes = classes.size
    for f in range(folds):
        train, test = fold_of != f, fold_of == f
        mu = x[train].mean(axis=0)
        sd = x[train].std(axis=0)
        sd[sd == 0] = 1.0
        xtr = np.hstack([(x[train] - mu) / sd, np.ones((train.sum(), 1))])
        xte = np.hstack([(x[test] - mu) / sd, np.ones((test.sum(), 1))])
        onehot = np.eye(n_classes)[y[train]]
        w = np.zeros((xtr.shape[1], n_classes))
        for _ in range(iterations):
            z = xtr @ w
            z -= z.max(axis=1, keepdims=True)
            p = np.exp(z)
            p /= p.sum(axis=1, keepdims=True)
            grad = xtr.T @ (p - onehot) / xtr.shape[0] + l2 * w
            w -= lr * grad
        correct += int(np.sum(np.argmax(xte @ w, axis=1) == y[test]))
    return correct / y.size


def pearson_corr_matrix(c_top):
    """Pearson correlations with zero-variance columns defined as uncorrelated.

    A zero-variance column gets 1 on the diagonal and 0 elsewhere instead of
    the NaNs a plain ``np.corrcoef`` would produce.
    """
    x = np.asarray(c_top, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise InvalidArgumentError("correlation needs an N x q matrix with N >= 2")
    xc = x - x.mean(axis=0)
    norms = np.sqrt(np.sum(xc * xc, axis=0))
    ok = norms > 0
    unit = np.zeros_like(xc)
    unit[:, ok] = xc[:, ok] / norms[ok]
    r = np.clip(unit.T @ unit, -1.0, 1.0)
    r = (r + r.T) / 2.0
    np.fill_diagonal(r, 1.0)
    return r


def mean_pairwise_cosine_distance(h, sample_cap=1000, seed=0):
    """Mean of ``1 - cos(h_a, h_b)`` over unordered pairs of (sampled) rows.

    Rows with zero norm are dropped with a warning.
    """
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 2:
        raise InvalidArgumentError("cosine distance needs an N x d matrix")
    if h.shape[0] > sample_cap:
        idx = np.sort(np.random.default_rng(seed).choice(h.shape[0], sample_cap, replace=False))
        h = h[idx]
    norms = np.linalg.norm(h, axis=1)
    if np.any(norms == 0):
        warnings.warn(f"dropping {int(np.sum(norms == 0))} zero-norm rows", RuntimeWarning)
        h, norms = h[norms > 0], norms[norms > 0]
    n = h.shape[0]
    if n < 2:
        raise InvalidArgumentError("need at least two non-zero rows")
    u = h / norms[:, None]
    cos = np.clip(u @ u.T, -1.0, 1.0)
    iu = np.triu_indices(n, k=1)
    return float(np.mean(1.0 - cos[iu]))
