"""TopK sparse autoencoder: encoding activations into exactly-k-sparse concept codes.

The autoencoder is

    c = topk_gate(W_enc (h - b_pre) + b_enc, k)
    h_hat = W_dec c + b_pre

trained on mean squared reconstruction error plus an L1 term on the codes and
a penalty on the off-diagonal mini-batch covariance of the codes. Gradients are
hand-written; the TopK selection acts as a fixed mask within each forward pass.
"""

from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import InvalidArgumentError, NumericError
from .optim import Adam


@dataclass
class SaeModel:
    """Encoder/decoder weights of a TopK SAE.

    ``w_enc`` is K x d, ``w_dec`` is d x K, ``b_pre`` has length d and
    ``b_enc`` length K.
    """

    w_enc: np.ndarray
    w_dec: np.ndarray
    b_pre: np.ndarray
    b_enc: np.ndarray
    k: int

    def __post_init__(self):
        self.w_enc = np.asarray(self.w_enc, dtype=np.float64)
        self.w_dec = np.asarray(self.w_dec, dtype=np.float64)
        self.b_pre = np.asarray(self.b_pre, dtype=np.float64)
        self.b_enc = np.asarray(self.b_enc, dtype=np.float64)
        n_concepts, d = self.w_enc.shape
        if self.w_dec.shape != (d, n_concepts):
            raise InvalidArgumentError(
                f"w_dec has shape {self.w_dec.shape}, expected {(d, n_concepts)}")
        if self.b_pre.shape != (d,) or self.b_enc.shape != (n_concepts,):
            raise InvalidArgumentError("bias shapes do not match w_enc")
        if not 1 <= self.k <= n_concepts:
            raise InvalidArgumentError(f"k={self.k} must lie in [1, {n_concepts}]")
        for name in ("w_enc", "w_dec", "b_pre", "b_enc"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise NumericError(f"SAE parameter {name} contains non-finite values")

    @property
    def n_concepts(self):
        return self.w_enc.shape[0]

    @property
    def d(self):
        return self.w_enc.shape[1]

    def params(self):
        """Name -> array view of the trainable parameters (shared, not copied)."""
        return {"w_enc": self.w_enc, "w_dec": self.w_dec,
                "b_pre": self.b_pre, "b_enc": self.b_enc}

    def copy(self):
        return SaeModel(self.w_enc.copy(), self.w_dec.copy(), self.b_pre.copy(),
                        self.b_enc.copy(), self.k)


@dataclass
class SaeTrainConfig:
    lambda_l1: float = 0.05
    beta: float = 0.1
    epochs: int = 60
    batch_size: int = 32
    learning_rate: float = 1e-3
    resample_interval_epochs: int = 10
    fire_rate_threshold: float = 0.005
    resample_scale: float = 0.2
    n_concepts: int = 256
    k: int = 13
    seed: int = 42

    def validate(self):
        if self.lambda_l1 < 0 or self.beta < 0:
            raise InvalidArgumentError("lambda_l1 and beta must be non-negative")
        if self.epochs < 1 or self.batch_size < 2:
            raise InvalidArgumentError("epochs must be >= 1 and batch_size >= 2")
        if self.learning_rate <= 0:
            raise InvalidArgumentError("learning_rate must be positive")
        if not 1 <= self.k <= self.n_concepts:
            raise InvalidArgumentError(f"k={self.k} must lie in [1, n_concepts={self.n_concepts}]")
        if not 0 <= self.fire_rate_threshold <= 1:
            raise InvalidArgumentError("fire_rate_threshold must be a fraction")


@dataclass
class EpochRecord:
    epoch: int
    total: float
    mse: float
    l1: float
    decor: float
    l0_rate: float
    resampled: int


@dataclass
class SaeTrainLog:
    records: list = field(default_factory=list)
    b_enc_shift: float = 0.0

    def to_list(self):
        return [asdict(r) for r in self.records]

    def __len__(self):
        return len(self.records)

    def __getitem__(self, i):
        return self.records[i]


@dataclass
class SaeLoss:
    total: float
    mse: float
    l1: float
    decor: float

    def __iter__(self):
        return iter((self.total, self.mse, self.l1, self.decor))


def as_activation_matrix(h):
    """Validate and convert an N x d activation array to float64."""
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 2 or h.shape[0] < 1 or h.shape[1] < 1:
        raise InvalidArgumentError(f"activation matrix must be N x d with N, d >= 1, got shape {h.shape}")
    if not np.all(np.isfinite(h)):
        raise InvalidArgumentError("activation matrix contains NaN or Inf")
    return h


def _topk_mask(z, k):
    # stable sort on -z breaks ties by lowest index
    order = np.argsort(-z, axis=-1, kind="stable")[..., :k]
    mask = np.zeros(z.shape, dtype=bool)
    np.put_along_axis(mask, order, True, axis=-1)
    return mask & (z > 0)


def topk_gate(z, k):
    """Keep the k largest entries of ``z`` (per row if 2-D), zero the rest, clamp negatives.

    Selected positive entries keep their exact value. Ties are broken in
    favour of the lower index.
    """
    z = np.asarray(z, dtype=np.float64)
    if k > z.shape[-1] or k < 1:
        raise InvalidArgumentError(f"k={k} must lie in [1, {z.shape[-1]}]")
    if not np.all(np.isfinite(z)):
        raise InvalidArgumentError("topk_gate input contains non-finite values")
    return np.where(_topk_mask(z, k), z, 0.0)


def _check_input(h, model):
    h = np.asarray(h, dtype=np.float64)
    if h.shape[-1] != model.d or h.ndim not in (1, 2):
        raise InvalidArgumentError(
            f"input has trailing dimension {h.shape[-1]}, model expects d={model.d}")
    return h


def preactivation(h, model):
    h = _check_input(h, model)
    return (h - model.b_pre) @ model.w_enc.T + model.b_enc


def encode(h, model):
    """Concept code(s) for a d-vector or an N x d batch."""
    return topk_gate(preactivation(h, model), model.k)


def decode(c, model):
    """Reconstruction ``W_dec c + b_pre`` for a K-vector or an N x K batch."""
    c = np.asarray(c, dtype=np.float64)
    if c.shape[-1] != model.n_concepts or c.ndim not in (1, 2):
        raise InvalidArgumentError(
            f"code has trailing dimension {c.shape[-1]}, model expects K={model.n_concepts}")
    return c @ model.w_dec.T + model.b_pre


def offdiag_cov_penalty(c_batch):
    """Squared Frobenius norm of the off-diagonal part of the biased batch covariance."""
    c_batch = np.asarray(c_batch, dtype=np.float64)
    if c_batch.ndim != 2 or c_batch.shape[0] < 2:
        raise InvalidArgumentError("offdiag_cov_penalty needs a B x K batch with B >= 2")
    xc = c_batch - c_batch.mean(axis=0)
    cov = xc.T @ xc / c_batch.shape[0]
    np.fill_diagonal(cov, 0.0)
    return float(np.sum(cov * cov))


def sae_loss_and_grad(batch, model, cfg):
    """Loss terms, parameter gradients and codes for one mini-batch.

    The gradient treats the TopK selection as constant: only selected,
    positive coordinates pass gradient back to the encoder.
    """
    h = _check_input(batch, model)
    if h.ndim != 2 or h.shape[0] < 2:
        raise InvalidArgumentError("sae loss needs a B x d batch with B >= 2")
    B = h.shape[0]
    hc = h - model.b_pre
    pre = hc @ model.w_enc.T + model.b_enc
    mask = _topk_mask(pre, model.k)
    c = np.where(mask, pre, 0.0)
    resid = c @ model.w_dec.T + model.b_pre - h

    mse = float(np.sum(resid * resid) / B)
    l1 = float(np.sum(c) / B)
    xc = c - c.mean(axis=0)
    off = xc.T @ xc / B
    np.fill_diagonal(off, 0.0)
    decor = float(np.sum(off * off))
    total = mse + cfg.lambda_l1 * l1 + cfg.beta * decor

    d_hhat = 2.0 * resid / B
    d_c = d_hhat @ model.w_dec
    d_c += cfg.lambda_l1 / B
    # d/dXc of ||offdiag(Xc^T Xc / B)||^2 is 4/B Xc P; column-centring adds nothing since sum_b Xc = 0
    d_c += cfg.beta * (4.0 / B) * (xc @ off)
    d_pre = np.where(mask, d_c, 0.0)

    grads = {
        "w_dec": d_hhat.T @ c,
        "w_enc": d_pre.T @ hc,
        "b_enc": d_pre.sum(axis=0),
        "b_pre": d_hhat.sum(axis=0) - d_pre.sum(axis=0) @ model.w_enc,
    }
    return SaeLoss(total, mse, l1, decor), grads, c


def sae_loss(batch, model, cfg):
    """``(total, mse, l1, decor)`` for a batch; mse and l1 are means over rows."""
    loss, _, _ = sae_loss_and_grad(batch, model, cfg)
    return loss


def l0_rate(c):
    """Fraction of strictly positive entries per row, averaged over rows."""
    c = np.asarray(c)
    if c.ndim != 2 or c.size == 0:
        raise InvalidArgumentError("l0_rate needs a non-empty N x K matrix")
    return float(np.mean(np.mean(c > 0, axis=1)))


def init_model(acts, n_concepts, k, rng):
    """Random encoder, tied unit-norm decoder, ``b_pre`` at the data mean."""
    n, d = acts.shape
    w_enc = rng.standard_normal((n_concepts, d)) / np.sqrt(d)
    w_dec = w_enc.T.copy()
    w_dec /= np.linalg.norm(w_dec, axis=0, keepdims=True)
    return SaeModel(w_enc, w_dec, acts.mean(axis=0), np.zeros(n_concepts), k)


def _resample(model, fire_counts, total_examples, batch, per_example_loss, rng,
              threshold, scale):
    if total_examples <= 0:
        raise InvalidArgumentError("total_examples must be positive")
    dead = np.flatnonzero(np.asarray(fire_counts) / total_examples < threshold)
    per_example_loss = np.asarray(per_example_loss, dtype=np.float64)
    loss_sum = per_example_loss.sum()
    if dead.size == 0 or not loss_sum > 0:
        return np.array([], dtype=int)
    rows = rng.choice(len(per_example_loss), size=dead.size, p=per_example_loss / loss_sum)
    dirs = np.asarray(batch, dtype=np.float64)[rows] - model.b_pre
    norms = np.linalg.norm(dirs, axis=1)
    degenerate = norms == 0
    if np.any(degenerate):
        dirs[degenerate] = rng.standard_normal((int(degenerate.sum()), model.d))
        norms[degenerate] = np.linalg.norm(dirs[degenerate], axis=1)
    dirs /= norms[:, None]
    model.w_dec[:, dead] = dirs.T
    model.w_enc[dead] = scale * dirs
    model.b_enc[dead] = 0.0
    fire_counts[dead] = 0
    return dead


def resample_dead_neurons(model, fire_counts, total_examples, batch, per_example_loss, rng,
                          threshold=0.005, scale=0.2):
    """Re-point neurons whose fire rate is below ``threshold`` at poorly reconstructed rows.

    Each dead neuron gets a unit-norm decoder column drawn from ``batch`` rows
    (centred by ``b_pre``) with probability proportional to their
    reconstruction loss, an encoder row of ``scale`` times that direction, and
    a zero encoder bias. ``model`` and ``fire_counts`` are modified in place.

    Returns
    -------
    int
        Number of neurons reset (0 when every per-example loss is zero).
    """
    return int(_resample(model, fire_counts, total_examples, batch, per_example_loss, rng,
                         threshold, scale).size)


def _batches(n, batch_size, rng):
    perm = rng.permutation(n)
    n_full = n // batch_size
    out = [perm[i * batch_size:(i + 1) * batch_size] for i in range(n_full)]
    if n - n_full * batch_size >= 2:
        out.append(perm[n_full * batch_size:])
    return out


def train_sae(acts, cfg=None, model=None):
    """Train a TopK SAE with Adam and periodic dead-neuron resampling.

    Parameters
    ----------
    acts : array_like, shape (N, d)
    cfg : SaeTrainConfig, optional
    model : SaeModel, optional
        Starting point; a fresh seeded initialisation is used when omitted.

    Returns
    -------
    model : SaeModel
    log : SaeTrainLog
        One record per epoch. Loss columns are batch means over the epoch;
        ``l0_rate`` is measured on the codes produced during the epoch.

    Notes
    -----
    Resampling runs after every ``resample_interval_epochs``-th epoch except
    the last, using fire counts accumulated since the previous check and the
    final mini-batch of the epoch.
    """
    cfg = cfg or SaeTrainConfig()
    cfg.validate()
    acts = np.asarray(acts, dtype=np.float64)
    if acts.ndim != 2 or acts.shape[0] == 0:
        raise InvalidArgumentError("train_sae needs a non-empty N x d activation matrix")
    acts = as_activation_matrix(acts)
    n = acts.shape[0]
    if n < cfg.batch_size:
        raise InvalidArgumentError(f"N={n} is smaller than batch_size={cfg.batch_size}")

    rng = np.random.default_rng(cfg.seed)
    if model is None:
        model = init_model(acts, cfg.n_concepts, cfg.k, rng)
    else:
        model = model.copy()
        if model.d != acts.shape[1]:
            raise InvalidArgumentError("initial model dimension does not match activations")
    opt = Adam(model.params(), lr=cfg.learning_rate)
    fire_counts = np.zeros(model.n_concepts, dtype=np.int64)
    seen = 0
    log = SaeTrainLog()

    for epoch in range(1, cfg.epochs + 1):
        sums = np.zeros(4)
        active = 0
        rows_this_epoch = 0
        batches = _batches(n, cfg.batch_size, rng)
        for b, idx in enumerate(batches):
            batch = acts[idx]
            loss, grads, c = sae_loss_and_grad(batch, model, cfg)
            if not np.isfinite(loss.total) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise NumericError(f"non-finite SAE loss at epoch {epoch}, batch {b}")
            opt.step(grads)
            sums += (loss.total, loss.mse, loss.l1, loss.decor)
            fired = c > 0
            fire_counts += fired.sum(axis=0)
            active += int(fired.sum())
            rows_this_epoch += len(idx)
            seen += len(idx)
        means = sums / len(batches)

        resampled = 0
        if epoch % cfg.resample_interval_epochs == 0 and epoch < cfg.epochs:
            batch = acts[batches[-1]]
            resid = decode(encode(batch, model), model) - batch
            dead = _resample(model, fire_counts, seen, batch, np.sum(resid * resid, axis=1),
                             rng, cfg.fire_rate_threshold, cfg.resample_scale)
            for name, axis in (("w_enc", 0), ("w_dec", 1), ("b_enc", 0)):
                opt.reset_state(name, dead, axis=axis)
            resampled = int(dead.size)
            fire_counts[:] = 0
            seen = 0

        log.records.append(EpochRecord(
            epoch=epoch, total=float(means[0]), mse=float(means[1]), l1=float(means[2]),
            decor=float(means[3]), l0_rate=active / (rows_this_epoch * model.n_concepts),
            resampled=resampled))
    log.b_enc_shift = calibrate_encoder_bias(model, acts)
    return model, log


def calibrate_encoder_bias(model, acts, margin=1e-6):
    """Shift ``b_enc`` uniformly so every row of ``acts`` has k positive pre-activations.

    A uniform shift leaves each row's ranking, and so the selected set,
    unchanged. Returns the shift applied (0 when no row is short of k
    positive entries). ``model`` is modified in place.
    """
    pre = preactivation(acts, model)
    kth = -np.partition(-pre, model.k - 1, axis=1)[:, model.k - 1]
    lowest = float(kth.min())
    if lowest > 0:
        return 0.0
    shift = margin - lowest
    model.b_enc += shift
    return shift
