"""Two-way adversarial training of a forward map W and an inverse map Z.

Two discriminators are trained: ``d1`` separates mapped source vectors
``W s`` from target vectors, ``d2`` separates round-tripped vectors
``Z W s`` from source vectors. W is trained to fool both (the ``d2`` pass
goes through a frozen Z), Z is trained to fool ``d2``. Discriminators
output the probability that an input is *mapped*; their loss is::

    L_D = -mean log D(mapped) - mean log(1 - D(real))

and a mapping's loss swaps the labels. Everything is plain numpy with
hand-written backpropagation and vanilla SGD.
"""

import copy
import csv
import logging
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .numerics import orthogonalize_step, random_orthogonal
from .similarity import CSLS, SimilarityMetric, best_scores, build_neighborhood_cache, csls_topk

logger = logging.getLogger(__name__)

__all__ = [
    "EPS",
    "DiscriminatorParams",
    "TrainerConfig",
    "TrainingState",
    "EpochRecord",
    "TrainingDivergedError",
    "init_discriminator",
    "disc_forward",
    "disc_loss_and_grad",
    "map_adv_loss_and_grad",
    "sgd_update",
    "init_state",
    "train_iteration",
    "mean_similarity_criterion",
    "train",
    "named_rng",
    "save_checkpoint",
    "load_checkpoint",
    "write_history_csv",
    "read_history_csv",
]

EPS = 1e-7

# sub-stream ids for named_rng
_STREAMS = {"init": 0, "sampling": 1, "synth": 2, "disc_init": 3}


def named_rng(seed, name, restart=0):
    """Independent generator for one named purpose derived from ``seed``.

    Restart ``r > 0`` of a training run draws from a separate child of each
    stream, so restart 0 is identical to a run without restarts.
    """
    key = (_STREAMS[name],) if restart == 0 else (_STREAMS[name], restart)
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


class TrainingDivergedError(FloatingPointError):
    """A loss became NaN or infinite during training."""


# --------------------------------------------------------------------------
# discriminator


@dataclass
class DiscriminatorParams:
    """Weights of a two-hidden-layer leaky-ReLU MLP with a sigmoid output."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray
    leaky_slope: float = 0.2

    PARAM_NAMES = ("w1", "b1", "w2", "b2", "w3", "b3")

    @property
    def input_dim(self):
        return self.w1.shape[0]

    @property
    def hidden_dim(self):
        return self.w1.shape[1]

    def arrays(self):
        return {k: getattr(self, k) for k in self.PARAM_NAMES}

    def copy(self):
        return copy.deepcopy(self)

    @classmethod
    def zeros(cls, d, hidden, leaky_slope=0.2):
        return cls(np.zeros((d, hidden)), np.zeros(hidden), np.zeros((hidden, hidden)),
                   np.zeros(hidden), np.zeros((hidden, 1)), np.zeros(1), leaky_slope)


def init_discriminator(d, hidden=2048, leaky_slope=0.2, rng=None):
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases."""
    rng = np.random.default_rng(rng)

    def layer(fan_in, fan_out):
        bound = 1.0 / np.sqrt(fan_in)
        return (rng.uniform(-bound, bound, (fan_in, fan_out)),
                rng.uniform(-bound, bound, fan_out))

    w1, b1 = layer(d, hidden)
    w2, b2 = layer(hidden, hidden)
    w3, b3 = layer(hidden, 1)
    return DiscriminatorParams(w1, b1, w2, b2, w3, b3, leaky_slope)


def _sigmoid(a):
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    e = np.exp(a[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _lrelu(h, slope):
    return np.where(h > 0, h, slope * h)


def _forward(disc, x):
    if x.ndim != 2 or x.shape[1] != disc.input_dim:
        raise ValueError(f"expected batch of width {disc.input_dim}, got {x.shape}")
    h1 = x @ disc.w1 + disc.b1
    a1 = _lrelu(h1, disc.leaky_slope)
    h2 = a1 @ disc.w2 + disc.b2
    a2 = _lrelu(h2, disc.leaky_slope)
    logit = (a2 @ disc.w3 + disc.b3)[:, 0]
    return (x, h1, a1, h2, a2), _sigmoid(logit)


def _backward(disc, cache, dlogit, want_params=True, want_input=False):
    """Backpropagate d(loss)/d(logit) through the MLP."""
    x, h1, a1, h2, a2 = cache
    s = disc.leaky_slope
    grads = {}
    dlogit = dlogit[:, None]
    if want_params:
        grads["w3"] = a2.T @ dlogit
        grads["b3"] = dlogit.sum(axis=0)
    dh2 = (dlogit @ disc.w3.T) * np.where(h2 > 0, 1.0, s)
    if want_params:
        grads["w2"] = a1.T @ dh2
        grads["b2"] = dh2.sum(axis=0)
    dh1 = (dh2 @ disc.w2.T) * np.where(h1 > 0, 1.0, s)
    if want_params:
        grads["w1"] = x.T @ dh1
        grads["b1"] = dh1.sum(axis=0)
    dx = dh1 @ disc.w1.T if want_input else None
    return grads, dx


def _clamped_nll(p, positive):
    """Mean of -log p (positive) or -log(1-p) and its derivative wrt the logit.

    Probabilities are clamped to [EPS, 1-EPS]; inside the clamped region the
    derivative is zero, matching the clamped loss exactly.
    """
    pc = np.clip(p, EPS, 1.0 - EPS)
    inside = (p > EPS) & (p < 1.0 - EPS)
    m = p.shape[0]
    if positive:
        loss = -np.mean(np.log(pc))
        dlogit = np.where(inside, p - 1.0, 0.0) / m
    else:
        loss = -np.mean(np.log1p(-pc))
        dlogit = np.where(inside, p, 0.0) / m
    return loss, dlogit


def disc_forward(disc, x):
    """Probability (clamped to [EPS, 1-EPS]) that each row of ``x`` is mapped."""
    _, p = _forward(disc, np.atleast_2d(np.asarray(x, dtype=np.float64)))
    return np.clip(p, EPS, 1.0 - EPS)


def disc_loss_and_grad(disc, mapped_batch, real_batch):
    """Discriminator loss and parameter gradients.

    ``mapped_batch`` is treated as a constant input.
    """
    mapped_batch = np.atleast_2d(mapped_batch)
    real_batch = np.atleast_2d(real_batch)
    if mapped_batch.shape[0] == 0 or real_batch.shape[0] == 0:
        raise ValueError("empty batch")
    cache_f, p_f = _forward(disc, mapped_batch)
    cache_r, p_r = _forward(disc, real_batch)
    loss_f, dl_f = _clamped_nll(p_f, positive=True)
    loss_r, dl_r = _clamped_nll(p_r, positive=False)
    g_f, _ = _backward(disc, cache_f, dl_f)
    g_r, _ = _backward(disc, cache_r, dl_r)
    grads = {k: g_f[k] + g_r[k] for k in g_f}
    return loss_f + loss_r, grads


def map_adv_loss_and_grad(maps, disc, source_batch, real_batch):
    """Adversarial loss of a chain of maps and the gradient for ``maps[0]``.

    ``source_batch`` rows go through ``maps[0]``, then ``maps[1]`` (if
    given), and are scored by ``disc``. The loss is::

        -mean log(1 - D(mapped)) - mean log D(real)

    The second term does not depend on the maps; it is part of the value
    but contributes nothing to the gradient. Later maps in the chain and
    the discriminator are frozen.
    """
    if not 1 <= len(maps) <= 2:
        raise ValueError("map chain must have one or two maps")
    x = np.atleast_2d(source_batch)
    real_batch = np.atleast_2d(real_batch)
    if x.shape[0] == 0 or real_batch.shape[0] == 0:
        raise ValueError("empty batch")
    first = np.asarray(maps[0])
    if first.shape[1] != x.shape[1]:
        raise ValueError("first map does not match source width")
    h = x @ first.T
    if len(maps) == 2:
        second = np.asarray(maps[1])
        if second.shape[1] != h.shape[1]:
            raise ValueError("second map does not match first map output")
        out = h @ second.T
    else:
        out = h
    cache, p = _forward(disc, out)
    loss_f, dlogit = _clamped_nll(p, positive=False)
    _, p_r = _forward(disc, real_batch)
    loss_r = -np.mean(np.log(np.clip(p_r, EPS, 1.0 - EPS)))
    _, dout = _backward(disc, cache, dlogit, want_params=False, want_input=True)
    dh = dout @ second if len(maps) == 2 else dout
    return loss_f + loss_r, dh.T @ x


def sgd_update(disc, grads, lr):
    for k, g in grads.items():
        getattr(disc, k)[...] -= lr * g


# --------------------------------------------------------------------------
# training


@dataclass
class TrainerConfig:
    batch_size: int = 32
    epochs: int = 5
    steps_per_epoch: int = 1000
    disc_steps: int = 1
    lr0: float = 0.1
    lr_decay_per_epoch: float = 0.95
    beta: float = 0.01
    sample_vocab_limit: int = None  # None: whole vocabulary
    criterion_k: int = 10000
    criterion_metric: SimilarityMetric = field(default_factory=lambda: CSLS(10))
    leaky_slope: float = 0.2
    hidden_dim: int = 2048
    seed: int = 0
    # "both": W steps against D1 and D2 every iteration; "alternate": D1 on
    # even iterations, D2 on odd ones
    w_schedule: str = "both"
    # independent initialisations; the one with the highest criterion wins
    restarts: int = 1

    def __post_init__(self):
        for name in ("batch_size", "steps_per_epoch", "disc_steps", "criterion_k", "hidden_dim", "restarts"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.sample_vocab_limit is not None and self.sample_vocab_limit < 1:
            raise ValueError("sample_vocab_limit must be >= 1")
        if not 0 < self.lr_decay_per_epoch <= 1:
            raise ValueError("lr_decay_per_epoch must lie in (0, 1]")
        if self.lr0 < 0:
            raise ValueError("lr0 must be nonnegative")
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")
        if self.w_schedule not in ("both", "alternate"):
            raise ValueError(f"unknown w_schedule {self.w_schedule!r}")


@dataclass
class EpochRecord:
    epoch: int
    criterion: float
    d1_loss: float
    d2_loss: float
    w_loss: float
    z_loss: float


@dataclass
class TrainingState:
    w: np.ndarray
    z: np.ndarray
    d1: DiscriminatorParams
    d2: DiscriminatorParams
    epoch: int = 0
    current_lr: float = 0.1
    iteration: int = 0
    history: list = field(default_factory=list)
    initial_criterion: float = float("nan")
    best_criterion: float = float("-inf")
    best_epoch: int = -1
    best_w: np.ndarray = None
    best_z: np.ndarray = None
    restart: int = 0
    restart_criteria: list = field(default_factory=list)

    def copy(self):
        return copy.deepcopy(self)


def init_state(config, d, restart=0):
    init = named_rng(config.seed, "init", restart)
    w = random_orthogonal(d, init)
    z = random_orthogonal(d, init)
    drng = named_rng(config.seed, "disc_init", restart)
    d1 = init_discriminator(d, config.hidden_dim, config.leaky_slope, drng)
    d2 = init_discriminator(d, config.hidden_dim, config.leaky_slope, drng)
    return TrainingState(w=w, z=z, d1=d1, d2=d2, current_lr=config.lr0,
                         best_w=w.copy(), best_z=z.copy(), restart=restart)


def _check_finite(value, what):
    if not np.isfinite(value):
        raise TrainingDivergedError(f"non-finite {what} loss ({value})")


def train_iteration(state, config, source, target, rng):
    """One round of discriminator and mapping updates, in place.

    Order: D1 steps, D2 steps, W against D1, W against D2 through a frozen
    Z, Z against D2 with W-images held fixed, then one orthogonalization
    step on W and on Z. The sampled batches are shared by all steps.
    Returns the five losses of this iteration as a dict.
    """
    src = getattr(source, "vectors", source)
    tgt = getattr(target, "vectors", target)
    lim = config.sample_vocab_limit
    ns = src.shape[0] if lim is None else min(lim, src.shape[0])
    nt = tgt.shape[0] if lim is None else min(lim, tgt.shape[0])
    s = src[rng.integers(ns, size=config.batch_size)]
    t = tgt[rng.integers(nt, size=config.batch_size)]
    lr = state.current_lr

    for _ in range(config.disc_steps):
        d1_loss, g = disc_loss_and_grad(state.d1, s @ state.w.T, t)
        _check_finite(d1_loss, "D1")
        sgd_update(state.d1, g, lr)
    for _ in range(config.disc_steps):
        d2_loss, g = disc_loss_and_grad(state.d2, (s @ state.w.T) @ state.z.T, s)
        _check_finite(d2_loss, "D2")
        sgd_update(state.d2, g, lr)

    use_d1 = use_d2 = True
    if config.w_schedule == "alternate":
        use_d1 = state.iteration % 2 == 0
        use_d2 = not use_d1
    w_loss = 0.0
    if use_d1:
        loss, gw = map_adv_loss_and_grad([state.w], state.d1, s, t)
        _check_finite(loss, "W/D1")
        state.w = state.w - lr * gw
        w_loss += loss
    if use_d2:
        loss, gw = map_adv_loss_and_grad([state.w, state.z], state.d2, s, s)
        _check_finite(loss, "W/D2")
        state.w = state.w - lr * gw
        w_loss += loss
    z_loss, gz = map_adv_loss_and_grad([state.z], state.d2, s @ state.w.T, s)
    _check_finite(z_loss, "Z")
    state.z = state.z - lr * gz

    if config.beta > 0:
        state.w = orthogonalize_step(state.w, config.beta)
        state.z = orthogonalize_step(state.z, config.beta)
    state.iteration += 1
    return {"d1": d1_loss, "d2": d2_loss, "w": w_loss, "z": z_loss}


def mean_similarity_criterion(w, source, target, k=10000, metric=CSLS(10)):
    """Mean top-1 similarity of the ``k`` most frequent mapped source words.

    Candidates are the whole target vocabulary. For CSLS the neighborhoods
    are computed between the ``k`` mapped queries and the targets.
    """
    src = getattr(source, "vectors", source)
    tgt = getattr(target, "vectors", target)
    k = min(k, src.shape[0])
    mapped = src[:k] @ np.asarray(w).T
    if metric.is_csls:
        t = min(metric.t, k, tgt.shape[0])
        cache = build_neighborhood_cache(mapped, tgt, t)
        _, val = csls_topk(mapped, tgt, t, 1, cache=cache)
        return float(val[:, 0].mean())
    return float(best_scores(mapped, tgt, metric).mean())


def train(config, source, target, callback=None):
    """Run adversarial training and return the best checkpoint.

    W and Z start as Haar-random orthogonal matrices. After every epoch the
    mean-similarity criterion of W is recorded, the best (W, Z) so far is
    kept, and the learning rate is multiplied by ``lr_decay_per_epoch``.

    Returns the final :class:`TrainingState`; ``best_w``/``best_z`` hold
    the selected checkpoint and ``history`` one :class:`EpochRecord` per
    epoch. ``callback(state, record)`` is invoked after each epoch.

    With ``config.restarts > 1`` the whole run is repeated from independent
    initialisations and the state with the highest best criterion is
    returned (ties go to the earlier restart). Its ``restart_criteria``
    lists the best criterion of every restart.
    """
    src = getattr(source, "vectors", source)
    tgt = getattr(target, "vectors", target)
    if src.shape[1] != tgt.shape[1]:
        raise ValueError(f"dimension mismatch: {src.shape[1]} vs {tgt.shape[1]}")
    chosen, scores = None, []
    for r in range(config.restarts):
        state = _train_once(config, src, tgt, r, callback)
        scores.append(state.best_criterion)
        if chosen is None or state.best_criterion > chosen.best_criterion:
            chosen = state
    chosen.restart_criteria = scores
    return chosen


def _train_once(config, src, tgt, restart, callback):
    state = init_state(config, src.shape[1], restart)
    rng = named_rng(config.seed, "sampling", restart)
    crit = lambda w: mean_similarity_criterion(w, src, tgt, config.criterion_k, config.criterion_metric)
    state.initial_criterion = crit(state.w)
    for epoch in range(config.epochs):
        state.epoch = epoch
        sums = np.zeros(4)
        for _ in range(config.steps_per_epoch):
            losses = train_iteration(state, config, src, tgt, rng)
            sums += (losses["d1"], losses["d2"], losses["w"], losses["z"])
        means = sums / config.steps_per_epoch
        value = crit(state.w)
        rec = EpochRecord(epoch, value, *map(float, means))
        state.history.append(rec)
        if value > state.best_criterion:
            state.best_criterion = value
            state.best_epoch = epoch
            state.best_w = state.w.copy()
            state.best_z = state.z.copy()
        logger.info("restart %d epoch %d: criterion %.5f lr %.4g D1 %.4f D2 %.4f", restart, epoch, value,
                    state.current_lr, means[0], means[1])
        state.current_lr *= config.lr_decay_per_epoch
        if callback is not None:
            callback(state, rec)
    return state


# --------------------------------------------------------------------------
# files

CHECKPOINT_MAGIC = "LEXALIGN-MAP v1"


def save_checkpoint(path, w, z):
    """Write W and Z as text with 17 significant digits."""
    w = np.asarray(w)
    z = np.asarray(z)
    d = w.shape[0]
    if w.shape != (d, d) or z.shape != (d, d):
        raise ValueError("W and Z must be square and of equal size")
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"{CHECKPOINT_MAGIC} {d}\n")
        for row in w:
            f.write(" ".join(f"{x:.17g}" for x in row) + "\n")
        f.write("Z\n")
        for row in z:
            f.write(" ".join(f"{x:.17g}" for x in row) + "\n")


def load_checkpoint(path):
    """Read ``(W, Z)`` written by :func:`save_checkpoint`."""
    with open(path, encoding="utf-8") as f:
        lines = [ln.strip() for ln in f if ln.strip()]
    head = lines[0].split()
    if " ".join(head[:2]) != CHECKPOINT_MAGIC or len(head) != 3:
        raise ValueError(f"{path}: not a map checkpoint")
    d = int(head[2])
    if len(lines) != 2 * d + 2 or lines[d + 1] != "Z":
        raise ValueError(f"{path}: malformed checkpoint body")
    w = np.array([[float(x) for x in ln.split()] for ln in lines[1:d + 1]])
    z = np.array([[float(x) for x in ln.split()] for ln in lines[d + 2:]])
    if w.shape != (d, d) or z.shape != (d, d):
        raise ValueError(f"{path}: matrix rows do not have {d} entries")
    return w, z


HISTORY_FIELDS = [f.name for f in fields(EpochRecord)]


def write_history_csv(path, history):
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(HISTORY_FIELDS)
        for rec in history:
            writer.writerow([rec.epoch] + [repr(float(getattr(rec, k))) for k in HISTORY_FIELDS[1:]])


def read_history_csv(path):
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    return [EpochRecord(int(r["epoch"]), *(float(r[k]) for k in HISTORY_FIELDS[1:])) for r in rows]


def config_with(config, **changes):
    return replace(config, **changes)
