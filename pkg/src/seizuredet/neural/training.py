"""Loss, Adam, the mini-batch training loop and a finite-difference gradient check."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from ..errors import NonFiniteGradient, ShapeMismatch, SingleClassDataset
from ..labels import class_index
from ..windowing import Window, stack
from .models import Detector, build_model, load_config, normalise_kind

log = logging.getLogger(__name__)

PROB_CLAMP = 1e-7


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    learning_rate: float = 1e-3
    batch_size: int = 32
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    # stop as soon as an epoch's mean training loss drops below this
    stop_loss: Optional[float] = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def _labels_array(labels, n):
    y = np.asarray(labels)
    if y.ndim != 1 or y.shape[0] != n:
        raise ShapeMismatch(f"expected {n} labels, got shape {y.shape}")
    if y.dtype.kind in "US":
        y = np.array([class_index(v) for v in y])
    return y.astype(np.int64)


def bce_loss(probs, labels) -> float:
    """Mean ``-log p(true class)`` with probabilities clamped to ``[1e-7, 1 - 1e-7]``."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2 or probs.shape[1] != 2:
        raise ShapeMismatch(f"probs must be (N, 2), got {probs.shape}")
    y = _labels_array(labels, probs.shape[0])
    p = np.clip(probs[np.arange(y.size), y], PROB_CLAMP, 1 - PROB_CLAMP)
    return float(-np.log(p).mean())


def softmax_bce(logits, labels):
    """Loss of ``softmax(logits)`` and its gradient with respect to ``logits``."""
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    probs = e / e.sum(axis=1, keepdims=True)
    y = _labels_array(labels, logits.shape[0])
    n = y.size
    p_true = probs[np.arange(n), y]
    clipped = (p_true < PROB_CLAMP) | (p_true > 1 - PROB_CLAMP)
    loss = float(-np.log(np.clip(p_true, PROB_CLAMP, 1 - PROB_CLAMP)).mean())
    grad = probs.copy()
    grad[np.arange(n), y] -= 1.0
    grad[clipped] = 0.0
    return loss, grad / n


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray],
              state: AdamState, cfg: TrainConfig):
    """One bias-corrected Adam update, applied in place to ``params``."""
    for name, p in params.items():
        if name not in grads:
            raise ShapeMismatch(f"no gradient for {name!r}")
        g = grads[name]
        if np.shape(g) != np.shape(p):
            raise ShapeMismatch(f"{name}: param {np.shape(p)} vs grad {np.shape(g)}")
        if not np.isfinite(g).all():
            raise NonFiniteGradient(f"non-finite gradient for {name!r}")
    state.step += 1
    t = state.step
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = grads[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p -= cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
    return params, state


@dataclass
class TrainResult:
    model: Detector
    losses: list[float]
    # rows of (epoch, train_loss, val_loss, val_f1)
    log_rows: list[tuple] = field(default_factory=list)
    param_trace: list[dict] = field(default_factory=list)


def windows_to_xy(windows: Sequence[Window]):
    if any(w.label is None for w in windows):
        raise ValueError("all training windows must be labelled")
    x = stack(windows)
    y = np.array([class_index(w.label) for w in windows], dtype=np.int64)
    return x, y


def _val_scores(model: Detector, x, y):
    probs = model.predict_proba(x)
    loss = bce_loss(probs, y)
    pred = probs[:, 1] >= 0.5
    tp = int((pred & (y == 1)).sum())
    fp = int((pred & (y == 0)).sum())
    fn = int((~pred & (y == 1)).sum())
    f1 = 2 * tp / (2 * tp + fp + fn) if tp else 0.0
    return loss, f1


def train(model_kind, windows: Sequence[Window], cfg: TrainConfig = TrainConfig(),
          model_config: Optional[dict] = None, val_windows: Sequence[Window] = (),
          keep_trace: bool = False, dtype=np.float32,
          on_epoch: Optional[Callable[[int, Detector], None]] = None) -> TrainResult:
    """Minimise the softmax BCE loss with Adam over shuffled mini-batches.

    ``model_kind`` is a kind string (a fresh model is built from
    ``model_config`` or the packaged default sized for the window length)
    or an existing :class:`Detector` to continue training. All randomness
    (initialisation, shuffling, dropout) derives from ``cfg.seed``.

    ``on_epoch(epoch, model)`` is called after every epoch, e.g. to keep the
    checkpoint that scores best on held-out recordings.
    """
    x, y = windows_to_xy(windows)
    if len(np.unique(y)) < 2:
        raise SingleClassDataset("training needs at least one window of each class")
    init_seq, shuffle_seq, drop_seq = np.random.SeedSequence(cfg.seed).spawn(3)
    if isinstance(model_kind, Detector):
        model = model_kind
    else:
        kind = normalise_kind(model_kind)
        if model_config is None:
            window_s = x.shape[1] / 100.0
            model_config = load_config(kind, window_s=window_s)
        model = build_model(kind, model_config,
                            seed=int(init_seq.generate_state(1)[0]), dtype=dtype)
    model.set_rng(np.random.default_rng(drop_seq))
    shuffle_rng = np.random.default_rng(shuffle_seq)
    xv, yv = windows_to_xy(val_windows) if val_windows else (None, None)

    x = x.astype(model.dtype)
    state = AdamState()
    result = TrainResult(model=model, losses=[])
    n = x.shape[0]
    for epoch in range(1, cfg.epochs + 1):
        order = shuffle_rng.permutation(n)
        total = 0.0
        for i in range(0, n, cfg.batch_size):
            idx = order[i:i + cfg.batch_size]
            logits = model.logits(x[idx], training=True)
            loss, dlogits = softmax_bce(logits, y[idx])
            model.backward_logits(dlogits.astype(model.dtype))
            adam_step(model.params, model.grads(), state, cfg)
            total += loss * idx.size
        epoch_loss = total / n
        if not np.isfinite(epoch_loss):
            raise NonFiniteGradient(f"training loss became {epoch_loss} at epoch {epoch}")
        result.losses.append(epoch_loss)
        if xv is not None:
            val_loss, val_f1 = _val_scores(model, xv, yv)
        else:
            val_loss, val_f1 = float("nan"), float("nan")
        result.log_rows.append((epoch, epoch_loss, val_loss, val_f1))
        if keep_trace:
            result.param_trace.append(model.params.copy())
        if on_epoch is not None:
            on_epoch(epoch, model)
        log.debug("epoch %d loss %.5f val_loss %.5f val_f1 %.4f", epoch, epoch_loss, val_loss, val_f1)
        if cfg.stop_loss is not None and epoch_loss < cfg.stop_loss:
            break
    return result


@dataclass
class GradCheckReport:
    per_tensor: dict[str, float]
    max_rel_error: float
    n_params: int
    all_finite: bool
    # elements whose +-step stencil straddled a ReLU / max-pool switch
    n_kink_refined: int = 0


def _loss_and_pattern(model, x, y):
    loss = softmax_bce(model.logits(x, training=True), y)[0]
    return loss, model.activation_pattern()


def check_gradients(model_kind, batch, labels, config: Optional[dict] = None,
                    step: float = 1e-3, seed: int = 0, min_step: float = 1e-7) -> GradCheckReport:
    """Compare backprop gradients with central differences for every parameter.

    Runs in float64 with batch-statistics normalisation (training mode).

    ReLU and max-pool make the loss piecewise smooth. When the activation
    pattern at ``theta +- step`` differs from the one at ``theta`` the
    stencil straddles a kink and the difference quotient is not a
    derivative estimate at all; for those elements the step is divided by
    10 until the stencil is kink-free (or ``min_step`` is reached).

    The relative error of a tensor is ``|a - n| / max(|a|, |n|, 1e-8)``
    using Euclidean norms, which keeps tensors whose true gradient is zero
    (e.g. conv biases in front of batchnorm) from dividing noise by noise.
    """
    kind = normalise_kind(model_kind) if isinstance(model_kind, str) else model_kind.kind
    if config is None:
        config = load_config(kind, "tiny")
    model = build_model(kind, config, seed=seed, dtype=np.float64)
    x = np.asarray(batch, dtype=np.float64)
    y = _labels_array(labels, x.shape[0])

    logits = model.logits(x, training=True)
    _, dlogits = softmax_bce(logits, y)
    base_pattern = model.activation_pattern()
    model.backward_logits(dlogits)
    analytic = {k: v.copy() for k, v in model.grads().items()}

    per_tensor = {}
    refined = 0
    for name, p in model.params.items():
        num = np.zeros_like(p)
        flat, nflat = p.reshape(-1), num.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            h = step
            while True:
                flat[i] = orig + h
                up, pat_up = _loss_and_pattern(model, x, y)
                flat[i] = orig - h
                down, pat_down = _loss_and_pattern(model, x, y)
                flat[i] = orig
                smooth = np.array_equal(pat_up, base_pattern) and np.array_equal(pat_down, base_pattern)
                if smooth or h / 10 < min_step:
                    break
                if h == step:
                    refined += 1
                h /= 10
            nflat[i] = (up - down) / (2 * h)
        a = analytic[name]
        denom = max(np.linalg.norm(a), np.linalg.norm(num), 1e-8)
        per_tensor[name] = float(np.linalg.norm(a - num) / denom)
    finite = all(np.isfinite(v).all() for v in analytic.values())
    return GradCheckReport(per_tensor=per_tensor, max_rel_error=max(per_tensor.values()),
                           n_params=model.params.total_count, all_finite=finite,
                           n_kink_refined=refined)
