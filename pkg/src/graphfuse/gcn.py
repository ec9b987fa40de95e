"""Two-layer graph convolutional network in plain numpy.

``Z = softmax(A relu(A S W0) W1)`` with ``A`` the renormalized
propagation matrix. Gradients are derived by hand; training uses Adam and
keeps the snapshot with the best validation accuracy.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .graph import Graph, PropagationMatrix, renormalize

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    learning_rate: float = 0.01
    weight_decay: float = 5e-4
    dropout: float = 0.5
    hidden: int = 16
    seed: int = 0
    row_normalize: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must lie in [0, 1)")
        if self.hidden < 1:
            raise ValueError("hidden must be >= 1")


@dataclass(eq=False)
class GcnModel:
    theta0: np.ndarray
    theta1: np.ndarray
    seed: int = 0

    @property
    def hidden(self) -> int:
        return self.theta0.shape[1]

    def copy(self) -> GcnModel:
        return GcnModel(self.theta0.copy(), self.theta1.copy(), self.seed)


@dataclass
class TrainReport:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_accuracy: list = field(default_factory=list)
    test_accuracy: float = float("nan")
    best_epoch: int = -1
    seconds: float = 0.0


def glorot(rng, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_model(d: int, c: int, hidden: int = 16, seed: int = 0) -> GcnModel:
    rng = np.random.default_rng(seed)
    return GcnModel(glorot(rng, d, hidden), glorot(rng, hidden, c), seed)


def row_normalize(features):
    """Scale each feature row to unit L1 norm; zero rows stay zero."""
    x = sp.csr_matrix(features, dtype=np.float64)
    sums = np.asarray(x.sum(axis=1)).ravel()
    inv = np.zeros_like(sums)
    inv[sums != 0] = 1.0 / sums[sums != 0]
    return sp.csr_matrix(sp.diags(inv) @ x)


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _matrix(a):
    return a.matrix if isinstance(a, PropagationMatrix) else a


def _dropout(x, p: float, rng):
    """Inverted dropout; returns the dropped input and its keep mask."""
    if sp.issparse(x):
        x = sp.csr_matrix(x, copy=True)
        keep = rng.random(x.nnz) >= p
        x.data = np.where(keep, x.data / (1.0 - p), 0.0)
        return x, keep
    keep = rng.random(x.shape) >= p
    return np.where(keep, x / (1.0 - p), 0.0), keep


def _check_inputs(model, a, s):
    n = a.shape[0]
    if a.shape != (n, n):
        raise ValueError(f"propagation matrix must be square, got {a.shape}")
    if s.shape[0] != n:
        raise ValueError(f"features have {s.shape[0]} rows for {n} nodes")
    if s.shape[1] != model.theta0.shape[0]:
        raise ValueError(f"feature dim {s.shape[1]} != theta0 rows {model.theta0.shape[0]}")
    if model.theta0.shape[1] != model.theta1.shape[0]:
        raise ValueError("theta0 and theta1 disagree on the hidden width")
    data = s.data if sp.issparse(s) else s
    if not (np.all(np.isfinite(data)) and np.all(np.isfinite(model.theta0))
            and np.all(np.isfinite(model.theta1))):
        raise ValueError("non-finite input")


def _forward(model, a, s, dropout, rng):
    """Forward pass keeping the intermediates needed for backprop."""
    if dropout > 0:
        s_in, _ = _dropout(s, dropout, rng)
    else:
        s_in = s
    pre1 = a @ (s_in @ model.theta0)
    h = np.maximum(pre1, 0.0)
    if dropout > 0:
        h_in, keep_h = _dropout(h, dropout, rng)
    else:
        h_in, keep_h = h, None
    ah = a @ h_in
    z = softmax(ah @ model.theta1)
    return z, (s_in, pre1, keep_h, ah)


def forward(model: GcnModel, A, S, dropout_active: bool = False, seed=None,
            dropout: float = 0.5) -> np.ndarray:
    """Class probabilities for every node.

    Dropout with rate ``dropout`` is applied to the input of each layer
    only when ``dropout_active`` is set, using a generator seeded by
    ``seed``.
    """
    a = _matrix(A)
    _check_inputs(model, a, S)
    rate = dropout if dropout_active else 0.0
    rng = np.random.default_rng(seed)
    z, _ = _forward(model, a, S, rate, rng)
    return z


def _mask_index(mask) -> np.ndarray:
    mask = np.asarray(mask)
    idx = np.flatnonzero(mask) if mask.dtype == bool else mask.astype(np.int64)
    if idx.size == 0:
        raise ValueError("mask selects no nodes")
    return idx


def masked_cross_entropy(Z, labels, mask) -> float:
    idx = _mask_index(mask)
    labels = np.asarray(labels)
    p = Z[idx, labels[idx]]
    return float(-np.mean(np.log(np.maximum(p, PROB_FLOOR))))


def _backward(model, a, labels, idx, z, cache, dropout, weight_decay):
    s_in, pre1, keep_h, ah = cache
    dlogits = np.zeros_like(z)
    dlogits[idx] = z[idx]
    dlogits[idx, labels[idx]] -= 1.0
    dlogits /= idx.size
    g1 = ah.T @ dlogits
    dh = a.T @ (dlogits @ model.theta1.T)
    if keep_h is not None:
        dh = np.where(keep_h, dh / (1.0 - dropout), 0.0)
    dpre = dh * (pre1 > 0)
    g0 = s_in.T @ (a.T @ dpre)
    g0 = np.asarray(g0) + weight_decay * model.theta0
    return g0, g1


def objective(model, A, S, labels, mask, weight_decay: float = 5e-4) -> float:
    """Masked cross-entropy plus ``weight_decay / 2 * ||theta0||_F^2`` (dropout off)."""
    z = forward(model, A, S)
    return masked_cross_entropy(z, labels, mask) + 0.5 * weight_decay * float(np.sum(model.theta0**2))


def gradients(model: GcnModel, A, S, labels, mask, cfg: TrainConfig | None = None,
              dropout_active: bool = False, seed=None):
    """Exact gradients of :func:`objective` with respect to ``(theta0, theta1)``."""
    cfg = cfg or TrainConfig()
    a = _matrix(A)
    _check_inputs(model, a, S)
    labels = np.asarray(labels)
    idx = _mask_index(mask)
    rate = cfg.dropout if dropout_active else 0.0
    z, cache = _forward(model, a, S, rate, np.random.default_rng(seed))
    return _backward(model, a, labels, idx, z, cache, rate, cfg.weight_decay)


def predict(model: GcnModel, A, S) -> np.ndarray:
    # argmax picks the lowest class index on ties
    return np.argmax(forward(model, A, S), axis=1)


def evaluate(model: GcnModel, A, S, labels, mask) -> float:
    idx = _mask_index(mask)
    pred = predict(model, A, S)
    return float(np.mean(pred[idx] == np.asarray(labels)[idx]))


class Adam:
    def __init__(self, shapes, lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def _propagation(graph_or_matrix):
    if isinstance(graph_or_matrix, Graph):
        return renormalize(graph_or_matrix).matrix
    return _matrix(graph_or_matrix)


def train(graph, S, labels, splits, cfg: TrainConfig | None = None, num_classes=None):
    """Fit a two-layer GCN and return ``(best model, TrainReport)``.

    ``graph`` is a :class:`Graph` (renormalized here) or a ready
    propagation matrix. ``splits`` maps ``train``/``val``/``test`` to node
    index arrays. Runs exactly ``cfg.epochs`` epochs; the returned model is
    the one with the best validation accuracy, earliest epoch on ties.
    """
    cfg = cfg or TrainConfig()
    start = time.perf_counter()
    a = _propagation(graph)
    labels = np.asarray(labels, dtype=np.int64)
    x = row_normalize(S) if cfg.row_normalize else sp.csr_matrix(S, dtype=np.float64)
    train_idx = _mask_index(splits["train"])
    val_idx = _mask_index(splits["val"])
    test_idx = _mask_index(splits["test"])
    if set(train_idx) & set(val_idx) or set(train_idx) & set(test_idx) or set(val_idx) & set(test_idx):
        raise ValueError("splits must be disjoint")
    c = int(num_classes if num_classes is not None else labels.max() + 1)
    used = np.concatenate([train_idx, val_idx, test_idx])
    if labels[used].min() < 0 or labels[used].max() >= c:
        raise ValueError("label out of range")

    model = init_model(x.shape[1], c, cfg.hidden, cfg.seed)
    dropout_rng = np.random.default_rng([cfg.seed, 1])
    opt = Adam([model.theta0.shape, model.theta1.shape], lr=cfg.learning_rate)
    report = TrainReport()
    best, best_acc = model.copy(), -1.0
    decay_term = 0.5 * cfg.weight_decay
    for epoch in range(cfg.epochs):
        z, cache = _forward(model, a, x, cfg.dropout, dropout_rng)
        loss = masked_cross_entropy(z, labels, train_idx) + decay_term * float(np.sum(model.theta0**2))
        if not np.isfinite(loss):
            raise FloatingPointError(f"non-finite training loss at epoch {epoch}")
        g0, g1 = _backward(model, a, labels, train_idx, z, cache, cfg.dropout, cfg.weight_decay)
        if cfg.learning_rate > 0:
            opt.step([model.theta0, model.theta1], [g0, g1])
        z_eval = forward(model, a, x)
        val_loss = masked_cross_entropy(z_eval, labels, val_idx)
        val_acc = float(np.mean(np.argmax(z_eval[val_idx], axis=1) == labels[val_idx]))
        report.train_loss.append(loss)
        report.val_loss.append(val_loss)
        report.val_accuracy.append(val_acc)
        if val_acc > best_acc:
            best, best_acc = model.copy(), val_acc
            report.best_epoch = epoch
    report.test_accuracy = evaluate(best, a, x, labels, test_idx)
    report.seconds = time.perf_counter() - start
    return best, report


def block_diagonal_views(graphs, S, labels, splits):
    """Stack views into one block-diagonal graph for the multi-view baseline.

    Each block carries its own copy of the features and labels. Training
    nodes are replicated in every block; validation and test nodes are
    read from the first block only, so accuracies refer to the original
    node ids.
    """
    n = graphs[0].n
    m = len(graphs)
    a = sp.block_diag([renormalize(g).matrix for g in graphs], format="csr")
    x = sp.vstack([sp.csr_matrix(S)] * m, format="csr")
    big_labels = np.tile(np.asarray(labels), m)
    offsets = np.arange(m) * n
    rep = {
        "train": np.concatenate([np.asarray(splits["train"]) + off for off in offsets]),
        "val": np.asarray(splits["val"]),
        "test": np.asarray(splits["test"]),
    }
    return PropagationMatrix(a), x, big_labels, rep
