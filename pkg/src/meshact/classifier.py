"""Training and evaluation shared by the transformer and ablation heads.

Every head exposes forward(params, tokens) -> (1, n_classes) logits through
the same engine, so one loop covers the lot: cross-entropy over sequence
mini-batches, Adam with per-epoch lr decay, per-epoch test accuracy. All
heads therefore emit the same metrics schema and are directly comparable.
"""

from __future__ import annotations

import numpy as np

from . import attention, engine, heads
from .attention import TransformerConfig
from .engine import Tensor
from .errors import NonFiniteError
from .optim import AdamState, adam_step, lr_decay

HEAD_KINDS = ("transformer", "mlp", "lstm", "cnn")


def make_head(kind: str, cfg: TransformerConfig, rng: np.random.Generator,
              length: int = None):
    """Returns (params, forward) for a head kind.

    `length` is required by the mlp head, whose first layer consumes the
    flattened sequence; the other heads are length-agnostic.
    """
    if kind == "transformer":
        params = attention.init_transformer_params(cfg, rng)
        return params, lambda p, t: attention.forward_sequence(p, cfg, t)
    if kind == "mlp":
        if length is None:
            raise ValueError("mlp head needs the sequence length up front")
        params = heads.init_mlp_params(rng, cfg.in_dim, length, cfg.n_classes)
        return params, heads.mlp_forward
    if kind == "lstm":
        params = heads.init_lstm_params(rng, cfg.in_dim, cfg.n_classes)
        return params, heads.lstm_forward
    if kind == "cnn":
        params = heads.init_cnn_params(rng, cfg.in_dim, cfg.n_classes)
        return params, heads.cnn_forward
    raise ValueError(f"unknown head kind {kind!r}; expected one of "
                     f"{', '.join(HEAD_KINDS)}")


def evaluate(forward, params: dict, dataset) -> tuple:
    """Accuracy and per-sequence predictions with frozen parameters."""
    frozen = {name: p.detach() for name, p in params.items()}
    preds, labels = [], []
    for emb, label in dataset:
        logits = forward(frozen, Tensor(np.asarray(emb, dtype=np.float32)))
        preds.append(int(np.argmax(logits.data[0])))
        labels.append(int(label))
    preds = np.array(preds, dtype=np.int64)
    labels = np.array(labels, dtype=np.int64)
    acc = float((preds == labels).mean()) if len(preds) else 0.0
    return acc, preds


def train_head(kind: str, cfg: TransformerConfig, train_set, test_set, *,
               epochs: int, learning_rate: float, decay_rate: float,
               weight_decay: float, batch_size: int, seed: int, log=None):
    """Returns (params, forward, metrics rows (epoch, train_loss, test_acc))."""
    if not train_set:
        raise ValueError("empty training set")
    lengths = {emb.shape[0] for emb, _ in train_set}
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC1]))
    params, forward = make_head(kind, cfg, rng, length=max(lengths))
    state = AdamState()
    n = len(train_set)
    metrics = []
    for epoch in range(1, epochs + 1):
        lr = lr_decay(learning_rate, epoch - 1, decay_rate)
        order = rng.permutation(n)
        total, count = 0.0, 0
        for it, start in enumerate(range(0, n, batch_size)):
            chosen = order[start:start + batch_size]
            logits = engine.concat_rows(
                [forward(params, Tensor(train_set[i][0])) for i in chosen])
            labels = np.array([train_set[i][1] for i in chosen])
            try:
                loss = engine.cross_entropy(logits, labels)
                loss.backward()
            except NonFiniteError as e:
                raise NonFiniteError(
                    f"epoch {epoch} iteration {it}: {e}") from e
            adam_step(params, state, lr, weight_decay)
            total += loss.item() * len(chosen)
            count += len(chosen)
        acc, _ = evaluate(forward, params, test_set)
        metrics.append((epoch, total / count, acc))
        if log is not None:
            log(epoch, total / count, acc)
    return params, forward, metrics


def confusion_matrix(preds, labels, n_classes: int) -> np.ndarray:
    """Counts with rows = true class, columns = predicted class."""
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.shape != labels.shape:
        raise ValueError(f"length mismatch: {len(preds)} predictions vs "
                         f"{len(labels)} labels")
    both = np.concatenate([preds, labels])
    if both.size and (both.min() < 0 or both.max() >= n_classes):
        raise ValueError(f"class id out of range [0, {n_classes})")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (labels, preds), 1)
    return cm


def write_metrics_csv(path, metrics) -> None:
    lines = ["epoch,train_loss,test_accuracy"]
    for epoch, loss, acc in metrics:
        lines.append(f"{epoch},{loss!r},{acc!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_metrics_csv(path):
    with open(path) as fh:
        lines = fh.read().strip().splitlines()
    if not lines or lines[0] != "epoch,train_loss,test_accuracy":
        raise ValueError(f"{path}: not a metrics file")
    out = []
    for line in lines[1:]:
        e, l, a = line.split(",")
        out.append((int(e), float(l), float(a)))
    return out


def write_confusion_csv(path, cm: np.ndarray) -> None:
    with open(path, "w") as fh:
        for row in cm:
            fh.write(",".join(str(int(x)) for x in row) + "\n")


def head_parameter_counts(cfg: TransformerConfig, lengths) -> list:
    """(head, frames, parameter count) rows for the scaling comparison.

    The transformer/lstm/cnn heads are length-independent by construction;
    the mlp head's first layer makes its count affine in L.
    """
    rng = np.random.default_rng(0)
    rows = []
    for kind in HEAD_KINDS:
        for length in lengths:
            params, _ = make_head(kind, cfg, rng, length=length)
            rows.append((kind, int(length), attention.parameter_count(params)))
    return rows


def write_parameter_csv(path, rows) -> None:
    lines = ["head,frames,param_count"]
    for kind, length, count in rows:
        lines.append(f"{kind},{length},{count}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
