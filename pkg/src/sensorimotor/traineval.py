"""Training loop, plateau LR schedule, prediction aggregation, evaluation.

Optimization protocol: negative log-likelihood, SGD with momentum 0.9,
random square crops at train time (one crop drawn per sample and applied to
every stream of that sample, keeping the two streams spatially aligned),
deterministic center crops at evaluation time. The learning rate halves when
the validation loss stops improving by more than 1e-4 for ``patience``
consecutive epochs. The returned parameters are the best-validation ones.

Recurrent graphs train on the mean per-frame loss over all 20 steps (full
backprop through time, no truncation).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import reduce
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import ops
from .netgraph import NetworkGraph, forward
from .optim import OptimState, sgd_step
from .tensor import Tensor


class TrainingError(RuntimeError):
    """Training aborted; carries the first layer that went non-finite."""

    def __init__(self, message: str, layer: Optional[str] = None):
        self.layer = layer
        super().__init__(message if layer is None else f"{message} (layer {layer})")


@dataclass
class TrainConfig:
    lr: float = 5e-3
    momentum: float = 0.9
    lr_decay_factor: float = 0.5
    plateau_patience: int = 5
    epochs: int = 60
    crop_side: int = 64
    seed: int = 0
    batch_size: int = 8

    def __post_init__(self):
        if not 0.0 < self.lr_decay_factor < 1.0:
            raise ValueError(f"lr_decay_factor must be in (0,1), got {self.lr_decay_factor}")
        if self.plateau_patience < 1:
            raise ValueError("plateau_patience must be >= 1")


@dataclass
class PlateauState:
    lr: float
    factor: float = 0.5
    patience: int = 5
    threshold: float = 1e-4
    best: float = float("inf")
    bad_epochs: int = 0


def lr_scheduler_step(history: Sequence[float], state: PlateauState) -> float:
    """Consume the newest validation loss; decay lr after `patience` epochs
    without an improvement greater than the absolute threshold."""
    loss = history[-1]
    if state.best - loss > state.threshold:
        state.best = loss
        state.bad_epochs = 0
    else:
        state.bad_epochs += 1
        if state.bad_epochs >= state.patience:
            state.lr *= state.factor
            state.bad_epochs = 0
    return state.lr


# ---------------------------------------------------------------------------
# samples and cropping


def random_crop(image: np.ndarray, side: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform-random side x side crop of an HxW[xC] image."""
    h, w = image.shape[:2]
    if side > h or side > w:
        raise ValueError(f"crop side {side} exceeds image {w}x{h}")
    top = int(rng.integers(0, h - side + 1))
    left = int(rng.integers(0, w - side + 1))
    return image[top:top + side, left:left + side]


def center_crop(image: np.ndarray, side: int) -> np.ndarray:
    h, w = image.shape[:2]
    if side > h or side > w:
        raise ValueError(f"crop side {side} exceeds image {w}x{h}")
    top, left = (h - side) // 2, (w - side) // 2
    return image[top:top + side, left:left + side]


def to_net_input(image: np.ndarray) -> np.ndarray:
    """HxWx3 uint8 -> 3xHxW float64 in [0,1]."""
    return image.astype(np.float64).transpose(2, 0, 1) / 255.0


@dataclass
class Sample:
    """One training/eval item: label plus per-stream images or frame lists."""

    label: int
    streams: Dict[str, object]  # stream -> HxWx3 array, or list of them
    clip_id: str = ""
    subject: str = ""


def _crop_stream(value, side, top_left=None, rng=None):
    def one(img):
        if top_left is None:
            return center_crop(img, side)
        t, l = top_left
        return img[t:t + side, l:l + side]

    if isinstance(value, list):
        return [to_net_input(one(img)) for img in value]
    return to_net_input(one(value))


def _batch_inputs(samples: Sequence[Sample], side: int,
                  rng: Optional[np.random.Generator] = None) -> Dict[str, object]:
    """Stack samples into per-stream batch tensors (lists of tensors when
    the streams are frame sequences)."""
    streams = samples[0].streams.keys()
    per_sample = []
    for s in samples:
        if rng is not None:
            ref = s.streams[next(iter(streams))]
            ref_img = ref[0] if isinstance(ref, list) else ref
            h, w = ref_img.shape[:2]
            top = int(rng.integers(0, h - side + 1))
            left = int(rng.integers(0, w - side + 1))
            tl = (top, left)
        else:
            tl = None
        per_sample.append({k: _crop_stream(v, side, tl) for k, v in s.streams.items()})

    batch: Dict[str, object] = {}
    for k in streams:
        first = per_sample[0][k]
        if isinstance(first, list):
            T = len(first)
            batch[k] = [Tensor(np.stack([ps[k][t] for ps in per_sample]))
                        for t in range(T)]
        else:
            batch[k] = Tensor(np.stack([ps[k] for ps in per_sample]))
    return batch


def batch_loss(graph: NetworkGraph, inputs: dict, labels: np.ndarray) -> Tensor:
    out = forward(graph, inputs)
    if not graph.recurrent:
        return ops.nll_loss(out, labels)
    losses = [ops.nll_loss(dist, labels) for dist in out]
    total = reduce(ops.add, losses)
    return ops.mul(total, Tensor(1.0 / len(losses)))


def _diagnose_nonfinite(graph: NetworkGraph, inputs: dict) -> str:
    passes: list = []
    forward(graph, inputs, collect=passes)
    for values in passes:
        for node, val in zip(graph.nodes, values):
            if not np.all(np.isfinite(val.data)):
                return node.name.qualified()
    return "loss"


# ---------------------------------------------------------------------------
# the loop


@dataclass
class TrainResult:
    train_losses: List[float] = field(default_factory=list)
    val_losses: List[float] = field(default_factory=list)
    lr_history: List[float] = field(default_factory=list)
    best_epoch: int = -1
    best_val_loss: float = float("inf")

    def curve_lines(self) -> List[str]:
        lines = ["#epoch\ttrain_loss\tval_loss\tlr"]
        for e, (tl, vl, lr) in enumerate(zip(self.train_losses, self.val_losses,
                                             self.lr_history)):
            lines.append(f"{e}\t{tl:.10f}\t{vl:.10f}\t{lr:.10g}")
        return lines


def dataset_loss(graph: NetworkGraph, samples: Sequence[Sample], side: int,
                 batch_size: int = 16) -> float:
    """Mean loss over a sample set with deterministic center crops."""
    total, count = 0.0, 0
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        inputs = _batch_inputs(chunk, side, rng=None)
        labels = np.array([s.label for s in chunk])
        loss = batch_loss(graph, inputs, labels)
        total += float(loss.data) * len(chunk)
        count += len(chunk)
    return total / max(count, 1)


def train(graph: NetworkGraph, train_samples: Sequence[Sample], cfg: TrainConfig,
          val_samples: Optional[Sequence[Sample]] = None) -> TrainResult:
    """Epoch loop of shuffled mini-batches; returns curves and leaves the
    graph holding its best-validation parameters."""
    if not train_samples:
        raise TrainingError("no training samples")
    val_samples = val_samples if val_samples else train_samples

    params = graph.parameters()
    opt = OptimState(params, cfg.lr, cfg.momentum)
    sched = PlateauState(lr=cfg.lr, factor=cfg.lr_decay_factor,
                         patience=cfg.plateau_patience)
    rng = np.random.default_rng(cfg.seed)
    result = TrainResult()
    best_state = {k: v.copy() for k, v in graph.state_dict().items()}

    for epoch in range(cfg.epochs):
        order = rng.permutation(len(train_samples))
        epoch_loss, seen = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            chunk = [train_samples[i] for i in order[start:start + cfg.batch_size]]
            inputs = _batch_inputs(chunk, cfg.crop_side, rng=rng)
            labels = np.array([s.label for s in chunk])
            graph.zero_grad()
            loss = batch_loss(graph, inputs, labels)
            if not np.isfinite(loss.data):
                layer = _diagnose_nonfinite(graph, inputs)
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}", layer=layer)
            loss.backward()
            sgd_step(params, opt)
            epoch_loss += float(loss.data) * len(chunk)
            seen += len(chunk)

        val_loss = dataset_loss(graph, val_samples, cfg.crop_side, cfg.batch_size)
        result.train_losses.append(epoch_loss / seen)
        result.val_losses.append(val_loss)
        if val_loss < result.best_val_loss:
            result.best_val_loss = val_loss
            result.best_epoch = epoch
            best_state = {k: v.copy() for k, v in graph.state_dict().items()}
        opt.learning_rate = lr_scheduler_step(result.val_losses, sched)
        result.lr_history.append(opt.learning_rate)

    if cfg.epochs > 0:
        graph.load_state_dict(best_state)
    return result


# ---------------------------------------------------------------------------
# evaluation


def aggregate_predictions(per_frame: Sequence[np.ndarray], mode: str) -> np.ndarray:
    """Reduce per-frame distributions to one: the final frame's, or their mean."""
    if len(per_frame) == 0:
        raise ValueError("no per-frame predictions to aggregate")
    if mode == "last_frame":
        return np.asarray(per_frame[-1], dtype=np.float64)
    if mode == "all_frames":
        return np.mean(np.asarray(per_frame, dtype=np.float64), axis=0)
    raise ValueError(f"unknown aggregation mode {mode!r}")


@dataclass
class EvalReport:
    accuracy: float
    confusion: np.ndarray  # [true, predicted] counts
    per_class_accuracy: np.ndarray
    label: str = ""

    def lines(self, class_names: Optional[Sequence[str]] = None) -> List[str]:
        n = self.confusion.shape[0]
        names = class_names or [str(i) for i in range(n)]
        out = [f"#report\t{self.label}", f"accuracy\t{self.accuracy:.6f}"]
        for i in range(n):
            out.append(f"class\t{i}\t{names[i]}\t{self.per_class_accuracy[i]:.6f}")
        for i in range(n):
            out.append("confusion\t" + "\t".join(str(int(v)) for v in self.confusion[i]))
        return out


def report_from_predictions(labels: Sequence[int], preds: Sequence[int],
                            n_classes: int, tag: str = "") -> EvalReport:
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    for t, p in zip(labels, preds):
        confusion[t, p] += 1
    total = confusion.sum()
    acc = float(np.trace(confusion)) / total if total else 0.0
    row = confusion.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        per_class = np.where(row > 0, np.diag(confusion) / np.maximum(row, 1), 0.0)
    return EvalReport(acc, confusion, per_class, tag)


def predict(graph: NetworkGraph, samples: Sequence[Sample], side: int,
            mode: str = "all_frames", batch_size: int = 16) -> np.ndarray:
    """Argmax class per sample (ties resolve to the lowest index)."""
    preds = []
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        inputs = _batch_inputs(chunk, side, rng=None)
        out = forward(graph, inputs)
        if graph.recurrent:
            dists = aggregate_predictions([o.data for o in out], mode)
        else:
            dists = out.data
        preds.extend(int(np.argmax(d)) for d in np.atleast_2d(dists))
    return np.array(preds)


def evaluate(graph: NetworkGraph, samples: Sequence[Sample], side: int,
             mode: str = "all_frames", tag: str = "",
             batch_size: int = 16) -> EvalReport:
    preds = predict(graph, samples, side, mode, batch_size)
    labels = [s.label for s in samples]
    return report_from_predictions(labels, preds, graph.class_count, tag)


def render_confusion_heatmap(report: EvalReport, path,
                             class_names: Optional[Sequence[str]] = None) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    n = report.confusion.shape[0]
    row = report.confusion.sum(axis=1, keepdims=True)
    norm = report.confusion / np.maximum(row, 1)
    fig, ax = plt.subplots(figsize=(6.5, 5.5))
    im = ax.imshow(norm, cmap="hot", vmin=0.0, vmax=1.0)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    ticks = np.arange(n)
    ax.set_xticks(ticks)
    ax.set_yticks(ticks)
    names = class_names or [str(i) for i in range(n)]
    ax.set_xticklabels(names, rotation=90, fontsize=7)
    ax.set_yticklabels(names, fontsize=7)
    ax.set_title(f"{report.label} accuracy={report.accuracy:.4f}")
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
