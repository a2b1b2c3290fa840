"""Linear probing of frozen features: classification and segmentation heads,
their metrics, and cross-run comparison tables.

The backbone is never trained here. Features are extracted once (pooled for
classification, per token for segmentation), cached as plain arrays, and a
linear head is fit with SGD + momentum on top. Labeled sets are split
80/20 by index into head-train and eval halves; reported metrics come from
the eval half.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import OfaNet, forward_features, forward_tokens
from .runconfig import CLS_TASK, SEG_TASK, ProbeConfig
from .seeds import parallel_map
from .synthdata import LoadedDataset, resize_nearest

MOMENTUM = 0.9
EVAL_FRACTION = 0.2


@dataclass
class LinearHead:
    weight: np.ndarray  # [d, k]
    bias: np.ndarray  # [k]


@dataclass
class ProbeReport:
    task: str
    dataset: str  # modality id or file stem
    method: str
    metric: str  # "top1" or "miou"
    value: float
    extras: dict[str, float] = field(default_factory=dict)

    def line(self) -> str:
        """Machine-readable form: task, dataset, method, metric, value."""
        return f"{self.task}\t{self.dataset}\t{self.method}\t{self.metric}\t{self.value:.6f}"


def parse_report_line(line: str) -> ProbeReport:
    parts = line.rstrip("\n").split("\t")
    if len(parts) != 5:
        raise ValueError(f"report line needs 5 tab-separated fields, got {len(parts)}")
    return ProbeReport(parts[0], parts[1], parts[2], parts[3], float(parts[4]))


# ---------------------------------------------------------------------------
# metrics


def top1_accuracy(pred_classes, labels) -> float:
    pred_classes = np.asarray(pred_classes)
    labels = np.asarray(labels)
    if pred_classes.size == 0:
        raise ValueError("top1_accuracy of empty input")
    if pred_classes.shape != labels.shape:
        raise ValueError(f"length mismatch: {pred_classes.shape} vs {labels.shape}")
    return float((pred_classes == labels).mean())


def mean_iou(pred_mask, gt_mask, k: int) -> float:
    """Mean per-class IoU; classes absent from both masks are excluded.

    Accepts a single mask pair or equal-shaped stacks (aggregate confusion).
    """
    pred = np.asarray(pred_mask)
    gt = np.asarray(gt_mask)
    if pred.size == 0:
        raise ValueError("mean_iou of empty masks")
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    if pred.max() >= k or gt.max() >= k or pred.min() < 0 or gt.min() < 0:
        raise ValueError(f"mask values must be in [0, {k})")
    ious = []
    for c in range(k):
        p = pred == c
        g = gt == c
        union = np.logical_or(p, g).sum()
        if union == 0:
            continue
        ious.append(np.logical_and(p, g).sum() / union)
    return float(np.mean(ious))


# ---------------------------------------------------------------------------
# frozen feature extraction


def extract_features(net: OfaNet, images: np.ndarray, modality: str, per_token: bool = False) -> np.ndarray:
    """[n, d] pooled (or [n, tokens, d] per-token) frozen features."""
    size = net.dims.input_size
    fwd = forward_tokens if per_token else forward_features

    def one(i: int) -> np.ndarray:
        img = images[i]
        if img.shape[0] != size or img.shape[1] != size:
            img = resize_nearest(img, size)
        return fwd(net, img, modality).data

    return np.stack(parallel_map(one, range(images.shape[0])))


# ---------------------------------------------------------------------------
# heads


def _sgd_softmax(
    features: np.ndarray,
    targets: np.ndarray,
    k: int,
    lr: float,
    epochs: int,
    batch_size: int,
) -> LinearHead:
    """Momentum SGD on softmax cross-entropy; deterministic (zero init,
    fixed batch order). `targets` is either int labels [n] or per-row class
    histograms [n, k] (segmentation tokens, one count per covered pixel);
    the loss is the mean cross-entropy per label unit."""
    n, d = features.shape
    if targets.ndim == 1:
        hist = np.zeros((n, k), dtype=np.float64)
        hist[np.arange(n), targets] = 1.0
    else:
        hist = targets.astype(np.float64)
    w = np.zeros((d, k), dtype=np.float64)
    b = np.zeros(k, dtype=np.float64)
    vw = np.zeros_like(w)
    vb = np.zeros_like(b)
    x = features.astype(np.float64)
    step = batch_size if batch_size > 0 else n
    for _ in range(epochs):
        for lo in range(0, n, step):
            xs = x[lo : lo + step]
            hs = hist[lo : lo + step]
            logits = xs @ w + b
            logits -= logits.max(axis=1, keepdims=True)
            p = np.exp(logits)
            p /= p.sum(axis=1, keepdims=True)
            g = (p * hs.sum(axis=1, keepdims=True) - hs) / max(hs.sum(), 1.0)
            gw = xs.T @ g
            gb = g.sum(axis=0)
            vw = MOMENTUM * vw + gw
            vb = MOMENTUM * vb + gb
            w -= lr * vw
            b -= lr * vb
    return LinearHead(weight=w, bias=b)


def train_linear_cls(features: np.ndarray, labels: np.ndarray, config: ProbeConfig) -> LinearHead:
    """Fit a [d -> k] head on cached pooled features."""
    labels = np.asarray(labels)
    if labels.max() >= config.k_classes:
        raise ValueError(
            f"label {int(labels.max())} >= k_classes {config.k_classes}"
        )
    return _sgd_softmax(
        features, labels, config.k_classes, config.resolved_lr, config.epochs, config.batch_size
    )


def classify(head: LinearHead, features: np.ndarray) -> np.ndarray:
    return (features @ head.weight + head.bias).argmax(axis=1)


def token_label_histograms(masks: np.ndarray, grid: tuple[int, int], patch: int, k: int) -> np.ndarray:
    """Per-token class pixel counts [n, tokens, k] for [n, h, w] masks."""
    n = masks.shape[0]
    gh, gw = grid
    blocks = masks.reshape(n, gh, patch, gw, patch).transpose(0, 1, 3, 2, 4)
    blocks = blocks.reshape(n, gh * gw, patch * patch)
    hist = np.zeros((n, gh * gw, k), dtype=np.int64)
    for c in range(k):
        hist[..., c] = (blocks == c).sum(axis=-1)
    return hist


def train_linear_seg(
    token_features: np.ndarray,
    masks: np.ndarray,
    grid: tuple[int, int],
    patch: int,
    config: ProbeConfig,
) -> LinearHead:
    """Fit a per-token [d -> k] head against per-pixel cross-entropy."""
    k = config.k_classes
    if masks.max() >= k:
        raise ValueError(f"mask value {int(masks.max())} >= k_classes {k}")
    hist = token_label_histograms(masks, grid, patch, k)
    n, tokens, d = token_features.shape
    return _sgd_softmax(
        token_features.reshape(n * tokens, d),
        hist.reshape(n * tokens, k),
        k,
        config.resolved_lr,
        config.epochs,
        config.batch_size,
    )


def predict_seg(head: LinearHead, token_features: np.ndarray, grid: tuple[int, int], patch: int) -> np.ndarray:
    """Token argmax, broadcast to pixel blocks: [n, h, w] predicted masks."""
    n, tokens, d = token_features.shape
    gh, gw = grid
    logits = token_features.reshape(n * tokens, d) @ head.weight + head.bias
    token_pred = logits.argmax(axis=1).reshape(n, gh, gw)
    return token_pred.repeat(patch, axis=1).repeat(patch, axis=2)


def upsample_tokens(token_values: np.ndarray, grid: tuple[int, int], patch: int) -> np.ndarray:
    """[tokens] -> [h, w] by nearest-neighbor block broadcast."""
    gh, gw = grid
    return token_values.reshape(gh, gw).repeat(patch, axis=0).repeat(patch, axis=1)


# ---------------------------------------------------------------------------
# full probe runs


def _split(n: int) -> tuple[np.ndarray, np.ndarray]:
    n_eval = max(1, int(round(EVAL_FRACTION * n)))
    idx = np.arange(n)
    return idx[: n - n_eval], idx[n - n_eval :]


def run_cls_probe(
    net: OfaNet, dataset: LoadedDataset, config: ProbeConfig, method: str
) -> tuple[LinearHead, ProbeReport]:
    if dataset.labels is None:
        raise ValueError("classification probe needs a labeled dataset")
    feats = extract_features(net, dataset.images, dataset.modality_id)
    train_idx, eval_idx = _split(len(dataset.labels))
    head = train_linear_cls(feats[train_idx], dataset.labels[train_idx], config)
    train_acc = top1_accuracy(classify(head, feats[train_idx]), dataset.labels[train_idx])
    eval_acc = top1_accuracy(classify(head, feats[eval_idx]), dataset.labels[eval_idx])
    assert 0.0 <= eval_acc <= 1.0
    report = ProbeReport(
        task=CLS_TASK,
        dataset=dataset.modality_id,
        method=method,
        metric="top1",
        value=eval_acc,
        extras={"train_top1": train_acc},
    )
    return head, report


def run_seg_probe(
    net: OfaNet, dataset: LoadedDataset, config: ProbeConfig, method: str
) -> tuple[LinearHead, ProbeReport]:
    if dataset.masks is None:
        raise ValueError("segmentation probe needs a mask-labeled dataset")
    patch = net.dims.patch_size
    grid = net.dims.grid
    feats = extract_features(net, dataset.images, dataset.modality_id, per_token=True)
    masks = dataset.masks
    if masks.shape[1] != net.dims.input_size:
        masks = np.stack([resize_nearest(mk, net.dims.input_size) for mk in masks])
    train_idx, eval_idx = _split(masks.shape[0])
    head = train_linear_seg(feats[train_idx], masks[train_idx], grid, patch, config)
    pred = predict_seg(head, feats[eval_idx], grid, patch)
    miou = mean_iou(pred, masks[eval_idx], config.k_classes)
    train_miou = mean_iou(
        predict_seg(head, feats[train_idx], grid, patch), masks[train_idx], config.k_classes
    )
    assert 0.0 <= miou <= 1.0
    report = ProbeReport(
        task=SEG_TASK,
        dataset=dataset.modality_id,
        method=method,
        metric="miou",
        value=miou,
        extras={"train_miou": train_miou},
    )
    return head, report


# ---------------------------------------------------------------------------
# comparisons


def compare_runs(reports: list[ProbeReport]) -> str:
    """Aligned table with deltas against the first (baseline) row."""
    if len(reports) < 2:
        raise ValueError("compare_runs needs at least two reports")
    first = reports[0]
    for r in reports[1:]:
        if r.task != first.task or r.dataset != first.dataset:
            raise ValueError(
                f"mismatched runs: ({first.task}, {first.dataset}) vs ({r.task}, {r.dataset})"
            )
    name_width = max(len(r.method) for r in reports) + 2
    lines = [
        f"task={first.task} dataset={first.dataset} metric={first.metric}",
        f"{'method'.ljust(name_width)}{'value':>10}  {'delta':>8}",
    ]
    for i, r in enumerate(reports):
        delta = "--" if i == 0 else f"{r.value - first.value:+.4g}"
        lines.append(f"{r.method.ljust(name_width)}{r.value:>10.4g}  {delta:>8}")
    return "\n".join(lines)
