"""Segmentation metrics and inference strategies.

Evaluation never touches gradients: forwards run in eval mode under
no_grad, predictions become confusion-matrix counts, and mean IoU comes
straight off the matrix.
"""
from __future__ import annotations

import numpy as np

from .augment import resize_bilinear
from .data import Dataset, normalize_image
from .runtime import Network
from .segment import copy_shared, rebuild_for_input
from .tensor import no_grad


class EvalError(ValueError):
    """Invalid metric or inference request."""


SCALE_PRESETS: dict[str, tuple[float, ...]] = {
    "single": (1.0,),
    "multi": (0.5, 0.75, 1.0, 1.25),
    # the extended set used for Cityscapes-style evaluation
    "extended": (0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0, 2.25, 2.5),
}


class ConfusionMatrix:
    """K x K counts; entry (t, p) = pixels of true class t predicted p."""

    def __init__(self, num_classes: int, ignore_index: int = 255):
        if num_classes < 2:
            raise EvalError(f"need at least 2 classes, got {num_classes}")
        self.num_classes = num_classes
        self.ignore_index = ignore_index
        self.counts = np.zeros((num_classes, num_classes), dtype=np.int64)

    def update(self, true: np.ndarray, pred: np.ndarray) -> "ConfusionMatrix":
        t = np.asarray(true).ravel()
        p = np.asarray(pred).ravel()
        if t.shape != p.shape:
            raise EvalError(f"label shapes differ: {true.shape} vs {pred.shape}")
        keep = t != self.ignore_index
        t = t[keep].astype(np.int64)
        p = p[keep].astype(np.int64)
        k = self.num_classes
        if t.size:
            if t.min() < 0 or t.max() >= k:
                raise EvalError("true label out of range")
            if p.min() < 0 or p.max() >= k:
                raise EvalError("predicted label out of range")
            self.counts += np.bincount(t * k + p, minlength=k * k).reshape(k, k)
        return self

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.num_classes != self.num_classes:
            raise EvalError("merging matrices of different sizes")
        self.counts += other.counts
        return self

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def miou(cm: ConfusionMatrix) -> dict:
    """Mean IoU over classes with non-zero union.

    IoU_k = diag / (row + col - diag). Classes that never occur in
    either truth or prediction are excluded from the mean and listed
    under "excluded" so the choice is visible.
    """
    c = cm.counts.astype(np.float64)
    diag = np.diag(c)
    union = c.sum(axis=1) + c.sum(axis=0) - diag
    included = union > 0
    if not included.any():
        raise EvalError("all classes have zero union")
    per_class = np.full(cm.num_classes, np.nan)
    per_class[included] = diag[included] / union[included]
    return {
        "miou": float(per_class[included].mean()),
        "per_class": per_class,
        "excluded": [int(i) for i in np.flatnonzero(~included)],
    }


def softmax_probs(logits: np.ndarray) -> np.ndarray:
    """Per-position class probabilities of a (k, h, w) logit map."""
    z = logits.astype(np.float64)
    z = z - z.max(axis=0, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=0, keepdims=True)


def _net_for_extent(net, hw: tuple[int, int], cache: dict):
    """The network rebuilt for one input extent, parameters shared."""
    key = (int(hw[0]), int(hw[1]))
    got = cache.get(key)
    if got is None:
        g2 = rebuild_for_input(net.graph, key)
        if g2 is net.graph:
            got = net
        else:
            got = Network(g2, dtype=net.dtype)
            copy_shared(net, got)
        cache[key] = got
    return got


def multi_scale_inference(net, image: np.ndarray, scales=(1.0,),
                          flip: bool = False, cache: dict | None = None) -> np.ndarray:
    """Average class probabilities over scaled (and mirrored) forwards.

    image is a normalized float32 (c, h, w) array. Each copy is resized
    bilinearly, forwarded in eval mode, softmaxed, resized back to the
    original extent, un-mirrored if needed, and averaged in probability
    space. Because upsample targets and transposed-conv padding depend
    on the input extent, the graph is rebuilt per distinct scaled size
    (cache persists those networks across calls). Returns a
    (num_classes, h, w) float64 map.
    """
    if len(scales) == 0:
        raise EvalError("need at least one scale")
    if any(s <= 0 for s in scales):
        raise EvalError(f"scales must be positive, got {tuple(scales)}")
    if cache is None:
        cache = {}
    c, h, w = image.shape
    total = None
    count = 0
    variants = [(float(s), False) for s in scales]
    if flip:
        variants += [(float(s), True) for s in scales]
    for s, mirrored in variants:
        x = image[:, :, ::-1] if mirrored else image
        hw = (max(1, int(round(h * s))), max(1, int(round(w * s))))
        x = resize_bilinear(np.ascontiguousarray(x), hw)
        model = _net_for_extent(net, hw, cache)
        with no_grad():
            out = model.forward(x[None], training=False)
        probs = softmax_probs(out.data[0])
        probs = resize_bilinear(probs, (h, w))
        if mirrored:
            probs = probs[:, :, ::-1]
        total = probs if total is None else total + probs
        count += 1
    return total / count


def predict_labels(net, image: np.ndarray, scales=(1.0,),
                   flip: bool = False, cache: dict | None = None) -> np.ndarray:
    """Argmax class map for one normalized image."""
    probs = multi_scale_inference(net, image, scales, flip, cache)
    return np.argmax(probs, axis=0).astype(np.uint8)


def evaluate(net, dataset: Dataset, scales=(1.0,), flip: bool = False) -> dict:
    """mIoU of a network over a dataset; returns metrics plus the matrix."""
    cm = ConfusionMatrix(dataset.classes, dataset.ignore_index)
    cache: dict = {}
    for img, mask in zip(dataset.images, dataset.masks):
        pred = predict_labels(net, normalize_image(img), scales, flip, cache)
        cm.update(mask, pred)
    result = miou(cm)
    result["confusion"] = cm
    return result


def format_metrics(result: dict) -> str:
    lines = [f"{'class':>8}  iou"]
    for i, v in enumerate(result["per_class"]):
        txt = "excluded" if i in result["excluded"] else f"{v:.4f}"
        lines.append(f"{i:>8}  {txt}")
    lines.append(f"mIoU: {result['miou']:.4f}")
    if result["excluded"]:
        lines.append("excluded classes (zero union): "
                     + ", ".join(str(i) for i in result["excluded"]))
    return "\n".join(lines) + "\n"


def metrics_csv(result: dict) -> str:
    lines = ["class,iou"]
    for i, v in enumerate(result["per_class"]):
        lines.append(f"{i}," + ("" if i in result["excluded"] else f"{v:.6f}"))
    lines.append(f"miou,{result['miou']:.6f}")
    return "\n".join(lines) + "\n"
