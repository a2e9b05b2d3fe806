"""Segmentation scores: confusion counts, IoU/accuracy/recall/F1,
super-pixel accuracy, and the connected-component sparsity measure.

Per-class scores are NaN when the class is absent from both prediction and
ground truth; unweighted means skip those entries. Confusion matrices add up
across batches, so parallel evaluation is exact.
"""

import numpy as np

from .components import connected_components
from .errors import DimensionError
from .validation import check_label_map

CSV_COLUMNS = (
    "method",
    "split",
    "iou_background",
    "iou_face",
    "iou_occlusion",
    "iou_mean",
    "pixel_accuracy",
    "recall_background",
    "recall_face",
    "recall_occlusion",
    "recall_mean",
    "f1_background",
    "f1_face",
    "f1_occlusion",
    "f1_mean",
    "superpixel_accuracy",
    "sparsity",
)


def confusion(pred, gt, num_classes, region=None):
    """K x K counts with rows = ground truth, columns = prediction.

    ``region`` optionally restricts the tally to a mask of pixels (scoring
    inside a provided face box, for example).
    """
    pred = check_label_map(pred, num_classes=num_classes)
    gt = check_label_map(gt, num_classes=num_classes, shape=pred.shape)
    if region is not None:
        region = np.asarray(region, dtype=bool)
        if region.shape != pred.shape:
            raise DimensionError("evaluation region shape mismatch")
        pred = pred[region]
        gt = gt[region]
    joint = gt.ravel() * num_classes + pred.ravel()
    counts = np.bincount(joint, minlength=num_classes * num_classes)
    return counts.reshape(num_classes, num_classes)


def _defined(cm):
    # class participates if it appears in ground truth or prediction
    return (cm.sum(axis=1) + cm.sum(axis=0)) > 0


def _safe_div(num, den):
    out = np.full(np.shape(num), np.nan, dtype=np.float64)
    np.divide(num, den, out=out, where=np.asarray(den) > 0)
    return out


def iou(cm):
    cm = np.asarray(cm, dtype=np.float64)
    tp = np.diag(cm)
    denom = cm.sum(axis=1) + cm.sum(axis=0) - tp
    per_class = _safe_div(tp, denom)
    per_class[~_defined(cm)] = np.nan
    return per_class


def recall(cm):
    cm = np.asarray(cm, dtype=np.float64)
    per_class = _safe_div(np.diag(cm), cm.sum(axis=1))
    per_class[~_defined(cm) | (cm.sum(axis=1) == 0)] = np.nan
    return per_class


def precision(cm):
    cm = np.asarray(cm, dtype=np.float64)
    per_class = _safe_div(np.diag(cm), cm.sum(axis=0))
    per_class[~_defined(cm) | (cm.sum(axis=0) == 0)] = np.nan
    return per_class


def f1(cm):
    p = precision(cm)
    r = recall(cm)
    with np.errstate(invalid="ignore"):
        out = _safe_div(2.0 * p * r, p + r)
    # a defined class with zero precision or recall still scores 0
    defined = _defined(cm)
    zero = defined & (np.nan_to_num(p) + np.nan_to_num(r) == 0)
    out[zero] = 0.0
    out[~defined] = np.nan
    return out


def pixel_accuracy(cm):
    cm = np.asarray(cm, dtype=np.float64)
    total = cm.sum()
    if total == 0:
        raise DimensionError("empty confusion matrix")
    return float(np.trace(cm) / total)


def mean_score(per_class):
    """Unweighted mean over defined (non-NaN) classes."""
    per_class = np.asarray(per_class, dtype=np.float64)
    if np.all(np.isnan(per_class)):
        return float("nan")
    return float(np.nanmean(per_class))


def merge_two_class(label_map):
    """Collapse occlusion and background into a single non-face class.

    Face keeps id 1; everything else becomes 0, giving 2-class scoring
    against binary face/non-face annotations.
    """
    y = check_label_map(label_map)
    return (y == 1).astype(np.int64)


def superpixel_accuracy(pred, region_gt, superpixels):
    """Fraction of regions whose mode predicted label matches the region
    ground truth. Ties inside a region break to the smallest class id."""
    pred = check_label_map(pred)
    sp = check_label_map(superpixels, shape=pred.shape)
    region_gt = np.asarray(region_gt)
    n_regions = len(region_gt)
    ids = np.unique(sp)
    if ids.min() < 0 or ids.max() >= n_regions or len(ids) != n_regions:
        raise DimensionError("super-pixel ids must be dense 0..R-1, all nonempty")
    correct = 0
    flat_sp = sp.ravel()
    flat_pred = pred.ravel()
    order = np.argsort(flat_sp, kind="stable")
    boundaries = np.searchsorted(flat_sp[order], np.arange(n_regions + 1))
    for r in range(n_regions):
        chunk = flat_pred[order[boundaries[r] : boundaries[r + 1]]]
        mode = np.argmax(np.bincount(chunk))
        if mode == region_gt[r]:
            correct += 1
    return correct / n_regions


def count_components(label_map, background=0):
    """Total 8-connected components over non-background classes."""
    y = check_label_map(label_map)
    total = 0
    for cls in np.unique(y):
        if cls == background:
            continue
        _, n = connected_components((y == cls).astype(np.uint8))
        total += n
    return total


def sparsity(preds, gts):
    """Mean absolute difference in component counts across mask pairs."""
    preds = list(preds)
    gts = list(gts)
    if len(preds) != len(gts) or not preds:
        raise DimensionError("need equal, nonempty batches of mask pairs")
    deltas = [
        abs(count_components(p) - count_components(g)) for p, g in zip(preds, gts)
    ]
    return float(np.mean(deltas))


def scores_row(method, split, cm, sparsity_value=None, sp_accuracy=None):
    """One CSV row following ``CSV_COLUMNS`` (blank for unavailable scores)."""
    iou_c = iou(cm)
    rec_c = recall(cm)
    f1_c = f1(cm)
    k = cm.shape[0]

    def fmt(v):
        return "" if v is None or (isinstance(v, float) and np.isnan(v)) else f"{v:.10g}"

    def three(per_class):
        vals = list(per_class) + [float("nan")] * (3 - k)
        return [fmt(v) for v in vals[:3]]

    cells = [method, split]
    cells += three(iou_c) + [fmt(mean_score(iou_c)), fmt(pixel_accuracy(cm))]
    cells += three(rec_c) + [fmt(mean_score(rec_c))]
    cells += three(f1_c) + [fmt(mean_score(f1_c))]
    cells += [fmt(sp_accuracy), fmt(sparsity_value)]
    return ",".join(cells)


def scores_csv(rows):
    return "\n".join([",".join(CSV_COLUMNS)] + list(rows)) + "\n"
