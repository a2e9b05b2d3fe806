"""Segmentation objectives with exact gradients with respect to the logits.

Three objectives share one result type:

* ``pixelwise_ce`` — softmax cross-entropy averaged over all pixels.
* ``blob_marginalized_ce`` — the same per-pixel terms regrouped so that the
  face set, the background set, and each occlusion blob carry equal weight
  regardless of pixel count.
* ``consensus_loss`` — per blob, a first term pulls the blob's *mean*
  predicted distribution toward the label (negative log-likelihood of the
  target class under the mean), and a second term penalizes the mean KL
  divergence from the blob mean to each pixel's distribution. Blobs are
  averaged uniformly.

Gradients are accumulated analytically in two passes: blob means first,
then backpropagation of both terms through the mean and through the
per-pixel softmax. ``gradcheck`` verifies any of them against central
finite differences.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import BlobConsistencyError, ConfigError, DimensionError, DivergenceError
from .tensorops import softmax_channels
from .validation import check_blob_map, check_label_map, check_logits


@dataclass(frozen=True)
class LossConfig:
    """Trade-off weights and numeric guards for the objectives."""

    alpha: float = 10.0
    beta: float = 5.0
    num_classes: int = 3
    epsilon: float = 1e-12

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0 or self.alpha + self.beta <= 0:
            raise ConfigError("alpha and beta must be nonnegative, not both zero")
        if not 0.0 < self.epsilon <= 1e-6:
            raise ConfigError("epsilon must lie in (0, 1e-6]")
        if self.num_classes < 2:
            raise ConfigError("need at least two classes")


@dataclass
class BlobStats:
    """Mean predicted distribution over one blob."""

    blob_id: int
    size: int
    mean_prob: np.ndarray


@dataclass
class LossResult:
    """Scalar objective, exact gradient, and a per-blob breakdown.

    ``blob_rows`` holds (blob_id, class_id, size, term1, term2) tuples; for
    the consensus objective these are the two weighted per-blob terms whose
    mean over blobs equals ``value``.
    """

    value: float
    grad: np.ndarray
    blob_rows: list = field(default_factory=list)

    def breakdown_csv(self):
        lines = ["blob_id,class,size,term1,term2"]
        for blob_id, cls, size, t1, t2 in self.blob_rows:
            lines.append(f"{blob_id},{cls},{size},{t1:.10g},{t2:.10g}")
        return "\n".join(lines) + "\n"


def _clipped_log(p, eps):
    return np.log(np.clip(p, eps, 1.0))


def pixelwise_ce(z, y, cfg=LossConfig()):
    """Mean softmax cross-entropy over all pixels, with exact gradient."""
    z = check_logits(z)
    k, h, w = z.shape
    y = check_label_map(y, num_classes=k, shape=(h, w))
    p = softmax_channels(z)
    m = h * w
    picked = p.reshape(k, m)[y.ravel(), np.arange(m)]
    value = float(-np.mean(_clipped_log(picked, cfg.epsilon)))
    onehot = np.zeros((k, m))
    onehot[y.ravel(), np.arange(m)] = 1.0
    grad = ((p.reshape(k, m) - onehot) / m).reshape(k, h, w)
    return LossResult(value=value, grad=grad)


def blob_marginalized_ce(z, y, blobs, cfg=LossConfig()):
    """Cross-entropy with the face set, background set, and every occlusion
    blob weighted equally.

    The face and background terms are plain means over their pixel sets; the
    occlusion term is the mean over occlusion blobs of each blob's inner mean,
    so a one-pixel blob counts as much as a hundred-pixel one.
    """
    z = check_logits(z)
    k, h, w = z.shape
    y = check_label_map(y, num_classes=k, shape=(h, w))
    c = check_blob_map(blobs, shape=(h, w))
    if np.any(y > 2):
        raise BlobConsistencyError(
            "labels beyond the background/face/occlusion convention"
        )
    _check_blob_purity(c, y)
    yf = y.ravel()
    cf = c.ravel()
    p = softmax_channels(z).reshape(k, h * w)
    ell = -_clipped_log(p[yf, np.arange(h * w)], cfg.epsilon)

    weights = np.zeros(h * w)
    rows = []
    for cls, blob_id in ((0, 0), (1, 1)):
        sel = yf == cls
        if np.any(sel):
            weights[sel] = 1.0 / sel.sum()
            rows.append((blob_id, cls, int(sel.sum()), float(ell[sel].mean()), 0.0))
    occ_sel = yf == 2
    occ_ids = np.unique(cf[occ_sel]) if np.any(occ_sel) else np.array([], dtype=int)
    if np.any(occ_sel) and np.any(occ_ids < 2):
        raise BlobConsistencyError("occlusion pixels must carry blob ids >= 2")
    n_occ = len(occ_ids)
    for blob_id in occ_ids:
        sel = cf == blob_id
        weights[sel] = 1.0 / (n_occ * sel.sum())
        rows.append(
            (int(blob_id), 2, int(sel.sum()), float(ell[sel].mean() / n_occ), 0.0)
        )
    value = float(sum(r[3] for r in rows))
    onehot = np.zeros((k, h * w))
    onehot[yf, np.arange(h * w)] = 1.0
    grad = ((p - onehot) * weights).reshape(k, h, w)
    return LossResult(value=value, grad=grad, blob_rows=rows)


def blob_mean_prob(p, pixel_mask, blob_id=0):
    """Arithmetic mean of the per-pixel class distributions inside a blob."""
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 3:
        raise DimensionError(f"probability tensor must be K x H x W, got {p.shape}")
    sel = np.asarray(pixel_mask, dtype=bool)
    if sel.shape != p.shape[1:]:
        raise DimensionError("pixel mask shape does not match the tensor")
    n = int(sel.sum())
    if n == 0:
        raise DimensionError("blob is empty")
    mean = p[:, sel].mean(axis=1)
    return BlobStats(blob_id=blob_id, size=n, mean_prob=mean)


def consensus_loss(z, y, blobs, cfg=LossConfig()):
    """Two-term blob-consensus objective with exact gradient.

    Per blob ``c`` with target class ``k*`` and mean distribution ``q``:

        term1 = alpha * (-log q[k*])
        term2 = beta / |c| * sum_s KL(q || p_s)

    The loss is the mean of ``term1 + term2`` over all blobs (background and
    face count as blobs like any occlusion component). Logs clamp their
    argument to [epsilon, 1]; the gradient accounts for every pixel's
    influence on its blob mean.
    """
    z = check_logits(z)
    k, h, w = z.shape
    y = check_label_map(y, num_classes=k, shape=(h, w))
    c = check_blob_map(blobs, shape=(h, w))
    p = softmax_channels(z).reshape(k, h * w)

    ids, inv = np.unique(c.ravel(), return_inverse=True)
    n_blobs = len(ids)
    counts = np.bincount(inv, minlength=n_blobs).astype(np.float64)
    kstar = _blob_classes(inv, y.ravel(), n_blobs, k)

    eps = cfg.epsilon
    sums = np.stack(
        [np.bincount(inv, weights=p[j], minlength=n_blobs) for j in range(k)], axis=1
    )
    phat = sums / counts[:, None]
    log_p = _clipped_log(p, eps)
    log_phat = _clipped_log(phat, eps)
    sum_log_p = np.stack(
        [np.bincount(inv, weights=log_p[j], minlength=n_blobs) for j in range(k)],
        axis=1,
    )

    arange_b = np.arange(n_blobs)
    term1 = cfg.alpha * (-log_phat[arange_b, kstar])
    # sum over pixels of KL(q || p_s) = sum_k q_k * (|c| log q_k - sum_s log p_sk);
    # clamp at zero to absorb float rounding of an exactly-zero divergence
    kl_sum = np.einsum("bk,bk->b", phat, counts[:, None] * log_phat - sum_log_p)
    kl_sum = np.maximum(kl_sum, 0.0)
    term2 = cfg.beta / counts * kl_sum
    value = float(np.sum(term1 + term2) / n_blobs)

    # gradient with respect to the blob means
    d_mean = np.zeros((n_blobs, k))
    target_prob = phat[arange_b, kstar]
    d_mean[arange_b, kstar] -= cfg.alpha * np.where(
        (target_prob > eps) & (target_prob < 1.0),
        1.0 / np.clip(target_prob, eps, None),
        0.0,
    )
    unclamped = (phat > eps) & (phat < 1.0)
    d_mean += (cfg.beta / counts)[:, None] * (
        counts[:, None] * (log_phat + unclamped) - sum_log_p
    )
    # distribute through the mean, add each pixel's direct term, then
    # backpropagate through the softmax
    d_p = (d_mean / counts[:, None])[inv].T
    direct = np.where(
        (p > eps) & (p < 1.0),
        -(cfg.beta / counts)[inv] * phat[inv].T / np.clip(p, eps, None),
        0.0,
    )
    d_p = (d_p + direct) / n_blobs
    pixel_dot = np.sum(d_p * p, axis=0, keepdims=True)
    grad = (p * (d_p - pixel_dot)).reshape(k, h, w)

    rows = [
        (int(ids[b]), int(kstar[b]), int(counts[b]), float(term1[b]), float(term2[b]))
        for b in range(n_blobs)
    ]
    return LossResult(value=value, grad=grad, blob_rows=rows)


def consensus_blob_stats(z, blobs):
    """BlobStats for every blob id present, in id order."""
    z = check_logits(z)
    c = check_blob_map(blobs, shape=z.shape[1:])
    p = softmax_channels(z)
    return [blob_mean_prob(p, c == blob_id, blob_id=int(blob_id)) for blob_id in np.unique(c)]


def _blob_classes(inv, y_flat, n_blobs, num_classes):
    """Target class per blob; raises when a blob spans several classes."""
    pair = np.unique(inv * num_classes + y_flat)
    if len(pair) != n_blobs:
        bad = np.bincount(pair // num_classes, minlength=n_blobs)
        culprit = int(np.argmax(bad))
        raise BlobConsistencyError(
            f"blob {culprit} spans {int(bad[culprit])} ground-truth classes"
        )
    return (pair % num_classes).astype(np.int64)


def _check_blob_purity(c, y):
    ids, inv = np.unique(c.ravel(), return_inverse=True)
    _blob_classes(inv, y.ravel(), len(ids), int(y.max()) + 1)


@dataclass
class GradCheckReport:
    """Outcome of comparing analytic gradients to central differences."""

    max_rel_error: float
    worst_coordinate: tuple
    tolerance: float
    failures: list

    @property
    def passed(self):
        return self.max_rel_error < self.tolerance


def gradcheck(loss_fn, z, step=1e-5, tolerance=1e-4, rel_floor=1e-2):
    """Compare ``loss_fn``'s analytic gradient to central finite differences.

    Per-coordinate relative error uses the denominator
    ``max(|analytic|, |numeric|, rel_floor * max_abs_gradient)`` so that
    coordinates far below the gradient's scale are judged against that scale
    instead of blowing up on rounding noise.
    """
    if not 1e-7 <= step <= 1e-3:
        raise ConfigError("finite-difference step must lie in [1e-7, 1e-3]")
    z = np.array(z, dtype=np.float64)
    analytic = loss_fn(z).grad
    numeric = np.zeros_like(z)
    flat = z.ravel()
    num_flat = numeric.ravel()
    for idx in range(flat.size):
        orig = flat[idx]
        flat[idx] = orig + step
        plus = loss_fn(z).value
        flat[idx] = orig - step
        minus = loss_fn(z).value
        flat[idx] = orig
        if not (np.isfinite(plus) and np.isfinite(minus)):
            raise DivergenceError("non-finite loss while probing the gradient")
        num_flat[idx] = (plus - minus) / (2.0 * step)
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)))
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), rel_floor * scale)
    if scale == 0.0:
        rel = np.abs(analytic - numeric)  # both zero fields: absolute
    else:
        rel = np.abs(analytic - numeric) / denom
    worst = np.unravel_index(int(np.argmax(rel)), z.shape)
    failures = [
        (tuple(int(i) for i in coord), float(rel[tuple(coord)]))
        for coord in np.argwhere(rel >= tolerance)
    ]
    return GradCheckReport(
        max_rel_error=float(rel.max()),
        worst_coordinate=tuple(int(i) for i in worst),
        tolerance=tolerance,
        failures=failures,
    )
