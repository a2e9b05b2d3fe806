"""Input validation helpers shared by the estimators and the functional API."""

import numpy as np

from .errors import DimensionError


def check_finite(a, name="array"):
    a = np.asarray(a)
    if not np.all(np.isfinite(a)):
        raise DimensionError(f"{name} contains NaN or Inf values")
    return a


def check_logits(z, min_classes=2):
    """Validate a K x H x W logit tensor and return it as float64."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 3:
        raise DimensionError(f"logit tensor must be K x H x W, got shape {z.shape}")
    if z.shape[0] < min_classes:
        raise DimensionError(
            f"logit tensor needs at least {min_classes} classes, got {z.shape[0]}"
        )
    return check_finite(z, "logit tensor")


def check_probabilities(p, tol=1e-9):
    """Validate a K x H x W probability tensor (channel columns sum to one)."""
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 3:
        raise DimensionError(f"probability tensor must be K x H x W, got {p.shape}")
    check_finite(p, "probability tensor")
    if np.any(p < 0.0):
        raise DimensionError("probability tensor has negative entries")
    sums = p.sum(axis=0)
    if np.max(np.abs(sums - 1.0)) > tol:
        raise DimensionError("probability columns do not sum to one")
    return p


def check_label_map(y, num_classes=None, shape=None):
    """Validate an H x W integer label map."""
    y = np.asarray(y)
    if y.ndim != 2:
        raise DimensionError(f"label map must be H x W, got shape {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(y == np.round(y)):
            raise DimensionError("label map has non-integer values")
        y = y.astype(np.int64)
    if np.any(y < 0):
        raise DimensionError("label map has negative class ids")
    if num_classes is not None and np.any(y >= num_classes):
        raise DimensionError(f"label map has class ids >= {num_classes}")
    if shape is not None and y.shape != tuple(shape):
        raise DimensionError(f"label map shape {y.shape} != expected {tuple(shape)}")
    return y.astype(np.int64, copy=False)


def check_binary_mask(m, shape=None, name="mask"):
    """Validate an H x W mask with values exactly in {0, 1}."""
    m = np.asarray(m)
    if m.ndim != 2:
        raise DimensionError(f"{name} must be H x W, got shape {m.shape}")
    if m.dtype == bool:
        m = m.astype(np.uint8)
    vals = np.unique(m)
    if not np.all(np.isin(vals, (0, 1))):
        raise DimensionError(f"{name} must take values in {{0, 1}}")
    if shape is not None and m.shape != tuple(shape):
        raise DimensionError(f"{name} shape {m.shape} != expected {tuple(shape)}")
    return m.astype(np.uint8, copy=False)


def check_blob_map(c, shape=None):
    """Validate an H x W blob-id map (nonnegative integer ids)."""
    c = np.asarray(c)
    if c.ndim != 2:
        raise DimensionError(f"blob map must be H x W, got shape {c.shape}")
    if not np.issubdtype(c.dtype, np.integer):
        if not np.all(c == np.round(c)):
            raise DimensionError("blob map has non-integer ids")
        c = c.astype(np.int64)
    if np.any(c < 0):
        raise DimensionError("blob map has negative ids")
    if shape is not None and c.shape != tuple(shape):
        raise DimensionError(f"blob map shape {c.shape} != expected {tuple(shape)}")
    return c.astype(np.int64, copy=False)


def check_image_batch(X):
    """Validate an N x 3 x H x W image batch and return it as float64."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 3:
        X = X[None]
    if X.ndim != 4 or X.shape[1] != 3:
        raise DimensionError(f"image batch must be N x 3 x H x W, got {X.shape}")
    return check_finite(X, "image batch")


def check_label_batch(y, num_classes, image_shape=None):
    """Validate an N x H x W label batch matching an image batch."""
    y = np.asarray(y)
    if y.ndim == 2:
        y = y[None]
    if y.ndim != 3:
        raise DimensionError(f"label batch must be N x H x W, got {y.shape}")
    if image_shape is not None:
        n, _, h, w = image_shape
        if y.shape != (n, h, w):
            raise DimensionError(
                f"label batch shape {y.shape} does not match images {(n, h, w)}"
            )
    return np.stack([check_label_map(yi, num_classes) for yi in y])
