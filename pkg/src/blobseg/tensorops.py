"""Dense tensor primitives: stable channel softmax and hard predictions.

Tensors are plain float64 numpy arrays in K x H x W layout (channels first,
row-major spatial). All public operations return finite values.
"""

import numpy as np

from .errors import DimensionError
from .validation import check_finite, check_logits


def softmax_channels(z):
    """Channel-wise softmax of a K x H x W logit tensor.

    The per-pixel maximum is subtracted before exponentiation, so logits with
    magnitude up to ~700 cannot overflow. Output columns sum to one to within
    1e-12 and every entry is strictly positive.
    """
    z = check_logits(z)
    shifted = z - z.max(axis=0, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=0, keepdims=True)
    return p


def hard_predict(p):
    """Per-pixel argmax over the class axis of a probability tensor.

    Ties break to the smallest class index, so the result is deterministic
    under any ordering-preserving rescaling of ``p``.
    """
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 3:
        raise DimensionError(f"probability tensor must be K x H x W, got {p.shape}")
    check_finite(p, "probability tensor")
    return np.argmax(p, axis=0).astype(np.int64)
