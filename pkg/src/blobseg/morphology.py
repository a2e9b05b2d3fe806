"""Binary morphology for occlusion-residual refinement.

The residual between the full-face mask and the teacher's segmentation is
cleaned by two erosions with a tall 25x7 rectangle followed by one dilation
with a 45x45 discrete ellipse. Pixels outside the image count as 0 for both
operators.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .validation import check_binary_mask


@dataclass(frozen=True)
class StructuringElement:
    """Neighborhood shape swept over a mask.

    ``offsets`` are (di, dj) displacements relative to the anchor, which sits
    at the center cell and must itself be active.
    """

    height: int
    width: int
    offsets: tuple

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise DimensionError("structuring element extents must be >= 1")
        rh, rw = self.height // 2, self.width // 2
        offs = tuple(sorted(set(self.offsets)))
        if (0, 0) not in offs:
            raise DimensionError("structuring element anchor must be active")
        for di, dj in offs:
            if not (-rh <= di <= self.height - 1 - rh and -rw <= dj <= self.width - 1 - rw):
                raise DimensionError(f"offset {(di, dj)} outside the element box")
        object.__setattr__(self, "offsets", offs)

    def reflected(self):
        return StructuringElement(
            self.height, self.width, tuple((-di, -dj) for di, dj in self.offsets)
        )


def rect_element(height, width):
    """Fully active height x width rectangle (odd extents, centered anchor)."""
    rh, rw = height // 2, width // 2
    offsets = tuple(
        (di, dj) for di in range(-rh, height - rh) for dj in range(-rw, width - rw)
    )
    return StructuringElement(height, width, offsets)


def ellipse_element(size=45):
    """Discrete ellipse inscribed in a size x size box.

    Active offsets satisfy (di/r)^2 + (dj/r)^2 <= 1 with r = size // 2.
    """
    r = size // 2
    offsets = tuple(
        (di, dj)
        for di in range(-r, size - r)
        for dj in range(-r, size - r)
        if (di / r) ** 2 + (dj / r) ** 2 <= 1.0
    )
    return StructuringElement(size, size, offsets)


def _shifted_window(m, di, dj):
    """View of ``m`` shifted by (-di, -dj) with zeros where it leaves the image."""
    h, w = m.shape
    out = np.zeros_like(m)
    src_i = slice(max(di, 0), h + min(di, 0))
    src_j = slice(max(dj, 0), w + min(dj, 0))
    dst_i = slice(max(-di, 0), h + min(-di, 0))
    dst_j = slice(max(-dj, 0), w + min(-dj, 0))
    out[dst_i, dst_j] = m[src_i, src_j]
    return out


def erode(mask, element):
    """out(s) = 1 iff every active offset anchored at s lands on a 1."""
    m = check_binary_mask(mask)
    out = np.ones_like(m)
    for di, dj in element.offsets:
        out &= _shifted_window(m, di, dj)
    return out


def dilate(mask, element):
    """out(s) = 1 iff any active reflected offset anchored at s hits a 1."""
    m = check_binary_mask(mask)
    out = np.zeros_like(m)
    for di, dj in element.reflected().offsets:
        out |= _shifted_window(m, di, dj)
    return out


def occlusion_residual(full_mask, seg_mask):
    """Pixels claimed by the full-face hull but missing from the segmentation.

    Computes max(0, full - seg) per pixel; the result stays in {0, 1}.
    """
    full = check_binary_mask(full_mask, name="full-face mask")
    seg = check_binary_mask(seg_mask, name="segmentation mask")
    if full.shape != seg.shape:
        raise DimensionError(
            f"mask shapes differ: {full.shape} vs {seg.shape}"
        )
    return np.maximum(full.astype(np.int8) - seg.astype(np.int8), 0).astype(np.uint8)


def refine_residual(residual, rect_size=(25, 7), ellipse_size=45):
    """Two rectangle erosions then one elliptical dilation.

    Kills thin spurious residual slivers and then amplifies the surviving
    occluder cores over the face region.
    """
    rect = rect_element(*rect_size)
    ell = ellipse_element(ellipse_size)
    return dilate(erode(erode(residual, rect), rect), ell)
