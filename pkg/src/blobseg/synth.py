"""Synthetic occlusion-over-face scenes for desk-scale experiments.

Each scene is one textured face ellipse on a noisy background with up to a
few occluder shapes (rectangles, ellipses, thick bars) overlapping it.
Occluder pixels count as occlusion only where they cover the face; the rest
of an occluder blends into the background class, so per-pixel color alone
cannot resolve the label near the face boundary — context has to.

Labels and blob maps are consistent by construction: background blob 0,
face blob 1, occlusion components 2 and up.
"""

import hashlib
import os
from dataclasses import dataclass

import numpy as np

from .components import connected_components
from .errors import DimensionError, FormatError
from .tensorio import read_int_tensor, read_pgm, read_tensor, write_int_tensor, write_pgm, write_tensor

SPLITS = ("train", "val", "test")


@dataclass
class SyntheticScene:
    image: np.ndarray  # 3 x H x W, values in [0, 1]
    labels: np.ndarray  # H x W in {0, 1, 2}
    blobs: np.ndarray  # H x W blob ids
    params: dict


def _ellipse_mask(height, width, cy, cx, ry, rx, angle=0.0):
    ys, xs = np.mgrid[0:height, 0:width]
    y = ys + 0.5 - cy
    x = xs + 0.5 - cx
    if angle:
        c, s = np.cos(angle), np.sin(angle)
        x, y = c * x + s * y, -s * x + c * y
    return ((x / rx) ** 2 + (y / ry) ** 2 <= 1.0).astype(np.uint8)


def _rect_mask(height, width, cy, cx, hh, hw, angle=0.0):
    ys, xs = np.mgrid[0:height, 0:width]
    y = ys + 0.5 - cy
    x = xs + 0.5 - cx
    if angle:
        c, s = np.cos(angle), np.sin(angle)
        x, y = c * x + s * y, -s * x + c * y
    return ((np.abs(x) <= hw) & (np.abs(y) <= hh)).astype(np.uint8)


def compose_scene(face_mask, occluder_masks):
    """Labels and blobs from a face mask plus a list of occluder masks.

    Occlusion is the union of occluders clipped to the face; its 8-connected
    components become blobs 2..N in row-major order.
    """
    face = np.asarray(face_mask, dtype=np.uint8)
    occlusion = np.zeros_like(face)
    for m in occluder_masks:
        if m.shape != face.shape:
            raise DimensionError("occluder mask shape differs from face mask")
        occlusion |= np.asarray(m, dtype=np.uint8) & face
    comp, _ = connected_components(occlusion)
    labels = np.zeros(face.shape, dtype=np.int64)
    labels[face == 1] = 1
    labels[comp > 0] = 2
    blobs = np.zeros(face.shape, dtype=np.int64)
    blobs[(face == 1) & (comp == 0)] = 1
    blobs[comp > 0] = comp[comp > 0] + 1
    return labels, blobs


def generate_scene(rng, size=64, max_occluders=3, noise=0.18, num_occluders=None):
    """One random scene. ``num_occluders`` pins the count for fixtures."""
    h = w = int(size)
    cy = h / 2 + rng.uniform(-0.06, 0.06) * h
    cx = w / 2 + rng.uniform(-0.06, 0.06) * w
    ry = rng.uniform(0.30, 0.40) * h
    rx = rng.uniform(0.24, 0.34) * w
    face = _ellipse_mask(h, w, cy, cx, ry, rx)

    count = int(rng.integers(0, max_occluders + 1)) if num_occluders is None else int(num_occluders)
    occluders = []
    occ_colors = []
    for _ in range(count):
        # anchor inside the face so every occluder really occludes
        oy = cy + rng.uniform(-0.6, 0.6) * ry
        ox = cx + rng.uniform(-0.6, 0.6) * rx
        kind = rng.integers(0, 3)
        angle = rng.uniform(0.0, np.pi)
        if kind == 0:
            m = _rect_mask(h, w, oy, ox, rng.uniform(0.08, 0.18) * h,
                           rng.uniform(0.08, 0.18) * w, angle)
        elif kind == 1:
            m = _ellipse_mask(h, w, oy, ox, rng.uniform(0.08, 0.20) * h,
                              rng.uniform(0.08, 0.20) * w, angle)
        else:
            # long thin bar reaching beyond the face, like a hand or pole
            m = _rect_mask(h, w, oy, ox, rng.uniform(0.05, 0.09) * h,
                           rng.uniform(0.35, 0.55) * w, angle)
        occluders.append(m)
        # palette drifts toward face color so appearance alone is ambiguous
        base = np.array([0.35, 0.45, 0.35]) + rng.uniform(-0.1, 0.1, size=3)
        mix = rng.uniform(0.0, 0.55)
        occ_colors.append((1 - mix) * base + mix * np.array([0.72, 0.57, 0.47]))

    labels, blobs = compose_scene(face, occluders)

    image = np.empty((3, h, w))
    bg_color = np.array([0.22, 0.24, 0.28]) + rng.uniform(-0.05, 0.05, size=3)
    image[:] = bg_color[:, None, None]
    face_color = np.array([0.72, 0.57, 0.47]) + rng.uniform(-0.06, 0.06, size=3)
    ys, xs = np.mgrid[0:h, 0:w]
    texture = 0.05 * np.sin(2 * np.pi * xs / rng.uniform(6, 14)) * np.sin(
        2 * np.pi * ys / rng.uniform(6, 14)
    )
    face_patch = face_color[:, None, None] + texture[None]
    image = np.where(face[None] == 1, face_patch, image)
    for m, color in zip(occluders, occ_colors):
        image = np.where(m[None] == 1, color[:, None, None], image)
    image += rng.normal(0.0, noise, size=image.shape)
    image = np.clip(image, 0.0, 1.0)

    params = {
        "face_center": (cy, cx),
        "face_radii": (ry, rx),
        "num_occluders": count,
        "noise": noise,
    }
    return SyntheticScene(image=image, labels=labels, blobs=blobs, params=params)


def scene_paths(directory, split, index):
    stem = os.path.join(directory, split, f"scene_{index:05d}")
    return stem + ".img.bin", stem + ".lab.pgm", stem + ".blob.bin"


def write_dataset(directory, config):
    """Generate and store the train/val/test splits; returns file list.

    Deterministic given the config seed: identical seeds reproduce
    byte-identical files.
    """
    rng = np.random.default_rng(config.seed)
    counts = {
        "train": config.train_size,
        "val": config.val_size,
        "test": config.test_size,
    }
    written = []
    for split in SPLITS:
        os.makedirs(os.path.join(directory, split), exist_ok=True)
        for i in range(counts[split]):
            scene = generate_scene(
                rng,
                size=config.image_size,
                max_occluders=config.max_occluders,
                noise=config.noise,
            )
            img_path, lab_path, blob_path = scene_paths(directory, split, i)
            write_tensor(scene.image, img_path)
            write_pgm(scene.labels, lab_path)
            write_int_tensor(scene.blobs, blob_path)
            written += [img_path, lab_path, blob_path]
    meta = config.to_text()
    meta_path = os.path.join(directory, "meta.txt")
    with open(meta_path, "w", encoding="ascii") as fh:
        fh.write(meta)
    written.append(meta_path)
    return written


def load_split(directory, split):
    """Load one split as (images N x 3 x H x W, labels N x H x W, blobs)."""
    split_dir = os.path.join(directory, split)
    if not os.path.isdir(split_dir):
        raise FormatError(f"dataset split directory missing: {split_dir}")
    images, labels, blobs = [], [], []
    index = 0
    while True:
        img_path, lab_path, blob_path = scene_paths(directory, split, index)
        if not os.path.exists(img_path):
            break
        images.append(read_tensor(img_path))
        labels.append(read_pgm(lab_path))
        blobs.append(read_int_tensor(blob_path))
        index += 1
    if not images:
        raise FormatError(f"no scenes found under {split_dir}")
    return np.stack(images), np.stack(labels), np.stack(blobs)


def file_digest(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()
