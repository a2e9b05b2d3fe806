"""Connected-component labeling and blob-map construction.

Components are 8-connected by default, which groups diagonally touching
occluder fragments. Ids are assigned in row-major order of each component's
first pixel, so label maps are reproducible byte for byte.
"""

import numpy as np

from .errors import DimensionError
from .validation import check_binary_mask, check_label_map


def _find(parent, x):
    root = x
    while parent[root] != root:
        root = parent[root]
    while parent[x] != root:  # path compression
        parent[x], x = root, parent[x]
    return root


def connected_components(mask, connectivity=8):
    """Label connected regions of ones; zeros keep id 0.

    Uses row-run union-find: consecutive ones in a row form a run, runs in
    adjacent rows are united when they touch under the chosen connectivity.
    Returns ``(labels, n_components)`` with component ids 1..n assigned in
    row-major order of first-encountered pixel.
    """
    m = check_binary_mask(mask)
    if connectivity not in (4, 8):
        raise DimensionError("connectivity must be 4 or 8")
    h, w = m.shape
    labels = np.zeros((h, w), dtype=np.int64)

    runs = []  # (row, start, end) in row-major order
    row_spans = []  # (first_run_index, last_run_index_exclusive) per row
    padded = np.zeros(w + 2, dtype=np.int8)
    for i in range(h):
        padded[1:-1] = m[i]
        d = np.diff(padded)
        starts = np.flatnonzero(d == 1)
        ends = np.flatnonzero(d == -1)
        row_spans.append((len(runs), len(runs) + len(starts)))
        runs.extend((i, int(s), int(e)) for s, e in zip(starts, ends))

    parent = list(range(len(runs)))
    reach = 1 if connectivity == 8 else 0
    for i in range(1, h):
        a, a_end = row_spans[i - 1]
        b, b_end = row_spans[i]
        while a < a_end and b < b_end:
            ra, rb = runs[a], runs[b]
            if ra[1] < rb[2] + reach and rb[1] < ra[2] + reach:
                root_a, root_b = _find(parent, a), _find(parent, b)
                if root_a != root_b:
                    parent[max(root_a, root_b)] = min(root_a, root_b)
            # advance whichever run ends first; it cannot touch further runs
            if ra[2] <= rb[2]:
                a += 1
            else:
                b += 1

    remap = {}
    for k, (i, start, end) in enumerate(runs):
        root = _find(parent, k)
        if root not in remap:
            remap[root] = len(remap) + 1
        labels[i, start:end] = remap[root]
    return labels, len(remap)


def synthesize_labels(face_mask, refined_residual):
    """Merge the face mask with occlusion components into labels and blobs.

    Blob ids: background 0, face 1, the i-th occlusion component 1 + i.
    Labels follow the blob-id case table: 0 -> background, 1 -> face,
    >= 2 -> occlusion. An empty residual is valid and yields no occlusion
    ids.
    """
    face = check_binary_mask(face_mask, name="face mask")
    residual = check_binary_mask(refined_residual, name="refined residual")
    if face.shape != residual.shape:
        raise DimensionError(f"mask shapes differ: {face.shape} vs {residual.shape}")
    occ_labels, _ = connected_components(residual)
    blobs = np.zeros(face.shape, dtype=np.int64)
    blobs[(face == 1) & (occ_labels == 0)] = 1
    occupied = occ_labels > 0
    blobs[occupied] = occ_labels[occupied] + 1
    labels = np.minimum(blobs, 2).astype(np.int64)
    return labels, blobs


def blobs_from_labels(label_map, split_components=False):
    """Derive a blob map directly from an annotated class-label map.

    With ``split_components`` off, every class present becomes one blob.
    With it on, every 8-connected component of every class becomes its own
    blob (the fine-grained variant used when annotated masks replace the
    morphology pipeline). Ids follow class order, then row-major first-pixel
    order within a class.
    """
    y = check_label_map(label_map)
    blobs = np.zeros(y.shape, dtype=np.int64)
    next_id = 0
    for cls in np.unique(y):
        region = (y == cls).astype(np.uint8)
        if split_components:
            comp, n = connected_components(region)
            sel = region == 1
            blobs[sel] = comp[sel] + next_id - 1
            next_id += n
        else:
            blobs[region == 1] = next_id
            next_id += 1
    return blobs


def blob_sizes(blob_map):
    """Pixel count per present blob id, as a dict."""
    ids, counts = np.unique(np.asarray(blob_map), return_counts=True)
    return dict(zip(ids.tolist(), counts.tolist()))
