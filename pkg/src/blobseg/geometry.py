"""Perspective projection of the 3D face contour and convex-hull rasterization.

The full-face mask is the rasterized convex hull of 64 projected contour
vertices (jawline plus forehead). Pixel ``(i, j)`` probes the point
``(j + 0.5, i + 0.5)``; points exactly on a hull edge count as inside, which
over-covers the face slightly and is the conservative choice for the
downstream occlusion amplification.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInputError, DimensionError, FormatError

CONTOUR_VERTEX_COUNT = 64


@dataclass
class Pose:
    """Camera intrinsics plus a rigid [R|t] extrinsic block."""

    intrinsics: np.ndarray  # 3x3
    extrinsics: np.ndarray  # 3x4
    rigid: bool = True

    def __post_init__(self):
        self.intrinsics = np.asarray(self.intrinsics, dtype=np.float64)
        self.extrinsics = np.asarray(self.extrinsics, dtype=np.float64)
        if self.intrinsics.shape != (3, 3):
            raise DimensionError("intrinsics must be 3x3")
        if self.extrinsics.shape != (3, 4):
            raise DimensionError("extrinsics must be 3x4")
        if abs(np.linalg.det(self.intrinsics)) < 1e-12:
            raise DegenerateInputError("intrinsics matrix is singular")
        if self.rigid:
            det = np.linalg.det(self.extrinsics[:, :3])
            if abs(det - 1.0) > 1e-6:
                raise DegenerateInputError(
                    f"rotation block determinant {det:.8f} is not +1"
                )

    @property
    def matrix(self):
        return self.intrinsics @ self.extrinsics


@dataclass
class Hull2D:
    """Strictly convex polygon: CCW vertex loop plus inward half-planes.

    Each half-plane row (a, b, c) marks the inside as a*x + b*y - c >= 0.
    """

    vertices: np.ndarray
    half_planes: np.ndarray = field(init=False)

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
            raise DimensionError("hull needs at least 3 two-column vertices")
        self.vertices = v
        d = np.roll(v, -1, axis=0) - v
        a = -d[:, 1]
        b = d[:, 0]
        c = a * v[:, 0] + b * v[:, 1]
        self.half_planes = np.column_stack([a, b, c])

    def contains(self, points, tol=0.0):
        """Half-plane test for an (..., 2) array of points; boundary counts.

        ``tol`` loosens the inequality for callers probing points that are
        themselves hull vertices, where rounding can push the edge value a
        few ulp negative.
        """
        pts = np.asarray(points, dtype=np.float64)
        x, y = pts[..., 0], pts[..., 1]
        a, b, c = self.half_planes.T
        vals = (
            a.reshape((-1,) + (1,) * x.ndim) * x
            + b.reshape((-1,) + (1,) * x.ndim) * y
            - c.reshape((-1,) + (1,) * x.ndim)
        )
        return np.all(vals >= -tol, axis=0)


def project_points(pose, points3d):
    """Project 3D points through K[R|t] with homogeneous division.

    Raises if any point has near-zero or negative depth (w < 1e-9).
    """
    pts = np.asarray(points3d, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise DimensionError("points must be N x 3")
    homog = np.hstack([pts, np.ones((len(pts), 1))])
    uvw = homog @ pose.matrix.T
    w = uvw[:, 2]
    if np.any(w < 1e-9):
        raise DegenerateInputError("projected point has non-positive or tiny depth")
    return uvw[:, :2] / w[:, None]


def convex_hull(points):
    """Monotone-chain convex hull of 2D points, returned as a CCW Hull2D.

    Strict turns only: collinear points never appear as hull vertices, so the
    loop is strictly convex. Raises on fewer than 3 distinct non-collinear
    points.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise DimensionError("points must be N x 2")
    uniq = np.unique(pts, axis=0)  # lexicographic sort on (x, y)
    if len(uniq) < 3:
        raise DegenerateInputError("need at least 3 distinct points")

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    def half(chain_pts):
        chain = []
        for p in chain_pts:
            while len(chain) > 1 and cross(chain[-2], chain[-1], p) <= 0:
                chain.pop()
            chain.append(p)
        return chain

    lower = half(uniq)
    upper = half(uniq[::-1])
    loop = lower[:-1] + upper[:-1]
    if len(loop) < 3:
        raise DegenerateInputError("points are collinear")
    return Hull2D(np.array(loop))


def rasterize_hull(hull, height, width):
    """Binary H x W mask of pixels whose centers fall inside the hull."""
    if height < 1 or width < 1:
        raise DimensionError("raster extents must be >= 1")
    xs = np.arange(width, dtype=np.float64) + 0.5
    ys = np.arange(height, dtype=np.float64) + 0.5
    gx, gy = np.meshgrid(xs, ys)
    inside = hull.contains(np.stack([gx, gy], axis=-1))
    return inside.astype(np.uint8)


def load_pose_file(path):
    """Parse the plain-text pose + contour file.

    Layout: 12 extrinsic reals ([R|t], row-major), 9 intrinsic reals (K,
    row-major), then 64 x 3 contour vertex reals, all whitespace-separated.
    Returns ``(Pose, vertices)``.
    """
    with open(path, "r", encoding="ascii") as fh:
        tokens = fh.read().split()
    expected = 12 + 9 + CONTOUR_VERTEX_COUNT * 3
    if len(tokens) != expected:
        raise FormatError(
            f"pose file must hold {expected} reals, found {len(tokens)}"
        )
    try:
        vals = np.array([float(t) for t in tokens], dtype=np.float64)
    except ValueError as exc:
        raise FormatError("pose file has a non-numeric token") from exc
    if not np.all(np.isfinite(vals)):
        raise FormatError("pose file has non-finite values")
    extr = vals[:12].reshape(3, 4)
    intr = vals[12:21].reshape(3, 3)
    verts = vals[21:].reshape(CONTOUR_VERTEX_COUNT, 3)
    return Pose(intrinsics=intr, extrinsics=extr), verts


def full_face_mask(pose, vertices, height, width):
    """Rasterized convex hull of the projected face contour."""
    verts = np.asarray(vertices, dtype=np.float64)
    if verts.shape != (CONTOUR_VERTEX_COUNT, 3):
        raise DimensionError(
            f"contour must be {CONTOUR_VERTEX_COUNT} x 3, got {verts.shape}"
        )
    if not np.all(np.isfinite(verts)):
        raise DimensionError("contour vertices must be finite")
    projected = project_points(pose, verts)
    return rasterize_hull(convex_hull(projected), height, width)
