"""Weak-perspective camera and mesh-surface landmark extraction.

Projection drops z, then applies uniform pixel scale and a 2D translation.
Image coordinates follow the pixel convention: y grows downward, which is
what the bounding-box expansion percentages are defined against.

Landmarks live on the mesh surface as (triangle, barycentric) anchors.
Static landmarks are fixed anchors; contour landmarks carry a per-yaw
trajectory table and slide along the silhouette as the head turns.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass(frozen=True, eq=False)
class CameraParams:
    """Weak-perspective camera: pixels-per-model-unit scale plus translation."""

    scale: float
    tx: float
    ty: float

    def __post_init__(self):
        if not self.scale > 0.0:
            raise ValueError(f"camera scale must be positive, got {self.scale}")


@dataclass(frozen=True)
class CameraAnchor:
    """Per-observation reference camera derived from the detected face box."""

    scale: float
    cx: float
    cy: float


@dataclass(frozen=True)
class CameraLink:
    """Smooth map from raw regressed camera values to valid camera params.

    The regressor's features are face-box normalized, so absolute image
    placement is not recoverable from them; the link therefore anchors the
    camera at the observation's own box (raw zero drops the mean head into
    the detected box) and expresses corrections in box-relative units.  The
    exponential on the scale channel keeps the projected scale positive for
    any raw value.
    """

    model_extent: float = 180.0   # model units spanned by the landmark box
    t_unit: float = 0.5           # raw translation unit, fraction of the box
    fallback_scale: float = 2.0   # anchor when no landmark is confident
    fallback_cx: float = 256.0
    fallback_cy: float = 256.0

    def anchor(self, landmarks: "Landmarks2D") -> CameraAnchor:
        # the tight box of the confident landmarks, matching the tight
        # landmark box the model_extent was measured on
        pts = landmarks.positions[landmarks.confidence > 0]
        if pts.shape[0] == 0:
            return CameraAnchor(self.fallback_scale, self.fallback_cx,
                                self.fallback_cy)
        lo = pts.min(axis=0)
        hi = pts.max(axis=0)
        extent = float(max(hi[0] - lo[0], hi[1] - lo[1]))
        center = (lo + hi) / 2.0
        if extent <= 1e-9:
            return CameraAnchor(self.fallback_scale,
                                float(center[0]), float(center[1]))
        return CameraAnchor(extent / self.model_extent,
                            float(center[0]), float(center[1]))

    def _t_step(self, anchor: CameraAnchor) -> float:
        return self.t_unit * anchor.scale * self.model_extent

    def params_from_raw(self, raw: np.ndarray,
                        anchor: CameraAnchor) -> CameraParams:
        raw = np.asarray(raw, dtype=np.float64)
        return CameraParams(
            scale=anchor.scale * math.exp(raw[0]),
            tx=anchor.cx + self._t_step(anchor) * raw[1],
            ty=anchor.cy + self._t_step(anchor) * raw[2],
        )

    def raw_from_params(self, cam: CameraParams,
                        anchor: CameraAnchor) -> np.ndarray:
        return np.array([
            math.log(cam.scale / anchor.scale),
            (cam.tx - anchor.cx) / self._t_step(anchor),
            (cam.ty - anchor.cy) / self._t_step(anchor),
        ])


def project(points: np.ndarray, cam: CameraParams) -> np.ndarray:
    """Project M x 3 points to M x 2 pixels: k = s * (x, y) + (tx, ty)."""
    pts = np.asarray(points, dtype=np.float64)
    if not np.all(np.isfinite(pts)):
        raise ValueError("non-finite points")
    if not cam.scale > 0.0:
        raise ValueError("non-positive camera scale")
    return cam.scale * pts[:, :2] + np.array([cam.tx, cam.ty])


def project_t(points: Tensor, cam_raw: Tensor, link: CameraLink,
              anchor: CameraAnchor) -> Tensor:
    """Tape flavor of :func:`project`; cam_raw is the raw 3-vector.

    The anchor comes from the observed landmarks, so it is a constant of the
    optimization; gradients flow through the raw values only.
    """
    scale = ad.mul(anchor.scale, ad.exp(cam_raw[0:1]))
    trans = ad.add(np.array([anchor.cx, anchor.cy]),
                   ad.mul(link._t_step(anchor), cam_raw[1:3]))
    return ad.add(ad.mul(scale, points[:, 0:2]), trans)


# ---------------------------------------------------------------------------
# landmark embedding


@dataclass(frozen=True, eq=False)
class SurfacePoint:
    """Barycentric anchor inside one triangle of the mesh."""

    triangle: int
    bary: np.ndarray  # (3,), >= 0, sums to 1


@dataclass(frozen=True, eq=False)
class ContourTrack:
    """Yaw-indexed trajectory of surface anchors for one contour landmark."""

    yaws_deg: np.ndarray   # (T,), strictly increasing
    triangles: np.ndarray  # (T,) int
    barys: np.ndarray      # (T, 3)


@dataclass(frozen=True, eq=False)
class LandmarkEmbedding:
    static: tuple[SurfacePoint, ...]
    contour: tuple[ContourTrack, ...]

    def __post_init__(self):
        for p in self.static:
            _check_bary(p.bary)
        for track in self.contour:
            if track.yaws_deg.size == 0:
                raise ValueError("empty contour trajectory table")
            if not np.all(np.diff(track.yaws_deg) > 0):
                raise ValueError("trajectory yaw samples must be strictly increasing")
            for b in track.barys:
                _check_bary(b)
        object.__setattr__(self, "_static_tris",
                           np.array([p.triangle for p in self.static], dtype=int))
        object.__setattr__(self, "_static_barys",
                           np.array([p.bary for p in self.static], dtype=np.float64))
        # contour tables generated by the asset builder share one yaw grid,
        # which allows a single batched interpolation
        shared = bool(self.contour) and all(
            np.array_equal(t.yaws_deg, self.contour[0].yaws_deg) for t in self.contour)
        object.__setattr__(self, "_shared_grid", shared)
        if shared:
            object.__setattr__(self, "_grid", self.contour[0].yaws_deg)
            object.__setattr__(self, "_grid_tris",
                               np.stack([t.triangles for t in self.contour]))
            object.__setattr__(self, "_grid_barys",
                               np.stack([t.barys for t in self.contour]))

    @property
    def n_static(self) -> int:
        return len(self.static)

    @property
    def n_contour(self) -> int:
        return len(self.contour)

    @property
    def count(self) -> int:
        return len(self.static) + len(self.contour)


def _check_bary(b: np.ndarray) -> None:
    if b.shape != (3,) or np.any(b < -1e-12) or abs(b.sum() - 1.0) > 1e-9:
        raise ValueError(f"invalid barycentric coordinates {b}")


def _bary_points(vertices, faces: np.ndarray, tris: np.ndarray,
                 barys: np.ndarray) -> Tensor:
    """Barycentric combinations for a batch of (triangle, bary) anchors."""
    corner = faces[tris]  # (M, 3) vertex ids
    parts = []
    for c in range(3):
        rows = ad.take_rows(vertices, corner[:, c])
        parts.append(ad.mul(barys[:, c:c + 1], rows))
    return ad.add(parts[0], ad.add(parts[1], parts[2]))


def static_landmarks3d(vertices, faces: np.ndarray,
                       embedding: LandmarkEmbedding) -> Tensor:
    """Surface points for the fixed (non-contour) landmarks."""
    tris = embedding._static_tris
    if tris.size and (tris.min() < 0 or tris.max() >= len(faces)):
        raise IndexError("landmark triangle index out of range")
    return _bary_points(ad.as_tensor(vertices), faces, tris, embedding._static_barys)


def yaw_from_rotation(rot) -> Tensor:
    """Yaw (degrees) about the vertical model axis, from a rotation matrix."""
    rot = ad.as_tensor(rot)
    rad = ad.atan2(rot[0:1, 2], rot[2:3, 2])
    return ad.mul(180.0 / math.pi, rad)


def dynamic_landmarks3d(vertices, faces: np.ndarray, embedding: LandmarkEmbedding,
                        yaw_deg) -> Tensor:
    """Contour landmark surface points at the given head yaw.

    Linear interpolation between the two bracketing trajectory samples,
    clamped to the table range; differentiable in both the vertices and the
    yaw (except at table nodes, where the interpolation has a kink).
    """
    if not embedding.contour:
        raise ValueError("embedding has no contour trajectory table")
    vertices = ad.as_tensor(vertices)
    yaw = ad.as_tensor(yaw_deg)

    if embedding._shared_grid:
        grid = embedding._grid
        lo, hi, w = _bracket(yaw, grid)
        pts_lo = _bary_points(vertices, faces, embedding._grid_tris[:, lo],
                              embedding._grid_barys[:, lo])
        pts_hi = _bary_points(vertices, faces, embedding._grid_tris[:, hi],
                              embedding._grid_barys[:, hi])
        return ad.add(ad.mul(ad.sub(1.0, w), pts_lo), ad.mul(w, pts_hi))

    rows = []
    for track in embedding.contour:
        lo, hi, w = _bracket(yaw, track.yaws_deg)
        p_lo = _bary_points(vertices, faces, track.triangles[lo:lo + 1],
                            track.barys[lo:lo + 1])
        p_hi = _bary_points(vertices, faces, track.triangles[hi:hi + 1],
                            track.barys[hi:hi + 1])
        rows.append(ad.add(ad.mul(ad.sub(1.0, w), p_lo), ad.mul(w, p_hi)))
    return ad.concat(rows)


def _bracket(yaw: Tensor, grid: np.ndarray):
    """Bracketing sample indices and the interpolation weight tensor."""
    if grid.size == 1:
        return 0, 0, ad.as_tensor(0.0)
    clamped = ad.clamp(yaw, float(grid[0]), float(grid[-1]))
    hi = int(np.searchsorted(grid, clamped.value.item(), side="left"))
    hi = min(max(hi, 1), grid.size - 1)
    lo = hi - 1
    w = ad.div(ad.sub(clamped, grid[lo]), grid[hi] - grid[lo])
    return lo, hi, w


def landmarks3d(vertices, faces: np.ndarray, embedding: LandmarkEmbedding,
                yaw_deg) -> Tensor:
    """All landmarks, static block first, then the contour block."""
    static = static_landmarks3d(vertices, faces, embedding)
    if not embedding.contour:
        return static
    return ad.concat([static, dynamic_landmarks3d(vertices, faces, embedding, yaw_deg)])


# ---------------------------------------------------------------------------
# 2D observations


@dataclass(frozen=True, eq=False)
class Landmarks2D:
    """Detected 2D landmarks with per-landmark confidences in [0, 1]."""

    positions: np.ndarray   # (L, 2) pixels
    confidence: np.ndarray  # (L,)

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64)
        conf = np.asarray(self.confidence, dtype=np.float64)
        if pos.ndim != 2 or pos.shape[1] != 2 or conf.shape != (pos.shape[0],):
            raise ValueError("landmark arrays have inconsistent shapes")
        if not np.all(np.isfinite(pos[conf > 0])):
            raise ValueError("non-finite confident landmark positions")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "confidence", conf)

    def __len__(self) -> int:
        return self.positions.shape[0]


# box-expansion fractions, relative to the tight box dimensions
BOX_EXPAND_BOTTOM = 0.05
BOX_EXPAND_SIDES = 0.10
BOX_EXPAND_TOP = 0.30


def bounding_box(landmarks: Landmarks2D) -> tuple[float, float, float, float]:
    """Expanded face box (xmin, ymin, xmax, ymax) of the confident landmarks.

    The tight box grows by 10% on each side, 30% at the top (ymin, since y
    points down) and 5% at the bottom.  A single confident landmark yields a
    degenerate zero-size box.  Landmarks with zero confidence are ignored.
    """
    pts = landmarks.positions[landmarks.confidence > 0]
    if pts.shape[0] == 0:
        raise ValueError("no confident landmarks for the bounding box")
    xmin, ymin = pts.min(axis=0)
    xmax, ymax = pts.max(axis=0)
    w, h = xmax - xmin, ymax - ymin
    return (float(xmin - BOX_EXPAND_SIDES * w),
            float(ymin - BOX_EXPAND_TOP * h),
            float(xmax + BOX_EXPAND_SIDES * w),
            float(ymax + BOX_EXPAND_BOTTOM * h))


def axis_angle_from_matrix(rot: np.ndarray) -> np.ndarray:
    """Inverse of the rotation map: axis-angle vector from a rotation matrix."""
    rot = np.asarray(rot, dtype=np.float64)
    cos_angle = np.clip((np.trace(rot) - 1.0) / 2.0, -1.0, 1.0)
    angle = math.acos(cos_angle)
    if angle < 1e-10:
        return np.zeros(3)
    axis_raw = np.array([rot[2, 1] - rot[1, 2],
                         rot[0, 2] - rot[2, 0],
                         rot[1, 0] - rot[0, 1]])
    if angle > math.pi - 1e-6:
        # near a half turn the skew part vanishes; recover the axis from R + I
        sym = (rot + np.eye(3)) / 2.0
        axis = np.sqrt(np.clip(np.diag(sym), 0.0, None))
        signs = np.sign(axis_raw)
        signs[signs == 0] = 1.0
        return angle * axis * signs
    return angle * axis_raw / (2.0 * math.sin(angle))


def euler_rotation(yaw_deg: float, pitch_deg: float, roll_deg: float) -> np.ndarray:
    """Rotation matrix R_y(yaw) @ R_x(pitch) @ R_z(roll), angles in degrees."""
    cy, sy = math.cos(math.radians(yaw_deg)), math.sin(math.radians(yaw_deg))
    cp, sp = math.cos(math.radians(pitch_deg)), math.sin(math.radians(pitch_deg))
    cr, sr = math.cos(math.radians(roll_deg)), math.sin(math.radians(roll_deg))
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rx = np.array([[1, 0, 0], [0, cp, -sp], [0, sp, cp]])
    rz = np.array([[cr, -sr, 0], [sr, cr, 0], [0, 0, 1]])
    return ry @ rx @ rz
