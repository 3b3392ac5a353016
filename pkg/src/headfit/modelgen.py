"""Procedural desk-scale head-model assets.

Builds an ellipsoidal head (mirror-symmetric in x, nose bump toward +z,
y up) with four skinning joints (neck, jaw, two eyes), random orthonormal
blendshape bases scaled to plausible millimetre magnitudes, and a 68-point
landmark embedding whose jaw contour carries a per-yaw trajectory table
selected from the mesh silhouette.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .camera import CameraLink, ContourTrack, LandmarkEmbedding, SurfacePoint
from .headmodel import HeadModel
from .meshdist import TriangleBVH, barycentric_of_point

HEAD_SEMI_AXES = np.array([75.0, 105.0, 90.0])  # mm; x width, y height, z depth
CONTOUR_YAW_GRID = np.arange(-40.0, 41.0, 5.0)


@dataclass(frozen=True)
class ModelGenConfig:
    rings: int = 16
    segments: int = 22
    n_shape: int = 10
    n_expr: int = 5
    static_landmarks: int = 51
    contour_landmarks: int = 17
    shape_rms_mm: float = 4.0
    expr_rms_mm: float = 2.5
    pose_rms_mm: float = 0.4
    basis_decay: float = 0.88
    seed: int = 0


def _grid_direction(polar_deg: np.ndarray, az_deg: np.ndarray) -> np.ndarray:
    polar = np.radians(polar_deg)
    az = np.radians(az_deg)
    return np.stack([np.sin(polar) * np.sin(az),
                     np.cos(polar),
                     np.sin(polar) * np.cos(az)], axis=-1)


def _nose_bump(polar_deg: np.ndarray, az_deg: np.ndarray) -> np.ndarray:
    signed_az = (az_deg + 180.0) % 360.0 - 180.0
    return 0.12 * np.exp(-((polar_deg - 92.0) ** 2 / 180.0
                           + signed_az ** 2 / 160.0))


def _build_grid(rings: int, segments: int):
    """Vertices, faces, and per-vertex (polar, signed azimuth) in degrees."""
    polar_rows = np.linspace(0.0, 180.0, rings + 2)[1:-1]
    az_cols = np.arange(segments) * (360.0 / segments)
    polar = np.repeat(polar_rows, segments)
    az = np.tile(az_cols, rings)
    dirs = _grid_direction(polar, az)
    radial = 1.0 + _nose_bump(polar, az)
    verts = dirs * radial[:, None] * HEAD_SEMI_AXES

    top = np.array([[0.0, HEAD_SEMI_AXES[1], 0.0]])
    bottom = np.array([[0.0, -HEAD_SEMI_AXES[1], 0.0]])
    vertices = np.vstack([verts, top, bottom])
    top_i, bottom_i = rings * segments, rings * segments + 1

    faces = []
    for i in range(rings - 1):
        for j in range(segments):
            a = i * segments + j
            b = i * segments + (j + 1) % segments
            c = (i + 1) * segments + j
            d = (i + 1) * segments + (j + 1) % segments
            faces.append((a, c, b))
            faces.append((b, c, d))
    for j in range(segments):
        faces.append((top_i, j, (j + 1) % segments))
        base = (rings - 1) * segments
        faces.append((bottom_i, base + (j + 1) % segments, base + j))

    polar_all = np.concatenate([polar, [0.0, 180.0]])
    az_all = np.concatenate([(az + 180.0) % 360.0 - 180.0, [0.0, 0.0]])
    return vertices, np.array(faces, dtype=int), polar_all, az_all


def _normalized_rows(weights: np.ndarray) -> np.ndarray:
    total = weights.sum()
    if total <= 0:
        raise ValueError("degenerate weight row")
    return weights / total


def _f32_stable_normalized(arr: np.ndarray, axis: int) -> np.ndarray:
    """Normalize along ``axis`` so the result survives float32 storage.

    Iterates cast-to-f32 / renormalize until the f32 image is a fixed point;
    the returned float64 array sums to 1 exactly and reproduces its own file
    bytes after a save/load cycle.
    """
    out = arr
    for _ in range(8):
        quantized = out.astype(np.float32).astype(np.float64)
        out = quantized / quantized.sum(axis=axis, keepdims=True)
        if np.array_equal(out.astype(np.float32),
                          quantized.astype(np.float32)):
            break
    return out


def _joint_setup(vertices, polar, az):
    """Joint regressor (K x N) and per-vertex blend weights (K x N)."""
    n = len(vertices)
    front = np.cos(np.radians(az)) > 0.0

    neck_row = _normalized_rows((polar > 150.0).astype(float))
    jaw_row = _normalized_rows(((polar > 115.0) & (polar < 145.0) & front).astype(float))
    eye_centers = {(-1): np.array([-25.0, 68.0]), 1: np.array([25.0, 68.0])}
    eye_rows = {}
    for side, (eaz, epol) in ((s, c) for s, c in eye_centers.items()):
        d2 = (az - eaz) ** 2 + (polar - epol) ** 2
        eye_rows[side] = _normalized_rows(np.exp(-d2 / 120.0) * (d2 < 500.0))
    regressor = np.stack([neck_row, jaw_row, eye_rows[-1], eye_rows[1]])

    # smooth jaw influence over the lower front; faint eye patches; neck rest
    jaw_w = np.where(front, 1.0 / (1.0 + np.exp(-(polar - 118.0) / 6.0)), 0.0)
    eye_w = {s: 0.25 * np.exp(-((az - eye_centers[s][0]) ** 2
                                + (polar - eye_centers[s][1]) ** 2) / 60.0)
             for s in (-1, 1)}
    raw = np.stack([np.ones(n), jaw_w, eye_w[-1], eye_w[1]])
    raw[0] = np.maximum(1.0 - raw[1:].sum(axis=0), 0.05)
    return (_f32_stable_normalized(regressor, axis=1),
            _f32_stable_normalized(raw / raw.sum(axis=0, keepdims=True), axis=0))


def _orthonormal_basis(rng: np.random.Generator, k: int, dim: int,
                       rms_mm: float, decay: float) -> np.ndarray:
    raw = rng.standard_normal((dim, k))
    q, _ = np.linalg.qr(raw)
    mags = rms_mm * decay ** np.arange(k) * math.sqrt(dim)
    return (q * mags).T


def _static_landmark_targets(count: int) -> np.ndarray:
    """Canonical (azimuth, polar) pairs for brows, eyes, nose, and mouth."""
    spots: list[tuple[float, float]] = []
    for side in (-1, 1):  # brows, 5 each
        for t in np.linspace(-1.0, 1.0, 5):
            spots.append((side * (27.0 + 12.0 * t), 57.0 - 4.0 * (1 - t * t)))
    for side in (-1, 1):  # eye rings, 6 each
        for a in np.linspace(0.0, 300.0, 6):
            rad = math.radians(a)
            spots.append((side * 25.0 + 9.0 * math.cos(rad),
                          68.0 + 5.0 * math.sin(rad)))
    for t in np.linspace(0.0, 1.0, 5):  # nose bridge to tip
        spots.append((0.0, 72.0 + 22.0 * t))
    for a in (-12.0, -6.0, 6.0, 12.0):  # nostril line
        spots.append((a, 97.0))
    for a in np.linspace(0.0, 330.0, 12):  # outer mouth ring
        rad = math.radians(a)
        spots.append((16.0 * math.cos(rad), 112.0 + 7.0 * math.sin(rad)))
    for a in np.linspace(0.0, 315.0, 8):  # inner mouth ring
        rad = math.radians(a)
        spots.append((9.0 * math.cos(rad), 112.0 + 3.5 * math.sin(rad)))
    spots = np.array(spots)
    if count > len(spots):
        raise ValueError(f"at most {len(spots)} static landmarks are available")
    keep = np.linspace(0, len(spots) - 1, count).round().astype(int)
    return spots[keep]


def _snap(tree: TriangleBVH, faces: np.ndarray, vertices: np.ndarray,
          target: np.ndarray) -> SurfacePoint:
    _, point, tri = tree.closest_point(target)
    corners = vertices[faces[tri]]
    bary = barycentric_of_point(corners[0], corners[1], corners[2], point)
    return SurfacePoint(tri, bary)


def _contour_tracks(vertices, faces, polar, az, count: int,
                    tree: TriangleBVH) -> list[ContourTrack]:
    """Silhouette-selected jaw contour trajectories, symmetric in x.

    Tracks for the left half (and the chin) are picked per yaw bin as the
    extremal silhouette vertex inside a polar band; the right half mirrors
    the left with the yaw axis reversed.
    """
    if count < 1:
        raise ValueError("need at least one contour landmark")
    half = count // 2
    params = np.linspace(0.0, 1.0, count)
    target_polar = 98.0 + 52.0 * np.sin(np.pi * params)
    ring_polars = np.unique(polar)

    def band_mask(tp: float, side: int) -> np.ndarray:
        nearest = ring_polars[np.argsort(np.abs(ring_polars - tp))[:2]]
        in_band = np.isin(polar, nearest) & (np.abs(az) < 110.0)
        if side < 0:
            return in_band & (az < -2.0)
        if side > 0:
            return in_band & (az > 2.0)
        return in_band & (np.abs(az) < 45.0)

    def select(mask: np.ndarray, yaw: float, mode: str) -> int:
        ids = np.flatnonzero(mask)
        rot_x = (vertices[ids, 0] * math.cos(math.radians(yaw))
                 + vertices[ids, 2] * math.sin(math.radians(yaw)))
        if mode == "min_x":
            return int(ids[np.argmin(rot_x)])
        if mode == "max_x":
            return int(ids[np.argmax(rot_x)])
        return int(ids[np.argmin(vertices[ids, 1])])  # chin: lowest point

    def track_for(index: int) -> ContourTrack:
        side = -1 if index < half else (0 if index == half and count % 2 else 1)
        mode = {-1: "min_x", 0: "chin", 1: "max_x"}[side]
        mask = band_mask(target_polar[index], side)
        tris, barys = [], []
        for yaw in CONTOUR_YAW_GRID:
            anchor = _snap(tree, faces, vertices, vertices[select(mask, yaw, mode)])
            tris.append(anchor.triangle)
            barys.append(anchor.bary)
        return ContourTrack(CONTOUR_YAW_GRID.copy(), np.array(tris, dtype=int),
                            np.array(barys))

    tracks: list[ContourTrack | None] = [None] * count
    for i in range(count):
        if i <= half:
            tracks[i] = track_for(i)
        else:
            # mirror the matching left track, reversing the yaw axis
            src = tracks[count - 1 - i]
            tris, barys = [], []
            for t in range(len(CONTOUR_YAW_GRID) - 1, -1, -1):
                corners = vertices[faces[src.triangles[t]]]
                point = src.barys[t] @ corners
                anchor = _snap(tree, faces, vertices, point * np.array([-1.0, 1.0, 1.0]))
                tris.append(anchor.triangle)
                barys.append(anchor.bary)
            tracks[i] = ContourTrack(CONTOUR_YAW_GRID.copy(),
                                     np.array(tris, dtype=int), np.array(barys))
    return tracks


def build_desk_model(config: ModelGenConfig = ModelGenConfig()) -> HeadModel:
    """Deterministically generate a desk-scale head model asset."""
    rng = np.random.default_rng(config.seed)
    vertices, faces, polar, az = _build_grid(config.rings, config.segments)
    n = len(vertices)
    regressor, blend = _joint_setup(vertices, polar, az)

    shape_basis = _orthonormal_basis(rng, config.n_shape, 3 * n,
                                     config.shape_rms_mm, config.basis_decay)
    expr_basis = _orthonormal_basis(rng, config.n_expr, 3 * n,
                                    config.expr_rms_mm, config.basis_decay)
    pose_basis = _orthonormal_basis(rng, 36, 3 * n,
                                    config.pose_rms_mm, 1.0)

    tree = TriangleBVH(vertices, faces)
    static = tuple(
        _snap(tree, faces, vertices,
              _grid_direction(pol, a) * (1.0 + _nose_bump(np.array(pol), np.array(a)))
              * HEAD_SEMI_AXES)
        for a, pol in _static_landmark_targets(config.static_landmarks))
    contour = tuple(_contour_tracks(vertices, faces, polar, az,
                                    config.contour_landmarks, tree))
    embedding = LandmarkEmbedding(static, contour)

    return HeadModel(
        template=vertices,
        faces=faces,
        shape_basis=shape_basis,
        expr_basis=expr_basis,
        pose_basis=pose_basis,
        joint_regressor=regressor,
        blend_weights=blend,
        joint_parents=np.array([-1, 0, 0, 0]),
        root_pivot=regressor[0] @ vertices,
        landmarks=embedding,
        cam_link=CameraLink(model_extent=_landmark_extent(vertices, faces,
                                                          embedding)),
    )


def _landmark_extent(vertices, faces, embedding: LandmarkEmbedding) -> float:
    """Largest dimension of the template's landmark box (the camera anchor
    relates it to the detected pixel box)."""
    points = [p.bary @ vertices[faces[p.triangle]] for p in embedding.static]
    for track in embedding.contour:
        mid = len(track.yaws_deg) // 2
        points.append(track.barys[mid] @ vertices[faces[track.triangles[mid]]])
    points = np.array(points)
    spans = points.max(axis=0) - points.min(axis=0)
    return float(max(spans[0], spans[1]))
