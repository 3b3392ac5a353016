"""Scan-to-mesh benchmark protocol: crop, align, refine, measure, aggregate.

Per image: a closed-form similarity fit on annotated landmark pairs seeds an
ICP refinement (closest point on the predicted surface, similarity re-solved
each sweep, scale included), then every scan vertex's distance to the
aligned prediction surface is pooled into summary statistics and a
cumulative error curve.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .headmodel import Mesh
from .meshdist import TriangleBVH, scan_to_mesh_distance

CHALLENGES = ("neutral", "expression", "occlusion", "selfie")

# cumulative-curve sampling grid (mm)
CURVE_MAX_MM = 7.0
CURVE_STEP_MM = 0.05

ICP_MAX_ITERS = 50
ICP_TOL_MM = 1e-6


@dataclass(eq=False)
class ScanMesh:
    """Ground-truth scan geometry with its annotation landmarks (mm units)."""

    vertices: np.ndarray   # (N, 3)
    faces: np.ndarray      # (F, 3) int
    landmarks: np.ndarray  # (P, 3) annotation points matched to predictions
    subject: str = ""
    challenge: str = "neutral"

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64)
        self.faces = np.asarray(self.faces, dtype=int)
        self.landmarks = np.asarray(self.landmarks, dtype=np.float64)
        if self.landmarks.ndim != 2 or self.landmarks.shape[0] < 3:
            raise ValueError("a scan needs at least 3 annotation landmarks")
        if self.challenge not in CHALLENGES:
            raise ValueError(f"unknown challenge tag {self.challenge!r}")


@dataclass(frozen=True, eq=False)
class SimilarityTransform:
    scale: float
    rotation: np.ndarray   # (3, 3), det +1
    translation: np.ndarray  # (3,)

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("similarity scale must be positive")
        rot = np.asarray(self.rotation, dtype=np.float64)
        if abs(np.linalg.det(rot) - 1.0) > 1e-6:
            raise ValueError("rotation must have determinant 1")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation",
                           np.asarray(self.translation, dtype=np.float64))

    @classmethod
    def identity(cls) -> "SimilarityTransform":
        return cls(1.0, np.eye(3), np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        return self.scale * points @ self.rotation.T + self.translation

    def inverse_apply(self, points: np.ndarray) -> np.ndarray:
        return (points - self.translation) @ self.rotation / self.scale


def crop_scan(scan: ScanMesh, face_center: np.ndarray, outer_eye_dist: float,
              nose_dist: float) -> ScanMesh:
    """Keep vertices within radius 0.7 * (outer_eye_dist + nose_dist).

    Faces touching any removed vertex are dropped; landmarks are kept as-is.
    """
    if outer_eye_dist <= 0 or nose_dist <= 0:
        raise ValueError("crop distances must be positive")
    radius = 0.7 * (outer_eye_dist + nose_dist)
    center = np.asarray(face_center, dtype=np.float64)
    keep = np.linalg.norm(scan.vertices - center, axis=1) <= radius
    if not np.any(keep):
        raise ValueError("crop removed every scan vertex")
    remap = -np.ones(len(scan.vertices), dtype=int)
    remap[keep] = np.arange(int(keep.sum()))
    kept_faces = scan.faces[np.all(keep[scan.faces], axis=1)]
    return ScanMesh(scan.vertices[keep], remap[kept_faces], scan.landmarks,
                    scan.subject, scan.challenge)


def similarity_from_landmarks(src: np.ndarray, dst: np.ndarray) -> SimilarityTransform:
    """Least-squares similarity: minimizes sum ||dst - (s R src + t)||^2.

    Closed form via the SVD of the cross-covariance, with the reflection
    corrected so det(R) = +1.  Degenerate (collinear or coincident) sources
    are rejected: they leave the rotation under-determined.
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 3:
        raise ValueError("need matching P x 3 point sets")
    if src.shape[0] < 3:
        raise ValueError("need at least 3 correspondences")
    mu_src = src.mean(axis=0)
    mu_dst = dst.mean(axis=0)
    src_c = src - mu_src
    dst_c = dst - mu_dst
    var_src = float((src_c ** 2).sum()) / len(src)
    if var_src < 1e-18:
        raise ValueError("source points are coincident")
    cov = dst_c.T @ src_c / len(src)
    u, sing, vt = np.linalg.svd(cov)
    if sing[1] < 1e-12 * max(sing[0], 1e-300):
        raise ValueError("source points are collinear")
    sign = np.eye(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        sign[2, 2] = -1.0
    rotation = u @ sign @ vt
    scale = float(np.trace(np.diag(sing) @ sign)) / var_src
    if scale <= 0:
        raise ValueError("degenerate correspondence set (non-positive scale)")
    translation = mu_dst - scale * rotation @ mu_src
    return SimilarityTransform(scale, rotation, translation)


def icp_refine(scan_points: np.ndarray, mesh: Mesh,
               init: SimilarityTransform, max_iters: int = ICP_MAX_ITERS,
               tol: float = ICP_TOL_MM) -> SimilarityTransform:
    """Refine a mesh-to-scan similarity by iterated closest-surface points.

    Each sweep maps scan points back through the current transform, finds
    their closest points on the (static) mesh surface, and re-solves the
    similarity on those pairs.  Returns the best transform seen, so the
    result is never worse than ``init`` in mean scan-to-mesh distance.
    """
    scan_points = np.asarray(scan_points, dtype=np.float64)
    tree = TriangleBVH(mesh.vertices, mesh.faces)
    warm = None

    def mean_distance(transform: SimilarityTransform):
        nonlocal warm
        local = transform.inverse_apply(scan_points)
        dists, support, warm = tree.closest_points(local, warm_tris=warm)
        return float(np.mean(dists)) * transform.scale, support

    best = current = init
    best_mean, support = mean_distance(init)
    previous_mean = best_mean
    for _ in range(max_iters):
        current = similarity_from_landmarks(support, scan_points)
        current_mean, support = mean_distance(current)
        if current_mean < best_mean:
            best, best_mean = current, current_mean
        if abs(previous_mean - current_mean) < tol:
            break
        previous_mean = current_mean
    return best


@dataclass(eq=False)
class ImageResult:
    image_id: str
    challenge: str
    distances: np.ndarray | None
    failed: bool = False

    @property
    def median(self) -> float:
        return float(np.median(self.distances))


@dataclass(eq=False)
class EvalReport:
    per_image: list[ImageResult]
    overall: dict[str, float]
    per_challenge: dict[str, dict[str, float]]
    curve_thresholds: np.ndarray
    curve_fractions: np.ndarray
    failed_ids: list[str] = field(default_factory=list)

    def __post_init__(self):
        frac = self.curve_fractions
        if frac.size and (np.any(np.diff(frac) < 0) or frac[0] < 0 or frac[-1] > 1):
            raise ValueError("cumulative curve must be non-decreasing within [0, 1]")
        if self.overall and self.overall["median"] > (self.overall["mean"]
                                                      + 3 * self.overall["std"] + 1e-12):
            raise ValueError("median/mean/std sanity check failed")

    def to_text(self) -> str:
        lines = ["scan-to-mesh evaluation report", ""]
        lines.append(_stats_line("overall", self.overall))
        for tag in sorted(self.per_challenge):
            lines.append(_stats_line(tag, self.per_challenge[tag]))
        lines.append("")
        for result in self.per_image:
            if result.failed:
                lines.append(f"image {result.image_id}: FAILED (missing prediction)")
            else:
                lines.append(f"image {result.image_id} [{result.challenge}]: "
                             f"median {result.median:.4f} mm over "
                             f"{result.distances.size} points")
        return "\n".join(lines) + "\n"


def _stats_line(tag: str, stats: dict[str, float]) -> str:
    if not stats:
        return f"{tag}: no data"
    return (f"{tag}: median {stats['median']:.4f} mm, mean {stats['mean']:.4f} mm, "
            f"std {stats['std']:.4f} mm ({int(stats['count'])} distances)")


def _pooled_stats(chunks: list[np.ndarray]) -> dict[str, float]:
    if not chunks:
        return {}
    pooled = np.concatenate(chunks)
    return {"median": float(np.median(pooled)), "mean": float(pooled.mean()),
            "std": float(pooled.std()), "count": float(pooled.size)}


def cumulative_curve(distances: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
    """Fraction of distances at or below each threshold."""
    if distances.size == 0:
        return np.zeros_like(thresholds)
    return np.searchsorted(np.sort(distances), thresholds, side="right") / distances.size


def default_thresholds(max_mm: float = CURVE_MAX_MM,
                       step_mm: float = CURVE_STEP_MM) -> np.ndarray:
    return np.arange(0.0, max_mm + step_mm / 2.0, step_mm)


def _evaluate_one(prediction, scan: ScanMesh, image_id: str, align: str,
                  icp_max_iters: int) -> ImageResult:
    if prediction is None:
        return ImageResult(image_id, scan.challenge, None, failed=True)
    mesh, pred_landmarks = prediction
    transform = SimilarityTransform.identity()
    if align in ("landmarks", "full"):
        transform = similarity_from_landmarks(pred_landmarks, scan.landmarks)
    if align == "full":
        transform = icp_refine(scan.vertices, mesh, transform,
                               max_iters=icp_max_iters)
    aligned = Mesh(transform.apply(mesh.vertices), mesh.faces)
    distances = scan_to_mesh_distance(scan.vertices, aligned.vertices,
                                      aligned.faces)
    return ImageResult(image_id, scan.challenge, distances)


def evaluate(predictions: Sequence[tuple[Mesh, np.ndarray] | None],
             scans: Sequence[ScanMesh],
             thresholds: np.ndarray | None = None,
             image_ids: Sequence[str] | None = None,
             align: str = "full",
             icp_max_iters: int = ICP_MAX_ITERS,
             threads: int = 1) -> EvalReport:
    """Run the full per-image protocol and aggregate.

    ``predictions`` pairs each scan with (mesh, landmark points); a None entry
    marks a missing prediction, which is reported and excluded from the
    statistics.  ``align`` selects the pipeline stages: "full" (landmarks +
    ICP), "landmarks", or "none" for constructed test cases.  Images are
    independent; ``threads`` > 1 runs them on a worker pool, results are
    aggregated in input order either way.
    """
    if len(predictions) != len(scans):
        raise ValueError("predictions and scans must pair up")
    if align not in ("full", "landmarks", "none"):
        raise ValueError(f"unknown align mode {align!r}")
    thresholds = default_thresholds() if thresholds is None else np.asarray(thresholds)
    image_ids = ([f"img{i:04d}" for i in range(len(scans))]
                 if image_ids is None else list(image_ids))

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(
                lambda args: _evaluate_one(*args, align, icp_max_iters),
                zip(predictions, scans, image_ids)))
    else:
        results = [_evaluate_one(p, s, i, align, icp_max_iters)
                   for p, s, i in zip(predictions, scans, image_ids)]

    per_image: list[ImageResult] = []
    failed: list[str] = []
    pooled: list[np.ndarray] = []
    by_challenge: dict[str, list[np.ndarray]] = {}
    for result in results:
        per_image.append(result)
        if result.failed:
            failed.append(result.image_id)
            continue
        pooled.append(result.distances)
        by_challenge.setdefault(result.challenge, []).append(result.distances)

    curve = cumulative_curve(np.concatenate(pooled) if pooled else np.array([]),
                             thresholds)
    return EvalReport(
        per_image=per_image,
        overall=_pooled_stats(pooled),
        per_challenge={tag: _pooled_stats(chunks)
                       for tag, chunks in by_challenge.items()},
        curve_thresholds=thresholds,
        curve_fractions=curve,
        failed_ids=failed,
    )
