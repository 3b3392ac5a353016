"""Exact point-to-surface distances for triangle meshes.

The per-triangle kernel is the classic Voronoi-region walk (vertex, edge,
then face region), vectorized over triangles for one query point.  A simple
AABB tree with best-first traversal accelerates queries; because tree and
brute-force paths share the same kernel and the traversal never prunes a
subtree whose box could hold the current best, both return identical
distances.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

LEAF_SIZE = 8
# relative slack before a box is pruned, covering rounding in the box bound
_PRUNE_SLACK = 1e-12


def closest_points_on_triangles(a: np.ndarray, b: np.ndarray, c: np.ndarray,
                                query: np.ndarray) -> np.ndarray:
    """Closest point to ``query`` on each triangle (a[i], b[i], c[i])."""
    ab = b - a
    ac = c - a
    ap = query - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = query - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = query - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)

    vc = d1 * d4 - d3 * d2
    vb = d5 * d2 - d1 * d6
    va = d3 * d6 - d5 * d4

    region_a = (d1 <= 0) & (d2 <= 0)
    region_b = (d3 >= 0) & (d4 <= d3)
    region_ab = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
    region_c = (d6 >= 0) & (d5 <= d6)
    region_ac = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
    region_bc = (va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0)

    v_ab = (d1 / np.where(region_ab, d1 - d3, 1.0))[:, None]
    w_ac = (d2 / np.where(region_ac, d2 - d6, 1.0))[:, None]
    w_bc = (((d4 - d3) / np.where(region_bc, (d4 - d3) + (d5 - d6), 1.0)))[:, None]
    face_denom = np.where(region_a | region_b | region_ab | region_c
                          | region_ac | region_bc, 1.0, va + vb + vc)
    v_face = (vb / face_denom)[:, None]
    w_face = (vc / face_denom)[:, None]

    choices = [a, b, a + v_ab * ab, c, a + w_ac * ac, b + w_bc * (c - b)]
    conditions = [region_a[:, None], region_b[:, None], region_ab[:, None],
                  region_c[:, None], region_ac[:, None], region_bc[:, None]]
    face_point = a + ab * v_face + ac * w_face
    return np.select(conditions, choices, default=face_point)


def _box_sq_distance(lo: np.ndarray, hi: np.ndarray, query: np.ndarray) -> float:
    d = np.maximum(np.maximum(lo - query, query - hi), 0.0)
    return float(d @ d)


@dataclass(eq=False)
class _Node:
    lo: np.ndarray
    hi: np.ndarray
    tris: np.ndarray | None  # leaf triangle ids, None for inner nodes
    left: int = -1
    right: int = -1


class TriangleBVH:
    """Axis-aligned box tree over a triangle mesh for closest-point queries."""

    def __init__(self, vertices: np.ndarray, faces: np.ndarray,
                 leaf_size: int = LEAF_SIZE):
        vertices = np.asarray(vertices, dtype=np.float64)
        faces = np.asarray(faces, dtype=int)
        if len(faces) == 0:
            raise ValueError("empty mesh")
        self._a = vertices[faces[:, 0]]
        self._b = vertices[faces[:, 1]]
        self._c = vertices[faces[:, 2]]
        self._tri_lo = np.minimum(np.minimum(self._a, self._b), self._c)
        self._tri_hi = np.maximum(np.maximum(self._a, self._b), self._c)
        centroids = (self._a + self._b + self._c) / 3.0
        self._nodes: list[_Node] = []
        self._build(np.arange(len(faces)), centroids, leaf_size)

    def _build(self, tris: np.ndarray, centroids: np.ndarray, leaf_size: int) -> int:
        lo = self._tri_lo[tris].min(axis=0)
        hi = self._tri_hi[tris].max(axis=0)
        index = len(self._nodes)
        if len(tris) <= leaf_size:
            self._nodes.append(_Node(lo, hi, tris))
            return index
        self._nodes.append(_Node(lo, hi, None))
        axis = int(np.argmax(hi - lo))
        order = tris[np.argsort(centroids[tris, axis], kind="stable")]
        half = len(order) // 2
        left = self._build(order[:half], centroids, leaf_size)
        right = self._build(order[half:], centroids, leaf_size)
        self._nodes[index].left = left
        self._nodes[index].right = right
        return index

    def _leaf_best(self, tris: np.ndarray, query: np.ndarray):
        pts = closest_points_on_triangles(self._a[tris], self._b[tris],
                                          self._c[tris], query)
        diffs = pts - query
        sq = np.einsum("ij,ij->i", diffs, diffs)
        best = int(np.argmin(sq))
        return float(sq[best]), pts[best], int(tris[best])

    def _search(self, query: np.ndarray, best_sq: float, best_point, best_tri):
        heap = [(_box_sq_distance(self._nodes[0].lo, self._nodes[0].hi, query), 0)]
        while heap:
            box_sq, index = heapq.heappop(heap)
            if box_sq > best_sq * (1.0 + _PRUNE_SLACK):
                break
            node = self._nodes[index]
            if node.tris is not None:
                sq, point, tri = self._leaf_best(node.tris, query)
                if sq < best_sq:
                    best_sq, best_point, best_tri = sq, point, tri
                continue
            for child in (node.left, node.right):
                child_node = self._nodes[child]
                child_sq = _box_sq_distance(child_node.lo, child_node.hi, query)
                if child_sq <= best_sq * (1.0 + _PRUNE_SLACK):
                    heapq.heappush(heap, (child_sq, child))
        return float(np.sqrt(best_sq)), best_point, best_tri

    def closest_point(self, query) -> tuple[float, np.ndarray, int]:
        """(distance, surface point, triangle id) of the nearest surface point."""
        return self._search(np.asarray(query, dtype=np.float64),
                            np.inf, None, -1)

    def closest_points(self, queries: np.ndarray,
                       warm_tris: np.ndarray | None = None):
        """Batched closest_point: (distances, points, triangle ids).

        ``warm_tris`` seeds each query's search with a candidate triangle
        (e.g. last iteration's answer); results are identical, the bound just
        prunes most of the traversal.
        """
        queries = np.asarray(queries, dtype=np.float64)
        dists = np.empty(len(queries))
        points = np.empty_like(queries)
        tris = np.empty(len(queries), dtype=int)
        if warm_tris is None:
            for i, q in enumerate(queries):
                dists[i], points[i], tris[i] = self._search(q, np.inf, None, -1)
            return dists, points, tris
        warm_tris = np.asarray(warm_tris, dtype=int)
        warm_pts = closest_points_on_triangles(
            self._a[warm_tris], self._b[warm_tris], self._c[warm_tris], queries)
        diffs = warm_pts - queries
        warm_sq = np.einsum("ij,ij->i", diffs, diffs)
        for i, q in enumerate(queries):
            dists[i], points[i], tris[i] = self._search(
                q, float(warm_sq[i]), warm_pts[i], int(warm_tris[i]))
        return dists, points, tris


def closest_point_brute(vertices: np.ndarray, faces: np.ndarray,
                        query) -> tuple[float, np.ndarray, int]:
    """Exhaustive closest point over every triangle; the oracle path."""
    vertices = np.asarray(vertices, dtype=np.float64)
    faces = np.asarray(faces, dtype=int)
    if len(faces) == 0:
        raise ValueError("empty mesh")
    query = np.asarray(query, dtype=np.float64)
    pts = closest_points_on_triangles(vertices[faces[:, 0]], vertices[faces[:, 1]],
                                      vertices[faces[:, 2]], query)
    diffs = pts - query
    sq = np.einsum("ij,ij->i", diffs, diffs)
    best = int(np.argmin(sq))
    return float(np.sqrt(sq[best])), pts[best], best


def scan_to_mesh_distance(points: np.ndarray, vertices: np.ndarray,
                          faces: np.ndarray, method: str = "bvh") -> np.ndarray:
    """Distance from each scan point to the closest point on the mesh surface.

    ``method`` selects the accelerated tree ("bvh") or the exhaustive check
    ("brute"); the two agree exactly.
    """
    points = np.asarray(points, dtype=np.float64)
    if method == "bvh":
        tree = TriangleBVH(vertices, faces)
        dists, _, _ = tree.closest_points(points)
        return dists
    if method == "brute":
        if len(faces) == 0:
            raise ValueError("empty mesh")
        return np.array([closest_point_brute(vertices, faces, q)[0] for q in points])
    raise ValueError(f"unknown method {method!r}")


def barycentric_of_point(a: np.ndarray, b: np.ndarray, c: np.ndarray,
                         point: np.ndarray) -> np.ndarray:
    """Barycentric coordinates of a point lying in the triangle's plane."""
    ab = b - a
    ac = c - a
    ap = point - a
    d00 = ab @ ab
    d01 = ab @ ac
    d11 = ac @ ac
    d20 = ap @ ab
    d21 = ap @ ac
    denom = d00 * d11 - d01 * d01
    v = (d11 * d20 - d01 * d21) / denom
    w = (d00 * d21 - d01 * d20) / denom
    bary = np.array([1.0 - v - w, v, w])
    bary = np.clip(bary, 0.0, None)
    return bary / bary.sum()
