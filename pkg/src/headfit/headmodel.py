"""Blendshape + linear-blend-skinning statistical head model.

The decoder adds identity, expression, and pose-corrective vertex offsets to
a template, then skins the result around K joints whose rest locations are
regressed from the shaped template.  The global rotation acts as an extra
transform about ``root_pivot`` at the head of the kinematic chain, so it
carries every joint with it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .camera import CameraLink, LandmarkEmbedding

# canonical joint order in the desk-scale assets
JOINT_NECK, JOINT_JAW, JOINT_EYE_L, JOINT_EYE_R = 0, 1, 2, 3


@dataclass(eq=False)
class Mesh:
    vertices: np.ndarray  # (N, 3)
    faces: np.ndarray     # (F, 3) int


@dataclass(frozen=True, eq=False)
class ParamVector:
    """Regressed per-image parameters: camera, pose, identity, expression.

    ``cam`` holds raw camera values (see :class:`CameraLink`).  Neck and
    eyeball rotations are not part of the vector; the decoder pins them to
    zero.
    """

    cam: np.ndarray         # (3,) raw scale / tx / ty
    global_rot: np.ndarray  # (3,) axis-angle
    jaw_rot: np.ndarray     # (3,) axis-angle
    shape: np.ndarray       # (n_shape,)
    expr: np.ndarray        # (n_expr,)

    def __post_init__(self):
        for name in ("cam", "global_rot", "jaw_rot", "shape", "expr"):
            object.__setattr__(self, name,
                               np.asarray(getattr(self, name), dtype=np.float64))
        for name in ("cam", "global_rot", "jaw_rot"):
            if getattr(self, name).shape != (3,):
                raise ValueError(f"{name} must be a 3-vector")

    @classmethod
    def zeros(cls, n_shape: int, n_expr: int) -> "ParamVector":
        return cls(np.zeros(3), np.zeros(3), np.zeros(3),
                   np.zeros(n_shape), np.zeros(n_expr))

    @classmethod
    def from_vector(cls, vec: np.ndarray, n_shape: int, n_expr: int) -> "ParamVector":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (9 + n_shape + n_expr,):
            raise ValueError(f"parameter vector must have length {9 + n_shape + n_expr}")
        return cls(vec[0:3], vec[3:6], vec[6:9],
                   vec[9:9 + n_shape], vec[9 + n_shape:])

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.cam, self.global_rot, self.jaw_rot,
                               self.shape, self.expr])

    def __len__(self) -> int:
        return 9 + self.shape.size + self.expr.size


def param_vector_length(n_shape: int, n_expr: int) -> int:
    return 9 + n_shape + n_expr


def split_param_vector(vec: Tensor, n_shape: int, n_expr: int) -> dict[str, Tensor]:
    """Named slices of a flat parameter tensor, for the differentiable path."""
    return {
        "cam": vec[0:3],
        "global_rot": vec[3:6],
        "jaw_rot": vec[6:9],
        "shape": vec[9:9 + n_shape],
        "expr": vec[9 + n_shape:9 + n_shape + n_expr],
    }


@dataclass(frozen=True, eq=False)
class HeadModel:
    template: np.ndarray         # (N, 3), model units (mm)
    faces: np.ndarray            # (F, 3) int
    shape_basis: np.ndarray      # (n_shape, 3N), row-major N x 3 offsets
    expr_basis: np.ndarray       # (n_expr, 3N)
    pose_basis: np.ndarray       # (9K, 3N)
    joint_regressor: np.ndarray  # (K, N), rows sum to 1
    blend_weights: np.ndarray    # (K, N), per-vertex convex over joints
    joint_parents: np.ndarray    # (K,) int, -1 means the global transform
    root_pivot: np.ndarray       # (3,)
    landmarks: LandmarkEmbedding
    cam_link: CameraLink = field(default_factory=CameraLink)

    def __post_init__(self):
        problems = self.validate()
        if problems:
            raise ValueError("invalid head model: " + "; ".join(problems))

    @property
    def n_vertices(self) -> int:
        return self.template.shape[0]

    @property
    def n_joints(self) -> int:
        return self.joint_regressor.shape[0]

    @property
    def n_shape(self) -> int:
        return self.shape_basis.shape[0]

    @property
    def n_expr(self) -> int:
        return self.expr_basis.shape[0]

    @property
    def n_params(self) -> int:
        return param_vector_length(self.n_shape, self.n_expr)

    def validate(self) -> list[str]:
        """Every violated invariant, as one message each (empty when valid)."""
        problems = []
        n = self.template.shape[0]
        k = self.joint_regressor.shape[0]
        if self.template.ndim != 2 or self.template.shape[1] != 3:
            problems.append("template must be N x 3")
        if n < 4:
            problems.append(f"need at least 4 vertices, got {n}")
        if k < 1:
            problems.append("need at least one joint")
        for name, basis in (("shape_basis", self.shape_basis),
                            ("expr_basis", self.expr_basis),
                            ("pose_basis", self.pose_basis)):
            if basis.ndim != 2 or basis.shape[1] != 3 * n:
                problems.append(f"{name} second dimension must be 3N = {3 * n}")
        if self.pose_basis.shape[0] != 9 * k:
            problems.append(f"pose_basis must have 9K = {9 * k} rows")
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= n):
            problems.append("face indices out of range")
        if self.joint_regressor.shape != (k, n):
            problems.append("joint_regressor must be K x N")
        elif not np.allclose(self.joint_regressor.sum(axis=1), 1.0, atol=1e-5):
            problems.append("joint_regressor rows must sum to 1")
        if self.blend_weights.shape != (k, n):
            problems.append("blend_weights must be K x N")
        else:
            if np.any(self.blend_weights < -1e-7):
                problems.append("blend_weights must be non-negative")
            if not np.allclose(self.blend_weights.sum(axis=0), 1.0, atol=1e-5):
                problems.append("per-vertex blend weights must sum to 1")
        if self.joint_parents.shape != (k,):
            problems.append("joint_parents must have one entry per joint")
        elif not all(-1 <= p < j for j, p in enumerate(self.joint_parents)):
            problems.append("joint parents must precede their children (-1 = global)")
        if self.root_pivot.shape != (3,):
            problems.append("root_pivot must be a 3-vector")
        n_faces = len(self.faces)
        lm_tris = list(self.landmarks._static_tris)
        for track in self.landmarks.contour:
            lm_tris.extend(track.triangles)
        if lm_tris and (min(lm_tris) < 0 or max(lm_tris) >= n_faces):
            problems.append("landmark triangle index out of range")
        return problems


def _offset(basis: np.ndarray, coeffs, n_vertices: int) -> Tensor:
    """Linear blendshape offsets: coeffs through the basis, as N x 3."""
    return ad.reshape(ad.matmul(coeffs, basis), (n_vertices, 3))


def _rotation_or_none(rot):
    """Rotation tensor for a joint, or None when it is identically zero."""
    if rot is None:
        return None
    if not isinstance(rot, Tensor) and not np.any(np.asarray(rot)):
        return None
    return ad.rodrigues(rot)


def _joint_rotations(model: HeadModel, joint_rots) -> list:
    """Rotation tensors for the K joints, None where identically zero."""
    if len(joint_rots) != model.n_joints:
        raise ValueError("need one rotation entry per joint")
    return [_rotation_or_none(rot) for rot in joint_rots]


def pose_feature(model: HeadModel, joint_rots, matrices=None) -> Tensor:
    """Pose-corrective feature: vec(R(theta_j) - I) over the K joints."""
    matrices = _joint_rotations(model, joint_rots) if matrices is None else matrices
    blocks = []
    for rot in matrices:
        if rot is None:
            blocks.append(np.zeros(9))
        else:
            blocks.append(ad.reshape(ad.sub(rot, np.eye(3)), (9,)))
    return ad.concat(blocks)


def shaped_template(model: HeadModel, beta, joint_rots, psi,
                    matrices=None) -> Tensor:
    """Template plus identity, pose-corrective, and expression offsets."""
    beta = ad.as_tensor(beta)
    psi = ad.as_tensor(psi)
    if beta.shape != (model.n_shape,) or psi.shape != (model.n_expr,):
        raise ValueError("coefficient length does not match basis rank")
    out = ad.add(model.template, _offset(model.shape_basis, beta, model.n_vertices))
    out = ad.add(out, _offset(model.pose_basis,
                              pose_feature(model, joint_rots, matrices),
                              model.n_vertices))
    return ad.add(out, _offset(model.expr_basis, psi, model.n_vertices))


def joints(model: HeadModel, beta) -> Tensor:
    """Rest joint locations regressed from the shape-adjusted template."""
    beta = ad.as_tensor(beta)
    if beta.shape != (model.n_shape,):
        raise ValueError("coefficient length does not match basis rank")
    shaped = ad.add(model.template,
                    _offset(model.shape_basis, beta, model.n_vertices))
    return ad.matmul(model.joint_regressor, shaped)


def decode_t(model: HeadModel, global_rot, joint_rots, beta, psi,
             global_matrix: Tensor | None = None) -> Tensor:
    """Differentiable decode: blendshapes, then blend skinning. Returns N x 3.

    ``joint_rots`` is a length-K sequence of axis-angle vectors; None entries
    mean a structurally zero rotation (skipped cheaply).  A precomputed
    ``global_matrix`` avoids re-deriving the global rotation.
    """
    matrices = _joint_rotations(model, joint_rots)
    rest = shaped_template(model, beta, joint_rots, psi, matrices)
    joint_pos = joints(model, beta)
    pivot = model.root_pivot

    global_r = global_matrix
    if global_r is None:
        global_r = _rotation_or_none(global_rot)
    if global_r is None:
        global_r = ad.as_tensor(np.eye(3))
    world: list[tuple] = [None] * model.n_joints  # (rotation, translation)
    for j in range(model.n_joints):
        parent = int(model.joint_parents[j])
        if parent < 0:
            parent_r, parent_t, parent_pos = global_r, ad.as_tensor(pivot), pivot
        else:
            parent_r, parent_t = world[parent]
            parent_pos = joint_pos[parent]
        local_r = matrices[j]
        offset = ad.sub(joint_pos[j], parent_pos)
        rot = parent_r if local_r is None else ad.matmul(parent_r, local_r)
        world[j] = (rot, ad.add(ad.matmul(parent_r, offset), parent_t))

    out = None
    for j in range(model.n_joints):
        rot, trans = world[j]
        # skinning transform re-homes the rest joint to the origin first
        skin_t = ad.sub(trans, ad.matmul(rot, joint_pos[j]))
        moved = ad.add(ad.matmul(rest, rot.T), skin_t)
        weighted = ad.mul(model.blend_weights[j][:, None], moved)
        out = weighted if out is None else ad.add(out, weighted)
    return out


def decode_vector_t(model: HeadModel, params: Tensor) -> tuple[Tensor, dict[str, Tensor]]:
    """Decode a flat parameter tensor; returns vertices and the named slices.

    The slices gain a ``global_matrix`` entry so downstream consumers (yaw
    extraction) can reuse the already-built rotation.
    """
    parts = split_param_vector(params, model.n_shape, model.n_expr)
    rots = [None] * model.n_joints
    rots[JOINT_JAW] = parts["jaw_rot"]
    parts["global_matrix"] = ad.rodrigues(parts["global_rot"])
    verts = decode_t(model, parts["global_rot"], rots, parts["shape"],
                     parts["expr"], global_matrix=parts["global_matrix"])
    return verts, parts


def decode(model: HeadModel, params: ParamVector) -> Mesh:
    """Plain-numpy decode of a parameter vector into a mesh."""
    if not np.all(np.isfinite(params.to_vector())):
        raise ValueError("non-finite parameters")
    with ad.no_grad():
        rots = [None] * model.n_joints
        rots[JOINT_JAW] = params.jaw_rot
        verts = decode_t(model, params.global_rot, rots, params.shape, params.expr)
    return Mesh(verts.value, model.faces)
