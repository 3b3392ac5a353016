"""Synthetic identity-labelled landmark observations with known ground truth.

Each identity draws one shape code; each observation poses that identity,
decodes it, projects the surface landmarks, and corrupts them with pixel
noise and detector-style dropouts.  The hidden true parameters ride along
for evaluation only; training sees landmarks, confidences, and the label.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .camera import (CameraParams, Landmarks2D, axis_angle_from_matrix,
                     euler_rotation, landmarks3d, project, yaw_from_rotation)
from .headmodel import HeadModel, ParamVector, decode


@dataclass(frozen=True)
class SynthConfig:
    identities: int = 8
    per_identity: int = 8
    shape_std: float = 1.0
    expr_std: float = 0.7
    yaw_range: tuple[float, float] = (-40.0, 40.0)
    pitch_range: tuple[float, float] = (-15.0, 15.0)
    roll_range: tuple[float, float] = (-15.0, 15.0)
    jaw_range_deg: tuple[float, float] = (0.0, 20.0)
    scale_range: tuple[float, float] = (1.6, 2.5)
    tx_range: tuple[float, float] = (216.0, 296.0)
    ty_range: tuple[float, float] = (216.0, 296.0)
    pixel_noise: float = 1.5
    drop_prob: float = 0.1
    seed: int = 0


@dataclass(eq=False)
class Observation:
    """One synthetic detection: landmarks, identity label, hidden truth."""

    landmarks: Landmarks2D
    identity: int
    truth: ParamVector


@dataclass(eq=False)
class Dataset:
    observations: list[Observation]
    n_shape: int
    n_expr: int
    n_landmarks: int

    def __len__(self) -> int:
        return len(self.observations)

    def identities(self) -> list[int]:
        seen = dict.fromkeys(o.identity for o in self.observations)
        return list(seen)

    def by_identity(self) -> dict[int, list[Observation]]:
        groups: dict[int, list[Observation]] = {}
        for obs in self.observations:
            groups.setdefault(obs.identity, []).append(obs)
        return groups

    def subset(self, indices) -> "Dataset":
        return Dataset([self.observations[i] for i in indices],
                       self.n_shape, self.n_expr, self.n_landmarks)

    def split_per_identity(self, holdout: int) -> tuple["Dataset", "Dataset"]:
        """Last ``holdout`` observations of each identity go to the second set."""
        train, held = [], []
        for group in self.by_identity().values():
            train.extend(group[:-holdout] if holdout else group)
            held.extend(group[-holdout:] if holdout else [])
        return (Dataset(train, self.n_shape, self.n_expr, self.n_landmarks),
                Dataset(held, self.n_shape, self.n_expr, self.n_landmarks))


def _stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, *key)))


def sample_identity(rng: np.random.Generator, n_shape: int,
                    shape_std: float) -> np.ndarray:
    """Draw one identity shape code, i.i.d. normal per coefficient."""
    if shape_std < 0:
        raise ValueError("shape_std must be non-negative")
    return shape_std * rng.standard_normal(n_shape)


def _uniform(rng: np.random.Generator, bounds: tuple[float, float]) -> float:
    return float(rng.uniform(bounds[0], bounds[1]))


def render_observation(model: HeadModel, beta_star: np.ndarray,
                       rng: np.random.Generator, config: SynthConfig,
                       identity: int = 0) -> Observation:
    """Pose, decode, project, and corrupt one observation of an identity.

    The hidden true camera is stored in raw (box-anchored) form against the
    corrupted observation's own face box, so the closed loop holds: with
    zero noise, decoding the truth reprojects exactly onto the landmarks.
    """
    rot = euler_rotation(_uniform(rng, config.yaw_range),
                         _uniform(rng, config.pitch_range),
                         _uniform(rng, config.roll_range))
    jaw = math.radians(_uniform(rng, config.jaw_range_deg))
    cam = CameraParams(scale=_uniform(rng, config.scale_range),
                       tx=_uniform(rng, config.tx_range),
                       ty=_uniform(rng, config.ty_range))
    truth = ParamVector(
        cam=np.zeros(3),
        global_rot=axis_angle_from_matrix(rot),
        jaw_rot=np.array([jaw, 0.0, 0.0]),
        shape=np.asarray(beta_star, dtype=np.float64),
        expr=config.expr_std * rng.standard_normal(model.n_expr),
    )

    mesh = decode(model, truth)
    with ad.no_grad():
        yaw_deg = yaw_from_rotation(ad.rodrigues(truth.global_rot)).item()
        points3d = landmarks3d(mesh.vertices, model.faces, model.landmarks,
                               yaw_deg).value
    pixels = project(points3d, cam)
    pixels = pixels + config.pixel_noise * rng.standard_normal(pixels.shape)

    confidence = np.ones(len(pixels))
    dropped = rng.random(len(pixels)) < config.drop_prob
    confidence[dropped] = 0.0
    pixels[dropped] = 0.0
    landmarks = Landmarks2D(pixels, confidence)
    if np.any(confidence > 0):
        truth.cam[:] = model.cam_link.raw_from_params(
            cam, model.cam_link.anchor(landmarks))
    return Observation(landmarks, identity, truth)


def make_dataset(model: HeadModel, config: SynthConfig) -> Dataset:
    """G x M observations, M per identity, deterministic per seed."""
    if config.identities < 2:
        raise ValueError("need at least two identities")
    observations = []
    for g in range(config.identities):
        beta = sample_identity(_stream(config.seed, 1, g), model.n_shape,
                               config.shape_std)
        for m in range(config.per_identity):
            observations.append(render_observation(
                model, beta, _stream(config.seed, 2, g, m), config, identity=g))
    return Dataset(observations, model.n_shape, model.n_expr,
                   model.landmarks.count)
