"""Landmark-feature encoder: feature stub plus iterative error-feedback MLP.

The feature stub replaces an image backbone: confident landmarks normalized
by the face bounding box, concatenated with the raw confidences, zero-filled
where detection failed.  The regressor refines the parameter estimate over a
fixed number of additive correction steps, starting from zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .camera import Landmarks2D, bounding_box
from .headmodel import ParamVector, param_vector_length


@dataclass(frozen=True)
class FeatureStub:
    """Maps an observation to a fixed-length feature vector (3 per landmark)."""

    conf_threshold: float = 0.41

    def __call__(self, landmarks: Landmarks2D) -> np.ndarray:
        confident = landmarks.confidence > self.conf_threshold
        normalized = np.zeros_like(landmarks.positions)
        if np.any(confident):
            xmin, ymin, xmax, ymax = bounding_box(
                Landmarks2D(landmarks.positions, confident.astype(float)))
            center = np.array([(xmin + xmax) / 2.0, (ymin + ymax) / 2.0])
            extent = max(xmax - xmin, ymax - ymin, 1e-9)
            normalized[confident] = (landmarks.positions[confident] - center) / extent
        return np.concatenate([normalized.ravel(), landmarks.confidence])

    @staticmethod
    def length(n_landmarks: int) -> int:
        return 3 * n_landmarks


TRAINED_BLOCKS = ("w1", "b1", "w2", "b2", "w3", "b3")


@dataclass(eq=False)
class EncoderWeights:
    """Two hidden layers plus a linear head, and the stub's normalizers."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray
    feat_mean: np.ndarray
    feat_scale: np.ndarray
    n_shape: int
    n_expr: int
    n_landmarks: int
    iterations: int = 3
    dropout: float = 0.2

    @property
    def n_params(self) -> int:
        return param_vector_length(self.n_shape, self.n_expr)

    @property
    def hidden(self) -> int:
        return self.b1.size

    @property
    def feature_length(self) -> int:
        return FeatureStub.length(self.n_landmarks)

    @classmethod
    def init(cls, rng: np.random.Generator, n_landmarks: int, n_shape: int,
             n_expr: int, hidden: int = 512, iterations: int = 3,
             dropout: float = 0.2) -> "EncoderWeights":
        n_params = param_vector_length(n_shape, n_expr)
        n_in = FeatureStub.length(n_landmarks) + n_params
        # He fan-in scaling for the hidden layers; a near-zero head keeps the
        # initial estimate at the mean face
        w1 = rng.standard_normal((n_in, hidden)) * np.sqrt(2.0 / n_in)
        w2 = rng.standard_normal((hidden, hidden)) * np.sqrt(2.0 / hidden)
        w3 = rng.standard_normal((hidden, n_params)) * 1e-3
        return cls(w1=w1, b1=np.zeros(hidden), w2=w2, b2=np.zeros(hidden),
                   w3=w3, b3=np.zeros(n_params),
                   feat_mean=np.zeros(FeatureStub.length(n_landmarks)),
                   feat_scale=np.ones(FeatureStub.length(n_landmarks)),
                   n_shape=n_shape, n_expr=n_expr, n_landmarks=n_landmarks,
                   iterations=iterations, dropout=dropout)

    def blocks(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in TRAINED_BLOCKS}

    def copy(self) -> "EncoderWeights":
        return EncoderWeights(
            **{name: getattr(self, name).copy() for name in TRAINED_BLOCKS},
            feat_mean=self.feat_mean.copy(), feat_scale=self.feat_scale.copy(),
            n_shape=self.n_shape, n_expr=self.n_expr,
            n_landmarks=self.n_landmarks, iterations=self.iterations,
            dropout=self.dropout)


def dropout_masks(rng: np.random.Generator, weights: EncoderWeights):
    """Inverted-scaling dropout masks, one pair of hidden masks per iteration."""
    rate = weights.dropout
    if rate <= 0.0:
        return None
    keep = 1.0 - rate
    return [tuple((rng.random(weights.hidden) >= rate) / keep for _ in range(2))
            for _ in range(weights.iterations)]


def encode_t(features: np.ndarray, tensors: dict[str, Tensor],
             weights: EncoderWeights, masks=None) -> Tensor:
    """Differentiable encode through all refinement iterations.

    ``tensors`` holds the weight blocks as tape leaves; ``masks`` carries the
    per-iteration dropout masks (None at inference).
    """
    if weights.iterations < 1:
        raise ValueError("need at least one refinement iteration")
    normalized = (features - weights.feat_mean) / weights.feat_scale
    estimate = np.zeros(weights.n_params)
    for t in range(weights.iterations):
        stacked = ad.concat([normalized, estimate])
        h1 = ad.relu(ad.add(ad.matmul(stacked, tensors["w1"]), tensors["b1"]))
        h2 = h1 if masks is None else ad.mul(h1, masks[t][0])
        h3 = ad.relu(ad.add(ad.matmul(h2, tensors["w2"]), tensors["b2"]))
        h4 = h3 if masks is None else ad.mul(h3, masks[t][1])
        delta = ad.add(ad.matmul(h4, tensors["w3"]), tensors["b3"])
        estimate = ad.add(estimate, delta)
    return estimate


def encode(landmarks: Landmarks2D, weights: EncoderWeights,
           stub: FeatureStub | None = None) -> ParamVector:
    """Inference encode: plain numpy, dropout disabled, deterministic."""
    stub = stub or FeatureStub()
    features = (stub(landmarks) - weights.feat_mean) / weights.feat_scale
    estimate = np.zeros(weights.n_params)
    for _ in range(weights.iterations):
        stacked = np.concatenate([features, estimate])
        h = np.maximum(stacked @ weights.w1 + weights.b1, 0.0)
        h = np.maximum(h @ weights.w2 + weights.b2, 0.0)
        estimate = estimate + (h @ weights.w3 + weights.b3)
    if not np.all(np.isfinite(estimate)):
        raise ValueError("encoder produced non-finite estimate")
    return ParamVector.from_vector(estimate, weights.n_shape, weights.n_expr)
