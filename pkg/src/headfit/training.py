"""Ring-batch training, direct per-image fitting, and the ring-size ablation.

Every step samples ring slices (R-1 observations of one identity plus one of
another), runs the weight-shared encoder and the frozen decoder on each
element, and takes one Adam step on the combined loss.  All randomness flows
from the config seed, so runs are bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .bencheval import ScanMesh, default_thresholds, evaluate
from .camera import Landmarks2D, landmarks3d, project_t, yaw_from_rotation
from .encoder import (EncoderWeights, FeatureStub, TRAINED_BLOCKS,
                      dropout_masks, encode, encode_t)
from .headmodel import (HeadModel, Mesh, ParamVector, decode, decode_vector_t)
from .losses import (LossWeights, RingElementOutput, reprojection_loss,
                     total_loss)
from .synth import Dataset, Observation


@dataclass(frozen=True)
class TrainConfig:
    ring_size: int = 6      # R images per slice
    slices: int = 2         # n_b slices per step
    iterations: int = 3     # error-feedback refinement steps
    epochs: int = 10
    steps: int | None = None  # overrides epochs when set
    learning_rate: float = 1e-4
    hidden: int = 512
    dropout: float = 0.2
    augment_px: float = 0.0        # landmark jitter per sampled element
    augment_roll_deg: float = 0.0  # in-plane constellation rotation range
    seed: int = 0
    loss: LossWeights = field(default_factory=LossWeights)


@dataclass(frozen=True)
class HistoryRow:
    step: int
    total: float
    shape_consistency: float
    reprojection: float
    shape_reg: float
    expr_reg: float


class Adam:
    """Adam with the standard moment defaults and a constant learning rate."""

    def __init__(self, learning_rate: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict[str, np.ndarray],
             grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        step_size = self.learning_rate / bc1
        for name, p in params.items():
            g = grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= step_size * m / (np.sqrt(v / bc2) + self.eps)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {f"m.{k}": v for k, v in self.m.items()}
        out.update({f"v.{k}": v for k, v in self.v.items()})
        return out


def _augment(obs: Observation, rng: np.random.Generator) -> Observation:
    """Jittered copy standing in for a re-cropped/re-scaled duplicate image."""
    positions = obs.landmarks.positions.copy()
    confident = obs.landmarks.confidence > 0
    if np.any(confident):
        center = positions[confident].mean(axis=0)
        factor = rng.uniform(0.97, 1.03)
        shift = rng.normal(0.0, 2.0, size=2)
        positions[confident] = (positions[confident] - center) * factor + center + shift
    return Observation(Landmarks2D(positions, obs.landmarks.confidence.copy()),
                       obs.identity, obs.truth)


def _noise_augment(obs: Observation, rng: np.random.Generator,
                   sigma_px: float, roll_deg: float) -> Observation:
    """Fresh jitter for one sampled ring element.

    Pixel noise emulates detector scatter.  The in-plane rotation is an
    exact new pose under the weak-perspective model (a rolled head with a
    compensating camera), so it widens pose coverage without touching the
    hidden truth.
    """
    positions = obs.landmarks.positions.copy()
    confident = obs.landmarks.confidence > 0
    if roll_deg > 0.0 and np.any(confident):
        angle = np.radians(rng.uniform(-roll_deg, roll_deg))
        cos_a, sin_a = np.cos(angle), np.sin(angle)
        rot = np.array([[cos_a, -sin_a], [sin_a, cos_a]])
        center = positions[confident].mean(axis=0)
        positions[confident] = (positions[confident] - center) @ rot.T + center
    if sigma_px > 0.0:
        positions[confident] += rng.normal(0.0, sigma_px,
                                           size=positions[confident].shape)
    return Observation(Landmarks2D(positions, obs.landmarks.confidence.copy()),
                       obs.identity, obs.truth)


def build_ring_batch(dataset: Dataset, rng: np.random.Generator,
                     ring_size: int, n_slices: int, augment_px: float = 0.0,
                     augment_roll_deg: float = 0.0) -> list[list[Observation]]:
    """n_slices rings: R-1 observations of one identity plus 1 of another.

    Identities with fewer than R-1 observations are sampled with replacement;
    repeated picks get jitter augmentation, mirroring duplicated crops.
    ``augment_px``/``augment_roll_deg`` > 0 additionally jitter every sampled
    element, the desk-scale analog of crop/scale replication.
    """
    if ring_size < 2:
        raise ValueError("ring size must be at least 2")
    groups = dataset.by_identity()
    ids = list(groups)
    if len(ids) < 2:
        raise ValueError("ring batches need at least two identities")
    batch = []
    for _ in range(n_slices):
        matched_id = ids[rng.integers(len(ids))]
        pool = groups[matched_id]
        replace_picks = len(pool) < ring_size - 1
        picks = rng.choice(len(pool), size=ring_size - 1, replace=replace_picks)
        seen: set[int] = set()
        matched = []
        for pick in picks:
            obs = pool[pick]
            if pick in seen:
                obs = _augment(obs, rng)
            seen.add(int(pick))
            matched.append(obs)
        other_ids = [i for i in ids if i != matched_id]
        other_id = other_ids[rng.integers(len(other_ids))]
        unmatched = groups[other_id][rng.integers(len(groups[other_id]))]
        chunk = matched + [unmatched]
        if augment_px > 0.0 or augment_roll_deg > 0.0:
            chunk = [_noise_augment(o, rng, augment_px, augment_roll_deg)
                     for o in chunk]
        batch.append(chunk)
    return batch


def _forward_element(obs: Observation, tensors: dict[str, Tensor],
                     weights: EncoderWeights, model: HeadModel,
                     stub: FeatureStub, masks) -> RingElementOutput:
    params = encode_t(stub(obs.landmarks), tensors, weights, masks)
    verts, parts = decode_vector_t(model, params)
    yaw = yaw_from_rotation(parts["global_matrix"])
    surface = landmarks3d(verts, model.faces, model.landmarks, yaw)
    projected = project_t(surface, parts["cam"], model.cam_link,
                          model.cam_link.anchor(obs.landmarks))
    return RingElementOutput(parts["shape"], parts["expr"], projected,
                             obs.landmarks)


def ring_step_loss(batch: list[list[Observation]], tensors: dict[str, Tensor],
                   weights: EncoderWeights, model: HeadModel,
                   loss_weights: LossWeights,
                   rng: np.random.Generator | None = None):
    """Forward pass over a ring batch; returns (loss tensor, breakdown)."""
    stub = FeatureStub(loss_weights.conf_threshold)
    ring = []
    for chunk in batch:
        elements = []
        for obs in chunk:
            masks = dropout_masks(rng, weights) if rng is not None else None
            elements.append(_forward_element(obs, tensors, weights, model,
                                             stub, masks))
        ring.append(elements)
    return total_loss(ring, loss_weights)


def _steps_for(config: TrainConfig, dataset: Dataset) -> int:
    if config.steps is not None:
        return config.steps
    per_epoch = max(1, len(dataset) // (config.ring_size * config.slices))
    return config.epochs * per_epoch


def train(dataset: Dataset, model: HeadModel, config: TrainConfig,
          initial: EncoderWeights | None = None,
          optimizer: Adam | None = None
          ) -> tuple[EncoderWeights, list[HistoryRow]]:
    """Train the encoder with Adam; deterministic given the config seed.

    Divergence (a non-finite value anywhere in the pipeline) aborts with a
    diagnostic naming the step and the last finite loss breakdown.
    """
    rng = np.random.default_rng(config.seed)
    if initial is not None:
        weights = initial.copy()
    else:
        weights = EncoderWeights.init(rng, dataset.n_landmarks, dataset.n_shape,
                                      dataset.n_expr, hidden=config.hidden,
                                      iterations=config.iterations,
                                      dropout=config.dropout)
        _fit_feature_normalizers(weights, dataset, config.loss.conf_threshold)
    optimizer = optimizer or Adam(config.learning_rate)

    history: list[HistoryRow] = []
    last_breakdown: dict[str, float] = {}
    for step in range(_steps_for(config, dataset)):
        batch = build_ring_batch(dataset, rng, config.ring_size, config.slices,
                                 augment_px=config.augment_px,
                                 augment_roll_deg=config.augment_roll_deg)
        tensors = {name: Tensor(arr, name) for name, arr in weights.blocks().items()}
        try:
            loss, breakdown = ring_step_loss(batch, tensors, weights, model,
                                             config.loss, rng)
        except ValueError as err:
            terms = ", ".join(f"{k}={v:.6g}" for k, v in last_breakdown.items())
            raise RuntimeError(
                f"training diverged at step {step}: {err} "
                f"(last finite breakdown: {terms or 'none'})") from err
        last_breakdown = breakdown
        grad_list = ad.backward(loss, [tensors[name] for name in TRAINED_BLOCKS])
        optimizer.step(weights.blocks(), dict(zip(TRAINED_BLOCKS, grad_list)))
        history.append(HistoryRow(step, breakdown["total"],
                                  breakdown["shape_consistency"],
                                  breakdown["reprojection"],
                                  breakdown["shape_reg"],
                                  breakdown["expr_reg"]))
    return weights, history


def _fit_feature_normalizers(weights: EncoderWeights, dataset: Dataset,
                             conf_threshold: float) -> None:
    """Dataset-wide feature standardization constants for the stub."""
    stub = FeatureStub(conf_threshold)
    feats = np.stack([stub(o.landmarks) for o in dataset.observations])
    weights.feat_mean = feats.mean(axis=0)
    weights.feat_scale = np.maximum(feats.std(axis=0), 1e-3)


@dataclass(frozen=True)
class FitConfig:
    iters: int = 300
    learning_rate: float = 0.03
    loss: LossWeights = field(default_factory=LossWeights)


def fit_single(observation: Observation | Landmarks2D, model: HeadModel,
               init: ParamVector | None = None,
               config: FitConfig = FitConfig()) -> ParamVector:
    """Directly optimize one parameter vector against one observation.

    Adam on the reprojection loss plus the coefficient regularizers; returns
    the best iterate seen.  This is the optimization baseline the trained
    encoder is compared against.
    """
    landmarks = (observation.landmarks if isinstance(observation, Observation)
                 else observation)
    confident = int((landmarks.confidence > config.loss.conf_threshold).sum())
    if confident < 6:
        raise ValueError(f"need at least 6 confident landmarks, got {confident}")

    vec = (init.to_vector() if init is not None
           else np.zeros(model.n_params)).copy()
    lw = config.loss
    anchor = model.cam_link.anchor(landmarks)

    def loss_for(params: Tensor) -> Tensor:
        verts, parts = decode_vector_t(model, params)
        yaw = yaw_from_rotation(parts["global_matrix"])
        surface = landmarks3d(verts, model.faces, model.landmarks, yaw)
        projected = project_t(surface, parts["cam"], model.cam_link, anchor)
        proj = reprojection_loss(projected, landmarks, lw.conf_threshold)
        return ad.add(ad.mul(lw.reprojection, proj),
                      ad.add(ad.mul(lw.shape_reg, ad.sum_sq(parts["shape"])),
                             ad.mul(lw.expr_reg, ad.sum_sq(parts["expr"]))))

    optimizer = Adam(config.learning_rate)
    best_vec = vec.copy()
    best_loss = np.inf
    for _ in range(config.iters + 1):
        leaf = Tensor(vec, "params")
        loss = loss_for(leaf)
        if loss.item() < best_loss:
            best_loss = loss.item()
            best_vec = vec.copy()
        grad = ad.backward(loss, [leaf])[0]
        optimizer.step({"params": vec}, {"params": grad})
    return ParamVector.from_vector(best_vec, model.n_shape, model.n_expr)


@dataclass(frozen=True)
class AblationRow:
    ring_size: int
    median_mm: float
    mean_mm: float
    std_mm: float


def neutral_mesh(model: HeadModel, shape: np.ndarray) -> Mesh:
    """Decode with pose and expression zeroed: the identity-only mesh."""
    params = ParamVector.zeros(model.n_shape, model.n_expr)
    return decode(model, replace_shape(params, shape))


def replace_shape(params: ParamVector, shape: np.ndarray) -> ParamVector:
    return ParamVector(params.cam, params.global_rot, params.jaw_rot,
                       np.asarray(shape, dtype=np.float64), params.expr)


def reconstruction_report(weights: EncoderWeights, model: HeadModel,
                          dataset: Dataset, align: str = "full",
                          icp_max_iters: int = 15):
    """Neutral-reconstruction benchmark of an encoder on a labelled dataset.

    Per observation: predicted neutral mesh vs. the identity's true neutral
    mesh (standing in for the subject's scan), run through the alignment +
    scan-to-mesh protocol.
    """
    from .camera import static_landmarks3d

    predictions = []
    scans = []
    for obs in dataset.observations:
        pred = encode(obs.landmarks, weights, FeatureStub())
        pred_mesh = neutral_mesh(model, pred.shape)
        with ad.no_grad():
            pred_lm = static_landmarks3d(pred_mesh.vertices, model.faces,
                                         model.landmarks).value
        truth_mesh = neutral_mesh(model, obs.truth.shape)
        with ad.no_grad():
            truth_lm = static_landmarks3d(truth_mesh.vertices, model.faces,
                                          model.landmarks).value
        predictions.append((pred_mesh, pred_lm))
        scans.append(ScanMesh(truth_mesh.vertices, model.faces, truth_lm,
                              subject=str(obs.identity)))
    return evaluate(predictions, scans, default_thresholds(), align=align,
                    icp_max_iters=icp_max_iters)


def ablate_ring_size(train_set: Dataset, validation: Dataset, model: HeadModel,
                     ring_sizes: list[int], config: TrainConfig,
                     align: str = "full") -> list[AblationRow]:
    """Train one encoder per ring size under identical budgets and score each.

    Budgets are matched by steps: every run takes the same number of Adam
    steps with the same seed and hyperparameters, only R varies.
    """
    rows = []
    steps = _steps_for(config, train_set)
    for ring_size in ring_sizes:
        if ring_size < 3:
            raise ValueError("ablation ring sizes must be at least 3")
        run_config = replace(config, ring_size=ring_size, steps=steps)
        weights, _ = train(train_set, model, run_config)
        report = reconstruction_report(weights, model, validation, align=align)
        rows.append(AblationRow(ring_size, report.overall["median"],
                                report.overall["mean"], report.overall["std"]))
    return rows
