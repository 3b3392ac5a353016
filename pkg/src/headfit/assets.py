"""File formats: manifest+blob container, model asset, checkpoint, dataset.

One container layout serves every binary artifact: an 8-byte magic, a
4-byte little-endian manifest length, a JSON manifest (array names, shapes,
element types, byte offsets, plus free-form metadata), then the contiguous
little-endian payload.  Model assets store floats as 32-bit (compute stays
64-bit); checkpoints and datasets store 64-bit so round trips are bit-exact.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .camera import CameraLink, ContourTrack, LandmarkEmbedding, Landmarks2D, SurfacePoint
from .encoder import EncoderWeights, TRAINED_BLOCKS
from .headmodel import HeadModel, ParamVector
from .losses import LossWeights
from .synth import Dataset, Observation
from .training import Adam, TrainConfig

MAGIC = b"HFCONT1\n"
CONTAINER_VERSION = 1

_INT_DTYPE = "<i4"


def save_container(path, kind: str, meta: dict, arrays: dict[str, np.ndarray],
                   extra: dict | None = None, float_dtype: str = "<f8") -> None:
    entries = []
    blobs = []
    offset = 0
    for name, array in arrays.items():
        array = np.asarray(array)
        dtype = _INT_DTYPE if np.issubdtype(array.dtype, np.integer) else float_dtype
        blob = np.ascontiguousarray(array.astype(dtype)).tobytes()
        entries.append({"name": name, "shape": list(array.shape), "dtype": dtype,
                        "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    manifest = {
        "version": CONTAINER_VERSION,
        "kind": kind,
        "meta": meta,
        "arrays": entries,
        "extra": extra or {},
    }
    encoded = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as handle:
        handle.write(MAGIC)
        handle.write(struct.pack("<I", len(encoded)))
        handle.write(encoded)
        for blob in blobs:
            handle.write(blob)


def load_container(path, expect_kind: str | None = None):
    """Returns (kind, meta, arrays, extra); floats come back as float64."""
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise ValueError(f"{path}: not a container file (bad magic)")
    if len(raw) < 12:
        raise ValueError(f"{path}: truncated header")
    (manifest_len,) = struct.unpack("<I", raw[8:12])
    manifest_end = 12 + manifest_len
    if len(raw) < manifest_end:
        raise ValueError(f"{path}: truncated manifest")
    manifest = json.loads(raw[12:manifest_end].decode())
    if manifest.get("version") != CONTAINER_VERSION:
        raise ValueError(f"{path}: unsupported container version")
    kind = manifest.get("kind")
    if expect_kind is not None and kind != expect_kind:
        raise ValueError(f"{path}: expected a {expect_kind} file, found {kind!r}")
    payload = raw[manifest_end:]
    arrays: dict[str, np.ndarray] = {}
    for entry in manifest["arrays"]:
        name = entry["name"]
        dtype = np.dtype(entry["dtype"])
        expected = int(np.prod(entry["shape"], dtype=np.int64)) * dtype.itemsize
        if entry["nbytes"] != expected:
            raise ValueError(f"{path}: array {name!r} declares {entry['nbytes']} "
                             f"bytes but shape {entry['shape']} needs {expected}")
        end = entry["offset"] + entry["nbytes"]
        if end > len(payload):
            raise ValueError(f"{path}: array {name!r} payload truncated "
                             f"(needs {end} bytes, have {len(payload)})")
        flat = np.frombuffer(payload[entry["offset"]:end], dtype=dtype)
        array = flat.reshape(entry["shape"])
        if np.issubdtype(dtype, np.floating):
            array = array.astype(np.float64)
        else:
            array = array.astype(np.int64)
        arrays[name] = array
    return kind, manifest["meta"], arrays, manifest["extra"]


# ---------------------------------------------------------------------------
# model asset


def _embedding_to_json(embedding: LandmarkEmbedding) -> dict:
    return {
        "static": [[p.triangle, *map(float, p.bary)] for p in embedding.static],
        "contour": [{
            "yaws_deg": [float(y) for y in track.yaws_deg],
            "triangles": [int(t) for t in track.triangles],
            "barys": [[float(b) for b in row] for row in track.barys],
        } for track in embedding.contour],
    }


def _embedding_from_json(data: dict) -> LandmarkEmbedding:
    static = tuple(SurfacePoint(int(row[0]), np.array(row[1:4]))
                   for row in data["static"])
    contour = tuple(ContourTrack(np.array(track["yaws_deg"]),
                                 np.array(track["triangles"], dtype=int),
                                 np.array(track["barys"]))
                    for track in data["contour"])
    return LandmarkEmbedding(static, contour)


def save_model(path, model: HeadModel) -> None:
    arrays = {
        "template": model.template,
        "faces": model.faces,
        "shape_basis": model.shape_basis,
        "expr_basis": model.expr_basis,
        "pose_basis": model.pose_basis,
        "joint_regressor": model.joint_regressor,
        "blend_weights": model.blend_weights,
        "joint_parents": model.joint_parents,
        "root_pivot": model.root_pivot,
    }
    meta = {
        "n_vertices": model.n_vertices,
        "n_joints": model.n_joints,
        "n_shape": model.n_shape,
        "n_expr": model.n_expr,
        "cam_link": asdict(model.cam_link),
    }
    save_container(path, "model", meta, arrays,
                   extra={"landmarks": _embedding_to_json(model.landmarks)},
                   float_dtype="<f4")


def load_model(path) -> HeadModel:
    """Load and validate a model asset; lists every violated invariant."""
    _, meta, arrays, extra = load_container(path, expect_kind="model")
    required = ("template", "faces", "shape_basis", "expr_basis", "pose_basis",
                "joint_regressor", "blend_weights", "joint_parents", "root_pivot")
    missing = [name for name in required if name not in arrays]
    if missing:
        raise ValueError(f"{path}: missing arrays {missing}")
    # restore the exact convexity invariants that float32 storage blurs;
    # generated assets are at an f32 fixed point, so a re-save is unchanged
    regressor = arrays["joint_regressor"]
    regressor = regressor / regressor.sum(axis=1, keepdims=True)
    blend = arrays["blend_weights"]
    blend = blend / blend.sum(axis=0, keepdims=True)
    return HeadModel(
        template=arrays["template"],
        faces=arrays["faces"],
        shape_basis=arrays["shape_basis"],
        expr_basis=arrays["expr_basis"],
        pose_basis=arrays["pose_basis"],
        joint_regressor=regressor,
        blend_weights=blend,
        joint_parents=arrays["joint_parents"],
        root_pivot=arrays["root_pivot"],
        landmarks=_embedding_from_json(extra["landmarks"]),
        cam_link=CameraLink(**meta["cam_link"]),
    )


# ---------------------------------------------------------------------------
# checkpoint


def config_to_dict(config: TrainConfig) -> dict:
    return asdict(config)


def config_from_dict(data: dict) -> TrainConfig:
    loss = LossWeights(**data.pop("loss"))
    return TrainConfig(loss=loss, **data)


def save_checkpoint(path, weights: EncoderWeights, optimizer: Adam,
                    config: TrainConfig, step: int) -> None:
    arrays = dict(weights.blocks())
    arrays["feat_mean"] = weights.feat_mean
    arrays["feat_scale"] = weights.feat_scale
    arrays.update(optimizer.state_arrays())
    meta = {
        "n_shape": weights.n_shape,
        "n_expr": weights.n_expr,
        "n_landmarks": weights.n_landmarks,
        "iterations": weights.iterations,
        "dropout": weights.dropout,
        "step": step,
        "adam_t": optimizer.t,
    }
    save_container(path, "checkpoint", meta, arrays,
                   extra={"config": config_to_dict(config)}, float_dtype="<f8")


def load_checkpoint(path) -> tuple[EncoderWeights, Adam, TrainConfig, int]:
    _, meta, arrays, extra = load_container(path, expect_kind="checkpoint")
    config = config_from_dict(extra["config"])
    weights = EncoderWeights(
        **{name: arrays[name] for name in TRAINED_BLOCKS},
        feat_mean=arrays["feat_mean"], feat_scale=arrays["feat_scale"],
        n_shape=meta["n_shape"], n_expr=meta["n_expr"],
        n_landmarks=meta["n_landmarks"], iterations=meta["iterations"],
        dropout=meta["dropout"])
    optimizer = Adam(config.learning_rate)
    optimizer.t = meta["adam_t"]
    for key, value in arrays.items():
        if key.startswith("m."):
            optimizer.m[key[2:]] = value
        elif key.startswith("v."):
            optimizer.v[key[2:]] = value
    return weights, optimizer, config, meta["step"]


# ---------------------------------------------------------------------------
# dataset


def save_dataset(path, dataset: Dataset) -> None:
    n = len(dataset.observations)
    n_params = 9 + dataset.n_shape + dataset.n_expr
    positions = np.stack([o.landmarks.positions for o in dataset.observations]) \
        if n else np.zeros((0, dataset.n_landmarks, 2))
    confidence = np.stack([o.landmarks.confidence for o in dataset.observations]) \
        if n else np.zeros((0, dataset.n_landmarks))
    identity = np.array([o.identity for o in dataset.observations], dtype=int)
    truth = np.stack([o.truth.to_vector() for o in dataset.observations]) \
        if n else np.zeros((0, n_params))
    meta = {"n_shape": dataset.n_shape, "n_expr": dataset.n_expr,
            "n_landmarks": dataset.n_landmarks}
    save_container(path, "dataset", meta,
                   {"positions": positions, "confidence": confidence,
                    "identity": identity, "truth": truth},
                   float_dtype="<f8")


def load_dataset(path) -> Dataset:
    _, meta, arrays, _ = load_container(path, expect_kind="dataset")
    observations = []
    for pos, conf, ident, truth in zip(arrays["positions"], arrays["confidence"],
                                       arrays["identity"], arrays["truth"]):
        observations.append(Observation(
            Landmarks2D(pos, conf), int(ident),
            ParamVector.from_vector(truth, meta["n_shape"], meta["n_expr"])))
    return Dataset(observations, meta["n_shape"], meta["n_expr"],
                   meta["n_landmarks"])


# ---------------------------------------------------------------------------
# key = value config files


def format_train_config(config: TrainConfig) -> str:
    data = config_to_dict(config)
    loss = data.pop("loss")
    lines = ["# training configuration"]
    for key, value in data.items():
        lines.append(f"{key} = {value}" if value is not None else f"# {key} =")
    for key, value in loss.items():
        lines.append(f"loss.{key} = {value}")
    return "\n".join(lines) + "\n"


def parse_train_config(text: str) -> TrainConfig:
    """Parse the documented `key = value` format (# starts a comment)."""
    base = config_to_dict(TrainConfig())
    loss = base.pop("loss")
    int_keys = {"ring_size", "slices", "iterations", "epochs", "steps",
                "hidden", "seed"}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key = value")
        key, _, value = (part.strip() for part in line.partition("="))
        target, field_name = (loss, key[5:]) if key.startswith("loss.") else (base, key)
        if field_name not in target:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        target[field_name] = (int(value) if key in int_keys else float(value))
    base["loss"] = loss
    return config_from_dict(base)
