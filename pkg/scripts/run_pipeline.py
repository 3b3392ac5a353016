#!/usr/bin/env python3
"""End-to-end desk experiment: asset, data, training, inference, benchmark.

Drives the same entry points as the `headfit` CLI and leaves every artifact
(model, datasets, checkpoint, loss curve, predictions, evaluation report)
under the chosen working directory.
"""

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from headfit import autodiff as ad
from headfit.assets import load_model, save_dataset
from headfit.camera import static_landmarks3d
from headfit.cli import main as cli
from headfit.objio import write_obj
from headfit.synth import SynthConfig, make_dataset
from headfit.training import neutral_mesh


def run(workdir: Path, seed: int, identities: int, per_identity: int,
        steps: int) -> None:
    workdir.mkdir(parents=True, exist_ok=True)
    model_path = workdir / "model.hfm"
    stamp = time.time()

    print("== generating model asset ==")
    cli(["gen-model", "--out", str(model_path), "--seed", str(seed)])
    model = load_model(model_path)

    print("== synthesizing train/validation datasets ==")
    ds = make_dataset(model, SynthConfig(identities=identities,
                                         per_identity=per_identity, seed=seed))
    train_set, held = ds.split_per_identity(max(1, per_identity // 4))
    save_dataset(workdir / "train.hfd", train_set)
    save_dataset(workdir / "held.hfd", held)

    print("== training ==")
    cli(["train", "--model", str(model_path),
         "--dataset", str(workdir / "train.hfd"),
         "--out-checkpoint", str(workdir / "encoder.hfc"),
         "--loss-csv", str(workdir / "loss.csv"),
         "--steps", str(steps), "--seed", str(seed)])

    print("== inference on held-out observations ==")
    cli(["infer", "--model", str(model_path),
         "--checkpoint", str(workdir / "encoder.hfc"),
         "--dataset", str(workdir / "held.hfd"),
         "--out-dir", str(workdir / "predictions"), "--neutral"])

    print("== building benchmark manifest (truth meshes as scans) ==")
    pairs = []
    for index, obs in enumerate(held.observations):
        scan_mesh = neutral_mesh(model, obs.truth.shape)
        with ad.no_grad():
            scan_lm = static_landmarks3d(scan_mesh.vertices, model.faces,
                                         model.landmarks).value
        scan_obj = workdir / "scans" / f"scan{index:04d}.obj"
        scan_obj.parent.mkdir(exist_ok=True)
        write_obj(scan_mesh, scan_obj)
        lm_path = workdir / "scans" / f"scan{index:04d}_lm.txt"
        lm_path.write_text("\n".join(
            " ".join(repr(float(v)) for v in row) for row in scan_lm))

        pred_mesh = workdir / "predictions" / f"obs{index:04d}.neutral.obj"
        pred_lm = workdir / "predictions" / f"obs{index:04d}.neutral_lm.txt"
        neutral = load_pred_landmarks(model, pred_mesh)
        pred_lm.write_text("\n".join(
            " ".join(repr(float(v)) for v in row) for row in neutral))
        pairs.append({
            "id": f"held{index:04d}",
            "prediction": str(pred_mesh.relative_to(workdir)),
            "prediction_landmarks": str(pred_lm.relative_to(workdir)),
            "scan": str(scan_obj.relative_to(workdir)),
            "scan_landmarks": str(lm_path.relative_to(workdir)),
            "challenge": "neutral",
        })
    manifest = workdir / "pairs.json"
    manifest.write_text(json.dumps({"pairs": pairs}, indent=1))

    print("== evaluating ==")
    cli(["eval", "--manifest", str(manifest),
         "--out-dir", str(workdir / "eval"), "--icp-iters", "15"])
    cli(["plot", str(workdir / "eval" / "curve.csv"),
         "--out", str(workdir / "eval" / "curve.svg"), "--labels", "held-out"])
    print(f"done in {time.time() - stamp:.0f}s; report at {workdir / 'eval'}")


def load_pred_landmarks(model, mesh_path: Path) -> np.ndarray:
    from headfit.objio import read_obj
    mesh = read_obj(mesh_path)
    with ad.no_grad():
        return static_landmarks3d(mesh.vertices, model.faces,
                                  model.landmarks).value


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--workdir", type=Path, default=Path("runs/pipeline"))
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--identities", type=int, default=8)
    parser.add_argument("--per-identity", type=int, default=8)
    parser.add_argument("--steps", type=int, default=2000)
    args = parser.parse_args()
    run(args.workdir, args.seed, args.identities, args.per_identity, args.steps)
