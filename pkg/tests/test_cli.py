import json

import numpy as np
import pytest

from headfit import autodiff as ad
from headfit.assets import load_checkpoint, load_model
from headfit.camera import static_landmarks3d
from headfit.cli import main
from headfit.encoder import EncoderWeights
from headfit.headmodel import ParamVector, decode
from headfit.objio import read_obj, write_obj


GEN_ARGS = ["--rings", "10", "--segments", "14", "--shape-dims", "6",
            "--expr-dims", "3", "--static-landmarks", "12",
            "--contour-landmarks", "7"]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["gen-model", "--out", str(root / "model.hfm"), *GEN_ARGS]) == 0
    assert main(["synth", "--model", str(root / "model.hfm"),
                 "--out", str(root / "data.hfd"),
                 "--identities", "3", "--per-identity", "4",
                 "--seed", "3"]) == 0
    return root


def test_gen_model_deterministic(tmp_path):
    for name in ("a.hfm", "b.hfm"):
        assert main(["gen-model", "--out", str(tmp_path / name), *GEN_ARGS,
                     "--seed", "4"]) == 0
    assert (tmp_path / "a.hfm").read_bytes() == (tmp_path / "b.hfm").read_bytes()


def test_synth_deterministic_per_seed(workspace, tmp_path):
    for name in ("a.hfd", "b.hfd"):
        assert main(["synth", "--model", str(workspace / "model.hfm"),
                     "--out", str(tmp_path / name), "--identities", "2",
                     "--per-identity", "3", "--seed", "17"]) == 0
    assert (tmp_path / "a.hfd").read_bytes() == (tmp_path / "b.hfd").read_bytes()
    assert main(["synth", "--model", str(workspace / "model.hfm"),
                 "--out", str(tmp_path / "c.hfd"), "--identities", "2",
                 "--per-identity", "3", "--seed", "18"]) == 0
    assert (tmp_path / "a.hfd").read_bytes() != (tmp_path / "c.hfd").read_bytes()


def test_train_zero_epochs_keeps_initial_weights(workspace, tmp_path):
    ck = tmp_path / "ck.hfc"
    assert main(["train", "--model", str(workspace / "model.hfm"),
                 "--dataset", str(workspace / "data.hfd"),
                 "--out-checkpoint", str(ck), "--epochs", "0",
                 "--hidden", "16", "--seed", "9"]) == 0
    weights, optimizer, config, step = load_checkpoint(ck)
    assert step == 0 and optimizer.t == 0
    dataset_landmarks = weights.n_landmarks
    reference = EncoderWeights.init(np.random.default_rng(9),
                                    dataset_landmarks, weights.n_shape,
                                    weights.n_expr, hidden=16,
                                    iterations=config.iterations,
                                    dropout=config.dropout)
    for name, block in reference.blocks().items():
        assert np.array_equal(block, weights.blocks()[name])


def test_train_byte_deterministic(workspace, tmp_path):
    outputs = []
    for tag in ("one", "two"):
        ck = tmp_path / f"{tag}.hfc"
        csv = tmp_path / f"{tag}.csv"
        assert main(["train", "--model", str(workspace / "model.hfm"),
                     "--dataset", str(workspace / "data.hfd"),
                     "--out-checkpoint", str(ck), "--loss-csv", str(csv),
                     "--steps", "4", "--ring-size", "3", "--slices", "1",
                     "--hidden", "16", "--seed", "7"]) == 0
        outputs.append((ck.read_bytes(), csv.read_bytes()))
    assert outputs[0] == outputs[1]


def test_train_with_config_file(workspace, tmp_path):
    cfg = tmp_path / "train.cfg"
    cfg.write_text("ring_size = 3\nslices = 1\nsteps = 2\nhidden = 16\n"
                   "loss.margin = 0.4\n")
    ck = tmp_path / "ck.hfc"
    assert main(["train", "--model", str(workspace / "model.hfm"),
                 "--dataset", str(workspace / "data.hfd"),
                 "--out-checkpoint", str(ck), "--config", str(cfg)]) == 0
    _, _, config, step = load_checkpoint(ck)
    assert step == 2 and config.loss.margin == 0.4 and config.ring_size == 3


def test_infer_writes_mesh_and_params(workspace, tmp_path):
    ck = tmp_path / "ck.hfc"
    main(["train", "--model", str(workspace / "model.hfm"),
          "--dataset", str(workspace / "data.hfd"),
          "--out-checkpoint", str(ck), "--steps", "2", "--ring-size", "3",
          "--slices", "1", "--hidden", "16", "--seed", "1"])
    out = tmp_path / "preds"
    assert main(["infer", "--model", str(workspace / "model.hfm"),
                 "--checkpoint", str(ck),
                 "--dataset", str(workspace / "data.hfd"),
                 "--out-dir", str(out), "--indices", "0,2",
                 "--neutral"]) == 0
    model = load_model(workspace / "model.hfm")
    mesh = read_obj(out / "obs0000.obj")
    assert mesh.vertices.shape == (model.n_vertices, 3)
    assert (out / "obs0002.params.txt").exists()
    assert (out / "obs0000.neutral.obj").exists()


def test_fit_command(workspace, tmp_path):
    assert main(["fit", "--model", str(workspace / "model.hfm"),
                 "--dataset", str(workspace / "data.hfd"), "--index", "1",
                 "--out-params", str(tmp_path / "p.txt"),
                 "--out-mesh", str(tmp_path / "m.obj"),
                 "--iters", "15"]) == 0
    text = (tmp_path / "p.txt").read_text()
    assert text.startswith("cam = ")
    assert (tmp_path / "m.obj").exists()


def test_eval_self_prediction_zero_median(workspace, tmp_path):
    model = load_model(workspace / "model.hfm")
    params = ParamVector.zeros(model.n_shape, model.n_expr)
    params.shape[0] = 0.8
    mesh = decode(model, params)
    write_obj(mesh, tmp_path / "scan.obj")
    with ad.no_grad():
        lm = static_landmarks3d(mesh.vertices, model.faces, model.landmarks).value
    (tmp_path / "lm.txt").write_text(
        "\n".join(" ".join(repr(float(v)) for v in row) for row in lm))
    manifest = {"pairs": [{
        "id": "self", "prediction": "scan.obj", "prediction_landmarks": "lm.txt",
        "scan": "scan.obj", "scan_landmarks": "lm.txt", "challenge": "neutral",
    }]}
    (tmp_path / "pairs.json").write_text(json.dumps(manifest))
    out = tmp_path / "eval"
    assert main(["eval", "--manifest", str(tmp_path / "pairs.json"),
                 "--out-dir", str(out)]) == 0
    report = (out / "report.txt").read_text()
    assert "median 0.0000 mm" in report
    assert (out / "curve.csv").exists() and (out / "curve.svg").exists()


def test_eval_missing_prediction_reported(workspace, tmp_path):
    model = load_model(workspace / "model.hfm")
    mesh = decode(model, ParamVector.zeros(model.n_shape, model.n_expr))
    write_obj(mesh, tmp_path / "scan.obj")
    (tmp_path / "lm.txt").write_text(
        "\n".join(" ".join(repr(float(v)) for v in row)
                  for row in mesh.vertices[:5]))
    manifest = {"pairs": [{"id": "gone", "scan": "scan.obj",
                           "scan_landmarks": "lm.txt"}]}
    (tmp_path / "pairs.json").write_text(json.dumps(manifest))
    out = tmp_path / "eval"
    assert main(["eval", "--manifest", str(tmp_path / "pairs.json"),
                 "--out-dir", str(out)]) == 0
    assert "FAILED" in (out / "report.txt").read_text()


def test_ablate_writes_table(workspace, tmp_path):
    out = tmp_path / "ablation.csv"
    assert main(["ablate", "--model", str(workspace / "model.hfm"),
                 "--dataset", str(workspace / "data.hfd"),
                 "--val-dataset", str(workspace / "data.hfd"),
                 "--ring-sizes", "3", "--steps", "2", "--out", str(out),
                 "--seed", "2"]) == 0
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "ring_size,median_mm,mean_mm,std_mm"
    assert len(lines) == 2 and lines[1].startswith("3,")


def test_plot_renders_svg(workspace, tmp_path):
    csv = tmp_path / "c.csv"
    csv.write_text("threshold_mm,fraction\n0.0,0.0\n1.0,0.5\n2.0,1.0\n")
    out = tmp_path / "c.svg"
    assert main(["plot", str(csv), "--out", str(out),
                 "--labels", "demo"]) == 0
    text = out.read_text()
    assert text.startswith("<svg") and "polyline" in text and "demo" in text


def test_full_pipeline_smoke(tmp_path):
    # gen-model -> synth -> train -> infer -> eval, all through the CLI
    model_path = tmp_path / "model.hfm"
    assert main(["gen-model", "--out", str(model_path), *GEN_ARGS]) == 0
    assert main(["synth", "--model", str(model_path),
                 "--out", str(tmp_path / "data.hfd"), "--identities", "2",
                 "--per-identity", "3", "--seed", "1"]) == 0
    assert main(["train", "--model", str(model_path),
                 "--dataset", str(tmp_path / "data.hfd"),
                 "--out-checkpoint", str(tmp_path / "ck.hfc"),
                 "--steps", "3", "--ring-size", "3", "--slices", "1",
                 "--hidden", "16", "--seed", "1"]) == 0
    assert main(["infer", "--model", str(model_path),
                 "--checkpoint", str(tmp_path / "ck.hfc"),
                 "--dataset", str(tmp_path / "data.hfd"),
                 "--out-dir", str(tmp_path / "preds"), "--neutral"]) == 0

    # pair each predicted neutral mesh with its identity's true neutral mesh
    from headfit.assets import load_dataset
    from headfit.training import neutral_mesh

    model = load_model(model_path)
    dataset = load_dataset(tmp_path / "data.hfd")
    pairs = []
    for index, obs in enumerate(dataset.observations):
        scan = neutral_mesh(model, obs.truth.shape)
        write_obj(scan, tmp_path / f"scan{index}.obj")
        with ad.no_grad():
            scan_lm = static_landmarks3d(scan.vertices, model.faces,
                                         model.landmarks).value
        (tmp_path / f"scan{index}_lm.txt").write_text("\n".join(
            " ".join(repr(float(v)) for v in row) for row in scan_lm))
        pred = read_obj(tmp_path / "preds" / f"obs{index:04d}.neutral.obj")
        with ad.no_grad():
            pred_lm = static_landmarks3d(pred.vertices, model.faces,
                                         model.landmarks).value
        (tmp_path / f"pred{index}_lm.txt").write_text("\n".join(
            " ".join(repr(float(v)) for v in row) for row in pred_lm))
        pairs.append({"id": f"obs{index}",
                      "prediction": f"preds/obs{index:04d}.neutral.obj",
                      "prediction_landmarks": f"pred{index}_lm.txt",
                      "scan": f"scan{index}.obj",
                      "scan_landmarks": f"scan{index}_lm.txt"})
    (tmp_path / "pairs.json").write_text(json.dumps({"pairs": pairs}))
    assert main(["eval", "--manifest", str(tmp_path / "pairs.json"),
                 "--out-dir", str(tmp_path / "eval"), "--align", "landmarks",
                 "--threads", "2"]) == 0
    report = (tmp_path / "eval" / "report.txt").read_text()
    assert "overall: median" in report
    assert (tmp_path / "eval" / "curve.svg").read_text().startswith("<svg")


def test_unknown_flag_exits_2(workspace):
    with pytest.raises(SystemExit) as excinfo:
        main(["gen-model", "--no-such-flag"])
    assert excinfo.value.code == 2


def test_runtime_error_exits_1(tmp_path):
    assert main(["synth", "--model", str(tmp_path / "missing.hfm"),
                 "--out", str(tmp_path / "d.hfd")]) == 1
