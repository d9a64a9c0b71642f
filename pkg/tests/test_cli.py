import hashlib
import json

import numpy as np
import pytest

from engines.backbone import ABLATION_MODELS, ModelConfig, ablation_flags
from engines.detector import build_model
from engines.weights import save_weights
from programs.birdrone import ablate, gradcheck, train
from programs.birdrone.ablate import DELTA_KEYS, REPORT_FILE, RUNTIME_FAILURE, TABLE_FILE
from programs.birdrone.cli import main, parse_run_config
from programs.birdrone.config import RESOLVED_CONFIG, THREADS_ENV
from programs.birdrone.gradcheck import VERIFICATION_FAILED, GradcheckSuite
from programs.birdrone.render import PALETTE, box_pixels, draw_detections
from programs.birdrone.tables import ABLATION_COLUMNS, ablation_table
from programs.birdrone.train import LOG_FILE, WEIGHTS_FILE, model_config
from tools.dataset.data import BIRD, DRONE, BoundingBox, Detection, SizeBin
from tools.dataset.images import load_image, save_image
from tools.dataset.stats import size_bin
from tools.dataset.storage import available_splits, load_dataset


@pytest.fixture
def dataset(tmp_path):
    root = tmp_path / "data"
    code = main(
        ["generate", "--out", str(root), "--count", "10", "--seed", "3", "--image-size", "64", "--max-scale", "24"]
    )
    assert code == 0
    return root


def test_generate_writes_splits(dataset):
    assert available_splits(dataset) == ["train", "val", "test"]
    assert [len(load_dataset(dataset, name)) for name in ("train", "val", "test")] == [7, 2, 1]
    resolved = json.loads((dataset / "resolved_config.json").read_text())
    assert resolved["command"] == "generate" and resolved["count"] == 10


def tree_digest(root):
    digest = hashlib.sha256()
    for path in sorted(p for p in root.rglob("*") if p.is_file() and p.name != RESOLVED_CONFIG):
        digest.update(path.relative_to(root).as_posix().encode())
        digest.update(path.read_bytes())
    return digest.hexdigest()


def test_generate_is_hash_stable(tmp_path):
    roots = [tmp_path / "first", tmp_path / "second"]
    for root in roots:
        assert main(["generate", "--out", str(root), "--count", "100", "--seed", "7"]) == 0
    assert len(list((roots[0] / "images").iterdir())) == 100
    assert tree_digest(roots[0]) == tree_digest(roots[1])


def test_generate_small_bias_keeps_objects_under_32_px(tmp_path):
    root = tmp_path / "small"
    assert main(["generate", "--out", str(root), "--count", "30", "--seed", "1", "--small-bias", "1.0"]) == 0
    samples = load_dataset(root)
    assert sum(len(s.labels) for s in samples) >= 30
    for sample in samples:
        for box in sample.labels:
            assert box.w * sample.image_size < 32 and box.h * sample.image_size < 32
            assert size_bin(box, sample.image_size) in (SizeBin.EXTREMELY_SMALL, SizeBin.SMALL)


def test_generate_refuses_non_empty_directory(dataset):
    assert main(["generate", "--out", str(dataset), "--count", "10", "--image-size", "64"]) == 2
    assert main(["generate", "--out", str(dataset), "--count", "10", "--image-size", "64", "--force"]) == 0


@pytest.mark.parametrize(
    "argv",
    [
        [],
        ["fly"],
        ["train", "--data", "d", "--out", "o", "--model", "m7"],
        ["train", "--out", "o"],
        ["--threads", "0", "gradcheck"],
        ["gradcheck", "--module", "everything"],
    ],
)
def test_usage_errors_exit_one(argv):
    assert main(argv) == 1


def test_runtime_errors_exit_two(tmp_path):
    assert main(["generate", "--out", str(tmp_path / "d"), "--ratios", "0.5,0.5"]) == 2
    assert main(["train", "--data", str(tmp_path / "nowhere"), "--out", str(tmp_path / "run")]) == 2


def test_config_file_supplies_required_flags(tmp_path):
    out = tmp_path / "cfg_data"
    cfg = tmp_path / "gen.cfg"
    cfg.write_text(f"out = {out}\ncount = 10\nimage-size = 64\nmax_scale = 24\n")
    assert main(["--config", str(cfg), "generate", "--count", "12"]) == 0
    assert len(load_dataset(out)) == 12


def test_unknown_config_key_is_usage_error(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("colour = blue\n")
    assert main(["--config", str(cfg), "gradcheck"]) == 1


def test_threads_resolution(monkeypatch, tmp_path):
    monkeypatch.chdir(tmp_path)
    monkeypatch.setenv(THREADS_ENV, "5")
    assert parse_run_config(["gradcheck"])[0].threads == 5
    assert parse_run_config(["--threads", "2", "gradcheck"])[0].threads == 2


def test_gradcheck_passes_one_suite():
    assert main(["gradcheck", "--module", "spatial"]) == 0


def test_gradcheck_failure_exits_three(monkeypatch):
    monkeypatch.setitem(gradcheck.SUITES, "channel", GradcheckSuite("channel", lambda rng: 0.5, 1e-5))
    assert main(["gradcheck", "--module", "channel"]) == VERIFICATION_FAILED


def test_train_then_evaluate(dataset, tmp_path):
    run = tmp_path / "run"
    code = main(
        [
            "train", "--data", str(dataset), "--model", "m1", "--image-size", "64",
            "--epochs", "1", "--batch", "4", "--out", str(run),
        ]
    )  # fmt: skip
    assert code == 0
    assert (run / WEIGHTS_FILE).is_file()
    record = json.loads((run / LOG_FILE).read_text().splitlines()[0])
    assert record["epoch"] == 0

    report_path = run / "report.json"
    code = main(
        [
            "eval", "--data", str(dataset), "--weights", str(run / WEIGHTS_FILE), "--model", "m1",
            "--image-size", "64", "--no-timing", "--out", str(report_path),
        ]
    )  # fmt: skip
    assert code == 0
    report = json.loads(report_path.read_text())
    assert report["split"] == "test"
    assert 0.0 <= report["metrics"]["map50"] <= 1.0
    assert report["timing"]["ait_per_frame_s"] is None


def test_eval_from_stored_predictions(dataset, tmp_path):
    samples = load_dataset(dataset, "test")
    predictions = {
        s.id: [{"class_id": b.class_id, "cx": b.cx, "cy": b.cy, "w": b.w, "h": b.h, "confidence": 0.9} for b in s.labels]
        for s in samples
    }
    path = tmp_path / "predictions.json"
    path.write_text(json.dumps(predictions))
    out = tmp_path / "report.json"
    assert main(["eval", "--data", str(dataset), "--predictions", str(path), "--out", str(out)]) == 0
    metrics = json.loads(out.read_text())["metrics"]
    assert metrics["map50"] == 1.0
    assert metrics["accuracy"] == 100.0


def test_eval_needs_weights_or_predictions(dataset, tmp_path):
    assert main(["eval", "--data", str(dataset), "--out", str(tmp_path / "r.json")]) == 2


def test_infer_without_detections_returns_input(tmp_path, rng):
    weights = save_weights(build_model(model_config("m6", 64, 1)), tmp_path / "w.bdrn")
    image = rng.integers(0, 256, size=(1, 64, 64)) / 255.0
    source = save_image(tmp_path / "frame.ppm", image)
    out = tmp_path / "boxes.png"
    argv = ["infer", "--weights", str(weights), "--image", str(source), "--image-size", "64", "--conf", "1.0"]
    assert main([*argv, "--out", str(out)]) == 0
    drawn = load_image(out)
    assert drawn.shape == (3, 64, 64)
    for channel in drawn:
        np.testing.assert_array_equal(channel, image[0])


def test_each_detection_draws_one_outline_in_its_class_colour():
    image = np.full((1, 64, 64), 100 / 255)
    detections = [
        Detection(BoundingBox(DRONE, 0.3, 0.3, 0.2, 0.2), 0.9),
        Detection(BoundingBox(BIRD, 0.7, 0.65, 0.25, 0.15), 0.8),
    ]
    drawn = np.round(draw_detections(image, detections, tags=False) * 255).astype(int).transpose(1, 2, 0)
    changed = np.any(drawn != 100, axis=-1)

    expected = np.zeros((64, 64), dtype=bool)
    for detection in detections:
        left, top, right, bottom = box_pixels(detection, 64, 64)
        outline = np.zeros((64, 64), dtype=bool)
        outline[top : bottom + 1, left : right + 1] = True
        outline[top + 1 : bottom, left + 1 : right] = False
        assert (drawn[outline] == PALETTE[detection.class_id]).all()
        assert (drawn[top + 1 : bottom, left + 1 : right] == 100).all()
        expected |= outline
    np.testing.assert_array_equal(changed, expected)
    assert PALETTE[DRONE] == (255, 0, 0) and PALETTE[BIRD] == (0, 0, 255)


def test_logs_command(tmp_path):
    log = tmp_path / "train_log.jsonl"
    log.write_text(json.dumps({"epoch": 0, "lr": 0.01, "steps": 1, "losses": {"total": 2.0}}) + "\n")
    assert main(["logs", str(log)]) == 0
    assert main(["logs", str(tmp_path / "missing.jsonl")]) == 2


@pytest.fixture
def tiny_models(monkeypatch):
    def tiny(name, image_size, in_channels):
        return ModelConfig(
            image_size=image_size,
            in_channels=in_channels,
            stem_channels=4,
            widths=(8, 8, 8),
            csp_depth=1,
            flags=ablation_flags(name),
        )

    monkeypatch.setattr(train, "model_config", tiny)


def ablate_argv(dataset, out, *extra):
    return [
        "ablate", "--data", str(dataset), "--epochs", "1", "--batch", "4", "--image-size", "64",
        "--out", str(out), *extra,
    ]  # fmt: skip


def test_ablate_reports_all_six_models(dataset, tmp_path, tiny_models):
    out = tmp_path / "ablation"
    assert main(ablate_argv(dataset, out)) == 0
    document = json.loads((out / REPORT_FILE).read_text())
    rows = document["rows"]
    assert [row["model"] for row in rows] == list(ABLATION_MODELS) == ["m1", "m2", "m3", "m4", "m5", "m6"]
    for row in rows:
        assert row["metrics"] is not None and "error" not in row
        assert row["seconds"] > 0.0
        assert (out / row["model"] / WEIGHTS_FILE).is_file()

    by_name = {row["model"]: row["metrics"] for row in rows}
    deltas = document["m6_minus_m1"]
    assert set(deltas) <= set(DELTA_KEYS)
    for key, value in deltas.items():
        assert value == pytest.approx(by_name["m6"][key] - by_name["m1"][key])

    text = (out / TABLE_FILE).read_text()
    for name in ABLATION_MODELS:
        assert name.upper() in text
    table = ablation_table(rows)
    assert table.row_count == 6
    headers = [str(column.header) for column in table.columns]
    assert headers == list(ABLATION_COLUMNS)
    metric_columns = ["P", "R", "mAP@0.5", "mAP@0.5:0.95", "Accuracy %", "FN %", "FP %"]
    assert [h for h in headers if h in metric_columns] == metric_columns
    assert headers[-1] == "Wall-clock (s)"


def test_ablate_keeps_going_after_one_model_fails(dataset, tmp_path, tiny_models, monkeypatch):
    run_training = ablate.run_training

    def failing_m3(name, *args, **kwargs):
        if name == "m3":
            raise RuntimeError("out of memory")
        return run_training(name, *args, **kwargs)

    monkeypatch.setattr(ablate, "run_training", failing_m3)
    out = tmp_path / "ablation"
    assert main(ablate_argv(dataset, out, "--models", "m1,m3,m6")) == RUNTIME_FAILURE
    rows = {row["model"]: row for row in json.loads((out / REPORT_FILE).read_text())["rows"]}
    assert list(rows) == ["m1", "m3", "m6"]
    assert rows["m3"]["metrics"] is None
    assert rows["m3"]["error"] == "RuntimeError: out of memory"
    assert "seconds" in rows["m3"]
    assert rows["m1"]["metrics"] is not None and rows["m6"]["metrics"] is not None
    assert "failed" in (out / TABLE_FILE).read_text()
