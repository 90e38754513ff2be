import json

import numpy as np
import pytest
from PIL import Image as PILImage

from salfuse.cli import load_config, main
from salfuse.fusion import FusionParams
from salfuse.synthetic import complementarity_corpus, write_corpus


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    write_corpus(complementarity_corpus(3, 32, seed=4), root, name="tiny")
    return root


def _exit_code(argv):
    try:
        return main(argv)
    except SystemExit as exc:
        return exc.code


def test_usage_errors_exit_1(tmp_path, capsys):
    assert _exit_code([]) == 1
    assert _exit_code(["nonsense"]) == 1
    assert _exit_code(["rbd", "x.png"]) == 1  # --out missing
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("colour = 3\n")
    assert _exit_code(["rbd", "x.png", "--out", "y.png", "--config", str(cfg)]) == 1
    assert "unknown config key" in capsys.readouterr().err


def test_missing_input_exit_2(tmp_path, capsys):
    assert main(["rbd", str(tmp_path / "none.png"), "--out", str(tmp_path / "o.png")]) == 2
    assert "none.png" in capsys.readouterr().err


def test_load_config_values(tmp_path):
    cfg = tmp_path / "s.cfg"
    cfg.write_text("[rbd]\nsigma_clr = 12.5  # comment\nn-seg = 150\nscales = [100, 200]\nmodel = \"m.sfn\"\n")
    assert load_config(cfg) == {"sigma_clr": 12.5, "n_seg": 150, "scales": [100, 200], "model": "m.sfn"}


def test_slic_writes_labels_and_sidecar(corpus_dir, tmp_path):
    out = tmp_path / "labels.png"
    assert main(["slic", str(corpus_dir / "images" / "0000.png"), "--n", "16", "--out", str(out)]) == 0
    labels = np.asarray(PILImage.open(out))
    side = json.loads(out.with_suffix(".json").read_text())
    assert labels.shape == (32, 32)
    assert labels.max() + 1 == side["num_superpixels"]
    assert sum(sp["area_px"] for sp in side["superpixels"]) == 32 * 32


def test_rbd_mssf_and_infer(corpus_dir, tmp_path):
    img = str(corpus_dir / "images" / "0001.png")
    assert main(["rbd", img, "--out", str(tmp_path / "r.png"), "--n-seg", "30"]) == 0
    r = np.asarray(PILImage.open(tmp_path / "r.png"))
    assert r.shape == (32, 32) and r.max() == 255

    assert main(["mssf", img, str(tmp_path / "r.png"), "--scales", "8,16", "--out", str(tmp_path / "m.png")]) == 0
    assert np.asarray(PILImage.open(tmp_path / "m.png")).shape == (32, 32)

    FusionParams.zeros().save(tmp_path / "z.sfn")
    argv = ["fuse-infer", "--model", str(tmp_path / "z.sfn"), "--deep", str(corpus_dir / "deep" / "0001.png")]
    assert main(argv + ["--rbd", str(tmp_path / "r.png"), "--out", str(tmp_path / "f.png"), "--work-size", "16"]) == 0
    assert np.all(np.asarray(PILImage.open(tmp_path / "f.png")) == 128)


def test_mssf_bad_scales_exit_2(corpus_dir, tmp_path):
    img = str(corpus_dir / "images" / "0001.png")
    argv = ["mssf", img, str(corpus_dir / "deep" / "0001.png"), "--scales", "20,10", "--out", str(tmp_path / "m.png")]
    assert main(argv) == 2


def test_train_eval_run_plot(corpus_dir, tmp_path):
    manifest = str(corpus_dir / "manifest.json")
    model = tmp_path / "model.sfn"
    argv = ["fuse-train", "--manifest", manifest, "--model-out", str(model), "--loss-csv", str(tmp_path / "loss.csv")]
    assert main(argv + ["--max-iter", "5", "--base-lr", "0.5", "--work-size", "16"]) == 0
    assert FusionParams.load(model).arch.hidden == 8
    assert len((tmp_path / "loss.csv").read_text().splitlines()) == 6

    out = tmp_path / "run"
    argv = ["run", "--manifest", manifest, "--out-dir", str(out), "--model", str(model), "--scales", "8,16"]
    assert main(argv + ["--work-size", "16"]) == 0
    for stage in ("rbd", "deep", "ds", "dsm"):
        assert (out / "reports" / f"{stage}.json").exists()

    assert main(["eval", "--manifest", manifest, "--pred-dir", str(out / "dsm"), "--out-dir", str(tmp_path / "ev")]) == 0
    rep = json.loads((tmp_path / "ev" / "dsm.json").read_text())
    assert rep["mean_mae"] == json.loads((out / "reports" / "dsm.json").read_text())["mean_mae"]

    svg = tmp_path / "pr.svg"
    assert main(["plot", str(out / "reports" / "rbd.json"), str(out / "reports" / "dsm.json"), "--out", str(svg)]) == 0
    assert svg.read_text().startswith("<svg")


def test_eval_gate_exit_3(corpus_dir, tmp_path):
    preds = tmp_path / "preds"
    preds.mkdir()
    # Only one of three predictions present: 2/3 skipped.
    (preds / "0000.png").write_bytes((corpus_dir / "deep" / "0000.png").read_bytes())
    argv = ["eval", "--manifest", str(corpus_dir / "manifest.json"), "--pred-dir", str(preds)]
    assert main(argv + ["--out-dir", str(tmp_path / "ev")]) == 3


def test_run_gate_exit_3(tmp_path):
    root = tmp_path / "c"
    write_corpus(complementarity_corpus(2, 24, seed=8), root)
    (root / "images" / "0001.png").write_bytes(b"broken")
    argv = ["run", "--manifest", str(root / "manifest.json"), "--out-dir", str(tmp_path / "o")]
    assert main(argv) == 3


def test_config_file_feeds_run(corpus_dir, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("scales = 8,16\nwork_size = 16\n")
    out = tmp_path / "o"
    argv = ["run", "--manifest", str(corpus_dir / "manifest.json"), "--out-dir", str(out), "--config", str(cfg)]
    assert main(argv) == 0
    summary = json.loads((out / "reports" / "summary.json").read_text())
    assert summary["config"]["scales"] == [8, 16] and summary["config"]["work_size"] == 16
