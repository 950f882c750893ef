import json
import subprocess
import sys

import pytest

from colorconstancy.cli import main
from colorconstancy.config import PRESETS, load_config, resolve
from colorconstancy.scene import ConfigError


# ---------------------------------------------------------------- configuration

def test_presets():
    full = resolve("full")
    assert full.frames_per_object == 1000 and full.train.n_pairs == 300 and full.train.epochs == 100
    assert full.probe.batch_size == 600 and full.probe.epochs == 200 and full.seeds == 5
    assert full.render.samples_per_pixel == 64
    desk = resolve("desk")
    assert desk.frames_per_object == 200 and desk.train.epochs == 40 and 2 * desk.train.n_pairs == 128
    assert desk.seeds == 3 and desk.build_scene().n_objects == 50
    assert set(PRESETS) == {"full", "desk", "tiny"}


def test_file_overrides_and_precedence(tmp_path):
    f = tmp_path / "run.toml"
    f.write_text('preset = "desk"\n[train]\ntau = 0.5\n[scene]\nn_lights = 6\n[probe]\nlayers = ["h", "x"]\n')
    cfg = load_config(f)
    assert cfg.preset == "desk" and cfg.train.tau == 0.5 and cfg.frames_per_object == 200
    assert cfg.build_scene().n_lights == 6 and cfg.layers == ("h", "x")
    assert load_config(f, preset="tiny").preset == "tiny"
    assert load_config().preset == "full"
    assert cfg.to_dict()["train"]["tau"] == 0.5


@pytest.mark.parametrize("text, field", [
    ("[train]\ntau = 0\n", "train.tau"),
    ("[scene]\nbogus = 1\n", "scene.bogus"),
    ("[render]\nsamples_per_pixel = 0\n", "render.samples_per_pixel"),
    ("[dataset]\nframes_per_object = 2\n", "dataset.frames_per_object"),
    ("[jitter]\nhue = 0.7\n", "jitter.hue"),
    ("[run]\nseeds = 0\n", "run.seeds"),
    ("[nonsense]\nx = 1\n", "nonsense"),
])
def test_config_errors_name_the_field(tmp_path, text, field):
    f = tmp_path / "bad.toml"
    f.write_text(text)
    with pytest.raises(ConfigError) as e:
        load_config(f)
    assert field in str(e.value)


# ---------------------------------------------------------------- command line

@pytest.fixture(scope="module")
def tiny_data(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "data"
    assert main(["gen-dataset", "--preset", "tiny", "--seed", "1", "--out", str(out)]) == 0
    return out


def test_gen_dataset(tiny_data, capsys):
    assert (tiny_data / "manifest.jsonl").exists() and (tiny_data / "run_manifest.json").exists()
    man = json.loads((tiny_data / "run_manifest.json").read_text())
    assert man["seed"] == 1 and set(man["artifacts"]) >= {"dataset.toml", "manifest.jsonl", "images.npy"}
    assert man["config"]["preset"] == "tiny" and "software_version" in man


def test_gen_dataset_is_idempotent(tiny_data, tmp_path):
    again = tmp_path / "again"
    main(["gen-dataset", "--preset", "tiny", "--seed", "1", "--out", str(again)])
    a = json.loads((tiny_data / "run_manifest.json").read_text())["artifacts"]
    b = json.loads((again / "run_manifest.json").read_text())["artifacts"]
    assert a == b


def test_train_zero_epochs(tiny_data, tmp_path):
    out = tmp_path / "z"
    assert main(["train", "--preset", "tiny", "--mode", "ssl", "--epochs", "0", "--data", str(tiny_data),
                 "--out", str(out)]) == 0
    assert sorted(p.name for p in out.glob("*.ckpt")) == ["epoch0000.ckpt"]


def test_train_probe_export_report_curve(tiny_data, tmp_path, capsys):
    run = tmp_path / "ssl"
    assert main(["train", "--preset", "tiny", "--mode", "ssl", "--data", str(tiny_data), "--out", str(run)]) == 0
    ck = run / "epoch0002.ckpt"
    assert ck.exists()
    assert main(["probe", "--preset", "tiny", "--checkpoint", str(ck), "--data", str(tiny_data),
                 "--layers", "h,x", "--tasks", "object", "--seeds", "2", "--out", str(tmp_path / "p")]) == 0
    rep = json.loads((tmp_path / "p" / "report.json").read_text())
    assert {(s["layer"], s["n_seeds"]) for s in rep["summary"]} == {("h", 2), ("x", 2)}
    assert main(["export-embeddings", "--checkpoint", str(ck), "--data", str(tiny_data),
                 "--out", str(tmp_path / "e.csv")]) == 0
    assert (tmp_path / "e.csv").exists()
    assert main(["report", "--metrics", str(tmp_path / "p" / "metrics.csv"), "--out", str(tmp_path / "r")]) == 0
    rr = json.loads((tmp_path / "r" / "report.json").read_text())
    assert [c["name"] for c in rr["comparisons"]] == ["h_vs_x_object"]
    assert main(["curve", "--preset", "tiny", "--runs", str(run), "--data", str(tiny_data),
                 "--out", str(tmp_path / "c")]) == 0
    assert len((tmp_path / "c" / "curve.tsv").read_text().splitlines()) == 1 + 3
    assert (tmp_path / "c" / "learning_curve_object.png").exists()


def test_jitter_and_supervised_modes(tiny_data, tmp_path):
    for mode in ("jitter", "supervised"):
        out = tmp_path / mode
        assert main(["train", "--preset", "tiny", "--mode", mode, "--data", str(tiny_data), "--out", str(out)]) == 0
        assert (out / "epoch0002.ckpt").exists() and (out / "run_manifest.json").exists()


def test_inspect(capsys):
    assert main(["inspect"]) == 0
    assert "61156" in capsys.readouterr().out


def test_render_diagnostic(tmp_path):
    assert main(["render-diagnostic", "--preset", "tiny", "--out", str(tmp_path)]) == 0
    diag = json.loads((tmp_path / "diagnostic.json").read_text())
    assert diag["p95_luminance"] == pytest.approx(1.0, abs=1e-6)
    assert (tmp_path / "reference.png").exists()


def test_error_exits(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("[train]\ntau = -1\n")
    assert main(["train", "--config", str(bad), "--mode", "ssl", "--data", str(tmp_path), "--out",
                 str(tmp_path / "o")]) == 2
    assert "train.tau" in capsys.readouterr().err
    assert main(["probe", "--checkpoint", str(tmp_path / "none.ckpt"), "--data", str(tmp_path / "none"),
                 "--out", str(tmp_path / "o")]) == 1
    with pytest.raises(SystemExit) as e:
        main(["train", "--no-such-flag"])
    assert e.value.code != 0
    with pytest.raises(SystemExit):
        main(["probe", "--checkpoint", "x", "--data", "y", "--out", "z", "--layers", "h,q"])


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "colorconstancy.cli", "inspect", "--d-z", "128"],
                       capture_output=True, text=True, check=True)
    assert "128" in r.stdout
