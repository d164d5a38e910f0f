from __future__ import annotations

import warnings

import pytest

from uhdres import selftest
from uhdres.__main__ import _nicer_showwarning
from uhdres.__main__ import cli
from uhdres.bench import BENCH_HEADER
from uhdres.spectral import PERTURBATION_HEADER

TINY = """
initial_channels = 4
level_channels = 4, 8, 16
level_depths = 1, 1, 1
patch_size = 8
batch_size = 1
total_steps = 2
eval_every = 2
checkpoint_every = 2
"""


@pytest.fixture(autouse=True)
def keep_showwarning(monkeypatch):
    monkeypatch.setattr(warnings, "showwarning", warnings.showwarning)


@pytest.fixture
def trained(tmp_path, capsys):
    """A synthetic dataset and a checkpoint trained on it for two steps."""
    cli(["synth", "--out", str(tmp_path / "data"), "--count", "2", "--size", "16", "--kind", "noise"])
    config = tmp_path / "tiny.cfg"
    config.write_text(TINY)
    cli(["train", "--data", str(tmp_path / "data"), "--out", str(tmp_path / "run"), "--config", str(config)])
    capsys.readouterr()
    return tmp_path


def test_cli_usage(capsys):
    with pytest.raises(SystemExit, match="1"):
        cli([])
    assert capsys.readouterr().out.startswith("usage:")

    with pytest.raises(SystemExit, match="1"):
        cli(["infer", "--ckpt", "model.uhdr"])
    assert "required" in capsys.readouterr().err

    with pytest.raises(SystemExit, match="1"):
        cli(["perturb", "--eps", "a,b", "--out", "x.csv"])
    assert "comma-separated numbers" in capsys.readouterr().err


def test_cli_version(capsys):
    cli(["--version"])
    out = capsys.readouterr().out
    assert out.startswith("uhdres: ")
    assert "numpy: " in out


def test_synth(tmp_path, capsys):
    cli(["synth", "--out", str(tmp_path), "--count", "3", "--size", "12"])
    assert "Wrote 3 lowlight pairs" in capsys.readouterr().out
    assert sorted(p.name for p in (tmp_path / "gt").iterdir()) == ["0000.ppm", "0001.ppm", "0002.ppm"]


def test_train(trained, capsys):
    run = trained / "run"
    assert (run / "ckpt_000002.uhdr").exists()
    assert len((run / "train_log.csv").read_text().splitlines()) == 3

    cli(
        [
            "train",
            "--data",
            str(trained / "data"),
            "--out",
            str(run),
            "--config",
            str(trained / "tiny.cfg"),
            "--resume",
            str(run / "ckpt_000002.uhdr"),
        ]
    )
    assert "Resuming at step 2." in capsys.readouterr().out


def test_infer_is_deterministic(trained):
    ckpt = str(trained / "run" / "ckpt_000002.uhdr")
    image = str(trained / "data" / "lq" / "0000.ppm")
    cli(["infer", "--ckpt", ckpt, "--in", image, "--out", str(trained / "a.ppm")])
    cli(["infer", "--ckpt", ckpt, "--in", image, "--out", str(trained / "b.ppm")])
    first = (trained / "a.ppm").read_bytes()
    assert first.startswith(b"P6\n16 16\n255\n")
    assert first == (trained / "b.ppm").read_bytes()


def test_evaluate(trained, capsys):
    out = trained / "scores.csv"
    cli(["evaluate", "--ckpt", str(trained / "run" / "ckpt_000002.uhdr"), "--data", str(trained / "data"), "--out", str(out)])
    lines = out.read_text().splitlines()
    assert lines[0] == "id,psnr_db,ssim"
    assert [line.split(",")[0] for line in lines[1:]] == ["0000", "0001"]
    assert "mean" in capsys.readouterr().out


def test_bench(trained, capsys):
    out = trained / "bench.csv"
    html = trained / "bench.html"
    cli(
        [
            "bench",
            "--ckpt",
            str(trained / "run" / "ckpt_000002.uhdr"),
            "--sizes",
            "16,32",
            "--warmup",
            "0",
            "--repeats",
            "1",
            "--out",
            str(out),
            "--html",
            str(html),
        ]
    )
    lines = out.read_text().splitlines()
    assert lines[0] == ",".join(BENCH_HEADER)
    assert lines[2].startswith("32,32,2,")
    assert "Inference efficiency" in html.read_text()
    assert "thread(s)" in capsys.readouterr().out


def test_bench_random_init(tmp_path):
    config = tmp_path / "tiny.cfg"
    config.write_text(TINY)
    out = tmp_path / "bench.csv"
    cli(["bench", "--random-init", "--config", str(config), "--sizes", "8", "--warmup", "0", "--repeats", "1", "--out", str(out)])
    assert out.read_text().splitlines()[1].startswith("8,8,1,")

    with pytest.raises(SystemExit, match="1"):
        cli(["bench", "--out", str(out)])


def test_perturb(tmp_path, capsys):
    out = tmp_path / "perturb.csv"
    html = tmp_path / "perturb.html"
    cli(["perturb", "--eps", "0.1,0.3", "--seeds", "1", "--out", str(out), "--html", str(html)])
    lines = out.read_text().splitlines()
    assert lines[0] == ",".join(PERTURBATION_HEADER)
    assert len(lines) == 1 + 5 * 2 * 2
    stdout = capsys.readouterr().out
    assert "phase" in stdout and "amplitude" in stdout
    assert html.read_text().startswith("<!doctype html>")


def test_footer_text(tmp_path):
    html = tmp_path / "perturb.html"
    cli(
        [
            "--footer-text",
            "lab run 7",
            "perturb",
            "--eps",
            "0.1",
            "--seeds",
            "1",
            "--out",
            str(tmp_path / "perturb.csv"),
            "--html",
            str(html),
        ]
    )
    assert "<footer>lab run 7</footer>" in html.read_text()

    cli(["perturb", "--eps", "0.1", "--seeds", "1", "--out", str(tmp_path / "perturb.csv"), "--html", str(html)])
    assert "<footer>generated by uhdres " in html.read_text()


def test_perturb_image_directory(trained):
    out = trained / "perturb.csv"
    cli(["perturb", "--images", str(trained / "data" / "gt"), "--eps", "0.2", "--seeds", "1", "--out", str(out)])
    assert out.read_text().splitlines()[1].startswith("0000,")

    with pytest.raises(SystemExit, match="2"):
        cli(["perturb", "--images", str(trained / "run"), "--out", str(out)])


def test_params(capsys):
    cli(["params"])
    out = capsys.readouterr().out
    assert "351,867" in out
    cli(["params", "--kernels", "id-3-7-11", "--depth", "1"])
    assert "333,435" in capsys.readouterr().out


def test_selftest(capsys):
    cli(["selftest", "--seeds", "0", "--no-full-model"])
    assert "checks passed" in capsys.readouterr().out


def test_selftest_failure(monkeypatch, capsys):
    monkeypatch.setattr(selftest, "run_selftest", lambda seeds, full_model: [selftest.CheckResult("broken", False)])
    with pytest.raises(SystemExit, match="2"):
        cli(["selftest"])
    assert "FAIL broken" in capsys.readouterr().out


def test_exit_codes(tmp_path, capsys):
    bad_config = tmp_path / "bad.cfg"
    bad_config.write_text("width = 3\n")
    with pytest.raises(SystemExit, match="1"):
        cli(["params", "--config", str(bad_config)])
    assert "unknown configuration key" in capsys.readouterr().err

    garbage = tmp_path / "garbage.uhdr"
    garbage.write_bytes(b"not a checkpoint")
    with pytest.raises(SystemExit, match="2"):
        cli(["infer", "--ckpt", str(garbage), "--in", "x.ppm", "--out", "y.ppm"])
    assert "Not a uhdres checkpoint" in capsys.readouterr().err

    with pytest.raises(SystemExit, match="2"):
        cli(["evaluate", "--ckpt", str(tmp_path / "missing.uhdr"), "--data", str(tmp_path)])

    with pytest.raises(SystemExit, match="2"):
        cli(["bench", "--random-init", "--sizes", "4", "--out", str(tmp_path / "b.csv")])


def test_patch_showwarnings(capsys, monkeypatch):
    monkeypatch.setattr(warnings, "showwarning", _nicer_showwarning)

    warnings.warn("test")
    assert capsys.readouterr().err.startswith("Warn: test (")

    warnings.warn("test", RuntimeWarning)
    assert capsys.readouterr().err == "Warn: test\n"

    warnings.warn("test", SyntaxWarning)
    assert capsys.readouterr().err.startswith("SyntaxWarning: test (")
