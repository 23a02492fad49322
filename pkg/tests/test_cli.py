import json

import pytest

from ganlab.cli import main

TINY = """\
[generator]
hidden_dims = 8
[discriminator]
hidden_dims = 8
[variant]
kind = gan_r1
lambda = 1
[train]
iters = 20
batch_size = 8
seeds = 0
checkpoint_every = 10
[diagnostics]
every = 10
n_anchors = 4
slice_points = 11
frozen_fakes = 4
coverage_samples = 50
field_points = 3
"""


@pytest.fixture
def config(tmp_path):
    p = tmp_path / "tiny.ini"
    p.write_text(TINY)
    return p


class TestExitCodes:
    def test_train_ok(self, config, tmp_path):
        assert main(["train", "--config", str(config), "--out", str(tmp_path / "out")]) == 0
        assert (tmp_path / "out" / "seed_0" / "metrics.csv").exists()

    def test_train_resume(self, config, tmp_path):
        out = str(tmp_path / "out")
        assert main(["train", "--config", str(config), "--out", out, "--seed", "4"]) == 0
        assert main(["train", "--config", str(config), "--out", out, "--seed", "4", "--resume"]) == 0

    def test_bad_value_is_a_config_error(self, tmp_path, capsys):
        p = tmp_path / "bad.ini"
        p.write_text(TINY.replace("lambda = 1", "lambda = -1"))
        assert main(["train", "--config", str(p)]) == 1
        assert "variant.lambda" in capsys.readouterr().err

    def test_unknown_key(self, tmp_path, capsys):
        p = tmp_path / "bad.ini"
        p.write_text(TINY.replace("iters = 20", "itres = 20"))
        assert main(["train", "--config", str(p)]) == 1
        assert "train.itres" in capsys.readouterr().err

    def test_missing_file(self, tmp_path):
        assert main(["train", "--config", str(tmp_path / "missing.ini")]) == 1

    def test_usage_error(self):
        assert main(["frobnicate"]) == 1

    def test_dirac_ok(self, tmp_path):
        out = tmp_path / "d"
        assert main(["dirac", "--preset", "dirac-plain", "--iters", "100", "--out", str(out)]) == 0
        assert len((out / "history.csv").read_text().splitlines()) == 102
        assert any((out / "curves").iterdir())

    def test_dirac_penalty_and_replay(self, tmp_path):
        args = ["dirac", "--preset", "dirac-replay", "--iters", "50", "--penalty", "r1:1", "--replay"]
        assert main(args + ["--out", str(tmp_path)]) == 0

    def test_dirac_bad_penalty(self, tmp_path):
        assert main(["dirac", "--preset", "dirac-plain", "--penalty", "l2", "--out", str(tmp_path)]) == 1

    def test_dirac_divergence_is_numerical_failure(self, tmp_path):
        assert main(["dirac", "--preset", "dirac-plain", "--lr", "1e7", "--iters", "10", "--out", str(tmp_path)]) == 2

    def test_diag(self, config, tmp_path):
        out = tmp_path / "out"
        main(["train", "--config", str(config), "--out", str(out)])
        ckpt = out / "seed_0" / "ckpt"
        args = ["diag", "--checkpoint", str(ckpt / "D_000020.ckpt"), "--generator", str(ckpt / "G_000020.ckpt"),
                "--dataset", "ring:radius=2,mode_std=0.05", "--out", str(tmp_path / "diag"),
                "--anchors", "4", "--points", "21"]
        assert main(args) == 0
        summary = json.loads((tmp_path / "diag" / "summary.json").read_text())
        assert {"mean_monotonicity", "local_max_frac", "median_basin_width", "modes_hit"} <= set(summary)
        assert (tmp_path / "diag" / "field.csv").exists()

    def test_diag_dimension_mismatch(self, config, tmp_path):
        out = tmp_path / "out"
        main(["train", "--config", str(config), "--out", str(out)])
        args = ["diag", "--checkpoint", str(out / "seed_0" / "ckpt" / "D_000020.ckpt"),
                "--dataset", "mnist:images=a,labels=b", "--out", str(tmp_path / "diag")]
        assert main(args) == 1

    def test_sweep(self, config, tmp_path):
        out = tmp_path / "sweep"
        assert main(["sweep", "--config", str(config), "--grid", "variant.lambda=1,2",
                     "--grid", "train.iters=5", "--out", str(out)]) == 0
        assert (out / "variant.lambda=2__train.iters=5" / "seed_0" / "metrics.csv").exists()

    def test_sweep_bad_grid(self, config, tmp_path):
        assert main(["sweep", "--config", str(config), "--grid", "variant.lambda=-1", "--out", str(tmp_path)]) == 1
