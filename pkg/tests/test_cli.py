import csv
import json

import numpy as np
import pytest

from deepmc import cli
from deepmc.data_io import load_dense_csv, load_image, save_dense_csv, save_image

pytestmark = pytest.mark.filterwarnings("ignore:rank .* is not below:RuntimeWarning")

TINY = [
    "synthetic.m=12", "synthetic.n=15", "synthetic.r=2", "rank=2",
    "col_hidden=4", "row_hidden=5", "max_iters=15", "repeat=2", "als.iters=5",
]


def run(tmp_path, *argv):
    return cli.main([*argv, "-o", str(tmp_path)])


def sets(*items):
    out = []
    for item in items:
        out += ["-s", item]
    return out


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_parse_lines_examples():
    assert cli.parse_lines(["rank = 10"]) == {"rank": 10}
    assert cli.parse_lines(["gamma = 0.01  # paper setting"]) == {"gamma": 0.01}
    assert cli.parse_lines(["rprop.eta_plus = 1.3", "", "# c"]) == {"rprop.eta_plus": 1.3}
    assert cli.parse_lines(["col_hidden = 20, 40"])["col_hidden"] == (20, 40)
    assert cli.parse_lines(["target_range = -3,3"])["target_range"] == (-3.0, 3.0)
    with pytest.raises(cli.ConfigError, match="'rnk'"):
        cli.parse_lines(["rnk = 10"])
    with pytest.raises(cli.ConfigError, match="bad value for 'rank'"):
        cli.parse_lines(["rank = ten"])
    with pytest.raises(cli.ConfigError, match=":1: expected"):
        cli.parse_lines(["rank 10"])
    with pytest.raises(cli.ConfigError, match="activation"):
        cli.parse_lines(["activation = softplus"])


def test_precedence(tmp_path):
    cfg_file = tmp_path / "run.cfg"
    cfg_file.write_text("rank = 4\noutput_dir = from_file\nalpha = 0.5\n")
    cfg = cli.parse_config(cfg_file, ["rank=6"], env={})
    assert cfg["rank"] == 6 and cfg["alpha"] == 0.5 and cfg["output_dir"] == "from_file"
    env = {cli.ENV_OUTPUT_DIR: "from_env"}
    assert cli.parse_config(cfg_file, env=env)["output_dir"] == "from_env"
    assert cli.parse_config(cfg_file, output_dir="from_flag", env=env)["output_dir"] == "from_flag"
    with pytest.raises(cli.ConfigError):
        cli.parse_config(None, ["repeat=0"], env={})
    with pytest.raises(cli.ConfigError, match="needs data.path"):
        cli.parse_config(None, ["data.source=csv"], env={})


def test_defaults_documented_in_help(capsys):
    with pytest.raises(SystemExit):
        cli.main(["--help"])
    text = capsys.readouterr().out
    for key, opt in cli.OPTIONS.items():
        assert key in text and f"[{opt.default}]" in text


def test_env_var_redirects_output(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.ENV_OUTPUT_DIR, str(tmp_path / "envout"))
    assert cli.main(["gradcheck", *sets("gradcheck.instances=1")]) == 0
    assert (tmp_path / "envout" / "manifest.json").exists()


def test_gradcheck_exit_code(tmp_path, capsys):
    assert run(tmp_path, "gradcheck", *sets("gradcheck.instances=3")) == 0
    assert "max relative error" in capsys.readouterr().out
    assert len(read_csv(tmp_path / "gradcheck.csv")) == 3
    assert run(tmp_path, "gradcheck", *sets("gradcheck.instances=1", "gradcheck.tolerance=1e-30")) == 1


def test_errors_give_nonzero_exit(tmp_path, capsys):
    assert run(tmp_path, "complete") == 2
    assert "data.source" in capsys.readouterr().err
    assert run(tmp_path, "complete", *sets("rnk=3")) == 2
    assert run(tmp_path, "inpaint", *sets("data.source=synthetic")) == 2
    assert run(tmp_path, "complete", *sets("data.source=csv", f"data.path={tmp_path}/none.csv")) == 2


def test_synth_bench_rows_and_manifest(tmp_path):
    assert run(tmp_path, "synth-bench", *sets(*TINY)) == 0
    rows = read_csv(tmp_path / "bench.csv")
    assert len(rows) == 3 * 2 * 4
    assert list(rows[0]) == list(cli.BENCH_HEADER)
    keys = [(float(r["mask_fraction"]), r["method"], int(r["seed"])) for r in rows]
    assert keys == sorted(keys)
    assert len(read_csv(tmp_path / "bench_summary.csv")) == 3 * 4
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["command"] == "synth-bench" and manifest["seeds"] == [0, 1]
    assert manifest["config"]["rank"] == "2" and "version" in manifest


def test_synth_bench_is_byte_stable(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    opts = sets(*TINY, "mask.fractions=0.3", "bench.methods=full,als")
    assert run(a, "synth-bench", *opts) == 0
    assert run(b, "synth-bench", *opts) == 0
    for name in ("bench.csv", "bench_summary.csv", "config.txt"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_rerun_from_written_config(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(a, "synth-bench", *sets(*TINY, "mask.fractions=0.5", "bench.methods=als")) == 0
    assert run(b, "synth-bench", "-c", str(a / "config.txt")) == 0
    assert (a / "bench.csv").read_bytes() == (b / "bench.csv").read_bytes()


def test_ablate_one_row_per_gamma(tmp_path):
    opts = sets(*TINY, "repeat=1", "ablate.mask_fraction=0.5", "early_stop.holdout_fraction=0.1")
    assert run(tmp_path, "ablate", *opts) == 0
    summary = read_csv(tmp_path / "ablate_summary.csv")
    assert [float(r["gamma"]) for r in summary] == [0.01, 0.05, 0.1, 0.5, 1.0]
    rows = read_csv(tmp_path / "ablate.csv")
    assert len(rows) == 5 and list(rows[0]) == list(cli.ABLATE_HEADER)
    for r in rows:
        assert float(r["gap"]) == pytest.approx(float(r["validation_mse"]) - float(r["train_mse"]))


def test_complete_csv(tmp_path):
    rng = np.random.default_rng(0)
    Y = rng.normal(size=(10, 12))
    save_dense_csv(Y, tmp_path / "y.csv")
    opts = sets("data.source=csv", f"data.path={tmp_path / 'y.csv'}", "rank=2", "col_hidden=3",
                "row_hidden=3", "max_iters=20")
    assert run(tmp_path / "out", "complete", *opts) == 0
    out = load_dense_csv(tmp_path / "out" / "completed.csv")
    assert out.shape == Y.shape
    metrics = read_csv(tmp_path / "out" / "metrics.csv")
    assert len(metrics) == 1 and metrics[0]["evaluated_on"] == "hidden-only"
    assert len(read_csv(tmp_path / "out" / "history.csv")) == 20


def test_complete_ratings(tmp_path):
    lines = [f"{u}\t{i}\t{1 + (u * i) % 5}\t0" for u in range(1, 9) for i in range(1, 10) if (u + i) % 3]
    (tmp_path / "r.tsv").write_text("\n".join(lines) + "\n")
    opts = sets("data.source=ratings", f"data.path={tmp_path / 'r.tsv'}", "rank=1", "col_hidden=3",
                "row_hidden=3", "max_iters=10", "mask.fraction=0.2")
    assert run(tmp_path / "out", "complete", *opts) == 0
    (row,) = read_csv(tmp_path / "out" / "metrics.csv")
    assert row["mask_kind"] == "holdout" and 0 <= float(row["nmae"]) <= 1


def test_inpaint_rgb_block(tmp_path):
    rng = np.random.default_rng(1)
    img = rng.integers(0, 256, size=(8, 6, 3)).astype(float)
    save_image(img, tmp_path / "img.ppm")
    opts = sets("data.source=image", f"data.path={tmp_path / 'img.ppm'}", "mask.kind=block",
                "mask.top=2", "mask.left=1", "mask.height=3", "mask.width=2", "rank=2",
                "col_hidden=4", "row_hidden=4", "max_iters=10")
    assert run(tmp_path / "out", "inpaint", *opts) == 0
    rec = load_image(tmp_path / "out" / "reconstructed.ppm")
    assert rec.shape == img.shape
    keep = np.ones((8, 6), bool)
    keep[2:5, 1:3] = False
    np.testing.assert_array_equal(rec[keep], img[keep])  # clamped by default when inpainting
    rows = read_csv(tmp_path / "out" / "metrics.csv")
    assert [r["evaluated_on"] for r in rows] == ["hidden-only", "full"]


def test_inpaint_image_mask(tmp_path):
    img = np.tile(np.linspace(0, 250, 7), (5, 1))
    save_image(img, tmp_path / "g.pgm")
    mask = np.zeros((5, 7))
    mask[1, 3] = mask[3, 5] = 255
    save_image(mask, tmp_path / "m.pgm")
    opts = sets("data.source=image", f"data.path={tmp_path / 'g.pgm'}", "mask.kind=image",
                f"mask.path={tmp_path / 'm.pgm'}", "rank=1", "col_hidden=", "row_hidden=",
                "max_iters=10")
    assert run(tmp_path / "out", "inpaint", *opts) == 0
    assert load_image(tmp_path / "out" / "reconstructed.pgm").shape == (5, 7)
