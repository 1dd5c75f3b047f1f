import json

import pytest

from embaug.harness.cli import main

SMALL = """
[data]
n_bags = 20
d = 8
mean_bag_size = 16
[gan]
epochs = 1
[mil]
epochs = 2
d_att = 8
hidden = 8
[experiment]
max_pairs = 300
[bench]
d = 32
batch = 16
repeats = 1
"""


@pytest.fixture()
def workdir(tmp_path):
    (tmp_path / "small.ini").write_text(SMALL)
    return tmp_path


def run(workdir, *argv):
    return main(["--log-level", "ERROR", *[str(a) for a in argv]])


def one_line_error(capsys):
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith("error: ")
    return err[0]


@pytest.mark.filterwarnings("ignore::UserWarning")
class TestCommands:
    def test_gen_data_is_deterministic(self, workdir):
        cfg = workdir / "small.ini"
        assert run(workdir, "gen-data", "--config", cfg, "--seed", 7, "--out", workdir / "a") == 0
        assert run(workdir, "gen-data", "--config", cfg, "--seed", 7, "--out", workdir / "b") == 0
        assert (workdir / "a/dataset.emb").read_bytes() == (workdir / "b/dataset.emb").read_bytes()
        manifest = json.loads((workdir / "a/gen-data.manifest.json").read_text())
        assert manifest["seed"] == 7
        assert manifest["config"]["data"]["n_bags"] == 20
        assert {"embaug", "numpy", "python"} <= set(manifest["versions"])

    def test_train_and_evaluate(self, workdir):
        cfg, out = workdir / "small.ini", workdir / "o"
        assert run(workdir, "gen-data", "--config", cfg, "--out", out) == 0
        assert run(workdir, "train-gan", "--config", cfg, "--data", out / "dataset.emb", "--variant", "ind",
                   "--out", out) == 0
        assert (out / "generator-ind.eag").exists() and (out / "train-gan.manifest.json").exists()
        assert run(workdir, "train-mil", "--config", cfg, "--data", out / "dataset.emb", "--mode", "gan-ind",
                   "--generator", out / "generator-ind.eag", "--out", out) == 0
        assert run(workdir, "evaluate", "--config", cfg, "--data", out / "dataset.emb",
                   "--model", out / "mil-gan-ind.eam", "--out", out) == 0
        res = json.loads((out / "eval.json").read_text())
        assert {"accuracy", "kappa2", "nll", "confusion", "schema_version"} <= set(res)

    def test_bench(self, workdir):
        out = workdir / "o"
        assert run(workdir, "bench", "--config", workdir / "small.ini", "--out", out) == 0
        rows = json.loads((out / "bench.json").read_text())["rows"]
        assert {r["variant"] for r in rows} == {"ind", "exp"}
        assert all(r["flop_ratio"] > 0 and r["wall_ratio"] > 0 for r in rows)

    def test_report(self, workdir):
        out = workdir / "o"
        assert run(workdir, "report", "--config", workdir / "small.ini", "--modes", "none", "patch",
                   "--out", out) == 0
        rep = json.loads((out / "report.json").read_text())
        assert [r["mode"] for r in rep["rows"]] == ["none", "patch"]
        assert "Accuracy" in (out / "report.txt").read_text()


class TestErrors:
    def test_unknown_flag(self, workdir, capsys):
        assert run(workdir, "gen-data", "--frobnicate") == 2
        assert one_line_error(capsys).startswith("error: usage:")

    def test_missing_file(self, workdir, capsys):
        assert run(workdir, "evaluate", "--data", workdir / "nope.emb", "--model", "x", "--out", workdir) == 2
        assert one_line_error(capsys).startswith("error: missing-file:")

    def test_bad_config(self, workdir, capsys):
        (workdir / "bad.ini").write_text("[mil]\nepochs = lots\n")
        assert run(workdir, "gen-data", "--config", workdir / "bad.ini", "--out", workdir) == 2
        assert one_line_error(capsys).startswith("error: config:")

    def test_corrupt_dataset(self, workdir, capsys):
        assert run(workdir, "gen-data", "--config", workdir / "small.ini", "--out", workdir) == 0
        capsys.readouterr()
        path = workdir / "dataset.emb"
        path.write_bytes(path.read_bytes()[:100])
        assert run(workdir, "evaluate", "--data", path, "--model", "x", "--out", workdir) == 2
        assert one_line_error(capsys).startswith("error: parse:")
