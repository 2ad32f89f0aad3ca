import csv
import hashlib
import logging

import pytest

from firntopo.cli import main
from firntopo.forest import load_forest


def digest(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(p.relative_to(root).as_posix().encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def csv_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


@pytest.fixture(autouse=True)
def _reset_logging():
    yield
    # main() configures the root logger once per process; keep tests independent
    for h in logging.root.handlers[:]:
        logging.root.removeHandler(h)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """A tiny corpus with whole-image features, built once for the module."""
    root = tmp_path_factory.mktemp("ws")
    assert main(["synth", "--out", str(root / "corpus"), "--images-per-depth", "3", "--size", "24"]) == 0
    assert main(["featurize", "--manifest", str(root / "corpus" / "manifest.csv"), "--out", str(root),
                 "--views", "whole,blurred,TL,TR,BL,BR"]) == 0
    return root


class TestSynth:
    def test_counts_and_determinism(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert main(["synth", "--out", str(out), "--images-per-depth", "20", "--size", "16", "--seed", "3"]) == 0
        assert len(list(a.rglob("*.pgm"))) == 200
        assert len(list(a.glob("d*"))) == 10
        assert len(csv_rows(a / "manifest.csv")) == 1 + 200
        assert digest(a) == digest(b)

    def test_seed_changes_corpus(self, tmp_path):
        main(["synth", "--out", str(tmp_path / "a"), "--images-per-depth", "1", "--size", "16", "--seed", "1"])
        main(["synth", "--out", str(tmp_path / "b"), "--images-per-depth", "1", "--size", "16", "--seed", "2"])
        assert digest(tmp_path / "a") != digest(tmp_path / "b")

    def test_zero_images_rejected(self, tmp_path, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["synth", "--out", str(tmp_path), "--images-per-depth", "0"])
        assert exc.value.code == 2
        assert "images-per-depth" in capsys.readouterr().err


class TestFeaturize:
    def test_row_widths(self, workspace):
        feats = workspace / "features"
        for name, width in [("SS-Betti", 515), ("SS-Gaussian", 515), ("DT-Betti", 203), ("DT-Gaussian", 203)]:
            rows = csv_rows(feats / f"{name}.csv")
            assert len(rows) == 30
            assert {len(r) for r in rows} == {width}

    def test_view_files(self, workspace):
        assert (workspace / "features" / "SS-Betti.blurred.csv").exists()
        assert (workspace / "features" / "DT-Gaussian.BR.csv").exists()

    def test_manifest_order(self, workspace):
        manifest = [r[0].removesuffix(".pgm") for r in csv_rows(workspace / "corpus" / "manifest.csv")[1:]]
        assert [r[0] for r in csv_rows(workspace / "features" / "DT-Betti.csv")] == manifest

    def test_mean_curves(self, workspace):
        rows = csv_rows(workspace / "mean_curves.csv")
        assert len(rows) == 4 * 10

    def test_bad_image_reported(self, tmp_path, caplog):
        main(["synth", "--out", str(tmp_path / "c"), "--images-per-depth", "1", "--size", "16"])
        (tmp_path / "c" / "d07" / "img_000.pgm").write_bytes(b"P5\n16 16\n255\n")
        with caplog.at_level(logging.ERROR):
            code = main(["featurize", "--manifest", str(tmp_path / "c" / "manifest.csv"), "--out", str(tmp_path),
                         "--views", "whole", "--features", "SS-Betti"])
        assert code == 1
        assert "d07/img_000" in caplog.text
        assert len(csv_rows(tmp_path / "features" / "SS-Betti.csv")) == 9

    def test_unknown_view(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["featurize", "--manifest", "m.csv", "--out", str(tmp_path), "--views", "sideways"])
        assert exc.value.code == 2


class TestEvaluate:
    ARGS = ["--trials", "2", "--trees", "5"]

    def test_default_table_shape(self, workspace, capsys):
        assert main(["evaluate", "--out", str(workspace)] + self.ARGS) == 0
        table = csv_rows(workspace / "results_table.csv")
        reg = [r for r in table if r[0] == "regression" and r[1] != "Scenario"]
        cls = [r for r in table if r[0] == "classification" and r[1] != "Scenario"]
        assert [r[1] for r in reg] == ["Whole", "Split", "Split BR", "Blurred", "Missing depths"]
        assert [r[1] for r in cls] == ["Whole", "Split", "Split BR", "Blurred"]
        assert all(len(r) == 2 + 4 for r in reg + cls)
        assert "Scalar prediction" in capsys.readouterr().out

    def test_single_scenario(self, workspace, tmp_path):
        out = tmp_path / "w"
        (out / "features").mkdir(parents=True)
        for p in (workspace / "features").glob("*.csv"):
            (out / "features" / p.name).write_bytes(p.read_bytes())
        assert main(["evaluate", "--out", str(out), "--scenarios", "WHOLE"] + self.ARGS) == 0
        table = csv_rows(out / "results_table.csv")
        body = [r for r in table if r[1] != "Scenario"]
        assert [(r[0], r[1]) for r in body] == [("regression", "Whole"), ("classification", "Whole")]

    def test_repeatable(self, workspace):
        args = ["evaluate", "--out", str(workspace), "--scenarios", "WHOLE,SPLIT_BR", "--seed", "5"] + self.ARGS
        main(args)
        first = [(workspace / n).read_bytes() for n in ("results.csv", "results_table.csv", "results.txt")]
        main(args)
        assert first == [(workspace / n).read_bytes() for n in ("results.csv", "results_table.csv", "results.txt")]

    def test_missing_features(self, tmp_path, caplog):
        with caplog.at_level(logging.ERROR):
            assert main(["evaluate", "--out", str(tmp_path)]) == 1
        assert "featurize" in caplog.text

    def test_bad_selector(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["evaluate", "--out", str(tmp_path), "--scenarios", "EVERYTHING"])
        assert exc.value.code == 2


def test_train_writes_models(workspace):
    assert main(["train", "--out", str(workspace), "--features", "DT-Betti", "--trees", "3"]) == 0
    forest = load_forest(workspace / "models" / "DT-Betti__classification.json")
    assert forest.n_features == 200 and len(forest.trees) == 3
    assert (workspace / "models" / "DT-Betti__regression.json").exists()


def test_report_rerenders(workspace, capsys):
    main(["evaluate", "--out", str(workspace), "--scenarios", "WHOLE", "--trials", "1", "--trees", "3"])
    before = (workspace / "results.txt").read_text(encoding="utf-8")
    (workspace / "results.txt").unlink()
    capsys.readouterr()
    assert main(["report", "--out", str(workspace)]) == 0
    assert (workspace / "results.txt").read_text(encoding="utf-8") == before
    assert capsys.readouterr().out == before


def test_report_without_results(tmp_path):
    assert main(["report", "--out", str(tmp_path)]) == 1
