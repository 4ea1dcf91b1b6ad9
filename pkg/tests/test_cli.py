import csv
import json

import numpy as np
import pytest
from click.testing import CliRunner
from PIL import Image

from obr import cli
from obr.dot_detect import Dot
from obr.pipeline import PageResult
from obr.raster import GrayRaster, save_pgm
from obr.transcribe import FEATURE_NAMES

from .conftest import rendered


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def hello_pgm(tmp_path):
    img, _ = rendered("hello world")
    path = tmp_path / "hello.pgm"
    save_pgm(img, path)
    return path


@pytest.fixture(scope="module")
def small_corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    r = CliRunner().invoke(cli.main, ["generate", str(out), "--pages", "3", "--cells-per-page", "60"])
    assert r.exit_code == 0, r.output
    return out


def test_translate_pgm(runner, hello_pgm):
    r = runner.invoke(cli.main, ["translate", str(hello_pgm)])
    assert r.exit_code == 0
    assert r.output == "hello world\n"


def test_translate_png(runner, tmp_path):
    img, _ = rendered("hello world")
    path = tmp_path / "hello.png"
    Image.fromarray(img.pixels).save(path)
    r = runner.invoke(cli.main, ["translate", str(path)])
    assert r.output == "hello world\n"


def test_translate_side_outputs(runner, hello_pgm, tmp_path):
    out = tmp_path / "out"
    r = runner.invoke(cli.main, [
        "translate", str(hello_pgm),
        "--dots-json", str(out / "dots.json"), "--cells-json", str(out / "cells.json"),
        "--features-csv", str(out / "f.csv"), "--report", str(out / "report.json"),
        "--dump-stages", str(out / "stages"),
    ])
    assert r.exit_code == 0, r.output
    dots = json.loads((out / "dots.json").read_text())["dots"]
    cells = json.loads((out / "cells.json").read_text())["cells"]
    assert sum(len(c["dots"]) for c in cells) == len(dots)
    with open(out / "f.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert sorted(r["label"] for r in rows) == sorted("helloworld")
    assert list(rows[0]) == [*FEATURE_NAMES, "label"]
    assert json.loads((out / "report.json").read_text())["text"] == "hello world"
    assert len(list((out / "stages").iterdir())) == 5


def test_translate_blank_page_prints_nothing(runner, tmp_path):
    path = tmp_path / "blank.pgm"
    save_pgm(GrayRaster(np.full((100, 100), 230, np.uint8)), path)
    r = runner.invoke(cli.main, ["translate", str(path)])
    assert r.exit_code == 0 and r.output == ""


def test_translate_missing_file(runner, tmp_path):
    r = runner.invoke(cli.main, ["translate", str(tmp_path / "nope.pgm")])
    assert r.exit_code == 1


def test_translate_garbage_file(runner, tmp_path):
    path = tmp_path / "bad.pgm"
    path.write_bytes(b"not an image")
    r = runner.invoke(cli.main, ["translate", str(path)])
    assert r.exit_code == 1
    assert "error" in r.output


def test_translate_bad_model(runner, hello_pgm, tmp_path):
    model = tmp_path / "m.json"
    model.write_text("{}")
    assert runner.invoke(cli.main, ["translate", str(hello_pgm), "--model", str(model)]).exit_code == 1
    r = runner.invoke(cli.main, ["translate", str(hello_pgm), "--model", str(model), "--table-only"])
    assert r.exit_code == 0


def test_translate_bad_median(runner, hello_pgm):
    assert runner.invoke(cli.main, ["translate", str(hello_pgm), "--median", "4"]).exit_code == 1


def test_translate_unresolved_cells_exit_2(runner, hello_pgm, monkeypatch):
    stuck = PageResult([Dot(1, 1, 5, 20)], None, [], [], [], "")
    monkeypatch.setattr(cli, "run_page", lambda *a, **k: stuck)
    assert runner.invoke(cli.main, ["translate", str(hello_pgm)]).exit_code == 2


def test_generate_writes_manifest(small_corpus):
    with open(small_corpus / "manifest.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["page"] for r in rows] == ["page_000.pgm", "page_001.pgm", "page_002.pgm"]
    assert all((small_corpus / r["truth"]).is_file() for r in rows)


def test_generate_clean_and_spec(runner, tmp_path):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"pages": 1, "cells_per_page": 10, "seed": 3}))
    r = runner.invoke(cli.main, ["generate", str(tmp_path / "c"), "--spec", str(spec), "--clean"])
    assert r.exit_code == 0, r.output
    with open(tmp_path / "c" / "manifest.csv", newline="") as fh:
        (row,) = csv.DictReader(fh)
    assert float(row["rotate_deg"]) == 0.0 and float(row["salt_pepper_frac"]) == 0.0


def test_train_and_translate_with_model(runner, small_corpus, tmp_path, hello_pgm):
    model = tmp_path / "model.json"
    r = runner.invoke(cli.main, ["train", str(small_corpus / "manifest.csv"), "--out", str(model), "--trees", "10"])
    assert r.exit_code == 0, r.output
    assert "oob accuracy" in r.output
    assert json.loads(model.read_text())["n_trees"] == 10
    r = runner.invoke(cli.main, ["translate", str(hello_pgm), "--model", str(model)])
    assert r.exit_code == 0


def test_train_from_features_csv(runner, hello_pgm, tmp_path):
    feats = tmp_path / "f.csv"
    runner.invoke(cli.main, ["translate", str(hello_pgm), "--features-csv", str(feats)])
    r = runner.invoke(cli.main, ["train", str(feats), "--out", str(tmp_path / "m.json"), "--trees", "5"])
    assert r.exit_code == 0, r.output
    assert "classes 7" in r.output


def test_train_rejects_csv_without_columns(runner, tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("x,y\n1,2\n")
    assert runner.invoke(cli.main, ["train", str(bad)]).exit_code == 1


def test_evaluate_outputs(runner, small_corpus, tmp_path):
    out = tmp_path / "eval"
    r = runner.invoke(cli.main, ["evaluate", str(small_corpus / "manifest.csv"), "--out", str(out),
                                 "-k", "2", "--trees", "5"])
    assert r.exit_code == 0, r.output
    assert {p.name for p in out.iterdir()} == {"dots.csv", "metrics.csv", "confusion.csv", "report.json"}
    report = json.loads((out / "report.json").read_text())
    assert report["dots"]["fn"] == 0 and report["dots"]["fp"] == 0
    assert report["transcription"]["accuracy"] == 1.0


def test_evaluate_skips_page_without_truth(runner, tmp_path):
    data = tmp_path / "c"
    runner.invoke(cli.main, ["generate", str(data), "--pages", "3", "--cells-per-page", "40"])
    (data / "page_001.truth.json").unlink()
    r = runner.invoke(cli.main, ["evaluate", str(data / "manifest.csv"), "--out", str(tmp_path / "e"),
                                 "-k", "2", "--trees", "3"])
    assert r.exit_code == 0, r.output
    assert json.loads((tmp_path / "e" / "report.json").read_text())["skipped"] == ["page_001.pgm"]


def test_evaluate_empty_manifest(runner, tmp_path):
    m = tmp_path / "manifest.csv"
    m.write_text("page,truth,salt_pepper_frac,rotate_deg,illum_gradient,seed,dpi\n")
    assert runner.invoke(cli.main, ["evaluate", str(m)]).exit_code == 1


def test_inspect(runner, hello_pgm):
    r = runner.invoke(cli.main, ["inspect", str(hello_pgm)])
    assert r.exit_code == 0
    doc = json.loads(r.output)
    assert doc["cells"] == 10 and doc["lines"] == 1
    assert doc["layout"]["hor_max"] > 0
