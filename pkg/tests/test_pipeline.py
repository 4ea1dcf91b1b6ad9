import json

import numpy as np
import pytest

from obr.dot_detect import Dot
from obr.forest import train_forest
from obr.pipeline import PipelineParams, recognize_dots, run_page
from obr.raster import GrayRaster
from obr.synth import CorruptOpts, corrupt
from obr.table import DEFAULT_TABLE
from obr.transcribe import FeatureVector, encode

from .conftest import rendered


@pytest.mark.parametrize("text", ["the quick brown fox", "hello world", "Room 101, Essex."])
def test_round_trip(text):
    img, truth = rendered(text)
    res = run_page(img)
    assert res.text == truth.text == text
    assert sorted(c.features.mask for c in res.cells) == sorted(c.mask for c in truth.cells)


def test_multi_line_page(clean_page):
    img, truth = clean_page
    res = run_page(img)
    assert res.text == truth.text
    assert len(res.lines) == truth.text.count("\n") + 1


def test_noisy_rotated_page(clean_page):
    img, truth = clean_page
    res = run_page(corrupt(img, CorruptOpts(0.01, -1.7, 0.15, seed=4)))
    assert res.text == truth.text


def test_forest_classifier_path():
    letters = "abcdefghijklmnopqrstuvwxyz"
    rows = [encode(FeatureVector.from_mask(DEFAULT_TABLE.mask(c))) for c in letters] * 5
    model = train_forest(rows, list(letters) * 5, n_trees=20, seed=0)
    img, _ = rendered("hello world")
    res = run_page(img, model=model)
    assert res.text == "hello world"
    assert all(c.confidence > 0.5 for c in res.cells)
    assert not any("disagrees" in f for c in res.cells for f in c.flags)


def test_forest_disagreement_is_flagged():
    # a model that only knows "a" calls every cell "a"
    model = train_forest([encode(FeatureVector.from_mask(1))], ["a"], n_trees=3)
    img, _ = rendered("be")
    res = run_page(img, model=model)
    assert res.text == "aa"
    assert all(any("disagrees" in f for f in c.flags) for c in res.cells)


def test_blank_page():
    res = run_page(GrayRaster(np.full((200, 300), 230, np.uint8)))
    assert res.dots == [] and res.cells == [] and res.text == ""


def test_single_dot_falls_back_to_nominal_layout():
    res = recognize_dots([Dot(100, 100, 6, 30)], PipelineParams())
    assert any("nominal" in f for f in res.flags)
    assert len(res.cells) == 1


def test_fixed_layout_override(clean_page):
    img, truth = clean_page
    first = run_page(img)
    again = run_page(img, PipelineParams(layout=first.layout))
    assert again.text == first.text == truth.text


def test_stages_kept_on_request():
    img, _ = rendered("ab")
    assert run_page(img).stages == []
    assert len(run_page(img, keep_stages=True).stages) == 5


def test_json_views(clean_page):
    img, _ = clean_page
    res = run_page(img)
    report = res.report_json()
    assert report["n_dots"] == len(res.dots) == len(res.dots_json()["dots"])
    assert len(report["cells"]) == len(res.cells_json()["cells"])
    cell = report["cells"][0]
    assert set(cell) == {"id", "dots", "centroid", "features", "label", "table_label", "confidence", "flags"}
    json.dumps(report)


def test_deterministic(clean_page):
    img, _ = clean_page
    assert run_page(img).report_json() == run_page(img).report_json()
