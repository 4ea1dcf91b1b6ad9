"""Command-line interface: ``obr translate|generate|train|evaluate|inspect``."""

from __future__ import annotations

import csv
import io
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import click

from .evaluation import (
    DotMatchResult,
    char_confusion,
    default_tol,
    dot_metrics_csv,
    evaluate_page,
    kfold,
    metrics,
)
from .forest import ForestModel, ModelFormatError, train_forest
from .pipeline import PipelineParams, run_page
from .raster import ImageFormatError, ParameterError, PreprocessParams, dump_stages as write_stages, load_image
from .synth import CorpusSpec, GroundTruth, PageSpec, read_manifest, write_corpus
from .transcribe import FEATURE_NAMES

log = logging.getLogger("obr")

EXIT_IO = 1
EXIT_EMPTY = 2


def _fail(msg: str, code: int = EXIT_IO):
    click.echo(f"error: {msg}", err=True)
    sys.exit(code)


def _write(path: str | Path, text: str) -> None:
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text, encoding="utf-8")
    except OSError as e:
        _fail(f"cannot write {path}: {e}")


def _json(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def _load_model(path: str | None) -> ForestModel | None:
    if path is None:
        return None
    try:
        return ForestModel.from_json(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        _fail(f"cannot read model {path}: {e}")
    except (ModelFormatError, KeyError, TypeError) as e:
        _fail(f"invalid model {path}: {e}")


def _params(dpi: float, median: int, se_radius: int) -> PipelineParams:
    try:
        return PipelineParams(dpi=dpi, preprocess=PreprocessParams(median, se_radius))
    except ParameterError as e:
        _fail(str(e))


def _features_csv(rows, labels) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([*FEATURE_NAMES, "label"])
    for row, lab in zip(rows, labels):
        w.writerow([*row, lab])
    return buf.getvalue()


def _read_features_csv(path: Path):
    rows, labels = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in (*FEATURE_NAMES, "label") if c not in (reader.fieldnames or [])]
        if missing:
            _fail(f"{path}: missing columns {', '.join(missing)}")
        for rec in reader:
            if rec["label"] in (None, ""):
                continue
            rows.append([int(rec[c]) for c in FEATURE_NAMES])
            labels.append(rec["label"])
    return rows, labels


common_dpi = click.option("--dpi", default=200.0, show_default=True, help="Scan resolution in dots per inch.")
common_median = click.option("--median", "median", default=3, show_default=True, help="Median filter window (odd).")
common_se = click.option("--se-radius", default=1, show_default=True, help="Dilation disk radius in pixels.")
common_seed = click.option("--seed", default=42, show_default=True, help="Seed for every random choice.")
common_jobs = click.option("--jobs", default=1, show_default=True, help="Worker processes for page-level work.")


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose: bool):
    """Optical Braille recognition for scanned Grade 1 English pages."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")


@main.command()
@click.argument("image", type=click.Path(dir_okay=False))
@click.option("--model", type=click.Path(dir_okay=False), default=None, help="Forest model JSON; omit to use the decode table.")
@click.option("--table-only", is_flag=True, help="Classify with the decode table even if --model is given.")
@common_dpi
@common_median
@common_se
@click.option("--dump-stages", type=click.Path(file_okay=False), default=None, help="Directory for preprocessing stage images.")
@click.option("--dots-json", type=click.Path(dir_okay=False), default=None, help="Write detected dots.")
@click.option("--cells-json", type=click.Path(dir_okay=False), default=None, help="Write layout and cell partition.")
@click.option("--features-csv", type=click.Path(dir_okay=False), default=None, help="Write per-cell feature rows.")
@click.option("--report", type=click.Path(dir_okay=False), default=None, help="Write per-cell labels and confidences.")
def translate(image, model, table_only, dpi, median, se_radius, dump_stages, dots_json, cells_json, features_csv, report):
    """Print the text of a Braille page image (PGM, PPM or PNG).

    Exits 2 when dots were found but no cell could be read.
    """
    try:
        img = load_image(image)
    except OSError as e:
        _fail(f"cannot read {image}: {e}")
    except ImageFormatError as e:
        _fail(f"{image}: {e}")
    forest = None if table_only else _load_model(model)
    res = run_page(img, _params(dpi, median, se_radius), forest, keep_stages=dump_stages is not None)
    if dump_stages:
        try:
            write_stages(res.stages, dump_stages)
        except OSError as e:
            _fail(f"cannot write stages to {dump_stages}: {e}")
    if dots_json:
        _write(dots_json, _json(res.dots_json()))
    if cells_json:
        _write(cells_json, _json(res.cells_json()))
    if features_csv:
        pairs = [(c.row, c.label or "") for c in res.cells if c.row is not None]
        _write(features_csv, _features_csv([r for r, _ in pairs], [lab for _, lab in pairs]))
    if report:
        _write(report, _json(res.report_json()))
    if res.dots and not any(c.label is not None for c in res.cells):
        _fail("dots were detected but no cell could be resolved", EXIT_EMPTY)
    if res.text:
        click.echo(res.text)


@main.command()
@click.argument("out_dir", type=click.Path(file_okay=False))
@click.option("--pages", default=54, show_default=True, help="Number of pages.")
@common_seed
@common_dpi
@click.option("--cells-per-page", default=244, show_default=True, help="Approximate text length per page in cells.")
@click.option("--salt-pepper", default=0.01, show_default=True, help="Fraction of pixels set to 0 or 255.")
@click.option("--max-rotate", default=2.0, show_default=True, help="Rotation drawn uniformly from +-this many degrees.")
@click.option("--illum", default=0.15, show_default=True, help="Left-to-right illumination falloff.")
@click.option("--clean", is_flag=True, help="Disable all corruption.")
@click.option("--spec", "spec_path", type=click.Path(dir_okay=False), default=None,
              help="Corpus spec JSON; its fields replace the flags above.")
@common_jobs
def generate(out_dir, pages, seed, dpi, cells_per_page, salt_pepper, max_rotate, illum, clean, spec_path, jobs):
    """Write a synthetic corpus: page images, truth sidecars and manifest.csv (written last)."""
    if spec_path:
        try:
            spec = CorpusSpec.from_json(Path(spec_path).read_text(encoding="utf-8"))
        except (OSError, ValueError, TypeError) as e:
            _fail(f"bad corpus spec {spec_path}: {e}")
    else:
        try:
            spec = CorpusSpec(pages, seed, cells_per_page, salt_pepper, max_rotate, illum, PageSpec(dpi=dpi))
        except ValueError as e:
            _fail(str(e))
    if clean:
        spec = replace(spec, salt_pepper_frac=0.0, max_rotate_deg=0.0, illum_gradient=0.0)
    try:
        manifest = write_corpus(spec, out_dir, jobs)
    except OSError as e:
        _fail(f"cannot write corpus to {out_dir}: {e}")
    click.echo(f"wrote {spec.pages} pages and {manifest}")


def _page_task(args):
    entry, params, model_json, tol = args
    model = ForestModel.from_json(model_json) if model_json else None
    img = load_image(entry.page)
    truth = GroundTruth.from_json(entry.truth.read_text(encoding="utf-8"))
    res = run_page(img, replace(params, dpi=entry.dpi), model)  # dpi comes from the manifest row
    return evaluate_page(res, truth, tol or default_tol(entry.dpi))


def _corpus_pages(manifest: str, params: PipelineParams, model: ForestModel | None, tol: float | None, jobs: int):
    try:
        entries = read_manifest(manifest)
    except (OSError, KeyError) as e:
        _fail(f"cannot read manifest {manifest}: {e}")
    if not entries:
        _fail(f"manifest {manifest} lists no pages")
    skipped, todo = [], []
    for e in entries:
        if not e.truth.is_file():
            log.warning("skipping %s: truth sidecar %s is missing", e.page.name, e.truth.name)
            skipped.append(e.page.name)
        elif not e.page.is_file():
            log.warning("skipping %s: image is missing", e.page.name)
            skipped.append(e.page.name)
        else:
            todo.append(e)
    model_json = model.to_json() if model else None
    tasks = [(e, params, model_json, tol) for e in todo]
    try:
        if jobs > 1:
            with ProcessPoolExecutor(jobs) as ex:
                results = list(ex.map(_page_task, tasks))
        else:
            results = [_page_task(t) for t in tasks]
    except ImageFormatError as e:
        _fail(str(e))
    return [e.page.name for e in todo], results, skipped


@main.command()
@click.argument("data", type=click.Path(dir_okay=False))
@click.option("--out", "out_path", default="model.json", show_default=True, type=click.Path(dir_okay=False),
              help="Model JSON to write.")
@click.option("--trees", default=50, show_default=True, help="Number of trees.")
@click.option("--max-depth", default=8, show_default=True, help="Maximum tree depth.")
@common_seed
@common_jobs
def train(data, out_path, trees, max_depth, seed, jobs):
    """Fit the forest on a features CSV or on every page of a corpus manifest."""
    path = Path(data)
    if not path.is_file():
        _fail(f"no such file: {data}")
    with open(path, newline="", encoding="utf-8") as fh:
        header = next(csv.reader(fh), [])
    if "page" in header:
        names, pages, _ = _corpus_pages(data, PipelineParams(), None, None, jobs)
        rows = [r for p in pages for r, ok in zip(p.rows, p.valid) if ok]
        labels = [lab for p in pages for lab, ok in zip(p.labels, p.valid) if ok]
    else:
        rows, labels = _read_features_csv(path)
    if not labels:
        _fail(f"{data}: no labelled rows")
    model = train_forest(rows, labels, trees, max_depth, seed)
    _write(out_path, model.to_json())
    for lab, n in model.meta["class_counts"].items():
        click.echo(f"{lab}\t{n}")
    click.echo(f"rows {len(labels)}, classes {len(model.classes)}, oob accuracy {model.meta['oob_accuracy']}")


@main.command()
@click.argument("manifest", type=click.Path(dir_okay=False))
@click.option("--model", type=click.Path(dir_okay=False), default=None,
              help="Also score this model's per-page transcription.")
@click.option("--out", "out_dir", default="eval_out", show_default=True, type=click.Path(file_okay=False),
              help="Directory for metrics.csv, confusion.csv, dots.csv, report.json.")
@click.option("-k", "--folds", default=5, show_default=True, help="Cross-validation folds.")
@click.option("--trees", default=50, show_default=True, help="Trees per fold model.")
@click.option("--max-depth", default=8, show_default=True, help="Maximum tree depth.")
@click.option("--tol", default=None, type=float, help="Dot match radius in pixels  [default: half the intra-cell pitch]")
@common_seed
@common_jobs
def evaluate(manifest, model, out_dir, folds, trees, max_depth, tol, seed, jobs):
    """Dot-level metrics and k-fold character accuracy over a corpus."""
    forest = _load_model(model)
    names, pages, skipped = _corpus_pages(manifest, PipelineParams(), forest, tol, jobs)
    if not pages:
        _fail("no page could be evaluated")
    out = Path(out_dir)
    _write(out / "dots.csv", dot_metrics_csv([(n, p.match) for n, p in zip(names, pages)]))
    rows = [r for p in pages for r in p.rows]
    labels = [lab for p in pages for lab in p.labels]
    valid = [v for p in pages for v in p.valid]
    try:
        cv = kfold(rows, labels, folds, seed, trees, max_depth, valid)
    except ValueError as e:
        _fail(str(e))
    _write(out / "metrics.csv", cv.to_csv())
    _write(out / "confusion.csv", cv.confusion.to_csv())
    tot = DotMatchResult(*(sum(getattr(p.match, f) for p in pages) for f in ("tp", "fn", "fp", "tn")))
    dm = metrics(tot)
    doc = {
        "pages": names,
        "skipped": skipped,
        "cells": len(labels),
        "missed_cells": valid.count(False),
        "dots": {"tp": tot.tp, "fn": tot.fn, "fp": tot.fp, "tn": tot.tn,
                 "sensitivity": dm.sensitivity, "specificity": dm.specificity, "accuracy": dm.accuracy},
        "cv": {"folds": folds, "seed": seed,
               "accuracy": [f.accuracy for f in cv.folds], "overall_accuracy": cv.overall.accuracy},
    }
    pred = [lab for p in pages for lab in p.predicted]
    doc["transcription"] = {"classifier": "forest" if forest else "table",
                            "accuracy": metrics(char_confusion(pred, labels)).accuracy}
    _write(out / "report.json", _json(doc))
    click.echo(cv.to_csv(), nl=False)
    click.echo(f"dots: sensitivity {dm.sensitivity:.6f} specificity {dm.specificity:.6f}")
    if skipped:
        click.echo(f"skipped {len(skipped)} page(s): {', '.join(skipped)}")


@main.command()
@click.argument("image", type=click.Path(dir_okay=False))
@common_dpi
@common_median
@common_se
@click.option("--dump-stages", type=click.Path(file_okay=False), default=None, help="Directory for preprocessing stage images.")
def inspect(image, dpi, median, se_radius, dump_stages):
    """Print layout statistics for an image and optionally dump the stage images."""
    try:
        img = load_image(image)
    except (OSError, ImageFormatError) as e:
        _fail(f"{image}: {e}")
    res = run_page(img, _params(dpi, median, se_radius), keep_stages=dump_stages is not None)
    if dump_stages:
        write_stages(res.stages, dump_stages)
    doc = {
        "size": [img.width, img.height],
        "dots": len(res.dots),
        "cells": len(res.cells),
        "lines": len(res.lines),
        "layout": None if res.layout is None else res.layout.to_json(),
        "low_confidence": (res.layout.low_confidence if res.layout else []) + res.flags,
    }
    click.echo(_json(doc), nl=False)


if __name__ == "__main__":
    main()
