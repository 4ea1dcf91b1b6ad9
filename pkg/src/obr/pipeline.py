"""End-to-end page recognition: image -> dots -> cells -> features -> text."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from .cell_cluster import (
    BrailleCell,
    InsufficientInputError,
    LayoutEstimationError,
    LayoutParams,
    cells_to_json,
    cluster_cells,
    estimate_layout,
    nearest_neighbor_distances,
)
from .dot_detect import Dot, HoughParams, dots_to_json, hough_circles
from .forest import ForestModel
from .raster import BinaryRaster, GrayRaster, PreprocessParams, RgbRaster, preprocess_stages
from .table import DEFAULT_TABLE, BrailleTable
from .transcribe import (
    Centroid,
    FeatureVector,
    MalformedCellError,
    UnresolvedCentroidError,
    assemble_text,
    centroid,
    choose_samples,
    encode,
    estimate_slope,
    extract_features,
    line_gaps,
    order_cells,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PipelineParams:
    """Knobs for one page run.

    ``hor_link``/``ver_link`` scale the measured ``hor_max``/``ver_max``
    into clustering thresholds: a cell is one column pitch wide but two
    row pitches tall.
    """

    dpi: float = 200.0
    dot_diameter_mm: float = 1.5
    preprocess: PreprocessParams = PreprocessParams()
    hough: HoughParams | None = None
    bin_width: float = 1.0
    inter_mode: str = "gap"
    hor_link: float = 1.1
    ver_link: float = 2.1
    layout: LayoutParams | None = None  # overrides estimation when set

    def hough_params(self) -> HoughParams:
        return self.hough or HoughParams.for_dpi(self.dpi, self.dot_diameter_mm)


@dataclass
class CellResult:
    cell: BrailleCell
    centroid: Centroid | None = None
    features: FeatureVector | None = None
    label: str | None = None
    confidence: float = 0.0
    table_label: str | None = None
    flags: list[str] = field(default_factory=list)

    @property
    def row(self) -> list[int] | None:
        return encode(self.features) if self.features is not None else None


@dataclass
class PageResult:
    dots: list[Dot]
    layout: LayoutParams | None
    cells: list[CellResult]
    lines: list[list[int]]
    spaces: list[list[int]]
    text: str
    stages: list = field(default_factory=list)
    flags: list[str] = field(default_factory=list)

    def dots_json(self) -> dict:
        return dots_to_json(self.dots)

    def cells_json(self) -> dict:
        layout = self.layout or LayoutParams(1, 1, 1, 1)
        return cells_to_json(layout, [c.cell for c in self.cells])

    def report_json(self) -> dict:
        out = []
        for c in self.cells:
            out.append({
                "id": c.cell.id,
                "dots": c.cell.members,
                "centroid": None if c.centroid is None else [round(c.centroid.x, 3), round(c.centroid.y, 3)],
                "features": c.row,
                "label": c.label,
                "table_label": c.table_label,
                "confidence": round(float(c.confidence), 4),
                "flags": c.flags + ([] if c.centroid is None else c.centroid.flags),
            })
        return {
            "layout": None if self.layout is None else self.layout.to_json(),
            "low_confidence": (self.layout.low_confidence if self.layout else []) + self.flags,
            "n_dots": len(self.dots),
            "cells": out,
            "text": self.text,
        }


def page_layout(dots: list[Dot], params: PipelineParams, flags: list[str]) -> LayoutParams:
    if params.layout is not None:
        return params.layout
    try:
        return estimate_layout(nearest_neighbor_distances(dots), params.bin_width, params.inter_mode)
    except (InsufficientInputError, LayoutEstimationError) as e:
        flags.append(f"layout from nominal geometry: {e}")
        log.warning("layout estimation failed (%s); using nominal geometry at %s dpi", e, params.dpi)
        return LayoutParams.nominal(params.dpi)


def recognize_dots(dots: list[Dot], params: PipelineParams = PipelineParams(),
                   model: ForestModel | None = None, table: BrailleTable = DEFAULT_TABLE) -> PageResult:
    """Cluster, transcribe and order already detected dots."""
    flags: list[str] = []
    if not dots:
        return PageResult([], None, [], [], [], "", flags=flags)
    layout = page_layout(dots, params, flags)
    cells = cluster_cells(dots, layout.hor_max * params.hor_link, layout.ver_max * params.ver_link)
    samples = choose_samples(cells, layout, slope=estimate_slope(cells, layout))
    results = []
    for cell, sample in zip(cells, samples):
        res = CellResult(cell, flags=list(cell.flags))
        try:
            res.centroid = centroid(cell, sample, layout)
            res.features = extract_features(cell, res.centroid, layout)
        except (UnresolvedCentroidError, MalformedCellError) as e:
            res.flags.append(str(e))
            if res.centroid is None:
                xs, ys = cell.xs(), cell.ys()
                res.centroid = Centroid(float(xs.mean()), float(ys.mean()), flags=["unresolved"])
        if res.features is not None:
            res.table_label = table.cell_label(res.features.mask)
        results.append(res)

    if model is not None:
        rows = [r.row for r in results if r.features is not None]
        preds = iter(model.predict(rows) if rows else [])
        for r in results:
            if r.features is not None:
                r.label, r.confidence = next(preds)
                r.confidence = float(r.confidence)
                if r.label != r.table_label:
                    r.flags.append(f"forest {r.label!r} disagrees with table {r.table_label!r}")
    else:
        for r in results:
            if r.features is not None:
                r.label, r.confidence = r.table_label, 1.0

    centroids = [r.centroid for r in results]
    lines = order_cells(centroids, layout)
    spaces = line_gaps(lines, centroids, min_pitch=0.5 * (layout.hor_pitch + layout.hor_inter))
    text = assemble_text(lines, spaces, [r.label for r in results], table)
    return PageResult(dots, layout, results, lines, spaces, text, flags=flags)


def run_page(img: RgbRaster | GrayRaster, params: PipelineParams = PipelineParams(),
             model: ForestModel | None = None, table: BrailleTable = DEFAULT_TABLE,
             keep_stages: bool = False) -> PageResult:
    """Preprocess, detect dots, then :func:`recognize_dots`."""
    stages = preprocess_stages(img, params.preprocess)
    binary: BinaryRaster = stages[-1]
    dots = hough_circles(binary, params.hough_params())
    result = recognize_dots(dots, params, model, table)
    if keep_stages:
        result.stages = stages
    return result
