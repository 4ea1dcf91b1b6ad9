"""Synthetic Braille pages with ground truth, plus corruption models."""

from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from .raster import GrayRaster, encode_pgm
from .table import DEFAULT_TABLE, BrailleTable, Decoder, positions_from_mask

DOT_INTENSITY = 60
PAPER_INTENSITY = 230


class PaginationError(ValueError):
    def __init__(self, message: str, index: int):
        super().__init__(f"{message} (text index {index})")
        self.index = index


@dataclass(frozen=True)
class PageSpec:
    """Physical page geometry in millimetres.

    ``col_pitch_mm`` and ``row_pitch_mm`` are the dot spacings inside a
    cell, ``cell_pitch_mm`` the distance between corresponding dots of
    neighbouring cells, ``line_pitch_mm`` the same between lines.
    """

    text: str = ""
    dpi: float = 200.0
    dot_diameter_mm: float = 1.5
    col_pitch_mm: float = 2.5
    cell_pitch_mm: float = 6.0
    row_pitch_mm: float = 2.5
    line_pitch_mm: float = 12.5
    margin_mm: float = 15.0
    page_w_mm: float = 265.0
    page_h_mm: float = 320.0

    def __post_init__(self):
        for name in ("dpi", "dot_diameter_mm", "col_pitch_mm", "cell_pitch_mm", "row_pitch_mm",
                     "line_pitch_mm", "margin_mm", "page_w_mm", "page_h_mm"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.cell_pitch_mm <= self.col_pitch_mm:
            raise ValueError("cell pitch must exceed the intra-cell column pitch")
        if self.line_pitch_mm <= 2 * self.row_pitch_mm:
            raise ValueError("line pitch must exceed two row pitches")

    @property
    def px_per_mm(self) -> float:
        return self.dpi / 25.4

    @property
    def size_px(self) -> tuple[int, int]:
        """(width, height) in pixels."""
        return round(self.page_w_mm * self.px_per_mm), round(self.page_h_mm * self.px_per_mm)

    @property
    def cells_per_line(self) -> int:
        usable = self.page_w_mm - 2 * self.margin_mm - self.col_pitch_mm
        return max(0, math.floor(usable / self.cell_pitch_mm + 1e-9) + 1)

    @property
    def lines_per_page(self) -> int:
        usable = self.page_h_mm - 2 * self.margin_mm - 2 * self.row_pitch_mm
        return max(0, math.floor(usable / self.line_pitch_mm + 1e-9) + 1)


@dataclass
class TruthDot:
    cx: float
    cy: float
    r: float
    cell_id: int


@dataclass
class TruthCell:
    cell_id: int
    mask: int
    label: str
    char: str
    line: int
    col: int
    slots: list[tuple[float, float]]  # centres of the six positions, index 2*y + x


@dataclass
class GroundTruth:
    dots: list[TruthDot] = field(default_factory=list)
    cells: list[TruthCell] = field(default_factory=list)
    text: str = ""

    def to_json(self) -> str:
        doc = {
            "text": self.text,
            "dots": [[_r(d.cx), _r(d.cy), _r(d.r), d.cell_id] for d in self.dots],
            "cells": [
                {"id": c.cell_id, "mask": c.mask, "label": c.label, "char": c.char,
                 "line": c.line, "col": c.col, "slots": [[_r(x), _r(y)] for x, y in c.slots]}
                for c in self.cells
            ],
        }
        return json.dumps(doc, ensure_ascii=False, separators=(",", ":"))

    @classmethod
    def from_json(cls, s: str) -> "GroundTruth":
        doc = json.loads(s)
        dots = [TruthDot(*d) for d in doc["dots"]]
        cells = [TruthCell(c["id"], c["mask"], c["label"], c["char"], c["line"], c["col"],
                           [tuple(p) for p in c["slots"]]) for c in doc["cells"]]
        return cls(dots, cells, doc["text"])

    def transformed(self, fn) -> "GroundTruth":
        """Apply a point map ``fn(xs, ys) -> (xs, ys)`` to every coordinate."""
        if not self.dots:
            return GroundTruth([], [replace(c) for c in self.cells], self.text)
        xs, ys = fn(np.array([d.cx for d in self.dots]), np.array([d.cy for d in self.dots]))
        dots = [TruthDot(float(x), float(y), d.r, d.cell_id) for x, y, d in zip(xs, ys, self.dots)]
        cells = []
        for c in self.cells:
            sx, sy = fn(np.array([p[0] for p in c.slots]), np.array([p[1] for p in c.slots]))
            cells.append(replace(c, slots=[(float(x), float(y)) for x, y in zip(sx, sy)]))
        return GroundTruth(dots, cells, self.text)


def _r(v: float) -> float:
    return round(float(v), 4)


def wrap_text(text: str, width: int) -> tuple[list[str], list[int]]:
    """Greedy word wrap measured in cells.

    Returns the wrapped lines and, for each line, the index in ``text`` of
    its first character.
    """
    lines, starts = [], []
    pos = 0
    for para in text.split("\n"):
        cur: list[str] | None = None
        cur_len, cur_start, wpos = 0, pos, pos
        for w in para.split(" "):
            wlen = len(DEFAULT_TABLE.encode(w)[0]) if w else 0
            if wlen > width:
                raise PaginationError(f"word {w!r} is wider than a line of {width} cells", wpos)
            if cur is None:
                cur, cur_len, cur_start = [w], wlen, wpos
            elif cur_len + 1 + wlen > width:
                lines.append(" ".join(cur))
                starts.append(cur_start)
                cur, cur_len, cur_start = [w], wlen, wpos
            else:
                cur.append(w)
                cur_len += 1 + wlen
            wpos += len(w) + 1
        lines.append(" ".join(cur or []))
        starts.append(cur_start)
        pos += len(para) + 1
    return lines, starts


def render_page(spec: PageSpec, table: BrailleTable = DEFAULT_TABLE) -> tuple[GrayRaster, GroundTruth]:
    """Render dark dots on light paper at exact cell-grid positions.

    Raises:
        PaginationError: the text needs more lines than the page holds.
        TableError: the text has characters outside the table.
    """
    lines, starts = wrap_text(spec.text, spec.cells_per_line)
    if len(lines) > spec.lines_per_page:
        raise PaginationError(
            f"text needs {len(lines)} lines, page holds {spec.lines_per_page}",
            starts[spec.lines_per_page],
        )
    return render_masks(spec, [table.encode(line)[0] for line in lines], table, "\n".join(lines))


def render_masks(spec: PageSpec, mask_lines: list[list[int]], table: BrailleTable = DEFAULT_TABLE,
                 text: str | None = None) -> tuple[GrayRaster, GroundTruth]:
    """Render lines of cell masks directly; 0 leaves a blank cell.

    Any of the 63 patterns can be placed, table symbol or not.

    Raises:
        PaginationError: more lines or cells than the page holds.
    """
    ppm = spec.px_per_mm
    width, height = spec.size_px
    if len(mask_lines) > spec.lines_per_page:
        raise PaginationError(f"{len(mask_lines)} lines, page holds {spec.lines_per_page}", 0)
    for li, masks in enumerate(mask_lines):
        if len(masks) > spec.cells_per_line:
            raise PaginationError(f"line {li} has {len(masks)} cells, page holds {spec.cells_per_line}", 0)
        if any(not 0 <= m < 64 for m in masks):
            raise ValueError(f"line {li} holds a mask outside 0..63")
    radius_px = spec.dot_diameter_mm / 2 * ppm
    truth = GroundTruth(text="" if text is None else text)
    canvas = np.full((height, width), float(PAPER_INTENSITY))
    reach = int(math.ceil(radius_px + 1))
    cell_id = 0
    for li, masks in enumerate(mask_lines):
        decoder = Decoder(table)
        for col, mask in enumerate(masks):
            char = decoder.feed(mask)
            if mask == 0:
                continue
            ox = spec.margin_mm + col * spec.cell_pitch_mm
            oy = spec.margin_mm + li * spec.line_pitch_mm
            slots = [((ox + x * spec.col_pitch_mm) * ppm, (oy + y * spec.row_pitch_mm) * ppm)
                     for y in range(3) for x in range(2)]
            truth.cells.append(TruthCell(cell_id, mask, table.cell_label(mask), char, li, col, slots))
            for x, y in positions_from_mask(mask):
                cx, cy = slots[2 * y + x]
                truth.dots.append(TruthDot(cx, cy, radius_px, cell_id))
                _stamp_disc(canvas, cx, cy, radius_px, reach)
            cell_id += 1
    return GrayRaster(np.clip(np.rint(canvas), 0, 255).astype(np.uint8)), truth


def _stamp_disc(canvas: np.ndarray, cx: float, cy: float, r: float, reach: int) -> None:
    """Anti-aliased filled disc with a one-pixel linear edge."""
    h, w = canvas.shape
    x0, x1 = max(0, int(cx) - reach), min(w, int(cx) + reach + 2)
    y0, y1 = max(0, int(cy) - reach), min(h, int(cy) + reach + 2)
    if x0 >= x1 or y0 >= y1:
        return
    yy, xx = np.mgrid[y0:y1, x0:x1]
    d = np.hypot(xx - cx, yy - cy)
    alpha = np.clip(r + 0.5 - d, 0.0, 1.0)
    patch = canvas[y0:y1, x0:x1]
    canvas[y0:y1, x0:x1] = np.minimum(patch, PAPER_INTENSITY - alpha * (PAPER_INTENSITY - DOT_INTENSITY))


# ---------------------------------------------------------------------------
# corruption


@dataclass(frozen=True)
class CorruptOpts:
    salt_pepper_frac: float = 0.0
    rotate_deg: float = 0.0
    illum_gradient: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.salt_pepper_frac <= 1.0:
            raise ValueError("salt_pepper_frac must lie in [0, 1]")
        if not 0.0 <= self.illum_gradient <= 1.0:
            raise ValueError("illum_gradient must lie in [0, 1]")


def rotation_center(width: int, height: int) -> tuple[float, float]:
    return (width - 1) / 2.0, (height - 1) / 2.0


def rotate_points(xs, ys, deg: float, center: tuple[float, float]):
    """Where points land after ``corrupt(rotate_deg=deg)`` about ``center``."""
    t = math.radians(deg)
    c, s = math.cos(t), math.sin(t)
    cx, cy = center
    dx, dy = np.asarray(xs, float) - cx, np.asarray(ys, float) - cy
    return cx + c * dx + s * dy, cy - s * dx + c * dy


def _background(px: np.ndarray) -> float:
    ring = np.concatenate([px[0], px[-1], px[:, 0], px[:, -1]])
    return float(np.median(ring))


def corrupt(img: GrayRaster, opts: CorruptOpts) -> GrayRaster:
    """Rotate, shade and sprinkle impulse noise, in that order.

    Positive ``rotate_deg`` turns the content counter-clockwise on screen.
    Bilinear resampling; uncovered area is filled with the border median.
    Salt/pepper sets exactly ``round(frac * N)`` distinct pixels to 0 or
    255, always changing their value.
    """
    px = img.pixels
    out = px.astype(np.float64)
    h, w = px.shape
    if opts.rotate_deg:
        t = math.radians(opts.rotate_deg)
        c, s = math.cos(t), math.sin(t)
        cx, cy = rotation_center(w, h)
        # output (row, col) -> input (row, col): inverse of rotate_points
        matrix = np.array([[c, s], [-s, c]])
        center = np.array([cy, cx])
        offset = center - matrix @ center
        out = ndimage.affine_transform(out, matrix, offset=offset, order=1, mode="constant",
                                       cval=_background(px))
    if opts.illum_gradient:
        ramp = (1.0 - opts.illum_gradient) + opts.illum_gradient * np.linspace(0.0, 1.0, w)
        out = out * ramp[None, :]
    out = np.clip(np.rint(out), 0, 255).astype(np.uint8)
    if opts.salt_pepper_frac:
        rng = np.random.default_rng(opts.seed)
        k = round(opts.salt_pepper_frac * out.size)
        idx = rng.choice(out.size, size=k, replace=False)
        flat = out.ravel()
        val = np.where(rng.random(k) < 0.5, 0, 255).astype(np.uint8)
        val = np.where(flat[idx] == val, 255 - val, val)
        flat[idx] = val
    return GrayRaster(out)


def corrupt_truth(truth: GroundTruth, img_size: tuple[int, int], opts: CorruptOpts) -> GroundTruth:
    if not opts.rotate_deg:
        return truth
    center = rotation_center(*img_size)
    return truth.transformed(lambda xs, ys: rotate_points(xs, ys, opts.rotate_deg, center))


# ---------------------------------------------------------------------------
# corpus

_WORDS = (
    "the of and to in is that for it as with was on be by this are from at an which or "
    "have not has but were their can all more been one also its other these they there "
    "students teachers braille reading writing study research results analysis method "
    "system document paper model data learning school university exam assignment course "
    "science history language mathematics physics chemistry biology geography literature "
    "knowledge education library lecture chapter section problem question answer example "
    "theory evidence experiment measure figure table value number page line text word "
    "accessible visual tactile pattern structure process approach technique algorithm "
    "quickly carefully together between through during against within without because "
    "however therefore moreover although student's teacher's well-known long-term "
    "zebra jazz quiz vex fjord wax oxygen yield quartz velvet puzzle jungle kayak bridge"
).split()
_PROPER = "Essex Galway London Paris Aligarh Monday Friday English French Hindi".split()
_ENDS = [".", ".", ".", "?", "!"]
_INNER = [",", ",", ";", ":"]


def corpus_text(rng: np.random.Generator, target_cells: int, table: BrailleTable = DEFAULT_TABLE) -> str:
    """Academic-style prose with capitals, numbers and punctuation.

    Stops at the first sentence end after ``target_cells`` non-blank cells.
    """
    out: list[str] = []
    cells = 0
    while cells < target_cells:
        n_words = int(rng.integers(5, 13))
        sentence = []
        for i in range(n_words):
            roll = rng.random()
            if roll < 0.06:
                w = str(int(rng.integers(1, 2030)))
            elif roll < 0.12:
                w = _PROPER[int(rng.integers(len(_PROPER)))]
            else:
                w = _WORDS[int(rng.integers(len(_WORDS)))]
                if i == 0:
                    w = w[0].upper() + w[1:]
            if i < n_words - 1 and rng.random() < 0.08:
                w += _INNER[int(rng.integers(len(_INNER)))]
            sentence.append(w)
        sentence[-1] += _ENDS[int(rng.integers(len(_ENDS)))]
        s = " ".join(sentence)
        cells += sum(1 for m in table.encode(s)[0] if m)
        out.append(s)
    return " ".join(out)


@dataclass(frozen=True)
class CorpusSpec:
    pages: int = 54
    seed: int = 42
    cells_per_page: int = 244
    salt_pepper_frac: float = 0.01
    max_rotate_deg: float = 2.0
    illum_gradient: float = 0.15
    page: PageSpec = PageSpec()

    @classmethod
    def from_json(cls, s: str) -> "CorpusSpec":
        doc = json.loads(s)
        page = PageSpec(**doc.pop("page", {}))
        return cls(page=page, **doc)


@dataclass(frozen=True)
class CorpusPage:
    index: int
    seed: int
    opts: CorruptOpts
    image: bytes
    truth: str

    @property
    def stem(self) -> str:
        return f"page_{self.index:03d}"


def render_corpus_page(spec: CorpusSpec, index: int) -> tuple[GrayRaster, GroundTruth, CorruptOpts]:
    """Corrupted page ``index`` and its truth; all randomness derives from ``seed + index``."""
    page_seed = spec.seed + index
    rng = np.random.default_rng(page_seed)
    text = corpus_text(rng, spec.cells_per_page)
    rot = float(rng.uniform(-spec.max_rotate_deg, spec.max_rotate_deg)) if spec.max_rotate_deg else 0.0
    opts = CorruptOpts(spec.salt_pepper_frac, round(rot, 4), spec.illum_gradient, page_seed)
    img, truth = render_page(replace(spec.page, text=text))
    noisy = corrupt(img, opts)
    return noisy, corrupt_truth(truth, (img.width, img.height), opts), opts


def make_corpus_page(spec: CorpusSpec, index: int) -> CorpusPage:
    img, truth, opts = render_corpus_page(spec, index)
    return CorpusPage(index, opts.seed, opts, encode_pgm(img), truth.to_json())


MANIFEST_FIELDS = ["page", "truth", "salt_pepper_frac", "rotate_deg", "illum_gradient", "seed", "dpi"]


def write_corpus(spec: CorpusSpec, out_dir: str | os.PathLike, jobs: int = 1) -> Path:
    """Write page images, truth sidecars and, last, ``manifest.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    indices = range(spec.pages)
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(jobs) as ex:
            pages = list(ex.map(make_corpus_page, [spec] * spec.pages, indices))
    else:
        pages = [make_corpus_page(spec, i) for i in indices]
    rows = []
    for p in pages:
        (out / f"{p.stem}.pgm").write_bytes(p.image)
        (out / f"{p.stem}.truth.json").write_text(p.truth, encoding="utf-8")
        rows.append({"page": f"{p.stem}.pgm", "truth": f"{p.stem}.truth.json",
                     "salt_pepper_frac": p.opts.salt_pepper_frac, "rotate_deg": p.opts.rotate_deg,
                     "illum_gradient": p.opts.illum_gradient, "seed": p.seed, "dpi": spec.page.dpi})
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=MANIFEST_FIELDS, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    manifest = out / "manifest.csv"
    manifest.write_text(buf.getvalue(), encoding="utf-8")
    return manifest


@dataclass
class ManifestEntry:
    page: Path
    truth: Path
    dpi: float
    row: dict


def read_manifest(path: str | os.PathLike) -> list[ManifestEntry]:
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    base = path.parent
    return [ManifestEntry(base / r["page"], base / r["truth"], float(r.get("dpi") or 200.0), r) for r in rows]


def spec_dict(spec: CorpusSpec) -> dict:
    return asdict(spec)
