"""Cell centroids, feature vectors, reading order and text assembly."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .cell_cluster import BrailleCell, LayoutParams, partition
from .table import DEFAULT_TABLE, BrailleTable, Decoder, UNKNOWN, mask_from_positions

log = logging.getLogger(__name__)


class UnresolvedCentroidError(ValueError):
    pass


class MalformedCellError(ValueError):
    pass


@dataclass
class Centroid:
    x: float
    y: float
    corrected_x: bool = False
    corrected_y: bool = False
    flags: list[str] = field(default_factory=list)


@dataclass(frozen=True)
class FeatureVector:
    n: int
    dot_code: frozenset

    def __post_init__(self):
        if len(self.dot_code) != self.n:
            raise MalformedCellError(f"dot code holds {len(self.dot_code)} positions for {self.n} dots")

    @property
    def mask(self) -> int:
        return mask_from_positions(self.dot_code)

    @classmethod
    def from_mask(cls, mask: int) -> "FeatureVector":
        code = frozenset((x, y) for y in range(3) for x in range(2) if mask >> (2 * y + x) & 1)
        return cls(len(code), code)


ENCODING_ORDER = ((0, 0), (1, 0), (0, 1), (1, 1), (0, 2), (1, 2))
FEATURE_NAMES = ("n", "b00", "b10", "b01", "b11", "b02", "b12")


def encode(fv: FeatureVector) -> list[int]:
    """``[n, b00, b10, b01, b11, b02, b12]`` with ``bXY = 1`` when ``(X, Y)`` is raised."""
    return [fv.n] + [1 if pos in fv.dot_code else 0 for pos in ENCODING_ORDER]


def decode_row(row) -> FeatureVector:
    code = frozenset(pos for pos, b in zip(ENCODING_ORDER, row[1:]) if int(b))
    return FeatureVector(len(code), code)


# ---------------------------------------------------------------------------
# levels


def _groups(values: np.ndarray, tol: float) -> list[list[int]]:
    """Split sorted values wherever consecutive gaps exceed ``tol``; returns index groups."""
    order = np.argsort(values, kind="stable")
    groups = [[int(order[0])]]
    for a, b in zip(order[:-1], order[1:]):
        if values[b] - values[a] > tol:
            groups.append([])
        groups[-1].append(int(b))
    return groups


@dataclass
class Levels:
    x_groups: list[list[int]]
    y_groups: list[list[int]]

    @property
    def x_full(self) -> bool:
        return len(self.x_groups) >= 2

    @property
    def y_full(self) -> bool:
        return len(self.y_groups) >= 3


def cell_levels(cell: BrailleCell, layout: LayoutParams) -> Levels:
    return Levels(_groups(cell.xs(), layout.hor_max / 2), _groups(cell.ys(), layout.ver_max / 2))


def detect_levels(cell: BrailleCell, layout: LayoutParams):
    """Occupied levels, or ``None`` for a direction whose level identity is
    ambiguous until corrected against a sample cell."""
    if not cell.dots:
        raise ValueError("empty cell")
    lv = cell_levels(cell, layout)
    xs = frozenset({0, 1}) if lv.x_full else None
    ys = frozenset({0, 1, 2}) if lv.y_full else None
    return xs, ys


@dataclass
class Sample:
    """Reference cell geometry: coordinates of its two columns and three rows."""

    x_levels: tuple[float, float]
    y_levels: tuple[float, float, float]
    synthetic: bool = False

    @property
    def col_pitch(self) -> float:
        return self.x_levels[1] - self.x_levels[0]

    @property
    def row_pitch(self) -> float:
        return (self.y_levels[2] - self.y_levels[0]) / 2

    @classmethod
    def from_cell(cls, cell: BrailleCell, layout: LayoutParams) -> "Sample":
        lv = cell_levels(cell, layout)
        if not (lv.x_full and lv.y_full):
            raise ValueError("sample cell must occupy both columns and all three rows")
        xs, ys = cell.xs(), cell.ys()
        xg = sorted(float(xs[g].mean()) for g in lv.x_groups)
        yg = sorted(float(ys[g].mean()) for g in lv.y_groups)
        return cls((xg[0], xg[-1]), (yg[0], yg[len(yg) // 2], yg[-1]))

    @classmethod
    def synthetic_for(cls, cell: BrailleCell, layout: LayoutParams) -> "Sample":
        """Nominal sample anchored at the cell's top-left dot; used when the page has no full cell."""
        x0, y0 = float(cell.xs().min()), float(cell.ys().min())
        cp, rp = layout.hor_pitch, layout.ver_pitch
        return cls((x0, x0 + cp), (y0, y0 + rp, y0 + 2 * rp), synthetic=True)

    def carried(self, dx: float, dy: float, slope: float) -> "Sample":
        """Levels transported by (dx, dy) along a page whose text lines have gradient ``slope``."""
        if slope == 0.0:
            return self
        sy, sx = slope * dx, -slope * dy
        return Sample(
            (self.x_levels[0] + sx, self.x_levels[1] + sx),
            tuple(y + sy for y in self.y_levels),
            self.synthetic,
        )


def _circular_residue(delta: float, period: float) -> float:
    r = math.fmod(abs(delta), period)
    return min(r, period - r)


def _assign(value: float, refs, period: float, feasible) -> tuple[int, bool]:
    res = [(_circular_residue(value - refs[k], period), k) for k in feasible]
    res.sort()
    tie = len(res) > 1 and math.isclose(res[0][0], res[1][0], abs_tol=1e-9)
    return res[0][1], tie


def correct_x(cell: BrailleCell, sample: Sample, hor_inter: float, layout: LayoutParams | None = None,
              flags: list[str] | None = None) -> float:
    """Centroid x of a one-column cell.

    The column is matched to the sample column with the smaller circular
    residue of their horizontal distance modulo the cell pitch (sample
    column spacing plus ``hor_inter``); a virtual column is added at the
    other level and the midpoint of the two columns returned. Ties go to
    the left column and are flagged. A cell that already spans two columns
    returns its mean x.
    """
    xs = cell.xs()
    if layout is not None and cell_levels(cell, layout).x_full:
        return float(xs.mean())
    col = float(xs.mean())
    pitch = sample.col_pitch
    level, tie = _assign(col, sample.x_levels, pitch + hor_inter, (0, 1))
    if tie and flags is not None:
        flags.append("ambiguous x level")
    other = col + pitch if level == 0 else col - pitch
    return (col + other) / 2


def correct_y(cell: BrailleCell, sample: Sample, ver_inter: float, layout: LayoutParams | None = None,
              flags: list[str] | None = None) -> float:
    """Centroid y of a cell missing one or two rows.

    The top row of the cell is matched against the sample's three rows by
    circular residue modulo the line pitch (sample row span plus
    ``ver_inter``), restricted to levels that keep every row of the cell
    inside the three-row frame. Missing rows get virtual positions one row
    pitch apart and the mean over the three row positions is returned.
    """
    ys = cell.ys()
    tol = (layout.ver_max / 2) if layout is not None else sample.row_pitch / 2
    groups = _groups(ys, tol)
    if len(groups) >= 3:
        return float(ys.mean())
    rows = sorted(float(ys[g].mean()) for g in groups)
    pitch = sample.row_pitch
    top = rows[0]
    offsets = [round((r - top) / pitch) for r in rows]
    span = max(offsets)
    feasible = [k for k in range(3) if k + span <= 2] or [0]
    level, tie = _assign(top, sample.y_levels, 2 * pitch + ver_inter, feasible)
    if tie and flags is not None:
        flags.append("ambiguous y level")
    positions: dict[int, list[float]] = {}
    for r, off in zip(rows, offsets):
        positions.setdefault(min(2, level + off), []).append(r)
    if flags is not None and len(positions) < len(rows):
        flags.append("rows collapse onto one level")
    coords = []
    for lvl in range(3):
        if lvl in positions:
            coords.append(float(np.mean(positions[lvl])))
        else:
            coords.append(top + (lvl - level) * pitch)
    return float(np.mean(coords))


def centroid(cell: BrailleCell, sample: Sample | None, layout: LayoutParams) -> Centroid:
    """Cell centroid with level-deficient coordinates corrected against ``sample``.

    Raises:
        UnresolvedCentroidError: a correction is needed and no sample exists.
    """
    if not cell.dots:
        raise ValueError("empty cell")
    lv = cell_levels(cell, layout)
    xs, ys = cell.xs(), cell.ys()
    if lv.x_full and lv.y_full:
        return Centroid(float(xs.mean()), float(ys.mean()))
    if sample is None:
        raise UnresolvedCentroidError(f"cell {cell.id} needs correction but no sample cell is available")
    flags: list[str] = []
    if sample.synthetic:
        flags.append("synthetic sample")
    if lv.y_full:
        return Centroid(correct_x(cell, sample, layout.hor_inter, layout, flags), float(ys.mean()),
                        True, False, flags)
    if lv.x_full:
        return Centroid(float(xs.mean()), correct_y(cell, sample, layout.ver_inter, layout, flags),
                        False, True, flags)
    return Centroid(correct_x(cell, sample, layout.hor_inter, layout, flags),
                    correct_y(cell, sample, layout.ver_inter, layout, flags), True, True, flags)


def _cell_center(cell: BrailleCell) -> tuple[float, float]:
    return float(cell.xs().mean()), float(cell.ys().mean())


def estimate_slope(cells: list[BrailleCell], layout: LayoutParams, reaches=(4.0, 10.0, 25.0)) -> float:
    """Text line gradient dy/dx from same-row dot pairs.

    Starts with pairs inside one cell, then repeats with pairs up to
    ``reach * hor_max`` apart, keeping only pairs whose offset agrees with
    the previous estimate to within ``ver_max / 2``. Longer baselines shrink
    the error from dot localisation. Returns 0 when no pair qualifies.
    """
    tol = layout.ver_max / 2
    slopes = []
    for c in cells:
        xs, ys = c.xs(), c.ys()
        dx = xs[None, :] - xs[:, None]
        dy = ys[None, :] - ys[:, None]
        sel = (dx > tol) & (np.abs(dy) <= tol)
        slopes.extend((dy[sel] / dx[sel]).tolist())
    if not slopes:
        return 0.0
    slope = float(np.median(slopes))
    pts = np.array([(d.cx, d.cy) for c in cells for d in c.dots])
    tree = cKDTree(pts)
    for reach in reaches:
        pairs = tree.query_pairs(reach * layout.hor_max, output_type="ndarray")
        if len(pairs) == 0:
            break
        d = pts[pairs[:, 1]] - pts[pairs[:, 0]]
        d[d[:, 0] < 0] *= -1
        sel = (d[:, 0] > reach * layout.hor_max / 2) & (np.abs(d[:, 1] - slope * d[:, 0]) <= tol)
        if not sel.any():
            break
        slope = float(np.median(d[sel, 1] / d[sel, 0]))
    return slope


def choose_samples(cells: list[BrailleCell], layout: LayoutParams, y_weight: float = 3.0,
                   slope: float = 0.0) -> list[Sample | None]:
    """Reference sample for every cell.

    Full cells are their own sample. Every other cell uses the nearest full
    cell on its own text line; only when the line has none does it look at
    other lines, with vertical distance weighted by ``y_weight``. The borrowed levels
    are carried along the text line gradient ``slope`` so skewed pages keep
    their alignment. Without any full cell a synthetic sample is built from
    the layout pitches.
    """
    full = []
    for c in cells:
        lv = cell_levels(c, layout)
        if lv.x_full and lv.y_full:
            full.append(c)
    if not full:
        if cells:
            log.warning("no cell occupies all levels; using synthetic samples from layout pitches")
        return [Sample.synthetic_for(c, layout) for c in cells]
    centers = np.array([_cell_center(c) for c in full])
    samples = [Sample.from_cell(c, layout) for c in full]
    full_ids = {id(c): k for k, c in enumerate(full)}
    out: list[Sample | None] = []
    for c in cells:
        if id(c) in full_ids:
            out.append(samples[full_ids[id(c)]])
            continue
        cx, cy = _cell_center(c)
        dx = cx - centers[:, 0]
        dy = cy - centers[:, 1] - slope * dx
        d = np.hypot(dx, y_weight * dy)
        same_line = np.abs(dy) <= 1.5 * layout.ver_pitch
        if same_line.any():
            d = np.where(same_line, d, np.inf)
        k = int(np.argmin(d))
        out.append(samples[k].carried(cx - centers[k, 0], cy - centers[k, 1], slope))
    return out


def extract_features(cell: BrailleCell, cent: Centroid, layout: LayoutParams) -> FeatureVector:
    """Dot positions relative to the centroid.

    Row 1 when the dot is within ``ver_max / 2`` of the centroid height,
    else row 2 below and row 0 above; column 1 right of the centroid.

    Raises:
        MalformedCellError: two dots land on the same position.
    """
    tol = layout.ver_max / 2
    code = set()
    for d in cell.dots:
        v = d.cy - cent.y
        h = d.cx - cent.x
        y = 1 if abs(v) <= tol else (2 if v > 0 else 0)
        x = 1 if h > 0 else 0
        if (x, y) in code:
            raise MalformedCellError(f"cell {cell.id}: two dots at position {(x, y)}")
        code.add((x, y))
    return FeatureVector(len(cell.dots), frozenset(code))


def decode_table_lookup(fv: FeatureVector | None, table: BrailleTable = DEFAULT_TABLE,
                        decoder: Decoder | None = None) -> str:
    """Character for a feature vector; ``None`` is a blank cell (space)."""
    decoder = decoder or Decoder(table)
    if fv is None or fv.n == 0:
        return decoder.space()
    return decoder.feed(fv.mask)


# ---------------------------------------------------------------------------
# reading order and spacing


def order_cells(centroids: list[Centroid], layout: LayoutParams, reach_cells: float = 6.0) -> list[list[int]]:
    """Group cells into lines and sort each line left to right.

    Two cells share a line when they are at most ``reach_cells`` cell
    pitches apart horizontally and their heights differ by less than half
    the line gap plus ``0.1`` of their horizontal distance, which tolerates
    a few degrees of page skew. Lines are ordered by mean height.
    """
    n = len(centroids)
    if n == 0:
        return []
    pts = np.array([[c.x, c.y] for c in centroids])
    cell_pitch = layout.hor_pitch + layout.hor_inter
    reach = reach_cells * cell_pitch
    order = np.argsort(pts[:, 0], kind="stable")
    pairs = []
    for a_pos, a in enumerate(order):
        for b in order[a_pos + 1 :]:
            dx = pts[b, 0] - pts[a, 0]
            if dx > reach:
                break
            if abs(pts[b, 1] - pts[a, 1]) < layout.ver_inter / 2 + 0.1 * dx:
                pairs.append((int(a), int(b)))
    lines = partition(n, pairs)
    lines = [sorted(line, key=lambda i: (pts[i, 0], pts[i, 1])) for line in lines]
    lines.sort(key=lambda line: (float(pts[line, 1].mean()), float(pts[line, 0].min())))
    return lines


def line_gaps(lines: list[list[int]], centroids: list[Centroid], min_pitch: float = 0.0) -> list[list[int]]:
    """Number of blank cells between consecutive cells of each line.

    A gap ``g`` holds ``round(g / p) - 1`` blanks, ``p`` being the line's
    median gap. Lines whose median is implausibly wide (more than 1.5
    times the page median) or that have no gaps use the page median.
    """
    all_gaps = [centroids[b].x - centroids[a].x for line in lines for a, b in zip(line, line[1:])]
    page_p = float(np.median(all_gaps)) if all_gaps else 0.0
    page_p = max(page_p, min_pitch)
    out = []
    for line in lines:
        gaps = [centroids[b].x - centroids[a].x for a, b in zip(line, line[1:])]
        if not gaps:
            out.append([])
            continue
        p = float(np.median(gaps))
        if page_p and (p > 1.5 * page_p or p < 0.5 * page_p):
            p = page_p
        out.append([max(0, round(g / p) - 1) for g in gaps])
    return out


def insert_spaces(lines: list[list[str]], spaces: list[list[int]]) -> str:
    out = []
    for labels, gaps in zip(lines, spaces):
        parts = [labels[0]] if labels else []
        for lab, g in zip(labels[1:], gaps):
            parts.append(" " * g)
            parts.append(lab)
        out.append("".join(parts))
    return "\n".join(out)


def assemble_text(lines: list[list[int]], spaces: list[list[int]], labels: list[str | None],
                  table: BrailleTable = DEFAULT_TABLE) -> str:
    """Decode cell labels line by line, applying capital and number signs.

    ``None`` labels (unresolved cells) become ``?``.
    """
    out = []
    for line, gaps in zip(lines, spaces):
        dec = Decoder(table)
        text = []
        for k, idx in enumerate(line):
            if k:
                text.extend(dec.space() for _ in range(gaps[k - 1]))
            lab = labels[idx]
            text.append(UNKNOWN if lab is None else dec.feed_label(lab))
        out.append("".join(text))
    return "\n".join(out)
