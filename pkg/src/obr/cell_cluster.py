"""Page layout statistics and distance-based grouping of dots into cells."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .dot_detect import Dot

log = logging.getLogger(__name__)

# standard cell pitch / intra-cell pitch (6.0 mm / 2.5 mm)
FALLBACK_INTER_RATIO = 2.4


class InsufficientInputError(ValueError):
    pass


class LayoutEstimationError(ValueError):
    pass


@dataclass
class NeighborStats:
    hor_near: list[float]
    ver_near: list[float]
    neighbor: list[int] = field(default_factory=list)


@dataclass(frozen=True)
class Peak:
    lo: float
    hi: float
    mode: float
    count: int


@dataclass
class Histogram:
    bin_width: float
    counts: list[int]
    origin: float = 0.0


@dataclass
class LayoutParams:
    """Page-level distances in pixels.

    ``hor_max``/``ver_max`` bound intra-cell nearest-neighbour spacing,
    ``hor_inter``/``ver_inter`` are the gaps between neighbouring cells and
    lines. ``hor_pitch``/``ver_pitch`` are the first-peak modes (typical
    intra-cell column and row spacing).
    """

    hor_max: float
    ver_max: float
    hor_inter: float
    ver_inter: float
    hor_pitch: float = 0.0
    ver_pitch: float = 0.0
    low_confidence: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.hor_pitch:
            self.hor_pitch = self.hor_max
        if not self.ver_pitch:
            self.ver_pitch = self.ver_max
        for name in ("hor_max", "ver_max", "hor_inter", "ver_inter"):
            if not getattr(self, name) > 0:
                raise LayoutEstimationError(f"{name} must be positive, got {getattr(self, name)}")
        if self.hor_inter <= self.hor_max:
            self.flag("hor_inter <= hor_max")

    def flag(self, reason: str) -> None:
        if reason not in self.low_confidence:
            self.low_confidence.append(reason)

    def to_json(self) -> dict:
        return {k: round(getattr(self, k), 4) for k in
                ("hor_max", "ver_max", "hor_inter", "ver_inter", "hor_pitch", "ver_pitch")}

    @classmethod
    def nominal(cls, dpi: float, col_pitch_mm=2.5, row_pitch_mm=2.5, cell_pitch_mm=6.0,
                line_pitch_mm=12.5, jitter_px=1.0) -> "LayoutParams":
        """Layout from known physical geometry, for pages too sparse to measure."""
        ppm = dpi / 25.4
        return cls(
            hor_max=col_pitch_mm * ppm + jitter_px,
            ver_max=row_pitch_mm * ppm + jitter_px,
            hor_inter=(cell_pitch_mm - col_pitch_mm) * ppm,
            ver_inter=(line_pitch_mm - 2 * row_pitch_mm) * ppm,
            hor_pitch=col_pitch_mm * ppm,
            ver_pitch=row_pitch_mm * ppm,
            low_confidence=["nominal geometry"],
        )


@dataclass
class BrailleCell:
    id: int
    dots: list[Dot]
    members: list[int] = field(default_factory=list)  # indices into the page's dot list
    flags: list[str] = field(default_factory=list)

    def xs(self) -> np.ndarray:
        return np.array([d.cx for d in self.dots])

    def ys(self) -> np.ndarray:
        return np.array([d.cy for d in self.dots])


def _coords(dots) -> np.ndarray:
    return np.array([[d.cx, d.cy] for d in dots], dtype=np.float64).reshape(-1, 2)


def nearest_neighbor_distances(dots: list[Dot]) -> NeighborStats:
    """City-block nearest neighbour of every dot and its |dx|, |dy| components.

    Ties on distance go to the neighbour with the smallest (cy, cx).
    """
    n = len(dots)
    if n < 2:
        raise InsufficientInputError(f"need at least 2 dots, got {n}")
    pts = _coords(dots)
    tree = cKDTree(pts)
    k = min(n, 8)
    hor, ver, nbr = [], [], []
    for i in range(n):
        while True:
            dist, idx = tree.query(pts[i], k=k, p=1)
            dist, idx = np.atleast_1d(dist), np.atleast_1d(idx)
            others = [(d, j) for d, j in zip(dist, idx) if j != i and j < n]
            best = min(d for d, _ in others)
            # every tie candidate must be inside the returned set
            if k == n or dist[-1] > best:
                break
            k = min(n, 2 * k)
        tied = [j for d, j in others if d <= best]
        if len(tied) > 1:
            # exact tie check on the raw coordinates
            exact = [abs(pts[j, 0] - pts[i, 0]) + abs(pts[j, 1] - pts[i, 1]) for j in tied]
            m = min(exact)
            tied = [j for j, e in zip(tied, exact) if e == m]
        j = min(tied, key=lambda t: (pts[t, 1], pts[t, 0]))
        hor.append(float(abs(pts[i, 0] - pts[j, 0])))
        ver.append(float(abs(pts[i, 1] - pts[j, 1])))
        nbr.append(int(j))
    return NeighborStats(hor, ver, nbr)


def histogram(samples, bin_width: float) -> Histogram:
    s = np.asarray(samples, dtype=np.float64)
    idx = np.floor(s / bin_width).astype(int)
    return Histogram(bin_width, np.bincount(idx, minlength=int(idx.max()) + 1).tolist())


def histogram_peaks(samples, bin_width: float = 1, level: float = 0.2) -> list[Peak]:
    """Peaks of the smoothed distance histogram, ascending.

    The histogram is smoothed with a centred 3-bin moving average; a peak
    is a maximal run of bins at or above ``level`` times the largest
    smoothed bin. Each peak reports the smallest and largest sample inside
    its run and a mode: the median of the samples in its fullest raw bin.
    """
    s = np.asarray(samples, dtype=np.float64)
    if s.size == 0:
        return []
    if bin_width < 1:
        raise ValueError(f"bin_width must be >= 1, got {bin_width}")
    idx = np.floor(s / bin_width).astype(int)
    raw = np.bincount(idx, minlength=int(idx.max()) + 2).astype(np.float64)
    padded = np.pad(raw, 1)
    smooth = (padded[:-2] + padded[1:-1] + padded[2:]) / 3.0
    above = smooth >= level * smooth.max()
    peaks = []
    b = 0
    while b < above.size:
        if not above[b]:
            b += 1
            continue
        e = b
        while e + 1 < above.size and above[e + 1]:
            e += 1
        inside = (idx >= b) & (idx <= e)
        if inside.any():
            vals = s[inside]
            mode_bin = b + int(np.argmax(raw[b : e + 1]))
            mode = float(np.median(s[idx == mode_bin]))
            peaks.append(Peak(float(vals.min()), float(vals.max()), mode, int(inside.sum())))
        b = e + 1
    return peaks


INTER_MODES = ("gap", "literal")


def estimate_layout(stats: NeighborStats, bin_width: float = 1, inter_mode: str = "gap",
                    level: float = 0.2) -> LayoutParams:
    """Intra-cell bounds and inter-cell gaps from nearest-neighbour histograms.

    A neighbour contributes its horizontal distance only when it lies
    mostly sideways (``|dx| >= |dy|``) and its vertical distance only when
    it lies mostly above or below; the minor component of a pair says
    nothing about spacing along that axis.

    ``hor_max``/``ver_max`` are the largest distances in the first peak.
    The inter-cell gap is the mode of the second peak (``inter_mode="gap"``)
    or second mode minus first mode (``"literal"``). A direction with a
    single peak falls back to ``2.4 * max`` and is flagged.
    """
    if inter_mode not in INTER_MODES:
        raise ValueError(f"inter_mode must be one of {INTER_MODES}")
    h = np.asarray(stats.hor_near, dtype=np.float64)
    v = np.asarray(stats.ver_near, dtype=np.float64)
    hor_peaks = histogram_peaks(h[h >= v], bin_width, level)
    ver_peaks = histogram_peaks(v[v >= h], bin_width, level)
    if not hor_peaks or not ver_peaks:
        raise LayoutEstimationError("no histogram peaks in one direction")
    flags = []

    def direction(peaks, name):
        first = peaks[0]
        if len(peaks) < 2:
            flags.append(f"{name}: single peak, inter distance from fallback ratio")
            return first, FALLBACK_INTER_RATIO * first.hi
        second = peaks[1]
        inter = second.mode - first.mode if inter_mode == "literal" else second.mode
        return first, inter

    hf, hor_inter = direction(hor_peaks, "hor")
    vf, ver_inter = direction(ver_peaks, "ver")
    if hf.hi <= 0 or vf.hi <= 0:
        raise LayoutEstimationError("first peak sits at zero distance")
    layout = LayoutParams(hf.hi, vf.hi, hor_inter, ver_inter, hf.mode, vf.mode, flags)
    for f in flags:
        log.info("layout low confidence: %s", f)
    return layout


# ---------------------------------------------------------------------------
# clustering


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, a: int) -> int:
        while self.parent[a] != a:
            self.parent[a] = self.parent[self.parent[a]]
            a = self.parent[a]
        return a

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            if ra < rb:
                self.parent[rb] = ra
            else:
                self.parent[ra] = rb


def link_pairs(pts: np.ndarray, hor_max: float, ver_max: float) -> list[tuple[int, int]]:
    """All pairs i < j with |dx| <= hor_max and |dy| <= ver_max."""
    if len(pts) < 2:
        return []
    scaled = pts / np.array([hor_max, ver_max])
    tree = cKDTree(scaled)
    pairs = tree.query_pairs(1.0 + 1e-9, p=np.inf, output_type="ndarray")
    if len(pairs) == 0:
        return []
    d = np.abs(pts[pairs[:, 0]] - pts[pairs[:, 1]])
    keep = (d[:, 0] <= hor_max) & (d[:, 1] <= ver_max)
    return [(int(a), int(b)) for a, b in pairs[keep]]


def partition(n: int, pairs) -> list[list[int]]:
    """Connected components as sorted index lists, ordered by smallest member."""
    uf = _UnionFind(n)
    for a, b in pairs:
        uf.union(a, b)
    groups: dict[int, list[int]] = {}
    for i in range(n):
        groups.setdefault(uf.find(i), []).append(i)
    return sorted(groups.values(), key=lambda g: g[0])


def split_overfull(members: list[int], pts: np.ndarray, max_size: int = 6) -> list[list[int]]:
    """Split at the widest gap in x until every part holds at most ``max_size`` dots."""
    if len(members) <= max_size:
        return [members]
    ordered = sorted(members, key=lambda i: (pts[i, 0], pts[i, 1]))
    xs = pts[ordered, 0]
    cut = int(np.argmax(np.diff(xs))) + 1
    return split_overfull(ordered[:cut], pts, max_size) + split_overfull(ordered[cut:], pts, max_size)


def cluster_cells(dots: list[Dot], hor_max: float, ver_max: float) -> list[BrailleCell]:
    """Group dots into cells: connected components of the link relation
    ``|dx| <= hor_max and |dy| <= ver_max``; unlinked dots become singleton
    cells. Components above six dots are split and flagged ``over-merged``.
    """
    if not (hor_max > 0 and ver_max > 0):
        raise ValueError("hor_max and ver_max must be positive")
    pts = _coords(dots)
    groups = partition(len(dots), link_pairs(pts, hor_max, ver_max))
    cells = []
    for g in groups:
        parts = split_overfull(g, pts)
        for part in parts:
            part = sorted(part)
            cell = BrailleCell(len(cells), [dots[i] for i in part], part)
            if len(parts) > 1:
                cell.flags.append("over-merged")
            cells.append(cell)
    if any(c.flags for c in cells):
        log.warning("cells with more than six dots were split; page is low confidence")
    return cells


def cluster_cells_literal(dots: list[Dot], hor_max: float, ver_max: float) -> list[list[int]]:
    """The pairwise create / join / merge loop, kept as a reference oracle.

    Returns cells as sorted dot-index lists ordered by smallest member.
    """
    n = len(dots)
    pts = _coords(dots)
    cells: list[set[int]] = []
    owner: dict[int, int] = {}
    for i in range(n):
        for j in range(i + 1, n):
            h = abs(pts[i, 0] - pts[j, 0])
            v = abs(pts[i, 1] - pts[j, 1])
            if not (h <= hor_max and v <= ver_max):
                continue
            ci, cj = owner.get(i), owner.get(j)
            if ci is None and cj is None:
                cells.append({i, j})
                owner[i] = owner[j] = len(cells) - 1
            elif ci is None or cj is None:
                w = ci if ci is not None else cj
                cells[w].update((i, j))
                owner[i] = owner[j] = w
            elif ci != cj:
                keep, gone = min(ci, cj), max(ci, cj)
                cells[keep] |= cells[gone]
                for d in cells[gone]:
                    owner[d] = keep
                cells[gone] = set()
    out = [sorted(c) for c in cells if c]
    out += [[i] for i in range(n) if i not in owner]
    return sorted(out, key=lambda g: g[0])


def cells_to_json(layout: LayoutParams, cells: list[BrailleCell]) -> dict:
    return {"layout": layout.to_json(),
            "cells": [{"id": c.id, "dots": list(c.members)} for c in cells]}
