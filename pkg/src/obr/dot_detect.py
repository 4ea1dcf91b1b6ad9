"""Circular Hough transform for Braille dot localisation."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .raster import BinaryRaster, ParameterError


@dataclass(frozen=True)
class Dot:
    cx: float
    cy: float
    r: float
    votes: float


@dataclass(frozen=True)
class HoughParams:
    r_min: int = 3
    r_max: int = 9
    vote_fraction: float = 0.4
    nms_dist: float | None = None  # None: (r_min + r_max) / 2
    overlap: bool = True  # also suppress circles overlapping a kept one
    min_votes: int = 5  # floor for tiny radii, where the fraction admits noise

    def __post_init__(self):
        if not 1 <= self.r_min <= self.r_max:
            raise ParameterError(f"need 1 <= r_min <= r_max, got {self.r_min}, {self.r_max}")
        if not 0 < self.vote_fraction <= 1:
            raise ParameterError(f"vote_fraction must lie in (0, 1], got {self.vote_fraction}")
        if self.nms_dist is not None and self.nms_dist <= 0:
            raise ParameterError(f"nms_dist must be positive, got {self.nms_dist}")
        if self.min_votes < 0:
            raise ParameterError(f"min_votes must be non-negative, got {self.min_votes}")

    @property
    def min_dist(self) -> float:
        return self.nms_dist if self.nms_dist is not None else (self.r_min + self.r_max) / 2

    @classmethod
    def for_dpi(cls, dpi: float, dot_diameter_mm: float = 1.5, **kw) -> "HoughParams":
        r_min, r_max = estimate_radius_range(dpi, dot_diameter_mm)
        return cls(r_min=r_min, r_max=r_max, **kw)


def estimate_radius_range(dpi: float, dot_diameter_mm: float) -> tuple[int, int]:
    """Hough radius bounds around the nominal dot radius in pixels."""
    r = dot_diameter_mm / 2 * dpi / 25.4
    return max(1, math.floor(0.6 * r)), max(1, math.ceil(1.5 * r))


def boundary_pixels(bits: np.ndarray) -> np.ndarray:
    """Foreground pixels with at least one background 4-neighbour (off-image counts as background)."""
    padded = np.pad(bits, 1, constant_values=False)
    interior = (padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:])
    return bits & ~interior


def ring_offsets(r: int) -> np.ndarray:
    """Integer (dy, dx) offsets whose length rounds to ``r``."""
    k = r + 1
    yy, xx = np.mgrid[-k : k + 1, -k : k + 1]
    sel = np.rint(np.hypot(yy, xx)) == r
    return np.stack([yy[sel], xx[sel]], axis=1)


def non_max_suppress(cands: list[Dot], min_dist: float, overlap: bool = False) -> list[Dot]:
    """Greedy suppression by descending votes, ties by (cy, cx).

    A candidate is dropped when it lies closer than ``min_dist`` to a kept
    one or, with ``overlap``, when its circle would overlap a kept circle.
    """
    if min_dist <= 0:
        raise ParameterError(f"min_dist must be positive, got {min_dist}")
    order = sorted(cands, key=lambda d: (-d.votes, d.cy, d.cx))
    reach = max([min_dist] + [2 * c.r for c in cands]) if overlap else min_dist
    cell = float(reach)
    grid: dict[tuple[int, int], list[Dot]] = {}
    kept = []
    d2 = min_dist * min_dist
    for c in order:
        gx, gy = int(math.floor(c.cx / cell)), int(math.floor(c.cy / cell))
        clash = False
        for ny in (gy - 1, gy, gy + 1):
            for nx in (gx - 1, gx, gx + 1):
                for k in grid.get((nx, ny), ()):
                    dd = (k.cx - c.cx) ** 2 + (k.cy - c.cy) ** 2
                    if dd < d2 or (overlap and dd < (k.r + c.r) ** 2):
                        clash = True
                        break
                if clash:
                    break
            if clash:
                break
        if not clash:
            kept.append(c)
            grid.setdefault((gx, gy), []).append(c)
    return kept


def hough_circles(img: BinaryRaster, p: HoughParams = HoughParams()) -> list[Dot]:
    """Detect circles by voting boundary pixels into an (r, cy, cx) accumulator.

    A candidate survives when its votes reach ``vote_fraction * 2*pi*r``
    (and at least ``min_votes``) and its centre pixel is foreground (dots are filled).
    Each survivor's centre is refined to the vote-weighted centroid of its
    3x3 accumulator neighbourhood at that radius. Output is sorted by
    (cy, cx).
    """
    bits = img.bits
    h, w = bits.shape
    ys, xs = np.nonzero(boundary_pixels(bits))
    if ys.size == 0:
        return []
    cands: list[Dot] = []
    for r in range(p.r_min, p.r_max + 1):
        off = ring_offsets(r)
        cy = ys[:, None] + off[None, :, 0]
        cx = xs[:, None] + off[None, :, 1]
        ok = (cy >= 0) & (cy < h) & (cx >= 0) & (cx < w)
        acc = np.bincount((cy[ok] * w + cx[ok]).ravel(), minlength=h * w).reshape(h, w)
        thresh = max(p.vote_fraction * 2 * math.pi * r, p.min_votes)
        # dots are filled, so a centre on background is a ring between dots
        peak_y, peak_x = np.nonzero((acc >= thresh) & bits)
        if peak_y.size == 0:
            continue
        # 3x3 neighbourhood (zero padded) for sub-pixel refinement
        pad = np.pad(acc, 1)
        wsum = np.zeros(peak_y.size)
        sx = np.zeros(peak_y.size)
        sy = np.zeros(peak_y.size)
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                v = pad[peak_y + 1 + dy, peak_x + 1 + dx].astype(np.float64)
                wsum += v
                sx += v * dx
                sy += v * dy
        fx = peak_x + sx / wsum
        fy = peak_y + sy / wsum
        votes = acc[peak_y, peak_x]
        cands.extend(
            Dot(float(x), float(y), float(r), float(v))
            for x, y, v in zip(np.clip(fx, 0, w - 1e-9), np.clip(fy, 0, h - 1e-9), votes)
        )
    kept = non_max_suppress(cands, p.min_dist, p.overlap)
    return sorted(kept, key=lambda d: (d.cy, d.cx))


def dots_to_json(dots: list[Dot]) -> dict:
    return {"dots": [{"cx": round(d.cx, 4), "cy": round(d.cy, 4), "r": d.r, "votes": d.votes} for d in dots]}
