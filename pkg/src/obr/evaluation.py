"""Confusion matrices, detection metrics and cross-validation."""

from __future__ import annotations

import csv
import io
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .forest import train_forest
from .synth import GroundTruth

log = logging.getLogger(__name__)

MISSED = "<missed>"


class AlignmentError(ValueError):
    pass


@dataclass(frozen=True)
class Metrics:
    """Values are ``None`` when their denominator is zero."""

    sensitivity: float | None
    specificity: float | None
    accuracy: float | None

    @property
    def undefined(self) -> list[str]:
        return [k for k in ("sensitivity", "specificity", "accuracy") if getattr(self, k) is None]


def _ratio(num: float, den: float) -> float | None:
    return num / den if den else None


def binary_metrics(tp: int, fn: int, fp: int, tn: int) -> Metrics:
    if min(tp, fn, fp, tn) < 0:
        raise ValueError("counts must be non-negative")
    return Metrics(_ratio(tp, tp + fn), _ratio(tn, tn + fp), _ratio(tp + tn, tp + tn + fn + fp))


@dataclass
class ConfusionMatrix:
    labels: list[str]
    counts: np.ndarray  # rows actual, columns predicted

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        n = len(self.labels)
        if self.counts.shape != (n, n):
            raise ValueError(f"counts must be {n}x{n}, got {self.counts.shape}")
        if (self.counts < 0).any():
            raise ValueError("counts must be non-negative")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def tp(self) -> np.ndarray:
        return np.diag(self.counts).copy()

    @property
    def fp(self) -> np.ndarray:
        return self.counts.sum(axis=0) - self.tp

    @property
    def fn(self) -> np.ndarray:
        return self.counts.sum(axis=1) - self.tp

    @property
    def tn(self) -> np.ndarray:
        return self.total - self.tp - self.fp - self.fn

    def per_class(self) -> dict[str, Metrics]:
        return {
            lab: binary_metrics(int(a), int(b), int(c), int(d))
            for lab, a, b, c, d in zip(self.labels, self.tp, self.fn, self.fp, self.tn)
        }

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        labels = sorted(set(self.labels) | set(other.labels))
        out = np.zeros((len(labels), len(labels)), dtype=np.int64)
        pos = {lab: i for i, lab in enumerate(labels)}
        for cm in (self, other):
            idx = np.array([pos[lab] for lab in cm.labels], dtype=np.int64)
            out[np.ix_(idx, idx)] += cm.counts
        return ConfusionMatrix(labels, out)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["actual\\predicted", *self.labels])
        for lab, row in zip(self.labels, self.counts):
            w.writerow([lab, *row.tolist()])
        return buf.getvalue()


def char_confusion(pred, truth, labels=None) -> ConfusionMatrix:
    """Tally position-aligned labels into a confusion matrix.

    Raises:
        AlignmentError: the sequences differ in length.
    """
    pred, truth = list(pred), list(truth)
    if len(pred) != len(truth):
        raise AlignmentError(f"{len(pred)} predicted cells vs {len(truth)} truth cells")
    labels = sorted(set(pred) | set(truth) | set(labels or ()))
    pos = {lab: i for i, lab in enumerate(labels)}
    counts = np.zeros((len(labels), len(labels)), dtype=np.int64)
    if truth:
        np.add.at(counts, (np.array([pos[t] for t in truth]), np.array([pos[p] for p in pred])), 1)
    return ConfusionMatrix(labels, counts)


@dataclass
class DotMatchResult:
    tp: int
    fn: int
    fp: int
    tn: int
    pairs: list[tuple[int, int]] = field(default_factory=list)


def metrics(x) -> Metrics:
    """Sensitivity, specificity and accuracy.

    For a :class:`ConfusionMatrix` sensitivity and specificity are macro
    averages over the classes where they are defined; accuracy is
    trace / sum.
    """
    if isinstance(x, ConfusionMatrix):
        per = x.per_class().values()
        sens = [m.sensitivity for m in per if m.sensitivity is not None]
        spec = [m.specificity for m in per if m.specificity is not None]
        return Metrics(
            float(np.mean(sens)) if sens else None,
            float(np.mean(spec)) if spec else None,
            _ratio(int(np.trace(x.counts)), x.total),
        )
    if isinstance(x, DotMatchResult):
        return binary_metrics(x.tp, x.fn, x.fp, x.tn)
    if isinstance(x, dict):
        return binary_metrics(x["tp"], x["fn"], x["fp"], x["tn"])
    raise TypeError(f"cannot compute metrics for {type(x).__name__}")


def default_tol(dpi: float, col_pitch_mm: float = 2.5) -> float:
    """Half the intra-cell dot pitch, in pixels."""
    return 0.5 * col_pitch_mm * dpi / 25.4


def match_dots(pred, truth: GroundTruth, tol: float) -> DotMatchResult:
    """Greedy nearest-pair matching of detected dots to planted ones.

    Pairs within ``tol`` are accepted in order of increasing distance
    (ties by index), each dot at most once. True negatives are the flat
    positions of truth cells minus the false positives lying within
    ``tol`` of one.
    """
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")
    P = np.array([[d.cx, d.cy] for d in pred], dtype=np.float64).reshape(-1, 2)
    T = np.array([[d.cx, d.cy] for d in truth.dots], dtype=np.float64).reshape(-1, 2)
    pairs: list[tuple[int, int]] = []
    if len(P) and len(T):
        sdm = cKDTree(P).sparse_distance_matrix(cKDTree(T), tol, output_type="ndarray")
        order = np.lexsort((sdm["j"], sdm["i"], sdm["v"]))
        used_p, used_t = set(), set()
        for k in order:
            i, j = int(sdm["i"][k]), int(sdm["j"][k])
            if i in used_p or j in used_t:
                continue
            used_p.add(i)
            used_t.add(j)
            pairs.append((i, j))
    pairs.sort()
    matched = {i for i, _ in pairs}
    flats = [
        slot for c in truth.cells for k, slot in enumerate(c.slots) if not (c.mask >> k) & 1
    ]
    fp_idx = [i for i in range(len(P)) if i not in matched]
    fp_in_grid = 0
    if flats and fp_idx:
        dist, _ = cKDTree(np.array(flats)).query(P[fp_idx])
        fp_in_grid = int((dist <= tol).sum())
    tp = len(pairs)
    return DotMatchResult(tp, len(T) - tp, len(fp_idx), max(0, len(flats) - fp_in_grid), pairs)


def align_cells(cell_members, truth: GroundTruth, match: DotMatchResult) -> list[int | None]:
    """Predicted cell for every truth cell, by majority of its matched dots.

    ``cell_members`` lists predicted dot indices per predicted cell. A truth
    cell none of whose dots were matched, or whose majority cell was already
    claimed by another truth cell with more votes, maps to ``None``.
    """
    owner = {}
    for k, members in enumerate(cell_members):
        for i in members:
            owner[i] = k
    tally: dict[int, Counter] = defaultdict(Counter)
    for i, j in match.pairs:
        if i in owner:
            tally[truth.dots[j].cell_id][owner[i]] += 1
    claims: dict[int, tuple[int, int]] = {}
    for tc, cnt in tally.items():
        k, votes = min(cnt.items(), key=lambda kv: (-kv[1], kv[0]))
        prev = claims.get(k)
        if prev is None or (votes, -tc) > (prev[1], -prev[0]):
            claims[k] = (tc, votes)
    by_truth = {tc: k for k, (tc, _) in claims.items()}
    return [by_truth.get(c.cell_id) for c in truth.cells]


@dataclass(frozen=True)
class FoldResult:
    fold: str
    accuracy: float
    sensitivity: float | None
    specificity: float | None
    n_test: int

    @property
    def error(self) -> float:
        return 1.0 - self.accuracy


@dataclass
class CVReport:
    folds: list[FoldResult]
    overall: FoldResult
    confusion: ConfusionMatrix

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["fold", "accuracy", "error", "sensitivity", "specificity"])
        for f in [*self.folds, self.overall]:
            w.writerow([f.fold, _fmt(f.accuracy), _fmt(f.error), _fmt(f.sensitivity), _fmt(f.specificity)])
        return buf.getvalue()


def _fmt(v: float | None) -> str:
    return "undefined" if v is None else f"{v:.6f}"


def stratified_folds(labels, k: int, seed: int = 42) -> list[np.ndarray]:
    """Seeded stratified partition of ``range(len(labels))`` into ``k`` folds.

    Each class is shuffled and dealt round-robin, continuing from where the
    previous class stopped so fold sizes stay within one of each other.
    Classes with fewer than ``k`` rows are pooled into one remainder stratum.
    """
    n = len(labels)
    if k < 2:
        raise ValueError(f"k must be at least 2, got {k}")
    if k > n:
        raise ValueError(f"k={k} exceeds the {n} available rows")
    rng = np.random.default_rng(seed)
    by_class: dict[str, list[int]] = defaultdict(list)
    for i, lab in enumerate(labels):
        by_class[lab].append(i)
    strata, rest = [], []
    for lab in sorted(by_class):
        if len(by_class[lab]) >= k:
            strata.append(by_class[lab])
        else:
            rest.extend(by_class[lab])
    if rest:
        log.warning("%d rows from classes with fewer than %d rows pooled into one stratum", len(rest), k)
        strata.append(sorted(rest))
    folds: list[list[int]] = [[] for _ in range(k)]
    start = 0
    for stratum in strata:
        for off, i in enumerate(rng.permutation(stratum)):
            folds[(start + off) % k].append(int(i))
        start = (start + len(stratum)) % k
    return [np.array(sorted(f), dtype=np.int64) for f in folds]


def fold_seed(seed: int, fold: int) -> int:
    return int(np.random.SeedSequence([seed, fold]).generate_state(1)[0])


def kfold(rows, labels, k: int = 5, seed: int = 42, n_trees: int = 50, max_depth: int = 8,
          valid=None) -> CVReport:
    """Stratified k-fold cross-validation of the forest.

    ``valid[i] = False`` marks a truth cell the pipeline never produced; it
    is kept in the folds but always scores as an error (predicted
    ``MISSED``) and is never trained on. Overall accuracy is the mean of
    the fold accuracies.
    """
    labels = list(labels)
    X = np.asarray(rows, dtype=np.float64).reshape(len(labels), -1)
    valid = np.ones(len(labels), bool) if valid is None else np.asarray(valid, bool)
    folds = stratified_folds(labels, k, seed)
    results, total = [], None
    for f, test in enumerate(folds):
        train = np.setdiff1d(np.arange(len(labels)), test)
        train = train[valid[train]]
        model = train_forest(X[train], [labels[i] for i in train], n_trees, max_depth, fold_seed(seed, f))
        pred = [MISSED] * len(test)
        ok = [j for j, i in enumerate(test) if valid[i]]
        if ok:
            for j, (lab, _) in zip(ok, model.predict(X[test[ok]])):
                pred[j] = lab
        cm = char_confusion(pred, [labels[i] for i in test])
        m = metrics(cm)
        results.append(FoldResult(str(f + 1), m.accuracy or 0.0, m.sensitivity, m.specificity, len(test)))
        total = cm if total is None else total + cm
    mean = lambda vals: float(np.mean(vals)) if vals else None  # noqa: E731
    overall = FoldResult(
        "overall",
        float(np.mean([r.accuracy for r in results])),
        mean([r.sensitivity for r in results if r.sensitivity is not None]),
        mean([r.specificity for r in results if r.specificity is not None]),
        len(labels),
    )
    return CVReport(results, overall, total)


def dot_metrics_csv(rows: list[tuple[str, DotMatchResult]]) -> str:
    """One line per page plus a total line."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["page", "tp", "fn", "fp", "tn", "sensitivity", "specificity", "accuracy"])
    tot = DotMatchResult(0, 0, 0, 0)
    for name, r in rows:
        m = metrics(r)
        w.writerow([name, r.tp, r.fn, r.fp, r.tn, _fmt(m.sensitivity), _fmt(m.specificity), _fmt(m.accuracy)])
        tot = DotMatchResult(tot.tp + r.tp, tot.fn + r.fn, tot.fp + r.fp, tot.tn + r.tn)
    m = metrics(tot)
    w.writerow(["total", tot.tp, tot.fn, tot.fp, tot.tn, _fmt(m.sensitivity), _fmt(m.specificity), _fmt(m.accuracy)])
    return buf.getvalue()



@dataclass
class PageEval:
    match: DotMatchResult
    rows: list[list[int]]  # all-zero for truth cells the pipeline missed
    labels: list[str]
    valid: list[bool]
    predicted: list[str]


def evaluate_page(result, truth: GroundTruth, tol: float) -> PageEval:
    """Match a page result's dots to truth and pair every truth cell with its features.

    ``result`` is a pipeline page result: ``.dots`` and ``.cells`` whose
    entries carry ``.cell.members``, ``.row`` and ``.label``.
    """
    match = match_dots(result.dots, truth, tol)
    owner = align_cells([c.cell.members for c in result.cells], truth, match)
    rows, labels, valid, predicted = [], [], [], []
    for tc, k in zip(truth.cells, owner):
        cell = result.cells[k] if k is not None else None
        row = cell.row if cell is not None else None
        labels.append(tc.label)
        valid.append(row is not None)
        rows.append(row if row is not None else [0] * 7)
        predicted.append(cell.label if cell is not None and cell.label is not None else MISSED)
    return PageEval(match, rows, labels, valid, predicted)
