"""Accuracy metrics, scene-level k-fold protocol and the patch confusion matrix."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from . import kernels
from .datagen import Sample, table_region
from .features import NON_OBJECT, ImageDims
from .model import Prediction

NON_OBJECT_CLASS = "non-object"


class Patch(NamedTuple):
    row: int
    col: int

    def label(self) -> str:
        return f"({self.row}, {self.col})"


@dataclass(frozen=True)
class PatchGrid:
    x0: float
    y0: float
    width: float
    height: float
    rows: int = 4
    cols: int = 16

    def __post_init__(self):
        if self.rows <= 0 or self.cols <= 0 or self.width <= 0 or self.height <= 0:
            raise ValueError("grid needs positive size and counts")

    @classmethod
    def for_table(cls, dims: ImageDims, rows: int = 4, cols: int = 16) -> "PatchGrid":
        x0, y0, x1, y1 = table_region(dims)
        return cls(x0, y0, x1 - x0, y1 - y0, rows, cols)

    @property
    def patch_w(self) -> float:
        return self.width / self.cols

    @property
    def patch_h(self) -> float:
        return self.height / self.rows

    def contains(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
        return (
            (pts[:, 0] >= self.x0)
            & (pts[:, 0] <= self.x0 + self.width)
            & (pts[:, 1] >= self.y0)
            & (pts[:, 1] <= self.y0 + self.height)
        )


def _is_sentinel(pts: np.ndarray) -> np.ndarray:
    return (pts[:, 0] == NON_OBJECT[0]) & (pts[:, 1] == NON_OBJECT[1])


def assign_many(points, grid: PatchGrid) -> list:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    sent = _is_sentinel(pts)
    bad = ~sent & ~grid.contains(pts)
    if bad.any():
        p = pts[np.argmax(bad)]
        raise ValueError(f"point ({p[0]}, {p[1]}) lies outside the patch grid region")
    idx = kernels.patch_indices(pts, grid.x0, grid.y0, grid.patch_w, grid.patch_h, grid.rows, grid.cols)
    return [NON_OBJECT_CLASS if s else Patch(int(r), int(c)) for s, (r, c) in zip(sent, idx)]


def patch_assign(c, grid: PatchGrid):
    """Patch of a centroid, or the non-object class for the sentinel."""
    return assign_many([c], grid)[0]


@dataclass
class PatchConfusionMatrix:
    row_classes: list  # targets; non-object first
    col_classes: list  # predictions; non-object last
    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def normalized(self) -> np.ndarray:
        sums = self.counts.sum(axis=1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            out = np.where(sums > 0, self.counts / np.where(sums > 0, sums, 1), 0.0)
        return out

    def cell(self, target, predicted) -> float:
        return float(self.normalized[self.row_classes.index(target), self.col_classes.index(predicted)])

    def count(self, target, predicted) -> int:
        return int(self.counts[self.row_classes.index(target), self.col_classes.index(predicted)])

    def matched_mask(self) -> np.ndarray:
        """True where row and column denote the same class."""
        return np.array([[r == c for c in self.col_classes] for r in self.row_classes], dtype=bool)

    def is_diagonal(self) -> bool:
        return bool(np.all(self.counts[~self.matched_mask()] == 0))

    def row_labels(self) -> list[str]:
        return [_label(c) for c in self.row_classes]

    def col_labels(self) -> list[str]:
        return [_label(c) for c in self.col_classes]


def _label(c) -> str:
    return NON_OBJECT_CLASS if c == NON_OBJECT_CLASS else c.label()


def build_pcm(pairs: Sequence, grid: PatchGrid) -> PatchConfusionMatrix:
    """Counts of (target patch, predicted patch).

    Only patches hit by at least one target or prediction are kept, so
    dropping classes never discards a count.
    """
    if len(pairs) == 0:
        raise ValueError("build_pcm needs at least one pair")
    tgt = assign_many([p[0] for p in pairs], grid)
    prd = assign_many([p[1] for p in pairs], grid)
    patches = sorted({c for c in tgt + prd if c != NON_OBJECT_CLASS})
    rows = [NON_OBJECT_CLASS] + patches
    cols = patches + [NON_OBJECT_CLASS]
    ri = {c: i for i, c in enumerate(rows)}
    ci = {c: i for i, c in enumerate(cols)}
    counts = np.zeros((len(rows), len(cols)), dtype=np.int64)
    for t, p in zip(tgt, prd):
        counts[ri[t], ci[p]] += 1
    return PatchConfusionMatrix(rows, cols, counts)


def prediction_pairs(samples: Sequence[Sample], preds: Sequence[Prediction]) -> list[tuple]:
    """(target point, predicted point) per sample; for multi-target samples
    the hit target is used when the prediction is correct."""
    out = []
    for s, p in zip(samples, preds):
        tokens = s.objects.tokens()
        t = p.top if p.top in s.targets else s.targets[0]
        out.append((tuple(tokens[t]), tuple(tokens[p.top])))
    return out


# --------------------------------------------------------------------------
# metrics
# --------------------------------------------------------------------------


def metrics(preds: Sequence[Prediction], samples: Sequence[Sample]) -> dict:
    """Top-1/Top-2 accuracy and token-level micro precision/recall/F1.

    Each (sample, token) is positive iff labelled 1 and predicted positive
    iff it is the sample's top-ranked token.
    """
    if len(preds) != len(samples):
        raise ValueError(f"{len(preds)} predictions for {len(samples)} samples")
    n = len(samples)
    if n == 0:
        raise ValueError("metrics need at least one sample")
    top1 = top2 = tp = fp = fn = 0
    for p, s in zip(preds, samples):
        targets = set(s.targets)
        hit = p.top in targets
        top1 += hit
        top2 += bool(targets & {int(i) for i in p.ranked[:2]})
        tp += hit
        fp += not hit
        fn += len(targets) - hit
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return {
        "accuracy": top1 / n,
        "precision": precision,
        "recall": recall,
        "f1": f1,
        "top2": top2 / n,
        "n": n,
    }


METRIC_KEYS = ("accuracy", "precision", "recall", "f1", "top2")


def aggregate(per_fold: Sequence[dict]) -> dict:
    """Mean over folds with sample std-dev and std-error, each labelled."""
    out: dict = {}
    k = len(per_fold)
    for key in METRIC_KEYS:
        vals = np.array([m[key] for m in per_fold], dtype=np.float64)
        out[key] = float(vals.mean())
        sd = float(vals.std(ddof=1)) if k > 1 else 0.0
        out[key + "_std"] = sd
        out[key + "_stderr"] = sd / math.sqrt(k) if k > 1 else 0.0
    out["per_fold"] = list(per_fold)
    return out


# --------------------------------------------------------------------------
# cross-validation protocol
# --------------------------------------------------------------------------


@dataclass
class Fold:
    train: list
    val: list


@dataclass
class FoldPlan:
    test: list
    folds: list[Fold]


def kfold_split(scenes: Sequence, k: int = 8, holdout: int = 6, seed: int | None = 0) -> FoldPlan:
    """Hold out ``holdout`` scenes for testing and partition the rest into
    ``k`` disjoint validation groups; fold f trains on all other groups."""
    scenes = list(scenes)
    if len(set(scenes)) != len(scenes):
        raise ValueError("scene ids must be unique")
    if k < 2 or holdout < 0:
        raise ValueError("need k >= 2 and holdout >= 0")
    rest = len(scenes) - holdout
    if rest < 3 * k:
        raise ValueError(f"{len(scenes)} scenes are too few for {k} folds of >= 3 validation scenes plus {holdout} test scenes")
    order = list(np.random.default_rng(seed).permutation(len(scenes))) if seed is not None else list(range(len(scenes)))
    shuffled = [scenes[i] for i in order]
    test, pool = shuffled[:holdout], shuffled[holdout:]
    groups = [list(g) for g in np.array_split(np.array(pool, dtype=object), k)]
    folds = [Fold([s for j, g in enumerate(groups) if j != f for s in g], groups[f]) for f in range(k)]
    return FoldPlan(test, folds)


def select_scenes(samples: Sequence[Sample], scenes) -> list[Sample]:
    keep = set(scenes)
    return [s for s in samples if s.scene in keep]


# --------------------------------------------------------------------------
# rendering
# --------------------------------------------------------------------------


def write_csv(pcm: PatchConfusionMatrix, path) -> None:
    norm = pcm.normalized
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["target\\predicted"] + pcm.col_labels())
        for label, row in zip(pcm.row_labels(), norm):
            w.writerow([label] + [f"{v:.4f}" for v in row])


def read_csv(path) -> tuple[list[str], list[str], np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    cols = rows[0][1:]
    labels = [r[0] for r in rows[1:]]
    values = np.array([[float(v) for v in r[1:]] for r in rows[1:]], dtype=np.float64).reshape(len(labels), len(cols))
    return labels, cols, values


# white -> dark blue
RAMP_LO = (255, 255, 255)
RAMP_HI = (8, 48, 107)


def ramp_color(v: float) -> str:
    v = min(max(float(v), 0.0), 1.0)
    r, g, b = (round(lo + (hi - lo) * v) for lo, hi in zip(RAMP_LO, RAMP_HI))
    return f"#{r:02x}{g:02x}{b:02x}"


def write_svg(pcm: PatchConfusionMatrix, path, cell: int = 36) -> None:
    norm = pcm.normalized
    nr, nc = norm.shape
    left, top = 90, 90
    width, height = left + nc * cell + 20, top + nr * cell + 40
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'font-family="sans-serif" font-size="9">',
        f'<text x="{left + nc * cell / 2}" y="14" text-anchor="middle" font-size="12">predicted patch</text>',
        f'<text x="12" y="{top + nr * cell / 2}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 12 {top + nr * cell / 2})">target patch</text>',
    ]
    for j, lab in enumerate(pcm.col_labels()):
        x = left + j * cell + cell / 2
        parts.append(f'<text x="{x}" y="{top - 6}" text-anchor="start" transform="rotate(-60 {x} {top - 6})">{lab}</text>')
    for i, lab in enumerate(pcm.row_labels()):
        parts.append(f'<text x="{left - 4}" y="{top + i * cell + cell / 2 + 3}" text-anchor="end">{lab}</text>')
    for i in range(nr):
        for j in range(nc):
            v = norm[i, j]
            x, y = left + j * cell, top + i * cell
            parts.append(
                f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="{ramp_color(v)}" stroke="#cccccc"/>'
            )
            if v >= 0.01:
                colour = "#ffffff" if v > 0.5 else "#000000"
                parts.append(
                    f'<text x="{x + cell / 2}" y="{y + cell / 2 + 3}" text-anchor="middle" fill="{colour}">{v:.2f}</text>'
                )
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(parts) + "\n")


def render(pcm: PatchConfusionMatrix, fmt: str, path) -> None:
    if fmt == "csv":
        write_csv(pcm, path)
    elif fmt == "svg":
        write_svg(pcm, path)
    else:
        raise ValueError(f"unknown format {fmt!r}; expected csv or svg")
