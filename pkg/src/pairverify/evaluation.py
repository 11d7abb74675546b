"""Verification metrics, score-distribution analysis, and threshold sweeps.

The decision rule everywhere is ``score > threshold`` with threshold 0;
``threshold_sweep`` shifts the threshold to measure how brittle a model's
operating point is. Distribution analysis estimates per-class score
densities with a Gaussian KDE and reduces them to a few scalar diagnostics:
mode location/height per class and the fraction of pairs scoring near 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .data import universe_by_id
from .errors import DataFormatError, DataIntegrityError, ShapeError, UsageError
from .model import ModelParams, encode_batch

NEAR_THRESHOLD_STD_FRACTION = 0.25
SENSITIVITY_STD_FRACTION = 0.5


@dataclass(frozen=True)
class Metrics:
    tp: int
    fp: int
    fn: int
    tn: int
    precision: float
    recall: float
    f1: float
    accuracy: float


def metrics_from_counts(tp: int, fp: int, fn: int, tn: int) -> Metrics:
    """Precision/recall/F1/accuracy with the 0-for-0/0 convention."""
    for name, v in (("tp", tp), ("fp", fp), ("fn", fn), ("tn", tn)):
        if v < 0:
            raise UsageError(f"{name} must be >= 0")
    total = tp + fp + fn + tn
    if total == 0:
        raise UsageError("confusion counts are all zero")
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    accuracy = (tp + tn) / total
    return Metrics(tp=tp, fp=fp, fn=fn, tn=tn,
                   precision=precision, recall=recall, f1=f1, accuracy=accuracy)


@dataclass(frozen=True)
class ScoreRecord:
    a: int
    b: int
    y: int
    similarity: float
    threshold: float
    score: float


@dataclass(frozen=True)
class KdeCurve:
    """Gaussian kernel density of one score sample on an even grid."""

    grid: np.ndarray
    density: np.ndarray
    bandwidth: float
    fallback: bool  # true when auto bandwidth degenerated to the tiny default


@dataclass(frozen=True)
class DensityCurve:
    """Positive and negative class densities on one shared grid."""

    grid: np.ndarray
    density_pos: np.ndarray
    density_neg: np.ndarray
    bandwidth_pos: float
    bandwidth_neg: float
    fallback_pos: bool
    fallback_neg: bool


@dataclass(frozen=True)
class DistributionStats:
    pos_mode_x: float
    pos_mode_density: float
    pos_mode_distance: float
    neg_mode_x: float
    neg_mode_density: float
    neg_mode_distance: float
    near_threshold_eps: float
    near_threshold_fraction: float


def _metrics_from_scores(scores: np.ndarray, labels: np.ndarray, offset: float) -> Metrics:
    pred = scores > offset
    pos = labels == 1
    tp = int(np.count_nonzero(pred & pos))
    fp = int(np.count_nonzero(pred & ~pos))
    fn = int(np.count_nonzero(~pred & pos))
    tn = int(np.count_nonzero(~pred & ~pos))
    return metrics_from_counts(tp, fp, fn, tn)


def evaluate(params: ModelParams, pairs: Sequence, universe) -> tuple:
    """Score every pair at threshold 0.

    ``universe`` may be a commodity list or an id table. Returns
    ``(Metrics, [ScoreRecord])`` with records in input pair order.
    """
    if not pairs:
        raise UsageError("cannot evaluate an empty pair list")
    table = universe if isinstance(universe, dict) else universe_by_id(universe)
    for p in pairs:
        for node in (p.a, p.b):
            if node not in table:
                raise DataIntegrityError(f"pair references unknown commodity id {node}")

    ids = sorted({node for p in pairs for node in (p.a, p.b)})
    row = {cid: i for i, cid in enumerate(ids)}
    p_mat, q_mat = encode_batch(params, [table[cid] for cid in ids])

    ia = np.array([row[p.a] for p in pairs])
    ib = np.array([row[p.b] for p in pairs])
    labels = np.array([p.y for p in pairs])
    s = np.einsum("ij,ij->i", p_mat[ia], p_mat[ib])
    if params.config.variant == "sat":
        t = np.einsum("ij,ij->i", q_mat[ia], q_mat[ib])
    else:
        t = np.full(len(pairs), float(params.scalar_threshold))
    score = s - t

    records = [
        ScoreRecord(a=p.a, b=p.b, y=p.y,
                    similarity=float(s[i]), threshold=float(t[i]), score=float(score[i]))
        for i, p in enumerate(pairs)
    ]
    return _metrics_from_scores(score, labels, 0.0), records


def silverman_bandwidth(scores: np.ndarray) -> float:
    """0.9 * min(std, IQR/1.34) * n^(-1/5); 0 when the sample is degenerate.

    A zero IQR with nonzero spread falls back to the std term alone.
    """
    n = len(scores)
    sigma = float(np.std(scores, ddof=1))
    q75, q25 = np.percentile(scores, [75, 25])
    iqr_term = float(q75 - q25) / 1.34
    candidates = [c for c in (sigma, iqr_term) if c > 0]
    if not candidates:
        return 0.0
    return 0.9 * min(candidates) * n ** (-1 / 5)


def kde(
    scores: Sequence[float],
    bandwidth="auto",
    grid_points: int = 256,
    grid: Optional[np.ndarray] = None,
) -> KdeCurve:
    """Gaussian kernel density estimate of one sample.

    Auto bandwidth uses Silverman's rule; a fully degenerate sample (all
    values equal) falls back to ``max(|value|, 1) * 1e-3`` and is flagged.
    The default grid spans the data range padded by 4 bandwidths.
    """
    values = np.asarray(scores, dtype=np.float64)
    if values.ndim != 1 or len(values) < 2:
        raise UsageError("kde needs at least 2 scores")
    fallback = False
    if bandwidth == "auto":
        h = silverman_bandwidth(values)
        if h <= 0:
            h = max(abs(float(values[0])), 1.0) * 1e-3
            fallback = True
    else:
        h = float(bandwidth)
        if h <= 0:
            raise UsageError("bandwidth must be > 0")
    if grid is None:
        if grid_points < 2:
            raise UsageError("grid_points must be >= 2")
        grid = np.linspace(values.min() - 4 * h, values.max() + 4 * h, grid_points)
    else:
        grid = np.asarray(grid, dtype=np.float64)
    z = (grid[:, None] - values[None, :]) / h
    density = np.exp(-0.5 * z * z).sum(axis=1) / (len(values) * h * math.sqrt(2 * math.pi))
    return KdeCurve(grid=grid, density=density, bandwidth=h, fallback=fallback)


def make_density_curve(records: Sequence[ScoreRecord], grid_points: int = 256) -> DensityCurve:
    """Both class densities on one shared grid spanning all scores padded by
    4 of the larger bandwidth."""
    pos = np.array([r.score for r in records if r.y == 1])
    neg = np.array([r.score for r in records if r.y == 0])
    if len(pos) < 2 or len(neg) < 2:
        raise UsageError("need at least 2 scores in each class")
    curves = []
    for values in (pos, neg):
        h = silverman_bandwidth(values)
        if h <= 0:
            h = max(abs(float(values[0])), 1.0) * 1e-3
            curves.append((h, True))
        else:
            curves.append((h, False))
    (h_pos, fb_pos), (h_neg, fb_neg) = curves
    pad = 4 * max(h_pos, h_neg)
    lo = min(pos.min(), neg.min()) - pad
    hi = max(pos.max(), neg.max()) + pad
    grid = np.linspace(lo, hi, grid_points)
    pos_curve = kde(pos, bandwidth=h_pos, grid=grid)
    neg_curve = kde(neg, bandwidth=h_neg, grid=grid)
    return DensityCurve(
        grid=grid,
        density_pos=pos_curve.density,
        density_neg=neg_curve.density,
        bandwidth_pos=h_pos,
        bandwidth_neg=h_neg,
        fallback_pos=fb_pos,
        fallback_neg=fb_neg,
    )


def distribution_stats(pos_curve: KdeCurve, neg_curve: KdeCurve,
                       records: Sequence[ScoreRecord]) -> DistributionStats:
    """Mode location/height per class plus the near-threshold mass: the
    fraction of pairs with |score| below a quarter of the score stddev."""
    if pos_curve.grid.shape != neg_curve.grid.shape or not np.array_equal(
        pos_curve.grid, neg_curve.grid
    ):
        raise ShapeError("pos and neg curves must share one grid")
    scores = np.array([r.score for r in records])
    if scores.size == 0:
        raise UsageError("records must be non-empty")
    eps = NEAR_THRESHOLD_STD_FRACTION * float(np.std(scores))
    near = float(np.count_nonzero(np.abs(scores) < eps)) / len(scores)
    i_pos = int(np.argmax(pos_curve.density))
    i_neg = int(np.argmax(neg_curve.density))
    pos_x = float(pos_curve.grid[i_pos])
    neg_x = float(neg_curve.grid[i_neg])
    return DistributionStats(
        pos_mode_x=pos_x,
        pos_mode_density=float(pos_curve.density[i_pos]),
        pos_mode_distance=abs(pos_x),
        neg_mode_x=neg_x,
        neg_mode_density=float(neg_curve.density[i_neg]),
        neg_mode_distance=abs(neg_x),
        near_threshold_eps=eps,
        near_threshold_fraction=near,
    )


def stats_from_density_curve(curve: DensityCurve,
                             records: Sequence[ScoreRecord]) -> DistributionStats:
    pos = KdeCurve(curve.grid, curve.density_pos, curve.bandwidth_pos, curve.fallback_pos)
    neg = KdeCurve(curve.grid, curve.density_neg, curve.bandwidth_neg, curve.fallback_neg)
    return distribution_stats(pos, neg, records)


def threshold_sweep(records: Sequence[ScoreRecord], offsets: Sequence[float]) -> list:
    """Metrics at decision rule ``score > offset``, one entry per offset."""
    scores = np.array([r.score for r in records])
    labels = np.array([r.y for r in records])
    return [(float(off), _metrics_from_scores(scores, labels, float(off))) for off in offsets]


def threshold_sensitivity(records: Sequence[ScoreRecord], n_offsets: int = 21) -> tuple:
    """Worst F1 drop over offsets within half a score stddev of 0.

    Returns ``(max_drop, sweep)`` where sweep includes offset 0.
    """
    if n_offsets < 3 or n_offsets % 2 == 0:
        raise UsageError("n_offsets must be an odd integer >= 3")
    scores = np.array([r.score for r in records])
    half_std = SENSITIVITY_STD_FRACTION * float(np.std(scores))
    offsets = np.linspace(-half_std, half_std, n_offsets)
    offsets[n_offsets // 2] = 0.0
    sweep = threshold_sweep(records, offsets)
    f1_at_zero = next(m.f1 for off, m in sweep if off == 0.0)
    max_drop = max(f1_at_zero - m.f1 for _, m in sweep)
    return max_drop, sweep


def write_scores_csv(path: str, records: Sequence[ScoreRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("a,b,y,s,t,score\n")
        for r in records:
            fh.write(f"{r.a},{r.b},{r.y},{r.similarity!r},{r.threshold!r},{r.score!r}\n")


def read_scores_csv(path: str) -> list:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != "a,b,y,s,t,score":
        raise DataFormatError(f"{path}:1: expected header 'a,b,y,s,t,score'")
    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != 6:
            raise DataFormatError(f"{path}:{lineno}: expected 6 fields, got {len(parts)}")
        try:
            records.append(ScoreRecord(
                a=int(parts[0]), b=int(parts[1]), y=int(parts[2]),
                similarity=float(parts[3]), threshold=float(parts[4]),
                score=float(parts[5]),
            ))
        except ValueError as e:
            raise DataFormatError(f"{path}:{lineno}: malformed score row: {e}") from e
    return records


def write_density_tsv(path: str, curve: DensityCurve, stats: DistributionStats) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# bandwidth_pos={curve.bandwidth_pos!r} bandwidth_neg={curve.bandwidth_neg!r}\n")
        fh.write(f"# fallback_pos={curve.fallback_pos} fallback_neg={curve.fallback_neg}\n")
        fh.write(f"# near_threshold_eps={stats.near_threshold_eps!r}\n")
        fh.write("x\tdensity_pos\tdensity_neg\n")
        for x, dp, dn in zip(curve.grid, curve.density_pos, curve.density_neg):
            fh.write(f"{x!r}\t{dp!r}\t{dn!r}\n")


def write_stats(path: str, pairs: Sequence) -> None:
    """Flat key=value lines; values formatted for exact float round trips."""
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in pairs:
            fh.write(f"{key}={value!r}\n" if isinstance(value, float) else f"{key}={value}\n")


def metrics_items(m: Metrics) -> list:
    return [
        ("tp", m.tp), ("fp", m.fp), ("fn", m.fn), ("tn", m.tn),
        ("precision", m.precision), ("recall", m.recall),
        ("f1", m.f1), ("accuracy", m.accuracy),
    ]


def stats_items(stats: DistributionStats) -> list:
    return [
        ("pos_mode_x", stats.pos_mode_x),
        ("pos_mode_density", stats.pos_mode_density),
        ("pos_mode_distance", stats.pos_mode_distance),
        ("neg_mode_x", stats.neg_mode_x),
        ("neg_mode_density", stats.neg_mode_density),
        ("neg_mode_distance", stats.neg_mode_distance),
        ("near_threshold_eps", stats.near_threshold_eps),
        ("near_threshold_fraction", stats.near_threshold_fraction),
    ]
