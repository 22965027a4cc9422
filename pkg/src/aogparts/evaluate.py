"""Localization metrics and parse diagnostics."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import DegenerateBox, EmptyLayer, ZeroDiagonal
from .fmap import FeatureMapSet
from .parser import ParseResult

Box = tuple[float, float, float, float]  # cx, cy, w, h


def _corners(box: Box) -> tuple[float, float, float, float]:
    cx, cy, w, h = box
    return cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2


def iou(a: Box, b: Box) -> float:
    """Intersection over union of two center-format boxes."""
    if a[2] <= 0 or a[3] <= 0 or b[2] <= 0 or b[3] <= 0:
        raise DegenerateBox("boxes must have positive area")
    ax0, ay0, ax1, ay1 = _corners(a)
    bx0, by0, bx1, by1 = _corners(b)
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a[2] * a[3] + b[2] * b[3] - inter
    return inter / union


def pcp_correct(pred: Box, gt: Box) -> bool:
    """Correct part localization under the IoU >= 0.5 convention (inclusive)."""
    return iou(pred, gt) >= 0.5


def normalized_distance(
    pred_center: tuple[float, float],
    gt_center: tuple[float, float],
    diagonal_px: float,
) -> float:
    """Center error divided by the object bounding-box diagonal."""
    if diagonal_px <= 0:
        raise ZeroDiagonal("object diagonal must be > 0")
    dx = pred_center[0] - gt_center[0]
    dy = pred_center[1] - gt_center[1]
    return math.sqrt(dx * dx + dy * dy) / diagonal_px


@dataclass(frozen=True)
class EvalRecord:
    image_id: str
    predicted: Box
    ground_truth: Box
    normalized_distance: float
    pcp_correct: bool


def evaluate_pairs(
    pairs: list[tuple[str, Box, Box, float]]
) -> tuple[list[EvalRecord], float, float]:
    """(records, mean normalized distance, PCP) over (id, pred, gt, diag) rows."""
    records = []
    for image_id, pred, gt, diag in pairs:
        nd = normalized_distance((pred[0], pred[1]), (gt[0], gt[1]), diag)
        records.append(EvalRecord(image_id, pred, gt, nd, pcp_correct(pred, gt)))
    if not records:
        return records, 0.0, 0.0
    mean_nd = sum(r.normalized_distance for r in records) / len(records)
    pcp = sum(1 for r in records if r.pcp_correct) / len(records)
    return records, mean_nd, pcp


# --- activation diagnostics -------------------------------------------------------


def pattern_activation_stats(
    parse: ParseResult, fms: FeatureMapSet, layer_base: int = 0
) -> dict[int, tuple[float, float, float]]:
    """Per-layer activation statistics of the chosen template's parse.

    For each model layer with at least one inferred pattern, reports
    (energy_ratio, relative_magnitude, activation_ratio) over the normalized
    post-ReLU activations of that conv-layer:

    - energy_ratio: summed activation of the distinct inferred units over the
      summed activation of all units in the layer;
    - relative_magnitude: mean activation of the inferred units (one per
      pattern, duplicates counted) over the mean activation of all units;
    - activation_ratio: fraction of patterns whose unit beats the layer's
      mean activation.
    """
    per_layer: dict[int, list[tuple[int, int, int]]] = {}
    for a in parse.assignments:
        layer, channel, row, col = a.unit
        per_layer.setdefault(layer, []).append((channel, row, col))
    if not per_layer:
        raise EmptyLayer("parse has no assigned units")

    out: dict[int, tuple[float, float, float]] = {}
    for layer, units in sorted(per_layer.items()):
        grid = fms.activation(layer_base + layer)
        total_energy = float(grid.sum())
        mean_all = float(grid.mean())
        distinct = sorted(set(units))
        inferred_energy = float(sum(grid[c, r, k] for c, r, k in distinct))
        values = [float(grid[c, r, k]) for c, r, k in units]
        mean_inferred = sum(values) / len(values)
        energy_ratio = inferred_energy / total_energy if total_energy > 0 else 0.0
        relative = mean_inferred / mean_all if mean_all > 0 else 0.0
        activation_ratio = sum(1 for v in values if v > mean_all) / len(values)
        out[layer] = (energy_ratio, relative, activation_ratio)
    return out
