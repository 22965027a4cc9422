"""Hierarchical part parsing.

Inference runs per template, conditioning top-down across conv-layers: patterns
in the highest layer pick their units first (no pairwise context), patterns one
layer down score pairwise consistency against those already-fixed choices, and
so on. Each pattern's chosen unit then votes for the template center through
the pattern's learned displacement; the template position maximizes the sum of
truncated quadratic fit scores over the votes. The part node finally keeps the
highest-scoring template.

All positions are image-plane pixels. Tie-breaking is lexicographic-smallest
everywhere (unit (row, col), candidate position (x, y), template id), which
makes parses reproducible bit-for-bit.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptyDeformationRange, EmptyModel, NoPatterns
from .fmap import FeatureMapSet, LayerMeta, nearest_cell, unit_center
from .model import AogModel, LatentPattern, PartTemplate, ScoreWeights

# Above this many patterns per template the exact subset-mean search for the
# template position falls back to a fixed-point refinement.
SUBSET_EXACT_LIMIT = 12


@dataclass(frozen=True)
class UnitAssignment:
    """The unit a latent pattern selected, with its score decomposition."""

    pattern_id: str
    unit: tuple[int, int, int, int]  # layer, channel, row, col
    center_px: tuple[float, float]
    response: float
    deform: float
    pair: float
    total: float


@dataclass(frozen=True)
class ParseResult:
    image_id: str
    chosen_template_id: str
    center: tuple[float, float]
    box: tuple[float, float, float, float]  # cx, cy, w, h
    score: float
    template_scores: dict[str, float]
    assignments: tuple[UnitAssignment, ...]


def deformation_bounds(
    meta: LayerMeta, pattern: LatentPattern
) -> tuple[int, int, int, int]:
    """Inclusive (r0, r1, c0, c1) of the pattern's square, clipped to the map."""
    row, col = nearest_cell(meta, pattern.center)
    side = pattern.deform_side
    lo = (side - 1) // 2
    hi = side // 2
    r0 = max(row - lo, 0)
    r1 = min(row + hi, meta.height - 1)
    c0 = max(col - lo, 0)
    c1 = min(col + hi, meta.width - 1)
    if r1 < r0 or c1 < c0:
        raise EmptyDeformationRange(pattern.id)
    return r0, r1, c0, c1


def default_deform_side(meta: LayerMeta) -> int:
    return math.ceil(meta.height / 3)


def score_terminal(
    x: float,
    unit_pos: tuple[float, float],
    pattern_center: tuple[float, float],
    upper: list[tuple[tuple[float, float], tuple[float, float]]],
    weights: ScoreWeights,
) -> tuple[float, float, float]:
    """Score one unit: (response, deformation, pairwise) terms.

    ``upper`` holds ``(assigned_unit_pos, ideal_center)`` of the neighboring
    patterns one layer up, already inferred. The pairwise term penalizes the
    norm of the difference between the actual offset to each neighbor's unit
    and the ideal offset between the two patterns' centers; it is 0 when both
    units sit exactly at their ideal centers, and 0 with no neighbors.
    """
    if x > 0:
        s_rsp = weights.response * x
    else:
        s_rsp = weights.response * weights.none_response
    dx = unit_pos[0] - pattern_center[0]
    dy = unit_pos[1] - pattern_center[1]
    s_loc = -(weights.deform * (dx * dx + dy * dy))
    if upper:
        acc = 0.0
        for up_pos, up_center in upper:
            ix = pattern_center[0] - up_center[0]
            iy = pattern_center[1] - up_center[1]
            tx = (unit_pos[0] - up_pos[0]) - ix
            ty = (unit_pos[1] - up_pos[1]) - iy
            acc += math.sqrt(tx * tx + ty * ty)
        s_pair = -(weights.pair * (acc / len(upper)))
    else:
        s_pair = 0.0
    return s_rsp, s_loc, s_pair


def infer_latent_pattern(
    pattern: LatentPattern,
    fms: FeatureMapSet,
    upper: list[tuple[tuple[float, float], tuple[float, float]]],
    weights: ScoreWeights,
    fms_layer: int | None = None,
) -> UnitAssignment:
    """Pick the unit in the deformation square maximizing the terminal score.

    Ties break toward the smallest (row, col). ``fms_layer`` maps the pattern's
    model-layer index onto the container's layer list when the model was mined
    from a suffix of the exported layers.
    """
    li = pattern.layer if fms_layer is None else fms_layer
    meta = fms.meta(li)
    grid = fms.activation(li)[pattern.channel]
    r0, r1, c0, c1 = deformation_bounds(meta, pattern)
    sub = grid[r0 : r1 + 1, c0 : c1 + 1]

    xs = meta.offset_px + meta.stride_px * np.arange(c0, c1 + 1, dtype=np.float64)
    ys = meta.offset_px + meta.stride_px * np.arange(r0, r1 + 1, dtype=np.float64)
    s_rsp = np.where(sub > 0, weights.response * sub, weights.response * weights.none_response)
    dx = xs - pattern.center[0]
    dy = ys - pattern.center[1]
    s_loc = -(weights.deform * ((dx * dx)[None, :] + (dy * dy)[:, None]))
    total = s_rsp + s_loc
    if upper:
        acc = np.zeros_like(total)
        for up_pos, up_center in upper:
            ix = pattern.center[0] - up_center[0]
            iy = pattern.center[1] - up_center[1]
            tx = (xs - up_pos[0]) - ix
            ty = (ys - up_pos[1]) - iy
            acc += np.sqrt((tx * tx)[None, :] + (ty * ty)[:, None])
        s_pair = -(weights.pair * (acc / len(upper)))
        total = total + s_pair
    else:
        s_pair = np.zeros_like(total)

    flat_index = int(np.argmax(total))  # first maximum = smallest (row, col)
    rr, cc = divmod(flat_index, total.shape[1])
    row = r0 + rr
    col = c0 + cc
    pos = unit_center(meta, row, col)
    return UnitAssignment(
        pattern_id=pattern.id,
        unit=(pattern.layer, pattern.channel, row, col),
        center_px=pos,
        response=float(s_rsp[rr, cc]),
        deform=float(s_loc[rr, cc]),
        pair=float(s_pair[rr, cc]),
        total=float(total[rr, cc]),
    )


def fit_score(vote: tuple[float, float], p: tuple[float, float], weights: ScoreWeights) -> float:
    """Truncated quadratic fit of one pattern vote to a template position."""
    dx = vote[0] - p[0]
    dy = vote[1] - p[1]
    d2 = dx * dx + dy * dy
    r2 = weights.fit_radius_px * weights.fit_radius_px
    return -(weights.fit * min(d2, r2))


def _fit_total(votes: list[tuple[float, float]], p: tuple[float, float], weights: ScoreWeights) -> float:
    acc = 0.0
    for v in votes:
        acc += fit_score(v, p, weights)
    return acc


def _subset_means(votes: list[tuple[float, float]]) -> list[tuple[float, float]]:
    m = len(votes)
    out = []
    for mask in range(1, 1 << m):
        sx = 0.0
        sy = 0.0
        n = 0
        for i in range(m):
            if mask & (1 << i):
                sx += votes[i][0]
                sy += votes[i][1]
                n += 1
        out.append((sx / n, sy / n))
    return out


def _fixed_point_candidates(
    votes: list[tuple[float, float]], weights: ScoreWeights
) -> list[tuple[float, float]]:
    # Flat-kernel mean shift: the optimum of the truncated objective is the
    # mean of the votes within the truncation radius of itself.
    radius2 = weights.fit_radius_px * weights.fit_radius_px
    mean = (
        sum(v[0] for v in votes) / len(votes),
        sum(v[1] for v in votes) / len(votes),
    )
    out = [mean]
    for start in votes + [mean]:
        p = start
        for _ in range(64):
            active = [
                v for v in votes if (v[0] - p[0]) ** 2 + (v[1] - p[1]) ** 2 <= radius2
            ]
            if not active:
                break
            q = (
                sum(v[0] for v in active) / len(active),
                sum(v[1] for v in active) / len(active),
            )
            if q == p:
                break
            p = q
        out.append(p)
    return out


def template_position_candidates(
    votes: list[tuple[float, float]], weights: ScoreWeights
) -> list[tuple[float, float]]:
    """Candidate template positions searched for the fit-score argmax.

    With few votes this is exact: the objective is piecewise quadratic and its
    maximum is the mean of the votes left untruncated there, so enumerating
    every nonempty subset mean covers the optimum. Beyond SUBSET_EXACT_LIMIT
    votes, fall back to the votes, their mean, and mean-shift refinements.
    """
    if len(votes) <= SUBSET_EXACT_LIMIT:
        return _subset_means(votes)
    return list(votes) + _fixed_point_candidates(votes, weights)


def infer_part_template(
    template: PartTemplate,
    assignments: list[UnitAssignment],
    weights: ScoreWeights,
) -> tuple[tuple[float, float], float]:
    """Place the template and score it from its patterns' assignments.

    Returns ``(position, score)`` where score sums each pattern's unit score
    plus its fit score at the chosen position. Position ties break toward the
    smallest (x, y).
    """
    if not template.patterns:
        raise NoPatterns(template.id)
    votes = [
        pattern.vote_from(assignment.center_px)
        for pattern, assignment in zip(template.patterns, assignments)
    ]
    best_p = None
    best_val = -math.inf
    for p in template_position_candidates(votes, weights):
        val = _fit_total(votes, p, weights)
        if val > best_val or (val == best_val and (best_p is None or p < best_p)):
            best_val = val
            best_p = p
    score = 0.0
    for vote, assignment in zip(votes, assignments):
        score += assignment.total + fit_score(vote, best_p, weights)
    return best_p, score


def model_layer_offset(model: AogModel, fms: FeatureMapSet) -> int:
    """Index of the container layer matching the model's first layer.

    Models mined with fewer valid layers than the container exports align with
    the top (last) layers of the container.
    """
    base = len(fms.layers) - len(model.layer_metas)
    if base < 0:
        raise ValueError("container has fewer layers than the model expects")
    for i, meta in enumerate(model.layer_metas):
        got = fms.meta(base + i)
        if got != meta:
            raise ValueError(
                f"layer {i} mismatch: model expects {meta}, container has {got}"
            )
    return base


def parse_template(
    model: AogModel,
    template: PartTemplate,
    fms: FeatureMapSet,
    base: int,
) -> tuple[tuple[float, float], float, list[UnitAssignment]]:
    neighbor_map = model.neighbor_map(template.id)
    assigned: dict[str, UnitAssignment] = {}
    by_id = {p.id: p for p in template.patterns}
    for layer in sorted({p.layer for p in template.patterns}, reverse=True):
        for pattern in template.patterns:
            if pattern.layer != layer:
                continue
            upper = [
                (assigned[nid].center_px, by_id[nid].center)
                for nid in neighbor_map[pattern.id]
                if nid in assigned
            ]
            assigned[pattern.id] = infer_latent_pattern(
                pattern, fms, upper, model.weights, fms_layer=base + pattern.layer
            )
    assignments = [assigned[p.id] for p in template.patterns]
    position, score = infer_part_template(template, assignments, model.weights)
    return position, score, assignments


def parse_image(model: AogModel, fms: FeatureMapSet) -> ParseResult:
    """Full part parse: best template, its position, and its unit choices."""
    if model.is_empty:
        raise EmptyModel("cannot parse with a model that has no templates")
    base = model_layer_offset(model, fms)
    template_scores: dict[str, float] = {}
    per_template: dict[str, tuple[tuple[float, float], list[UnitAssignment]]] = {}
    for template in model.templates:
        position, score, assignments = parse_template(model, template, fms, base)
        template_scores[template.id] = score
        per_template[template.id] = (position, assignments)

    chosen = None
    for t in model.templates:
        s = template_scores[t.id]
        if chosen is None or s > template_scores[chosen.id] or (
            s == template_scores[chosen.id] and t.id < chosen.id
        ):
            chosen = t
    position, assignments = per_template[chosen.id]
    scale = chosen.scale if chosen.scale is not None else (0.0, 0.0)
    return ParseResult(
        image_id=fms.image_id,
        chosen_template_id=chosen.id,
        center=position,
        box=(position[0], position[1], scale[0], scale[1]),
        score=template_scores[chosen.id],
        template_scores=template_scores,
        assignments=tuple(assignments),
    )


# --- line-delimited parse records ----------------------------------------------


def parse_to_record(parse: ParseResult) -> dict:
    cx, cy, w, h = parse.box
    return {
        "image_id": parse.image_id,
        "template_id": parse.chosen_template_id,
        "cx": cx,
        "cy": cy,
        "w": w,
        "h": h,
        "score": parse.score,
    }


def dump_parse_records(parses: list[ParseResult]) -> str:
    return "".join(json.dumps(parse_to_record(p)) + "\n" for p in parses)


def load_parse_records(text: str) -> list[dict]:
    return [json.loads(line) for line in text.splitlines() if line.strip()]
