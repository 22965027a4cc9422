"""Mining the sub-graph of a part template from very few annotations.

For each conv-layer, every cell of every channel is a candidate latent
pattern. A candidate is scored by how well its best unit responds near its
ideal center on annotated images (plus how well its vote matches the annotated
part center), and by how strongly it keeps firing on unannotated images while
staying close to the template. Candidates are then taken greedily, best first,
suppressing near-duplicates in the same channel, until the layer's pattern
budget is filled. The budget itself is fitted from the shape of the ranked
score curve unless overridden.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import NoAnnotations, UnknownImage
from .fmap import FeatureMapSet, LayerMeta, flip_horizontal, unit_center
from .model import (
    Annotation,
    AogModel,
    LatentPattern,
    PartTemplate,
    ScoreWeights,
    compute_displacement,
    estimate_template_scale,
    mean_annotated_center,
)
from .parser import default_deform_side


@dataclass
class Candidate:
    """One enumerated pattern location, optionally scored."""

    layer: int
    channel: int
    row: int
    col: int
    center: tuple[float, float]
    score: float = 0.0
    annotated_term: float = 0.0
    unannotated_term: float = 0.0


@dataclass(frozen=True)
class MinerConfig:
    """Knobs of the mining step.

    ``valid_layers`` caps how many of the highest exported conv-layers are
    mined. ``epsilon_cells`` is the per-channel suppression radius: after a
    candidate is selected, candidates in the same channel within a Chebyshev
    distance strictly below epsilon are removed. ``n_k_override`` fixes the
    per-layer pattern count instead of fitting it from the score curve.
    ``unannotated_cap`` bounds how many unannotated images enter the score
    expectation (first ids in sorted order, for determinism).
    """

    valid_layers: int = 9
    epsilon_cells: int = 2
    n_k_override: int | tuple[int, ...] | None = None
    unannotated_cap: int = 64
    weights: ScoreWeights | None = None

    def __post_init__(self):
        if self.epsilon_cells < 1:
            raise ValueError("epsilon_cells must be >= 1")
        if self.valid_layers < 1:
            raise ValueError("valid_layers must be >= 1")


def enumerate_candidates(meta: LayerMeta, layer: int) -> list[Candidate]:
    """One unscored candidate per (channel, row, col) cell of the layer."""
    out = []
    for channel in range(meta.channels):
        for row in range(meta.height):
            for col in range(meta.width):
                out.append(
                    Candidate(
                        layer=layer,
                        channel=channel,
                        row=row,
                        col=col,
                        center=unit_center(meta, row, col),
                    )
                )
    return out


def _square_bounds(meta: LayerMeta, row: int, col: int, side: int):
    lo = (side - 1) // 2
    hi = side // 2
    return (
        max(row - lo, 0),
        min(row + hi, meta.height - 1),
        max(col - lo, 0),
        min(col + hi, meta.width - 1),
    )


def _best_unit(
    fms: FeatureMapSet,
    fms_layer: int,
    channel: int,
    row: int,
    col: int,
    side: int,
    weights: ScoreWeights,
) -> tuple[float, tuple[float, float]]:
    """Best (response + deformation) unit in the square; ties to smallest cell."""
    meta = fms.meta(fms_layer)
    grid = fms.activation(fms_layer)[channel]
    r0, r1, c0, c1 = _square_bounds(meta, row, col, side)
    cand_x, cand_y = unit_center(meta, row, col)
    best = -math.inf
    best_pos = None
    for r in range(r0, r1 + 1):
        for c in range(c0, c1 + 1):
            x = grid[r, c]
            if x > 0:
                s_rsp = weights.response * x
            else:
                s_rsp = weights.response * weights.none_response
            ux, uy = unit_center(meta, r, c)
            dx = ux - cand_x
            dy = uy - cand_y
            val = s_rsp + -(weights.deform * (dx * dx + dy * dy))
            if val > best:
                best = val
                best_pos = (ux, uy)
    return best, best_pos


def score_candidate(
    candidate: Candidate,
    annotated: list[tuple[FeatureMapSet, Annotation]],
    unannotated: list[FeatureMapSet],
    weights: ScoreWeights,
    fms_layer: int | None = None,
) -> float:
    """Score one candidate; also fills its term fields in place.

    The annotated term averages, over the template's annotated images, the
    candidate's best-unit score plus the truncated quadratic fit of its vote to
    that image's annotated part center. The unannotated term averages the
    best-unit score alone over part-free images and charges a closeness penalty
    on the candidate's displacement. Pairwise context is not scored here:
    neighbor sets only exist after selection.
    """
    if not annotated:
        raise NoAnnotations("cannot score a candidate without annotations")
    li = candidate.layer if fms_layer is None else fms_layer
    anns = [a for _, a in annotated]
    side = default_deform_side(annotated[0][0].meta(li))
    dpx, dpy = compute_displacement(anns, candidate.center)
    r2 = weights.fit_radius_px * weights.fit_radius_px

    acc_ann = 0.0
    for fms, ann in annotated:
        s_u, pos = _best_unit(
            fms, li, candidate.channel, candidate.row, candidate.col, side, weights
        )
        gx, gy = ann.center
        dx = (pos[0] + dpx) - gx
        dy = (pos[1] + dpy) - gy
        d2 = dx * dx + dy * dy
        s_fit = -(weights.fit * min(d2, r2))
        acc_ann += s_u + s_fit
    annotated_term = acc_ann / len(annotated)

    if unannotated:
        close = weights.closeness * (dpx * dpx + dpy * dpy)
        acc = 0.0
        for fms in unannotated:
            s_u, _ = _best_unit(
                fms, li, candidate.channel, candidate.row, candidate.col, side, weights
            )
            acc += s_u - close
        unannotated_term = weights.unannotated * (acc / len(unannotated))
    else:
        unannotated_term = 0.0

    candidate.annotated_term = annotated_term
    candidate.unannotated_term = unannotated_term
    candidate.score = annotated_term + unannotated_term
    return candidate.score


# --- vectorized layer scoring ----------------------------------------------------


def _best_unit_grids(
    fms: FeatureMapSet, fms_layer: int, side: int, weights: ScoreWeights
):
    """Best-unit score and unit position for every candidate cell at once.

    Replicates :func:`_best_unit` cell-for-cell, including its tie-breaking:
    offsets scan in lexicographic order and only a strictly better value
    replaces the incumbent.
    """
    meta = fms.meta(fms_layer)
    x = fms.activation(fms_layer)
    s_rsp = np.where(x > 0, weights.response * x, weights.response * weights.none_response)
    xs = meta.offset_px + meta.stride_px * np.arange(meta.width, dtype=np.float64)
    ys = meta.offset_px + meta.stride_px * np.arange(meta.height, dtype=np.float64)
    lo = (side - 1) // 2
    hi = side // 2
    h, w = meta.height, meta.width

    best = np.full(x.shape, -np.inf)
    unit_x = np.zeros(x.shape)
    unit_y = np.zeros(x.shape)
    for dr in range(-lo, hi + 1):
        rr0 = max(0, -dr)
        rr1 = h - max(0, dr)
        if rr1 <= rr0:
            continue
        dy = ys[rr0 + dr : rr1 + dr] - ys[rr0:rr1]
        for dc in range(-lo, hi + 1):
            cc0 = max(0, -dc)
            cc1 = w - max(0, dc)
            if cc1 <= cc0:
                continue
            dx = xs[cc0 + dc : cc1 + dc] - xs[cc0:cc1]
            val = s_rsp[:, rr0 + dr : rr1 + dr, cc0 + dc : cc1 + dc] + -(
                weights.deform * ((dx * dx)[None, None, :] + (dy * dy)[None, :, None])
            )
            region = (slice(None), slice(rr0, rr1), slice(cc0, cc1))
            better = val > best[region]
            best[region] = np.where(better, val, best[region])
            ux = xs[cc0 + dc : cc1 + dc][None, None, :]
            uy = ys[rr0 + dr : rr1 + dr][None, :, None]
            unit_x[region] = np.where(better, ux, unit_x[region])
            unit_y[region] = np.where(better, uy, unit_y[region])
    return best, unit_x, unit_y


def score_layer_candidates(
    fms_layer: int,
    annotated: list[tuple[FeatureMapSet, Annotation]],
    unannotated: list[FeatureMapSet],
    weights: ScoreWeights,
):
    """Scores of every candidate cell in a layer: (score, ann, unann) grids."""
    if not annotated:
        raise NoAnnotations("cannot mine a template without annotations")
    meta = annotated[0][0].meta(fms_layer)
    side = default_deform_side(meta)
    anns = [a for _, a in annotated]
    mx, my = mean_annotated_center(anns)
    xs = meta.offset_px + meta.stride_px * np.arange(meta.width, dtype=np.float64)
    ys = meta.offset_px + meta.stride_px * np.arange(meta.height, dtype=np.float64)
    dpx = mx - xs  # displacement of each candidate column
    dpy = my - ys
    r2 = weights.fit_radius_px * weights.fit_radius_px

    acc_ann = np.zeros((meta.channels, meta.height, meta.width))
    for fms, ann in annotated:
        s_u, unit_x, unit_y = _best_unit_grids(fms, fms_layer, side, weights)
        gx, gy = ann.center
        dx = (unit_x + dpx[None, None, :]) - gx
        dy = (unit_y + dpy[None, :, None]) - gy
        d2 = dx * dx + dy * dy
        s_fit = -(weights.fit * np.minimum(d2, r2))
        acc_ann += s_u + s_fit
    ann_term = acc_ann / len(annotated)

    if unannotated:
        close = weights.closeness * (
            (dpx * dpx)[None, None, :] + (dpy * dpy)[None, :, None]
        )
        acc = np.zeros_like(acc_ann)
        for fms in unannotated:
            s_u, _, _ = _best_unit_grids(fms, fms_layer, side, weights)
            acc += s_u - close
        unann_term = weights.unannotated * (acc / len(unannotated))
    else:
        unann_term = np.zeros_like(acc_ann)
    return ann_term + unann_term, ann_term, unann_term


# --- pattern-count fitting ---------------------------------------------------------


def fit_layer_pattern_count(ranked_scores: list[float]) -> int:
    """Fit the ranked score curve and read off the layer's pattern budget.

    The curve model is ``baseline + amplitude * exp(-sqrt(decay * rank))``.
    Amplitude and baseline have a closed form per decay value (ordinary least
    squares in the exp basis plus a constant); the decay is grid-searched on a
    log scale then refined locally. Pinning the baseline to the minimum score
    instead biases the decay upward and cannot recover exactly generated
    curves, so both linear terms are fitted. The budget is ceil(0.5 / decay),
    clamped to the number of candidates. Degenerate (near-constant) curves
    give 1.
    """
    n = len(ranked_scores)
    if n == 0:
        return 1
    scores = np.asarray(ranked_scores, dtype=np.float64)
    if np.unique(scores).size < 3:
        return 1
    z = scores - float(scores.min())
    ranks = np.arange(1, n + 1, dtype=np.float64)

    def sse(xi: float) -> float:
        b = np.exp(-np.sqrt(xi * ranks))
        # closed-form (amplitude, baseline) for this decay
        sbb = float(b @ b)
        sb = float(b.sum())
        det = sbb * n - sb * sb
        if det <= 0:
            return math.inf
        szb = float(z @ b)
        sz = float(z.sum())
        alpha = (szb * n - sz * sb) / det
        gamma = (sz - alpha * sb) / n
        resid = z - (alpha * b + gamma)
        return float(resid @ resid)

    grid = np.logspace(-4, 1, 600)
    errs = [sse(x) for x in grid]
    i = int(np.argmin(errs))
    lo = grid[max(i - 1, 0)]
    hi = grid[min(i + 1, len(grid) - 1)]
    # golden-section refinement in log space
    a, b = math.log(lo), math.log(hi)
    phi = (math.sqrt(5) - 1) / 2
    c = b - phi * (b - a)
    d = a + phi * (b - a)
    fc, fd = sse(math.exp(c)), sse(math.exp(d))
    for _ in range(80):
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - phi * (b - a)
            fc = sse(math.exp(c))
        else:
            a, c, fc = c, d, fd
            d = a + phi * (b - a)
            fd = sse(math.exp(d))
    xi = math.exp((a + b) / 2)
    # guard against ceil flipping at integer boundaries from fit noise
    n_k = math.ceil(0.5 / xi - 1e-6)
    return min(max(n_k, 1), n)


# --- greedy selection ----------------------------------------------------------------


def greedy_select(
    scores: np.ndarray, n_k: int, epsilon_cells: int
) -> list[tuple[int, int, int]]:
    """Greedy top-k with per-channel suppression on a (C, H, W) score grid.

    Repeatedly takes the best remaining cell (ties to the smallest
    (channel, row, col)), then removes every cell of the same channel within a
    Chebyshev distance strictly below ``epsilon_cells``.
    """
    c, h, w = scores.shape
    live = scores.copy()
    selected: list[tuple[int, int, int]] = []
    eps = epsilon_cells
    while len(selected) < n_k:
        flat = int(np.argmax(live))
        if live.ravel()[flat] == -np.inf:
            break
        ch, rest = divmod(flat, h * w)
        row, col = divmod(rest, w)
        selected.append((ch, row, col))
        r0, r1 = max(row - eps + 1, 0), min(row + eps, h)
        c0, c1 = max(col - eps + 1, 0), min(col + eps, w)
        live[ch, r0:r1, c0:c1] = -np.inf
    return selected


# --- template mining -------------------------------------------------------------------


def _resolve_n_k(cfg: MinerConfig, model_layer: int, ranked: np.ndarray) -> int:
    if cfg.n_k_override is None:
        return fit_layer_pattern_count(list(ranked))
    if isinstance(cfg.n_k_override, int):
        return cfg.n_k_override
    return cfg.n_k_override[model_layer]


def mine_template(
    annotated: list[tuple[FeatureMapSet, Annotation]],
    unannotated: list[FeatureMapSet],
    cfg: MinerConfig,
    weights: ScoreWeights,
    template_id: str,
    name: str | None = None,
) -> PartTemplate:
    """Mine a full template: per-layer greedy pattern selection.

    ``annotated`` pairs each of the template's annotations with its (already
    normalized, flip-resolved) feature maps; ``unannotated`` holds part-free
    images. Deterministic: identical inputs yield identical templates.
    """
    if not annotated:
        raise NoAnnotations(f"template {template_id} has no annotations")
    anns = [a for _, a in annotated]
    scale = estimate_template_scale(anns)
    n_layers_total = len(annotated[0][0].layers)
    k = min(cfg.valid_layers, n_layers_total)
    base = n_layers_total - k

    patterns: list[LatentPattern] = []
    for model_layer in range(k):
        li = base + model_layer
        meta = annotated[0][0].meta(li)
        scores, _, _ = score_layer_candidates(li, annotated, unannotated, weights)
        ranked = np.sort(scores.ravel())[::-1]
        n_k = _resolve_n_k(cfg, model_layer, ranked)
        for ch, row, col in greedy_select(scores, n_k, cfg.epsilon_cells):
            center = unit_center(meta, row, col)
            patterns.append(
                LatentPattern(
                    id=f"{template_id}/L{model_layer}.C{ch}.{row}.{col}",
                    layer=model_layer,
                    channel=ch,
                    center=center,
                    displacement=compute_displacement(anns, center),
                    deform_side=default_deform_side(meta),
                )
            )
    return PartTemplate(
        id=template_id,
        name=name if name is not None else template_id,
        scale=scale,
        patterns=patterns,
        annotation_ids=[a.image_id for a in anns],
    )


# --- corpus and incremental growth -------------------------------------------------------


@dataclass(frozen=True)
class MiningCorpus:
    """Immutable snapshot of what mining may look at.

    ``fmaps`` maps image id to normalized feature maps; ``annotations`` holds
    at most one part annotation per image; ``absent_ids`` are images confirmed
    not to show the part at all (excluded from the unannotated pool).
    """

    fmaps: dict[str, FeatureMapSet]
    annotations: dict[str, Annotation] = field(default_factory=dict)
    absent_ids: frozenset[str] = frozenset()

    def with_annotation(self, annotation: Annotation) -> "MiningCorpus":
        if annotation.image_id not in self.fmaps:
            raise UnknownImage(annotation.image_id)
        new = dict(self.annotations)
        new[annotation.image_id] = annotation
        return replace(self, annotations=new)

    def with_absent(self, image_id: str) -> "MiningCorpus":
        if image_id not in self.fmaps:
            raise UnknownImage(image_id)
        return replace(self, absent_ids=self.absent_ids | {image_id})

    def annotated_for(self, template_id: str) -> list[tuple[FeatureMapSet, Annotation]]:
        """Annotation/fmap pairs for one template, flip-resolved, id-sorted."""
        out = []
        for image_id in sorted(self.annotations):
            ann = self.annotations[image_id]
            if ann.template_id != template_id:
                continue
            fms = self.fmaps[image_id]
            if ann.flipped:
                fms = flip_horizontal(fms)
                cx, cy, w, h = ann.bbox
                ann = replace(ann, bbox=(fms.image_size[0] - cx, cy, w, h))
            out.append((fms, ann))
        return out

    def unannotated(self, cap: int) -> list[FeatureMapSet]:
        ids = [
            i
            for i in sorted(self.fmaps)
            if i not in self.annotations and i not in self.absent_ids
        ]
        return [self.fmaps[i] for i in ids[:cap]]


def grow_or_refine(
    model: AogModel,
    annotation: Annotation,
    corpus: MiningCorpus,
    cfg: MinerConfig | None = None,
) -> AogModel:
    """Ingest one annotation: grow a new template branch or re-mine its branch.

    Every other template is carried over untouched, so repeated growth never
    drifts previously learned branches. ``corpus`` need not contain the new
    annotation yet; it is folded in for the re-mine either way.
    """
    cfg = cfg or MinerConfig()
    weights = cfg.weights if cfg.weights is not None else model.weights
    corpus = corpus.with_annotation(annotation)
    tid = annotation.template_id
    annotated = corpus.annotated_for(tid)
    unann = corpus.unannotated(cfg.unannotated_cap)
    existing = model.template(tid) if model.has_template(tid) else None
    mined = mine_template(
        annotated,
        unann,
        cfg,
        weights,
        template_id=tid,
        name=existing.name if existing is not None else None,
    )
    if existing is None:
        templates = list(model.templates) + [mined]
    else:
        templates = [mined if t.id == tid else t for t in model.templates]

    if model.layer_metas:
        metas = model.layer_metas
    else:
        sample = next(iter(corpus.fmaps.values()))
        k = min(cfg.valid_layers, len(sample.layers))
        metas = [sample.meta(len(sample.layers) - k + i) for i in range(k)]
    return AogModel(
        part_name=model.part_name,
        layer_metas=metas,
        templates=templates,
        weights=model.weights,
        neighbor_k=model.neighbor_k,
    )
