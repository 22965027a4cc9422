"""The four-layer part model: templates, latent patterns, learned parameters.

An :class:`AogModel` describes one semantic part. The part node chooses among
:class:`PartTemplate` children (appearance variants); each template composes
:class:`LatentPattern` children (constituent or contextual regions tied to one
channel of one conv-layer); each pattern picks one neural unit inside its
square deformation range at parse time.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict

from .errors import CorruptPayload, NoAnnotations, SchemaMismatch
from .fmap import LayerMeta

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class ScoreWeights:
    """Constant weights of the parse score. Defaults are fixed; tests pin them.

    ``none_response`` is the flat response assigned to non-activated units and
    ``fit_radius_px`` truncates the template-fit penalty: a pattern voting
    farther than this from the template center costs ``fit * radius**2`` flat.
    """

    response: float = 1.5
    deform: float = 1.0 / 3.0
    pair: float = 10.0
    fit: float = 5.0
    unannotated: float = 5.0
    closeness: float = 0.4
    none_response: float = -3.0
    fit_radius_px: float = 37.0

    def __post_init__(self):
        for name in ("response", "deform", "pair", "fit", "unannotated", "closeness"):
            if getattr(self, name) < 0:
                raise ValueError(f"weight {name} must be nonnegative")


@dataclass(frozen=True)
class LatentPattern:
    """One mined pattern: a square deformation range in one channel of one layer.

    ``center`` is the ideal unit position on the image plane; ``displacement``
    points from ``center`` to the mean annotated part center and turns a chosen
    unit into a vote for the template position. ``deform_side`` is the nominal
    side of the deformation square in cells (ceil(map_height / 3)); the square
    is clipped at map borders rather than shifted.
    """

    id: str
    layer: int
    channel: int
    center: tuple[float, float]
    displacement: tuple[float, float]
    deform_side: int

    def vote_from(self, unit_pos: tuple[float, float]) -> tuple[float, float]:
        return (unit_pos[0] + self.displacement[0], unit_pos[1] + self.displacement[1])


@dataclass
class PartTemplate:
    id: str
    name: str
    scale: tuple[float, float] | None
    patterns: list[LatentPattern] = field(default_factory=list)
    annotation_ids: list[str] = field(default_factory=list)

    def patterns_in_layer(self, layer: int) -> list[LatentPattern]:
        return [p for p in self.patterns if p.layer == layer]


@dataclass(frozen=True)
class Annotation:
    """One human-provided part box: center-format bbox plus its template."""

    image_id: str
    bbox: tuple[float, float, float, float]  # cx, cy, w, h
    template_id: str
    flipped: bool = False

    def __post_init__(self):
        if self.bbox[2] <= 0 or self.bbox[3] <= 0:
            raise ValueError("annotation box must have positive size")

    @property
    def center(self) -> tuple[float, float]:
        return (self.bbox[0], self.bbox[1])


@dataclass
class AogModel:
    part_name: str
    layer_metas: list[LayerMeta]
    templates: list[PartTemplate] = field(default_factory=list)
    weights: ScoreWeights = field(default_factory=ScoreWeights)
    neighbor_k: int = 15

    def __post_init__(self):
        ids = [t.id for t in self.templates]
        if len(ids) != len(set(ids)):
            raise ValueError("template ids must be unique")
        self._neighbors: dict[str, dict[str, tuple[str, ...]]] = {}

    @property
    def is_empty(self) -> bool:
        return not self.templates

    def template(self, template_id: str) -> PartTemplate:
        for t in self.templates:
            if t.id == template_id:
                return t
        raise KeyError(template_id)

    def has_template(self, template_id: str) -> bool:
        return any(t.id == template_id for t in self.templates)

    def neighbor_map(self, template_id: str) -> dict[str, tuple[str, ...]]:
        """Pattern id -> ids of its nearest patterns one conv-layer up.

        At most ``neighbor_k`` neighbors, ranked by distance between ideal
        centers (ties by pattern order); fewer exist near the top layer.
        Computed once per template and cached; models are treated as immutable
        after construction.
        """
        cached = self._neighbors.get(template_id)
        if cached is not None:
            return cached
        template = self.template(template_id)
        result: dict[str, tuple[str, ...]] = {}
        for pattern in template.patterns:
            upper = [
                (i, p)
                for i, p in enumerate(template.patterns)
                if p.layer == pattern.layer + 1
            ]
            ranked = sorted(
                upper,
                key=lambda ip: (
                    math.dist(pattern.center, ip[1].center),
                    ip[0],
                ),
            )
            result[pattern.id] = tuple(p.id for _, p in ranked[: self.neighbor_k])
        self._neighbors[template_id] = result
        return result


# --- parameter estimation ------------------------------------------------------


def mean_annotated_center(annotations: list[Annotation]) -> tuple[float, float]:
    if not annotations:
        raise NoAnnotations("no annotations for this template")
    sx = 0.0
    sy = 0.0
    for a in annotations:
        sx += a.center[0]
        sy += a.center[1]
    n = len(annotations)
    return (sx / n, sy / n)


def compute_displacement(
    annotations: list[Annotation], pattern_center: tuple[float, float]
) -> tuple[float, float]:
    """Mean annotated part center minus the pattern's ideal center."""
    mx, my = mean_annotated_center(annotations)
    return (mx - pattern_center[0], my - pattern_center[1])


def estimate_template_scale(annotations: list[Annotation]) -> tuple[float, float]:
    """Component-wise mean of the annotated box sizes."""
    if not annotations:
        raise NoAnnotations("no annotations for this template")
    sw = 0.0
    sh = 0.0
    for a in annotations:
        sw += a.bbox[2]
        sh += a.bbox[3]
    n = len(annotations)
    return (sw / n, sh / n)


# --- serialization ---------------------------------------------------------------

# JSON keeps model files diffable; floats survive a round trip bit-exactly
# because json emits repr-shortest decimal strings.


def model_to_dict(model: AogModel) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "semantic_part": model.part_name,
        "neighbor_k": model.neighbor_k,
        "weights": asdict(model.weights),
        "layer_metas": [asdict(m) for m in model.layer_metas],
        "templates": [
            {
                "id": t.id,
                "name": t.name,
                "scale": list(t.scale) if t.scale is not None else None,
                "annotation_ids": list(t.annotation_ids),
                "patterns": [
                    {
                        "id": p.id,
                        "layer": p.layer,
                        "channel": p.channel,
                        "center": list(p.center),
                        "displacement": list(p.displacement),
                        "deform_side": p.deform_side,
                    }
                    for p in t.patterns
                ],
            }
            for t in model.templates
        ],
    }


def model_from_dict(doc: dict) -> AogModel:
    try:
        version = doc["schema_version"]
        if version != SCHEMA_VERSION:
            raise SchemaMismatch(f"unsupported model schema version {version!r}")
        metas = [LayerMeta(**m) for m in doc["layer_metas"]]
        templates = []
        for t in doc["templates"]:
            patterns = [
                LatentPattern(
                    id=p["id"],
                    layer=p["layer"],
                    channel=p["channel"],
                    center=tuple(p["center"]),
                    displacement=tuple(p["displacement"]),
                    deform_side=p["deform_side"],
                )
                for p in t["patterns"]
            ]
            scale = tuple(t["scale"]) if t["scale"] is not None else None
            templates.append(
                PartTemplate(
                    id=t["id"],
                    name=t["name"],
                    scale=scale,
                    patterns=patterns,
                    annotation_ids=list(t["annotation_ids"]),
                )
            )
        return AogModel(
            part_name=doc["semantic_part"],
            layer_metas=metas,
            templates=templates,
            weights=ScoreWeights(**doc["weights"]),
            neighbor_k=doc["neighbor_k"],
        )
    except SchemaMismatch:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptPayload(f"malformed model document: {exc}") from exc


def save_model(model: AogModel) -> bytes:
    return json.dumps(model_to_dict(model), indent=1).encode("utf-8")


def load_model(data: bytes) -> AogModel:
    try:
        doc = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptPayload(str(exc)) from exc
    if not isinstance(doc, dict):
        raise CorruptPayload("model document must be a JSON object")
    return model_from_dict(doc)


def models_equal(a: AogModel, b: AogModel) -> bool:
    """Structural equality including exact float equality."""
    return model_to_dict(a) == model_to_dict(b)
