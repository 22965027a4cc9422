"""Active question answering: decide which image a human should label next.

The engine keeps, per image, a prior belief that the part is present and the
model's own estimate of it (a logistic of the parse score). Annotating an
image is predicted to lift the scores of similar-looking images toward the
annotated pool's level; the next question goes to the image whose predicted
lift shrinks the gap between the two distributions the most. Each of the five
answer kinds then updates the pools, the priors, and (for kinds 2 to 4) the
model itself by growing or refining one template branch.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    MissingBbox,
    OracleFailure,
    PoolExhausted,
    QaError,
    UnknownImage,
    UnknownTemplate,
)
from .evaluate import iou
from .fmap import FeatureMapSet
from .miner import MinerConfig, MiningCorpus, grow_or_refine
from .model import Annotation, AogModel, ScoreWeights
from .parser import parse_image


@dataclass(frozen=True)
class QaConfig:
    """Selection constants: similarity decay ``alpha`` and score scale ``beta``.

    ``beta`` rescales every candidate's gain uniformly, so it cannot change
    which image is selected; it only shapes the probability estimates.
    """

    alpha: float = 4.0
    beta: float = 1.0
    budget: int = 0

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be > 0")
        if self.budget < 0:
            raise ValueError("budget must be >= 0")


@dataclass(frozen=True)
class Question:
    image_id: str
    predicted_template_id: str | None
    predicted_box: tuple[float, float, float, float] | None

    def to_dict(self) -> dict:
        return {
            "image_id": self.image_id,
            "predicted_template_id": self.predicted_template_id,
            "predicted_box": list(self.predicted_box) if self.predicted_box else None,
        }


@dataclass(frozen=True)
class Answer:
    """One of the five predefined answer kinds.

    1: detection correct. 2: template right, box wrong (bbox required).
    3: template and box wrong (bbox + template_id required, flipped flag).
    4: a new template (bbox required, optional name). 5: part absent.
    """

    kind: int
    bbox: tuple[float, float, float, float] | None = None
    template_id: str | None = None
    flipped: bool = False
    new_template: str | None = None

    def to_dict(self) -> dict:
        out: dict = {"kind": self.kind}
        if self.kind in (2, 3, 4):
            out["bbox"] = list(self.bbox)
        if self.kind == 3:
            out["template_id"] = self.template_id
            out["flipped"] = self.flipped
        if self.kind == 4 and self.new_template is not None:
            out["new_template"] = self.new_template
        return out


def validate_answer(answer: Answer):
    if answer.kind not in (1, 2, 3, 4, 5):
        raise QaError(f"unknown answer kind {answer.kind}")
    if answer.kind in (2, 3, 4) and answer.bbox is None:
        raise MissingBbox(f"answer kind {answer.kind} requires a bounding box")
    if answer.kind == 3 and answer.template_id is None:
        raise UnknownTemplate("answer kind 3 requires a template id")


@dataclass
class QaSession:
    corpus: MiningCorpus
    model: AogModel
    qa_cfg: QaConfig
    miner_cfg: MinerConfig
    annotated_ids: set[str] = field(default_factory=set)
    unannotated_ids: set[str] = field(default_factory=set)
    priors: dict[str, float] = field(default_factory=dict)
    s_top: dict[str, float | None] = field(default_factory=dict)
    pred_template: dict[str, str | None] = field(default_factory=dict)
    pred_box: dict[str, tuple | None] = field(default_factory=dict)
    features: dict[str, np.ndarray] = field(default_factory=dict)
    reliability: np.ndarray | None = None
    answered_present: int = 0
    answered_total: int = 0
    answer_log: list[dict] = field(default_factory=list)
    questions_asked: int = 0

    @property
    def live_ids(self) -> list[str]:
        return sorted(self.annotated_ids | self.unannotated_ids)

    def q_value(self, image_id: str) -> float:
        return estimate_q(self.s_top[image_id], self.qa_cfg)


def feature_reliability(fmaps: dict[str, FeatureMapSet]) -> np.ndarray:
    """Diagonal feature weights from corpus-mean activation per dimension.

    Dimensions that stay strongly activated across the corpus are trusted
    more; weights are exp of the mean activation, rescaled to a maximum of 1.
    """
    ids = sorted(fmaps)
    top = len(fmaps[ids[0]].layers) - 1
    acc = None
    for i in ids:
        vec = fmaps[i].activation(top).ravel()
        acc = vec.copy() if acc is None else acc + vec
    mean = acc / len(ids)
    return np.exp(mean - mean.max())


def new_session(
    fmaps: dict[str, FeatureMapSet],
    part_name: str = "part",
    weights: ScoreWeights | None = None,
    qa_cfg: QaConfig | None = None,
    miner_cfg: MinerConfig | None = None,
) -> QaSession:
    """Fresh session over a normalized corpus: empty model, everything unasked."""
    qa_cfg = qa_cfg or QaConfig()
    miner_cfg = miner_cfg or MinerConfig()
    weights = weights or ScoreWeights()
    model = AogModel(part_name=part_name, layer_metas=[], weights=weights)
    top = len(next(iter(fmaps.values())).layers) - 1
    session = QaSession(
        corpus=MiningCorpus(fmaps=dict(fmaps)),
        model=model,
        qa_cfg=qa_cfg,
        miner_cfg=miner_cfg,
        unannotated_ids=set(fmaps),
        priors={i: 1.0 for i in fmaps},
        s_top={i: None for i in fmaps},
        pred_template={i: None for i in fmaps},
        pred_box={i: None for i in fmaps},
        features={i: fmaps[i].activation(top).ravel() for i in fmaps},
        reliability=feature_reliability(fmaps),
    )
    return session


# --- probability estimates ------------------------------------------------------


def estimate_q(s_top: float | None, cfg: QaConfig) -> float:
    """Model's belief that the part is present: logistic of the parse score.

    ``None`` (no model yet) maps to 0: nothing is explained before learning.
    """
    if s_top is None:
        return 0.0
    z = cfg.beta * s_top
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def log_q(s_top: float, beta: float, present: bool) -> float:
    """log Q(y|I) for the logistic estimate, stable for extreme scores."""
    z = beta * s_top
    # log sigmoid(z) = -softplus(-z); log(1 - sigmoid(z)) = -softplus(z)
    t = -z if present else z
    if t > 30:
        return -t
    return -math.log1p(math.exp(t))


def bernoulli_kl(p: float, q: float) -> float:
    """KL(Bernoulli(p) || Bernoulli(q)); infinite when q has a hard zero."""
    acc = 0.0
    for pp, qq in ((p, q), (1.0 - p, 1.0 - q)):
        if pp == 0.0:
            continue
        if qq == 0.0:
            return math.inf
        acc += pp * math.log(pp / qq)
    return acc


def session_kl(session: QaSession) -> float:
    """Average KL between priors and the model's estimates over live images."""
    ids = session.live_ids
    if not ids:
        return 0.0
    total = 0.0
    for i in ids:
        total += bernoulli_kl(session.priors[i], session.q_value(i))
    return total / len(ids)


# --- appearance distance ----------------------------------------------------------


def appearance_distance(
    f_i: np.ndarray,
    f_j: np.ndarray,
    reliability: np.ndarray,
    same_template: bool,
) -> float:
    """Reliability-weighted cosine distance; infinite across templates."""
    from .errors import LengthMismatch

    if f_i.shape != f_j.shape or f_i.shape != reliability.shape:
        raise LengthMismatch("feature vectors and weights must share one length")
    if not same_template:
        return math.inf
    a = reliability * f_i
    b = reliability * f_j
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 1.0
    cos = float(a @ b) / (na * nb)
    return max(0.0, 1.0 - cos)


# --- question selection --------------------------------------------------------------


def score_transfer(session: QaSession, image_id: str) -> float:
    """Predicted score lift of annotating this image.

    The gap between the annotated pool's mean parse score and the image's own;
    with nothing annotated yet, the lift is simply up to score zero, which
    ranks the least-explained image first.
    """
    s = session.s_top[image_id]
    ant = [session.s_top[i] for i in sorted(session.annotated_ids)]
    if ant:
        acc = 0.0
        for v in ant:
            acc += v
        return acc / len(ant) - s
    return -s


def predict_selection_gain(session: QaSession, image_id: str) -> float:
    """Expected benefit of asking about one image.

    Sums, over every live image, the prior presence belief times the predicted
    score transfer attenuated by appearance distance. This is the selection
    objective with the normalizer and score scale factored out; both rescale
    all candidates identically.
    """
    if image_id not in session.unannotated_ids:
        raise UnknownImage(image_id)
    if session.model.is_empty:
        raise QaError("selection gain needs a parsed corpus; model is empty")
    delta = score_transfer(session, image_id)
    f_c = session.features[image_id]
    t_c = session.pred_template[image_id]
    alpha = session.qa_cfg.alpha
    total = 0.0
    for other in session.live_ids:
        dist = appearance_distance(
            session.features[other],
            f_c,
            session.reliability,
            session.pred_template[other] == t_c,
        )
        total += session.priors[other] * delta * math.exp(-alpha * dist)
    return total


def select_question(session: QaSession) -> Question:
    """Pick the next image to ask about; ties go to the smallest image id."""
    if not session.unannotated_ids:
        raise PoolExhausted("no unannotated images left")
    if session.model.is_empty:
        image_id = min(session.unannotated_ids)
        return Question(image_id, None, None)
    best_id = None
    best_gain = -math.inf
    for image_id in sorted(session.unannotated_ids):
        gain = predict_selection_gain(session, image_id)
        if gain > best_gain:
            best_gain = gain
            best_id = image_id
    return Question(
        best_id, session.pred_template[best_id], session.pred_box[best_id]
    )


# --- answers ---------------------------------------------------------------------------


def refresh_predictions(session: QaSession):
    """Re-parse every live image against the current model."""
    for image_id in session.live_ids:
        if session.model.is_empty:
            session.s_top[image_id] = None
            session.pred_template[image_id] = None
            session.pred_box[image_id] = None
        else:
            parse = parse_image(session.model, session.corpus.fmaps[image_id])
            session.s_top[image_id] = parse.score
            session.pred_template[image_id] = parse.chosen_template_id
            session.pred_box[image_id] = parse.box


def _update_unasked_priors(session: QaSession):
    if session.answered_total == 0:
        return
    mean = session.answered_present / session.answered_total
    for image_id in session.unannotated_ids:
        session.priors[image_id] = mean


def _fresh_template_id(session: QaSession, requested: str | None) -> str:
    if requested is not None:
        if session.model.has_template(requested):
            raise UnknownTemplate(f"template {requested!r} already exists")
        return requested
    n = 0
    while session.model.has_template(f"t{n}"):
        n += 1
    return f"t{n}"


def apply_answer(session: QaSession, question: Question, answer: Answer) -> QaSession:
    """Fold one answer into the session; returns the same (mutated) session."""
    validate_answer(answer)
    image_id = question.image_id
    if image_id not in session.unannotated_ids:
        raise UnknownImage(image_id)

    annotation = None
    if answer.kind == 2:
        if question.predicted_template_id is None:
            raise UnknownTemplate("kind 2 needs a predicted template to confirm")
        annotation = Annotation(image_id, answer.bbox, question.predicted_template_id)
    elif answer.kind == 3:
        annotation = Annotation(
            image_id, answer.bbox, answer.template_id, flipped=answer.flipped
        )
    elif answer.kind == 4:
        annotation = Annotation(
            image_id, answer.bbox, _fresh_template_id(session, answer.new_template)
        )

    if answer.kind == 5:
        session.unannotated_ids.discard(image_id)
        session.corpus = session.corpus.with_absent(image_id)
        session.priors[image_id] = 0.0
    else:
        session.unannotated_ids.discard(image_id)
        session.annotated_ids.add(image_id)
        session.priors[image_id] = 1.0
        session.answered_present += 1
    session.answered_total += 1

    if annotation is not None:
        session.model = grow_or_refine(
            session.model, annotation, session.corpus, session.miner_cfg
        )
        session.corpus = session.corpus.with_annotation(annotation)
        refresh_predictions(session)

    _update_unasked_priors(session)
    session.answer_log.append(
        {"question": question.to_dict(), "answer": answer.to_dict()}
    )
    return session


def run_session(
    fmaps: dict[str, FeatureMapSet],
    oracle,
    qa_cfg: QaConfig,
    miner_cfg: MinerConfig | None = None,
    part_name: str = "part",
    weights: ScoreWeights | None = None,
    on_step=None,
) -> tuple[AogModel, list[dict]]:
    """Drive a full session against an answer source.

    ``oracle`` is any callable mapping a Question to an Answer. The loop stops
    when the budget is spent or the unannotated pool empties. ``on_step`` (if
    given) is called with the session after every applied answer.
    """
    session = new_session(fmaps, part_name, weights, qa_cfg, miner_cfg)
    while session.questions_asked < qa_cfg.budget and session.unannotated_ids:
        question = select_question(session)
        try:
            answer = oracle(question)
        except QaError:
            raise
        except Exception as exc:
            raise OracleFailure(str(exc)) from exc
        apply_answer(session, question, answer)
        session.questions_asked += 1
        if on_step is not None:
            on_step(session)
    return session.model, session.answer_log


# --- scripted oracle ----------------------------------------------------------------------


@dataclass
class OracleRecord:
    image_id: str
    bbox: tuple[float, float, float, float] | None
    template: str | None
    present: bool
    flipped: bool = False
    image_size: tuple[int, int] | None = None

    @classmethod
    def from_dict(cls, doc: dict) -> "OracleRecord":
        return cls(
            image_id=doc["image_id"],
            bbox=tuple(doc["bbox"]) if doc.get("bbox") else None,
            template=doc.get("template"),
            present=bool(doc["present"]),
            flipped=bool(doc.get("flipped", False)),
            image_size=tuple(doc["image_size"]) if doc.get("image_size") else None,
        )

    def to_dict(self) -> dict:
        return {
            "image_id": self.image_id,
            "bbox": list(self.bbox) if self.bbox else None,
            "template": self.template,
            "present": self.present,
            "flipped": self.flipped,
            "image_size": list(self.image_size) if self.image_size else None,
        }


class ScriptedOracle:
    """Deterministic stand-in for a human annotator.

    Answers kind 5 for absent parts, kind 4 the first time a ground-truth
    template shows up, kind 3 when the prediction names the wrong (known)
    template, kind 1 when the template matches with IoU at least 0.5, and
    kind 2 otherwise. Tracks which templates it has already introduced.
    """

    def __init__(self, records: list[OracleRecord]):
        self.records = {r.image_id: r for r in records}
        self.seen_templates: set[str] = set()

    def __call__(self, question: Question) -> Answer:
        record = self.records.get(question.image_id)
        if record is None:
            raise OracleFailure(f"no oracle record for image {question.image_id}")
        if not record.present:
            return Answer(kind=5)
        if record.template not in self.seen_templates:
            self.seen_templates.add(record.template)
            return Answer(kind=4, bbox=record.bbox, new_template=record.template)
        if question.predicted_template_id != record.template:
            return Answer(
                kind=3,
                bbox=record.bbox,
                template_id=record.template,
                flipped=record.flipped,
            )
        if question.predicted_box is not None and iou(question.predicted_box, record.bbox) >= 0.5:
            return Answer(kind=1)
        return Answer(kind=2, bbox=record.bbox)


def load_oracle_records(text: str) -> list[OracleRecord]:
    return [
        OracleRecord.from_dict(json.loads(line))
        for line in text.splitlines()
        if line.strip()
    ]


def dump_oracle_records(records: list[OracleRecord]) -> str:
    return "".join(json.dumps(r.to_dict()) + "\n" for r in records)


def dump_answer_log(log: list[dict]) -> str:
    return "".join(json.dumps(entry) + "\n" for entry in log)
