"""Scikit-learn style facade over mining and parsing.

``fit`` consumes feature-map sets plus a handful of part annotations and mines
one template branch per annotated template id; ``predict`` parses new images
and returns one part box each. Corpus normalization statistics are learned at
fit time and re-applied at predict time, so the estimator composes with the
usual fit/predict tooling.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .errors import NoAnnotations
from .fmap import FeatureMapSet, apply_corpus_stats, compute_corpus_stats
from .miner import MinerConfig, MiningCorpus, mine_template
from .model import AogModel, ScoreWeights
from .parser import ParseResult, parse_image


def check_fmaps(X) -> list[FeatureMapSet]:
    if isinstance(X, FeatureMapSet):
        X = [X]
    X = list(X)
    if not X:
        raise ValueError("need at least one feature-map set")
    for item in X:
        if not isinstance(item, FeatureMapSet):
            raise TypeError(f"expected FeatureMapSet, got {type(item).__name__}")
    first = [m for m, _ in X[0].layers]
    for item in X[1:]:
        if [m for m, _ in item.layers] != first:
            raise ValueError("all feature-map sets must share the same layer metas")
    return X


class AogPartLocalizer(BaseEstimator):
    """Weakly-supervised part localizer with a fit/predict surface.

    Parameters mirror the mining configuration: ``valid_layers`` caps how many
    of the highest conv-layers are used, ``epsilon_cells`` is the suppression
    radius, ``n_k`` overrides the per-layer pattern budget (None fits it from
    the score curve), and ``weights`` replaces the default score constants.
    """

    def __init__(
        self,
        part_name: str = "part",
        valid_layers: int = 9,
        epsilon_cells: int = 2,
        n_k: int | None = None,
        neighbor_k: int = 15,
        unannotated_cap: int = 64,
        statistic: str = "mean_positive",
        weights: ScoreWeights | None = None,
    ):
        self.part_name = part_name
        self.valid_layers = valid_layers
        self.epsilon_cells = epsilon_cells
        self.n_k = n_k
        self.neighbor_k = neighbor_k
        self.unannotated_cap = unannotated_cap
        self.statistic = statistic
        self.weights = weights

    def _miner_config(self) -> MinerConfig:
        return MinerConfig(
            valid_layers=self.valid_layers,
            epsilon_cells=self.epsilon_cells,
            n_k_override=self.n_k,
            unannotated_cap=self.unannotated_cap,
        )

    def fit(self, X, y, unannotated=None):
        """Mine the part model.

        ``X``: feature-map sets of the annotated images (ids must match the
        annotations in ``y``). ``unannotated``: optional part-free images that
        sharpen the pattern scores.
        """
        X = check_fmaps(X)
        annotations = list(y)
        if not annotations:
            raise NoAnnotations("fit requires at least one annotation")
        extra = check_fmaps(unannotated) if unannotated else []
        corpus_list = X + extra
        stats = compute_corpus_stats(corpus_list, self.statistic)
        normalized = {
            f.image_id: apply_corpus_stats(f, stats) for f in corpus_list
        }
        for a in annotations:
            if a.image_id not in normalized:
                raise ValueError(f"annotation references unknown image {a.image_id!r}")

        weights = self.weights if self.weights is not None else ScoreWeights()
        cfg = self._miner_config()
        corpus = MiningCorpus(fmaps=normalized)
        for a in annotations:
            corpus = corpus.with_annotation(a)
        sample = next(iter(normalized.values()))
        k = min(cfg.valid_layers, len(sample.layers))
        base = len(sample.layers) - k
        metas = [sample.meta(base + i) for i in range(k)]

        templates = []
        for tid in sorted({a.template_id for a in annotations}):
            templates.append(
                mine_template(
                    corpus.annotated_for(tid),
                    corpus.unannotated(cfg.unannotated_cap),
                    cfg,
                    weights,
                    template_id=tid,
                )
            )
        self.model_ = AogModel(
            part_name=self.part_name,
            layer_metas=metas,
            templates=templates,
            weights=weights,
            neighbor_k=self.neighbor_k,
        )
        self.stats_ = stats
        return self

    def parse(self, X) -> list[ParseResult]:
        check_is_fitted(self, "model_")
        out = []
        for fms in check_fmaps(X):
            if not fms.is_normalized:
                fms = apply_corpus_stats(fms, self.stats_)
            out.append(parse_image(self.model_, fms))
        return out

    def predict(self, X) -> np.ndarray:
        """Part boxes, one (cx, cy, w, h) row per image."""
        return np.asarray([p.box for p in self.parse(X)], dtype=np.float64)

    def score(self, X, y) -> float:
        """Fraction of correctly localized parts (IoU >= 0.5) against boxes y."""
        from .evaluate import pcp_correct

        boxes = self.predict(X)
        gts = list(y)
        hits = sum(
            1 for box, gt in zip(boxes, gts) if pcp_correct(tuple(box), tuple(gt))
        )
        return hits / len(gts) if gts else 0.0
