"""aogparts: interpretable And-Or-graph part models over CNN feature maps.

Mines a four-level part hierarchy (part, templates, latent patterns, neural
units) from exported conv-layer activations with only a handful of part-box
annotations, localizes parts by hierarchical parsing, and actively selects
which image a human should annotate next.
"""

from .errors import AogError
from .estimator import AogPartLocalizer
from .fmap import (
    CorpusStats,
    FeatureMapSet,
    LayerMeta,
    normalize_activations,
    read_fmap,
    unit_to_image_region,
    write_fmap,
)
from .miner import Candidate, MinerConfig, MiningCorpus, grow_or_refine, mine_template
from .model import (
    Annotation,
    AogModel,
    LatentPattern,
    PartTemplate,
    ScoreWeights,
    load_model,
    save_model,
)
from .parser import ParseResult, UnitAssignment, parse_image
from .qa import (
    Answer,
    QaConfig,
    QaSession,
    Question,
    ScriptedOracle,
    apply_answer,
    new_session,
    run_session,
    select_question,
)

__version__ = "0.1.0"

__all__ = [
    "AogError",
    "AogPartLocalizer",
    "Annotation",
    "AogModel",
    "Answer",
    "Candidate",
    "CorpusStats",
    "FeatureMapSet",
    "LatentPattern",
    "LayerMeta",
    "MinerConfig",
    "MiningCorpus",
    "ParseResult",
    "PartTemplate",
    "QaConfig",
    "QaSession",
    "Question",
    "ScoreWeights",
    "ScriptedOracle",
    "UnitAssignment",
    "apply_answer",
    "grow_or_refine",
    "load_model",
    "mine_template",
    "new_session",
    "normalize_activations",
    "parse_image",
    "read_fmap",
    "run_session",
    "save_model",
    "select_question",
    "unit_to_image_region",
    "write_fmap",
]
