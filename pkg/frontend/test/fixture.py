"""Build the end-to-end fixture: a six-image corpus whose scripted answers
cover all five kinds, plus the direct-session expectations the UI replay must
reproduce. Usage: python3 fixture.py OUTDIR"""

import json
import sys
from pathlib import Path

import numpy as np

from aogparts.fmap import normalize_activations, write_fmap
from aogparts.miner import MinerConfig
from aogparts.model import save_model
from aogparts.qa import OracleRecord, QaConfig, ScriptedOracle, dump_oracle_records, run_session
from aogparts.synth import DEFAULT_LAYERS, MotifEntry, plant_image, render_preview

BUDGET = 6

MOTIF_A = (
    MotifEntry(0, 0, (8.0, 8.0)),
    MotifEntry(0, 1, (-8.0, 8.0)),
    MotifEntry(1, 0, (0.0, 0.0), anchored=True),
    MotifEntry(1, 1, (0.0, 0.0), anchored=True),
)
MOTIF_B = (
    MotifEntry(0, 2, (8.0, -8.0)),
    MotifEntry(0, 3, (8.0, 8.0)),
    MotifEntry(1, 2, (0.0, 0.0), anchored=True),
    MotifEntry(1, 3, (0.0, 0.0), anchored=True),
)
A = (112.0, 112.0)
B = (144.0, 144.0)


def build(out: Path):
    rng = np.random.default_rng(0)

    def img(iid, motif, center):
        return plant_image(
            iid, DEFAULT_LAYERS, (224, 224), motif, center, 50.0, 0.15, 0.0,
            rng, (0,), anchor=center,
        )

    fmaps = [
        img("i0", MOTIF_A, A),
        img("i1", MOTIF_A, A),
        img("i2", MOTIF_B, B),
        img("i3", MOTIF_A, A),  # oracle box deliberately off the planted center
        img("i4", None, None),
        img("i5", MOTIF_A, A),  # labeled as the other template
    ]
    records = [
        OracleRecord("i0", (112.0, 112.0, 80.0, 80.0), "TA", True, image_size=(224, 224)),
        OracleRecord("i1", (112.0, 112.0, 80.0, 80.0), "TA", True, image_size=(224, 224)),
        OracleRecord("i2", (144.0, 144.0, 80.0, 80.0), "TB", True, image_size=(224, 224)),
        OracleRecord("i3", (162.0, 112.0, 80.0, 80.0), "TA", True, image_size=(224, 224)),
        OracleRecord("i4", None, None, False, image_size=(224, 224)),
        OracleRecord("i5", (112.0, 112.0, 80.0, 80.0), "TB", True, flipped=True, image_size=(224, 224)),
    ]

    corpus_dir = out / "corpus"
    images_dir = out / "images"
    corpus_dir.mkdir(parents=True, exist_ok=True)
    images_dir.mkdir(parents=True, exist_ok=True)
    for fms in fmaps:
        (corpus_dir / f"{fms.image_id}.fmap").write_bytes(write_fmap(fms))
    (corpus_dir / "oracle.jsonl").write_text(dump_oracle_records(records))
    for record in records:
        (images_dir / f"{record.image_id}.png").write_bytes(
            render_preview(record, (224, 224))
        )

    normalized, _ = normalize_activations(fmaps)
    by_id = {f.image_id: f for f in normalized}
    model, log = run_session(
        by_id,
        ScriptedOracle(records),
        QaConfig(budget=BUDGET),
        MinerConfig(valid_layers=2, n_k_override=2),
    )
    kinds = sorted(e["answer"]["kind"] for e in log)
    assert kinds == [1, 2, 3, 4, 4, 5], f"fixture must cover all five kinds, got {kinds}"
    (out / "expected_log.json").write_text(json.dumps(log, indent=1))
    (out / "expected_model.json").write_bytes(save_model(model))
    (out / "meta.json").write_text(json.dumps({"budget": BUDGET}))
    print(str(out))


if __name__ == "__main__":
    build(Path(sys.argv[1]))
