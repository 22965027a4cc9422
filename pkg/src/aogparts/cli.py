"""Command-line drivers: learn, parse, qa run/serve, eval, synth, stats."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .estimator import AogPartLocalizer
from .evaluate import evaluate_pairs, pattern_activation_stats
from .fmap import normalize_activations, read_fmap
from .model import Annotation, load_model, save_model
from .parser import dump_parse_records, load_parse_records, parse_image
from .qa import (
    QaConfig,
    ScriptedOracle,
    dump_answer_log,
    load_oracle_records,
    new_session,
    run_session,
)
from .miner import MinerConfig


def _load_fmaps_dir(directory: str) -> dict:
    paths = sorted(Path(directory).glob("*.fmap"))
    if not paths:
        raise click.ClickException(f"no .fmap files in {directory}")
    out = {}
    for p in paths:
        fms = read_fmap(p.read_bytes())
        out[fms.image_id] = fms
    return out


def _load_annotations(path: str) -> list[Annotation]:
    out = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        doc = json.loads(line)
        out.append(
            Annotation(
                image_id=doc["image_id"],
                bbox=(doc["cx"], doc["cy"], doc["w"], doc["h"]),
                template_id=doc["template_id"],
                flipped=bool(doc.get("flipped", False)),
            )
        )
    return out


@click.group()
def main():
    """Mine part models from exported feature maps and localize parts."""


@main.command()
@click.option("--fmaps", required=True, help="directory of .fmap containers")
@click.option("--annotations", required=True, help="JSONL part annotations")
@click.option("--out", required=True, help="output model file")
@click.option("--layers", default=9, show_default=True, help="valid conv-layers")
@click.option("--epsilon", default=2, show_default=True, help="suppression radius (cells)")
@click.option("--n-k", default=None, type=int, help="fixed per-layer pattern count")
@click.option("--part", default="part", show_default=True, help="semantic part name")
def learn(fmaps, annotations, out, layers, epsilon, n_k, part):
    """Mine an AOG part model from annotations plus unannotated images."""
    corpus = _load_fmaps_dir(fmaps)
    anns = _load_annotations(annotations)
    annotated_ids = {a.image_id for a in anns}
    unann = [corpus[i] for i in sorted(corpus) if i not in annotated_ids]
    est = AogPartLocalizer(
        part_name=part, valid_layers=layers, epsilon_cells=epsilon, n_k=n_k
    )
    est.fit([corpus[i] for i in sorted(annotated_ids)], anns, unannotated=unann)
    Path(out).write_bytes(save_model(est.model_))
    click.echo(f"model with {len(est.model_.templates)} templates -> {out}")


@main.command()
@click.option("--model", "model_path", required=True)
@click.option("--fmaps", required=True)
@click.option("--out", required=True, help="output parse records (JSONL)")
def parse(model_path, fmaps, out):
    """Parse every image in a directory; one box per image."""
    model = load_model(Path(model_path).read_bytes())
    corpus = _load_fmaps_dir(fmaps)
    normalized, _ = normalize_activations([corpus[i] for i in sorted(corpus)])
    parses = [parse_image(model, fms) for fms in normalized]
    Path(out).write_text(dump_parse_records(parses))
    click.echo(f"parsed {len(parses)} images -> {out}")


@main.group()
def qa():
    """Active question answering."""


@qa.command("run")
@click.option("--fmaps", required=True)
@click.option("--oracle", required=True, help="scripted oracle records (JSONL)")
@click.option("--budget", required=True, type=int)
@click.option("--out", required=True, help="output model file")
@click.option("--log", "log_path", required=True, help="output answer log (JSONL)")
@click.option("--layers", default=9, show_default=True)
@click.option("--epsilon", default=2, show_default=True)
@click.option("--n-k", default=None, type=int)
@click.option("--part", default="part", show_default=True)
def qa_run(fmaps, oracle, budget, out, log_path, layers, epsilon, n_k, part):
    """Run a scripted QA session and save the learned model."""
    corpus = _load_fmaps_dir(fmaps)
    normalized, _ = normalize_activations([corpus[i] for i in sorted(corpus)])
    by_id = {f.image_id: f for f in normalized}
    records = load_oracle_records(Path(oracle).read_text())
    model, log = run_session(
        by_id,
        ScriptedOracle(records),
        QaConfig(budget=budget),
        MinerConfig(valid_layers=layers, epsilon_cells=epsilon, n_k_override=n_k),
        part_name=part,
    )
    Path(out).write_bytes(save_model(model))
    Path(log_path).write_text(dump_answer_log(log))
    click.echo(
        f"{len(log)} answers, {len(model.templates)} templates -> {out}"
    )


@qa.command("serve")
@click.option("--fmaps", required=True)
@click.option("--images", default=None, help="directory of image files by id")
@click.option("--port", default=8008, show_default=True, type=int)
@click.option("--budget", required=True, type=int)
@click.option("--layers", default=9, show_default=True)
@click.option("--epsilon", default=2, show_default=True)
@click.option("--n-k", default=None, type=int)
@click.option("--part", default="part", show_default=True)
@click.option("--ui", default=None, help="directory with the built annotator UI")
def qa_serve(fmaps, images, port, budget, layers, epsilon, n_k, part, ui):
    """Serve one live annotation session over HTTP."""
    from .server import serve_session

    corpus = _load_fmaps_dir(fmaps)
    normalized, _ = normalize_activations([corpus[i] for i in sorted(corpus)])
    by_id = {f.image_id: f for f in normalized}
    session = new_session(
        by_id,
        part_name=part,
        qa_cfg=QaConfig(budget=budget),
        miner_cfg=MinerConfig(
            valid_layers=layers, epsilon_cells=epsilon, n_k_override=n_k
        ),
    )
    click.echo(f"serving session on port {port} (budget {budget})")
    serve_session(session, port, images_dir=images, ui_dir=ui)


@main.command("eval")
@click.option("--parses", required=True, help="parse records (JSONL)")
@click.option("--oracle", required=True, help="oracle records (JSONL)")
@click.option("--csv", "csv_out", default=None, help="write per-image rows here")
def eval_cmd(parses, oracle, csv_out):
    """Score parses against ground truth: mean normalized distance and PCP."""
    records = {r.image_id: r for r in load_oracle_records(Path(oracle).read_text())}
    rows = []
    for doc in load_parse_records(Path(parses).read_text()):
        rec = records.get(doc["image_id"])
        if rec is None or not rec.present:
            continue
        if rec.image_size is None:
            raise click.ClickException(
                f"oracle record for {doc['image_id']} lacks image_size"
            )
        diag = (rec.image_size[0] ** 2 + rec.image_size[1] ** 2) ** 0.5
        pred = (doc["cx"], doc["cy"], doc["w"], doc["h"])
        rows.append((doc["image_id"], pred, rec.bbox, diag))
    eval_records, mean_nd, pcp = evaluate_pairs(rows)
    if csv_out:
        lines = ["image_id,normalized_distance,pcp_correct"]
        lines += [
            f"{r.image_id},{r.normalized_distance},{int(r.pcp_correct)}"
            for r in eval_records
        ]
        Path(csv_out).write_text("\n".join(lines) + "\n")
    click.echo(
        f"images {len(eval_records)}  mean_normalized_distance {mean_nd:.6f}  pcp {pcp:.4f}"
    )


@main.command()
@click.option("--spec", "spec_path", required=True, help="synthesis spec (JSON)")
@click.option("--out", required=True, help="output directory")
@click.option("--previews/--no-previews", default=False, help="also render PNGs")
def synth(spec_path, out, previews):
    """Generate a synthetic corpus plus its oracle file."""
    from .synth import spec_from_dict, synth_generate, write_corpus

    spec = spec_from_dict(json.loads(Path(spec_path).read_text()))
    paths, oracle_path = write_corpus(spec, out)
    if previews:
        from .synth import render_preview

        _, records = synth_generate(spec)
        for rec in records:
            png = render_preview(rec, spec.image_size)
            (Path(out) / f"{rec.image_id}.png").write_bytes(png)
    click.echo(f"{len(paths)} images -> {out} (oracle: {oracle_path})")


@main.command()
@click.option("--model", "model_path", required=True)
@click.option("--fmaps", required=True)
def stats(model_path, fmaps):
    """Per-layer activation statistics of the parses, as CSV on stdout."""
    model = load_model(Path(model_path).read_bytes())
    corpus = _load_fmaps_dir(fmaps)
    normalized, _ = normalize_activations([corpus[i] for i in sorted(corpus)])
    base = len(normalized[0].layers) - len(model.layer_metas)
    writer = sys.stdout
    writer.write("image_id,layer,energy_ratio,relative_magnitude,activation_ratio\n")
    for fms in normalized:
        parse_result = parse_image(model, fms)
        per_layer = pattern_activation_stats(parse_result, fms, layer_base=base)
        for layer, (energy, magnitude, ratio) in per_layer.items():
            writer.write(f"{fms.image_id},{layer},{energy},{magnitude},{ratio}\n")


if __name__ == "__main__":
    main()
