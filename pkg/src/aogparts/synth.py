"""Deterministic synthetic feature-map corpora for desk-scale runs.

Each template owns a motif: a few (layer, channel, offset) entries. An image
of that template gets high activations planted at the motif offsets around a
sampled part center, over optional half-normal background noise. The planted
box and template go into an oracle file, so the full mining / parsing / QA
pipeline can be exercised and scored without a CNN.

The default geometry mirrors the top of a standard 16-layer network on a
224 px input (a 14x14 and a 7x7 map), so the pixel-space constants of the
scoring keep their intended magnitudes. Anchors sit on both layers' cell
lattices; jitter steps move centers across cells so localization is honest.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fmap import FeatureMapSet, LayerMeta, nearest_cell, write_fmap
from .qa import OracleRecord

DEFAULT_LAYERS = (
    LayerMeta("conv_a", 8, 14, 14, 16.0, 8.0, 68.0),
    LayerMeta("conv_b", 8, 7, 7, 32.0, 16.0, 132.0),
)
DEFAULT_IMAGE_SIZE = (224, 224)
# Anchors sit on coarse-layer cell centers (and on the fine-layer half-cell
# lattice); offsets below land motif cells exactly on cell centers. Only the
# smallest residue magnitudes are usable: the mining closeness penalty is
# quadratic in pixels (about 2 per px^2), so farther motifs could never
# outscore near-center cells.
_OFFSET_CHOICES = (
    (-8.0, 8.0),  # stride-16 layer
    (0.0,),  # stride-32 layer: anchored entries sit exactly on the anchor cell
)
_ANCHORS = ((112.0, 112.0), (144.0, 112.0), (112.0, 144.0), (144.0, 144.0))


@dataclass(frozen=True)
class MotifEntry:
    """One planted activation: ``offset`` is relative to the part center, or
    to the template's anchor when ``anchored`` (pose-stable coarse context).
    ``gain`` scales the planted amplitude (context entries are weaker)."""

    layer: int
    channel: int
    offset: tuple[float, float]
    anchored: bool = False
    gain: float = 1.0


@dataclass(frozen=True)
class SynthSpec:
    """Corpus blueprint.

    Each template owns ``channels_per_layer`` private channels per layer;
    ``context_channels`` more channels per layer fire on every part-bearing
    image (generic appearance shared across templates, which keeps images of
    one category comparable in feature space). Part centers move by sub-cell
    ``center_jitter_steps``; ``plant_jitter_px`` perturbs planted positions on
    the fine (first) layer only and is the knob that makes single annotations
    insufficient. Coarse-layer motifs are anchored to the template pose
    rather than the jittered center: the coarse stride exceeds any affordable
    deformation, so per-image coarse motion would only destroy information.
    """

    seed: int = 0
    n_images: int = 50
    n_templates: int = 3
    noise_sigma: float = 0.0
    motif_amplitude: float = 50.0
    plant_jitter_px: float = 0.0
    plant_jitter_layers: tuple[int, ...] = (0,)
    center_jitter_steps: tuple[float, ...] = (-6.0, 0.0, 6.0)
    absent_fraction: float = 0.0
    channels_per_layer: int = 2
    context_channels: int = 2
    context_amplitude: float = 5.0
    box_size: tuple[float, float] = (80.0, 80.0)
    template_weights: tuple[float, ...] | None = None
    layers: tuple[LayerMeta, ...] = DEFAULT_LAYERS
    image_size: tuple[int, int] = DEFAULT_IMAGE_SIZE
    motifs: tuple[tuple[MotifEntry, ...], ...] | None = None

    def __post_init__(self):
        if self.n_templates < 1 or self.n_images < 1:
            raise ValueError("need at least one template and one image")
        needed = self.n_templates * self.channels_per_layer + self.context_channels
        if needed > min(m.channels for m in self.layers):
            raise ValueError("not enough channels for the template and context motifs")


def template_name(index: int) -> str:
    return f"T{index}"


def sample_motifs(spec: SynthSpec, rng: np.random.Generator):
    """Disjoint per-template motifs plus shared context channels.

    Offsets come from lattice-safe sets so planted cells land exactly on cell
    centers when part centers sit on the anchor lattice. Context entries (the
    highest channels) are identical for every template.
    """
    if spec.motifs is not None:
        return spec.motifs
    def draw(li):
        choices = _OFFSET_CHOICES[li % len(_OFFSET_CHOICES)]
        return (float(rng.choice(choices)), float(rng.choice(choices)))

    private = []
    for t in range(spec.n_templates):
        entries = []
        for li in range(len(spec.layers)):
            for k in range(spec.channels_per_layer):
                channel = t * spec.channels_per_layer + k
                entries.append(
                    MotifEntry(layer=li, channel=channel, offset=draw(li), anchored=li > 0)
                )
        private.append(entries)
    gain = spec.context_amplitude / spec.motif_amplitude
    shared = []
    for li, meta in enumerate(spec.layers):
        for k in range(spec.context_channels):
            channel = meta.channels - 1 - k
            shared.append(
                MotifEntry(
                    layer=li, channel=channel, offset=draw(li), anchored=li > 0, gain=gain
                )
            )
    return tuple(tuple(entries + shared) for entries in private)


def plant_image(
    image_id: str,
    layers: tuple[LayerMeta, ...],
    image_size: tuple[int, int],
    motif: tuple[MotifEntry, ...] | None,
    center: tuple[float, float] | None,
    amplitude: float,
    sigma: float,
    plant_jitter_px: float,
    rng: np.random.Generator,
    plant_jitter_layers: tuple[int, ...] = (0,),
    anchor: tuple[float, float] | None = None,
) -> FeatureMapSet:
    """One image's grids: background noise plus the motif at the part center.

    ``motif=None`` produces a part-free (noise only) image. Noise is drawn
    even at sigma=0 to keep the rng stream identical across sigma settings.
    """
    grids = []
    for meta in layers:
        noise = rng.normal(0.0, 1.0, size=(meta.channels, meta.height, meta.width))
        grid = np.maximum(noise * sigma, 0.0) if sigma > 0 else np.zeros_like(noise)
        grids.append(grid.astype(np.float32))
    if motif is not None:
        # one rigid fine-scale shift per image: the part's fine appearance
        # wobbles as a whole, so votes stay coherent but move off the lattice
        jx = jy = 0.0
        if plant_jitter_px > 0:
            jx = float(rng.uniform(-plant_jitter_px, plant_jitter_px))
            jy = float(rng.uniform(-plant_jitter_px, plant_jitter_px))
        for entry in motif:
            meta = layers[entry.layer]
            base = anchor if (entry.anchored and anchor is not None) else center
            px = base[0] + entry.offset[0]
            py = base[1] + entry.offset[1]
            if entry.layer in plant_jitter_layers:
                px += jx
                py += jy
            row, col = nearest_cell(meta, (px, py))
            grids[entry.layer][entry.channel, row, col] = amplitude * entry.gain
    return FeatureMapSet(
        image_id, image_size, [(m, g) for m, g in zip(layers, grids)]
    )


def synth_generate(spec: SynthSpec) -> tuple[list[FeatureMapSet], list[OracleRecord]]:
    """Generate the corpus and its oracle records. Same seed, same bytes."""
    rng = np.random.default_rng(spec.seed)
    motifs = sample_motifs(spec, rng)
    weights = spec.template_weights
    if weights is None:
        probs = np.full(spec.n_templates, 1.0 / spec.n_templates)
    else:
        w = np.asarray(weights, dtype=np.float64)
        probs = w / w.sum()

    n_absent = int(round(spec.absent_fraction * spec.n_images))
    absent = set(rng.choice(spec.n_images, size=n_absent, replace=False).tolist())

    fmaps: list[FeatureMapSet] = []
    records: list[OracleRecord] = []
    for i in range(spec.n_images):
        image_id = f"img{i:03d}"
        if i in absent:
            fms = plant_image(
                image_id,
                spec.layers,
                spec.image_size,
                None,
                None,
                spec.motif_amplitude,
                spec.noise_sigma,
                spec.plant_jitter_px,
                rng,
                spec.plant_jitter_layers,
            )
            records.append(
                OracleRecord(image_id, None, None, False, image_size=spec.image_size)
            )
            fmaps.append(fms)
            continue
        t = int(rng.choice(spec.n_templates, p=probs))
        anchor = _ANCHORS[t % len(_ANCHORS)]
        steps = spec.center_jitter_steps
        center = (
            anchor[0] + float(rng.choice(steps)),
            anchor[1] + float(rng.choice(steps)),
        )
        fms = plant_image(
            image_id,
            spec.layers,
            spec.image_size,
            motifs[t],
            center,
            spec.motif_amplitude,
            spec.noise_sigma,
            spec.plant_jitter_px,
            rng,
            spec.plant_jitter_layers,
            anchor=anchor,
        )
        bw, bh = spec.box_size
        records.append(
            OracleRecord(
                image_id,
                (center[0], center[1], bw, bh),
                template_name(t),
                True,
                image_size=spec.image_size,
            )
        )
        fmaps.append(fms)
    return fmaps, records


def spec_from_dict(doc: dict) -> SynthSpec:
    layers = doc.get("layers")
    metas = (
        tuple(LayerMeta(**m) for m in layers) if layers is not None else DEFAULT_LAYERS
    )
    kwargs = dict(
        seed=doc.get("seed", 0),
        n_images=doc.get("images", doc.get("n_images", 50)),
        n_templates=doc.get("templates", doc.get("n_templates", 3)),
        noise_sigma=doc.get("noise_sigma", 0.0),
        motif_amplitude=doc.get("motif_amplitude", 50.0),
        plant_jitter_px=doc.get("plant_jitter_px", 0.0),
        absent_fraction=doc.get("absent_fraction", 0.0),
        channels_per_layer=doc.get("channels_per_layer", 2),
        context_channels=doc.get("context_channels", 2),
        context_amplitude=doc.get("context_amplitude", 5.0),
        layers=metas,
    )
    if "center_jitter_steps" in doc:
        kwargs["center_jitter_steps"] = tuple(doc["center_jitter_steps"])
    if "box_size" in doc:
        kwargs["box_size"] = tuple(doc["box_size"])
    if "template_weights" in doc:
        kwargs["template_weights"] = tuple(doc["template_weights"])
    if "image_size" in doc:
        kwargs["image_size"] = tuple(doc["image_size"])
    return SynthSpec(**kwargs)


def write_corpus(spec: SynthSpec, out_dir) -> tuple[list[str], str]:
    """Write one .fmap per image plus oracle.jsonl; returns (paths, oracle path)."""
    import pathlib

    from .qa import dump_oracle_records

    out = pathlib.Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fmaps, records = synth_generate(spec)
    paths = []
    for fms in fmaps:
        path = out / f"{fms.image_id}.fmap"
        path.write_bytes(write_fmap(fms))
        paths.append(str(path))
    oracle_path = out / "oracle.jsonl"
    oracle_path.write_text(dump_oracle_records(records))
    return paths, str(oracle_path)


def render_preview(record: OracleRecord, image_size: tuple[int, int]) -> bytes:
    """Tiny PNG visualizing the planted box, for driving the annotation UI."""
    from io import BytesIO

    from PIL import Image, ImageDraw

    img = Image.new("RGB", image_size, (24, 24, 32))
    draw = ImageDraw.Draw(img)
    if record.present and record.bbox is not None:
        cx, cy, w, h = record.bbox
        draw.rectangle(
            (cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2),
            outline=(240, 200, 60),
            width=2,
        )
        draw.text((8, 8), record.template or "", fill=(220, 220, 220))
    buf = BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()
