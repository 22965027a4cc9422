"""Binary container and geometry for per-image convolutional feature maps.

The FMAP container is a little-endian binary stream:

    magic  "FMAP"                      4 bytes
    version                            u32 (currently 1)
    image_id                           u16 length + UTF-8 bytes
    image width, image height          u32, u32
    layer count                        u16
    per layer:
        name                           u16 length + UTF-8 bytes
        channels, height, width        u16, u16, u16
        stride_px, offset_px, rf_px    f32, f32, f32
        activations                    channels*height*width f32,
                                       channel-major, then row-major

Activations are stored as 32-bit floats; all in-memory computation on them
is done in 64-bit.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    BadMagic,
    BadVersion,
    EmptyCorpus,
    IndexOutOfRange,
    TruncatedPayload,
)

MAGIC = b"FMAP"
VERSION = 1


@dataclass(frozen=True)
class LayerMeta:
    """Geometry of one conv-layer grid.

    ``stride_px`` and ``offset_px`` place cell centers on the image plane:
    cell (row, col) is centered at ``offset_px + stride_px * (col, row)``.
    ``rf_px`` is the side length of a unit's receptive field.
    """

    name: str
    channels: int
    height: int
    width: int
    stride_px: float
    offset_px: float
    rf_px: float

    def __post_init__(self):
        if self.channels < 1 or self.height < 1 or self.width < 1:
            raise ValueError("layer dims must be >= 1")
        if self.height != self.width:
            raise ValueError("feature maps must be square")
        if self.stride_px <= 0 or self.rf_px <= 0:
            raise ValueError("stride_px and rf_px must be > 0")


@dataclass
class FeatureMapSet:
    """All exported conv-layer grids of one image.

    ``layers`` holds ``(LayerMeta, raw_grid)`` pairs ordered from the lowest
    exported conv-layer to the highest. Raw grids are float32 arrays of shape
    (channels, height, width). ``normalized`` is filled by
    :func:`normalize_activations`; each entry is a float64 grid of the same
    shape holding ``max(raw, 0) / channel_mean``.
    """

    image_id: str
    image_size: tuple[int, int]
    layers: list[tuple[LayerMeta, np.ndarray]]
    normalized: list[np.ndarray] | None = field(default=None)

    def __post_init__(self):
        w, h = self.image_size
        if w <= 0 or h <= 0:
            raise ValueError("image_size components must be > 0")
        for meta, grid in self.layers:
            if grid.shape != (meta.channels, meta.height, meta.width):
                raise ValueError(
                    f"grid shape {grid.shape} does not match meta of layer {meta.name!r}"
                )

    @property
    def is_normalized(self) -> bool:
        return self.normalized is not None

    def meta(self, layer: int) -> LayerMeta:
        return self.layers[layer][0]

    def raw(self, layer: int) -> np.ndarray:
        return self.layers[layer][1]

    def activation(self, layer: int) -> np.ndarray:
        if self.normalized is None:
            raise ValueError("feature maps have not been normalized")
        return self.normalized[layer]


@dataclass(frozen=True)
class CorpusStats:
    """Per-layer, per-channel mean of positive raw activations over a corpus."""

    means: tuple[tuple[float, ...], ...]

    def layer_means(self, layer: int) -> np.ndarray:
        return np.asarray(self.means[layer], dtype=np.float64)


# --- binary IO ---------------------------------------------------------------


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedPayload(
                f"need {n} bytes at offset {self.pos}, have {len(self.data) - self.pos}"
            )
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def f32(self) -> float:
        return struct.unpack("<f", self.take(4))[0]

    def text(self) -> str:
        n = self.u16()
        return self.take(n).decode("utf-8")


def read_fmap(data: bytes) -> FeatureMapSet:
    """Decode one FMAP container. Raises BadMagic / BadVersion / TruncatedPayload."""
    r = _Reader(data)
    magic = r.take(4)
    if magic != MAGIC:
        raise BadMagic(f"expected {MAGIC!r}, got {magic!r}")
    version = r.u32()
    if version != VERSION:
        raise BadVersion(f"unsupported container version {version}")
    image_id = r.text()
    width = r.u32()
    height = r.u32()
    n_layers = r.u16()
    layers = []
    for _ in range(n_layers):
        name = r.text()
        channels = r.u16()
        lh = r.u16()
        lw = r.u16()
        stride = r.f32()
        offset = r.f32()
        rf = r.f32()
        count = channels * lh * lw
        raw = r.take(count * 4)
        grid = np.frombuffer(raw, dtype="<f4").reshape(channels, lh, lw).copy()
        meta = LayerMeta(name, channels, lh, lw, stride, offset, rf)
        layers.append((meta, grid))
    if r.pos != len(data):
        raise TruncatedPayload(f"{len(data) - r.pos} trailing bytes after payload")
    return FeatureMapSet(image_id, (width, height), layers)


def write_fmap(fms: FeatureMapSet) -> bytes:
    """Encode a FeatureMapSet into the FMAP container format."""
    out = bytearray()
    out += MAGIC
    out += struct.pack("<I", VERSION)
    _put_text(out, fms.image_id)
    out += struct.pack("<II", fms.image_size[0], fms.image_size[1])
    out += struct.pack("<H", len(fms.layers))
    for meta, grid in fms.layers:
        _put_text(out, meta.name)
        out += struct.pack("<HHH", meta.channels, meta.height, meta.width)
        out += struct.pack("<fff", meta.stride_px, meta.offset_px, meta.rf_px)
        out += np.ascontiguousarray(grid, dtype="<f4").tobytes()
    return bytes(out)


def _put_text(out: bytearray, text: str):
    raw = text.encode("utf-8")
    out += struct.pack("<H", len(raw))
    out += raw


# --- receptive-field geometry --------------------------------------------------


def unit_to_image_region(
    meta: LayerMeta, row: int, col: int
) -> tuple[tuple[float, float], float]:
    """Project a grid cell onto the image plane: ((cx, cy), side)."""
    if not (0 <= row < meta.height and 0 <= col < meta.width):
        raise IndexOutOfRange(f"cell ({row}, {col}) outside {meta.height}x{meta.width}")
    cx = meta.offset_px + meta.stride_px * col
    cy = meta.offset_px + meta.stride_px * row
    return (cx, cy), meta.rf_px


def unit_center(meta: LayerMeta, row: int, col: int) -> tuple[float, float]:
    return unit_to_image_region(meta, row, col)[0]


def nearest_cell(meta: LayerMeta, point: tuple[float, float]) -> tuple[int, int]:
    """Grid cell whose center is nearest to an image-plane point.

    Exact half-stride ties round toward the larger index so that snapping is
    deterministic. Results are clamped to the grid.
    """
    x, y = point
    col = int(np.floor((x - meta.offset_px) / meta.stride_px + 0.5))
    row = int(np.floor((y - meta.offset_px) / meta.stride_px + 0.5))
    col = min(max(col, 0), meta.width - 1)
    row = min(max(row, 0), meta.height - 1)
    return row, col


def flip_horizontal(fms: FeatureMapSet) -> FeatureMapSet:
    """Mirror all grids along the width axis.

    Faithful to mirroring the underlying image only when the grid is centered
    in the frame (2 * offset_px + stride_px * (width - 1) == image width),
    which holds for the exporter's and the synthetic generator's geometry.
    """
    layers = [(meta, grid[:, :, ::-1].copy()) for meta, grid in fms.layers]
    normalized = None
    if fms.normalized is not None:
        normalized = [g[:, :, ::-1].copy() for g in fms.normalized]
    return FeatureMapSet(fms.image_id, fms.image_size, layers, normalized)


def flip_point(image_size: tuple[int, int], point: tuple[float, float]) -> tuple[float, float]:
    return (image_size[0] - point[0], point[1])


# --- corpus normalization ------------------------------------------------------


def compute_corpus_stats(
    corpus: list[FeatureMapSet], statistic: str = "mean_positive"
) -> CorpusStats:
    """Per-channel activation level over a corpus.

    ``mean_positive`` (default) averages strictly positive raw values;
    ``mean_relu`` averages max(raw, 0) over all cells; ``median_positive``
    takes the median of strictly positive values. Channels with no positive
    value get 0.
    """
    if not corpus:
        raise EmptyCorpus("need at least one image to compute corpus stats")
    n_layers = len(corpus[0].layers)
    means = []
    for li in range(n_layers):
        meta = corpus[0].meta(li)
        per_channel = []
        for ch in range(meta.channels):
            values = [fms.raw(li)[ch].astype(np.float64) for fms in corpus]
            stacked = np.concatenate([v.ravel() for v in values])
            if statistic == "mean_relu":
                level = float(np.mean(np.maximum(stacked, 0.0)))
            else:
                positive = stacked[stacked > 0]
                if positive.size == 0:
                    level = 0.0
                elif statistic == "median_positive":
                    level = float(np.median(positive))
                elif statistic == "mean_positive":
                    level = float(np.mean(positive))
                else:
                    raise ValueError(f"unknown statistic {statistic!r}")
            per_channel.append(level)
        means.append(tuple(per_channel))
    return CorpusStats(tuple(means))


def apply_corpus_stats(fms: FeatureMapSet, stats: CorpusStats) -> FeatureMapSet:
    """Return a copy with normalized grids X = max(raw, 0) / channel level.

    Channels whose corpus level is 0 normalize to all zeros. X == 0 marks a
    non-activated unit; scoring maps those to the flat non-activation response.
    """
    normalized = []
    for li, (meta, grid) in enumerate(fms.layers):
        mu = stats.layer_means(li).reshape(meta.channels, 1, 1)
        x = np.maximum(grid.astype(np.float64), 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            x = np.where(mu > 0, x / np.where(mu > 0, mu, 1.0), 0.0)
        normalized.append(x)
    return replace(fms, normalized=normalized)


def normalize_activations(
    corpus: list[FeatureMapSet], statistic: str = "mean_positive"
) -> tuple[list[FeatureMapSet], CorpusStats]:
    """Normalize every image in the corpus by the corpus activation levels."""
    stats = compute_corpus_stats(corpus, statistic)
    return [apply_corpus_stats(fms, stats) for fms in corpus], stats
