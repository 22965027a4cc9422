import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aogparts.errors import BadMagic, BadVersion, EmptyCorpus, IndexOutOfRange, TruncatedPayload
from aogparts.fmap import (
    FeatureMapSet,
    LayerMeta,
    compute_corpus_stats,
    flip_horizontal,
    nearest_cell,
    normalize_activations,
    read_fmap,
    unit_to_image_region,
    write_fmap,
)


def build_fms(image_id="img0", values=None):
    meta = LayerMeta("conv", 1, 2, 2, 16.0, 8.0, 64.0)
    grid = np.asarray(values if values is not None else [[0.0, 1.0], [2.0, 3.0]], dtype=np.float32)
    return FeatureMapSet(image_id, (64, 64), [(meta, grid.reshape(1, 2, 2))])


def golden_bytes():
    """Hand-assembled container: 1 layer, 1x2x2, values 0,1,2,3."""
    out = b"FMAP"
    out += struct.pack("<I", 1)
    out += struct.pack("<H", 4) + b"img0"
    out += struct.pack("<II", 64, 64)
    out += struct.pack("<H", 1)
    out += struct.pack("<H", 4) + b"conv"
    out += struct.pack("<HHH", 1, 2, 2)
    out += struct.pack("<fff", 16.0, 8.0, 64.0)
    out += struct.pack("<ffff", 0.0, 1.0, 2.0, 3.0)
    return out


class TestContainer:
    def test_golden_read(self):
        fms = read_fmap(golden_bytes())
        assert fms.image_id == "img0"
        assert fms.image_size == (64, 64)
        meta = fms.meta(0)
        assert (meta.channels, meta.height, meta.width) == (1, 2, 2)
        assert meta.stride_px == 16.0 and meta.offset_px == 8.0 and meta.rf_px == 64.0
        assert fms.raw(0).ravel().tolist() == [0.0, 1.0, 2.0, 3.0]

    def test_golden_write(self):
        assert write_fmap(build_fms()) == golden_bytes()

    def test_round_trip_bytes(self):
        b = golden_bytes()
        assert write_fmap(read_fmap(b)) == b

    def test_bad_magic(self):
        with pytest.raises(BadMagic):
            read_fmap(b"XMAP" + golden_bytes()[4:])

    def test_bad_version(self):
        data = bytearray(golden_bytes())
        data[4:8] = struct.pack("<I", 9)
        with pytest.raises(BadVersion):
            read_fmap(bytes(data))

    def test_truncated(self):
        with pytest.raises(TruncatedPayload):
            read_fmap(golden_bytes()[:-5])

    def test_trailing_garbage(self):
        with pytest.raises(TruncatedPayload):
            read_fmap(golden_bytes() + b"\x00")

    @settings(max_examples=40, deadline=None)
    @given(st.data())
    def test_round_trip_random(self, data):
        n_layers = data.draw(st.integers(1, 3))
        layers = []
        rng = np.random.default_rng(data.draw(st.integers(0, 2**31)))
        for i in range(n_layers):
            c = data.draw(st.integers(1, 4))
            h = data.draw(st.integers(1, 5))
            meta = LayerMeta(
                f"layer{i}",
                c,
                h,
                h,
                float(np.float32(data.draw(st.floats(0.5, 64, allow_nan=False)))),
                float(np.float32(data.draw(st.floats(0, 32, allow_nan=False)))),
                float(np.float32(data.draw(st.floats(1, 200, allow_nan=False)))),
            )
            grid = rng.normal(size=(c, h, h)).astype(np.float32)
            layers.append((meta, grid))
        image_id = data.draw(st.text(min_size=0, max_size=12))
        fms = FeatureMapSet(image_id, (224, 224), layers)
        b = write_fmap(fms)
        again = read_fmap(b)
        assert write_fmap(again) == b
        assert again.image_id == image_id
        for i in range(n_layers):
            assert again.meta(i) == layers[i][0]
            assert np.array_equal(again.raw(i), layers[i][1])


class TestNormalization:
    def test_constant_positive_channel(self):
        fms = build_fms(values=[[5.0, 5.0], [5.0, 5.0]])
        out, stats = normalize_activations([fms])
        assert np.allclose(out[0].activation(0), 1.0)
        assert stats.layer_means(0)[0] == 5.0

    def test_all_zero_channel(self):
        fms = build_fms(values=[[0.0, 0.0], [0.0, 0.0]])
        out, _ = normalize_activations([fms])
        assert np.all(out[0].activation(0) == 0.0)

    def test_negative_maps_to_zero(self):
        fms = build_fms(values=[[-1.0, 2.0], [4.0, -3.0]])
        out, _ = normalize_activations([fms])
        x = out[0].activation(0).ravel()
        assert x[0] == 0.0 and x[3] == 0.0
        assert x[1] > 0 and x[2] > 0

    def test_two_image_corpus_matches_reference(self, rng):
        meta = LayerMeta("conv", 3, 4, 4, 16.0, 8.0, 64.0)
        imgs = []
        for i in range(2):
            grid = rng.normal(0.2, 1.0, size=(3, 4, 4)).astype(np.float32)
            imgs.append(FeatureMapSet(f"i{i}", (64, 64), [(meta, grid)]))
        out, stats = normalize_activations(imgs)
        # independent mean-and-divide reference
        for ch in range(3):
            pooled = np.concatenate(
                [imgs[k].raw(0)[ch].astype(np.float64).ravel() for k in range(2)]
            )
            pos = pooled[pooled > 0]
            mu = pos.mean() if pos.size else 0.0
            assert stats.layer_means(0)[ch] == pytest.approx(mu, abs=0)
            for k in range(2):
                expected = np.maximum(imgs[k].raw(0)[ch].astype(np.float64), 0.0)
                expected = expected / mu if mu > 0 else expected * 0.0
                assert np.array_equal(out[k].activation(0)[ch], expected)

    def test_mean_of_positive_cells_is_one(self, rng):
        meta = LayerMeta("conv", 2, 5, 5, 16.0, 8.0, 64.0)
        imgs = [
            FeatureMapSet(
                f"i{i}", (96, 96), [(meta, rng.normal(0.1, 1, size=(2, 5, 5)).astype(np.float32))]
            )
            for i in range(3)
        ]
        out, _ = normalize_activations(imgs)
        for ch in range(2):
            raw = np.concatenate([im.raw(0)[ch].ravel() for im in imgs])
            if not np.any(raw > 0):
                continue
            x = np.concatenate([o.activation(0)[ch].ravel() for o in out])
            assert x[raw > 0].mean() == pytest.approx(1.0, abs=1e-5)

    def test_empty_corpus(self):
        with pytest.raises(EmptyCorpus):
            compute_corpus_stats([])


class TestGeometry:
    def test_origin(self):
        meta = LayerMeta("conv", 1, 4, 4, 16.0, 16.0, 64.0)
        (cx, cy), side = unit_to_image_region(meta, 0, 0)
        assert (cx, cy) == (16.0, 16.0)
        assert side == 64.0

    def test_row_col_formula(self):
        meta = LayerMeta("conv", 1, 4, 4, 16.0, 16.0, 64.0)
        (cx, cy), _ = unit_to_image_region(meta, 1, 2)
        assert (cx, cy) == (48.0, 32.0)

    def test_consecutive_columns_differ_by_stride(self):
        meta = LayerMeta("conv", 1, 6, 6, 12.5, 3.0, 40.0)
        for col in range(5):
            (x0, _), _ = unit_to_image_region(meta, 0, col)
            (x1, _), _ = unit_to_image_region(meta, 0, col + 1)
            assert x1 - x0 == pytest.approx(12.5)
            assert x1 > x0

    def test_monotone_in_indices(self):
        meta = LayerMeta("conv", 1, 5, 5, 7.0, 1.0, 30.0)
        xs = [unit_to_image_region(meta, 0, c)[0][0] for c in range(5)]
        ys = [unit_to_image_region(meta, r, 0)[0][1] for r in range(5)]
        assert xs == sorted(xs) and len(set(xs)) == 5
        assert ys == sorted(ys) and len(set(ys)) == 5

    def test_out_of_range(self):
        meta = LayerMeta("conv", 1, 4, 4, 16.0, 16.0, 64.0)
        with pytest.raises(IndexOutOfRange):
            unit_to_image_region(meta, 4, 0)
        with pytest.raises(IndexOutOfRange):
            unit_to_image_region(meta, 0, -1)

    def test_nearest_cell_inverts_centers(self):
        meta = LayerMeta("conv", 1, 6, 6, 16.0, 8.0, 64.0)
        for r in range(6):
            for c in range(6):
                (x, y), _ = unit_to_image_region(meta, r, c)
                assert nearest_cell(meta, (x, y)) == (r, c)

    def test_flip_mirrors_grids(self):
        meta = LayerMeta("conv", 1, 2, 2, 16.0, 8.0, 64.0)
        grid = np.arange(4, dtype=np.float32).reshape(1, 2, 2)
        fms = FeatureMapSet("i", (32, 32), [(meta, grid)])
        flipped = flip_horizontal(fms)
        assert flipped.raw(0).ravel().tolist() == [1.0, 0.0, 3.0, 2.0]
        assert np.array_equal(flip_horizontal(flipped).raw(0), grid)
