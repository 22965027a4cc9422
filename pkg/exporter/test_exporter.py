import hashlib
import json
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from export_features import conv_geometry, load_network, main

from aogparts.fmap import read_fmap, normalize_activations


@pytest.fixture(scope="module")
def image_list(tmp_path_factory):
    from PIL import Image

    root = tmp_path_factory.mktemp("exporter")
    rng = np.random.default_rng(0)
    entries = []
    for k in range(2):
        arr = rng.integers(0, 255, size=(260, 300, 3), dtype=np.uint8)
        path = root / f"pic{k}.png"
        Image.fromarray(arr).save(path)
        entries.append(
            {"image_id": f"pic{k}", "path": str(path), "box": [10, 10, 250, 250]}
        )
    list_path = root / "images.jsonl"
    list_path.write_text("".join(json.dumps(e) + "\n" for e in entries))
    return root, list_path


def export(list_path, out_dir, extra=()):
    main(["--images", str(list_path), "--layers", "2", "--out", str(out_dir), *extra])


class TestGeometry:
    def test_known_strides_and_coverage(self):
        model = load_network()
        geometry = conv_geometry(model.features)
        convs = [i for i, l in enumerate(model.features) if l.__class__.__name__ == "Conv2d"]
        top = geometry[convs[-1]]
        assert top[0] == "conv5_3"
        assert top[1] == 16.0 and top[2] == 8.0  # stride, offset of the top maps
        for idx in convs[-9:]:
            name, stride, offset, rf = geometry[idx]
            cells = 224 / stride
            assert stride * (cells - 1) + rf >= 224  # receptive fields cover the frame


class TestExport:
    def test_files_validate_in_the_store(self, image_list, tmp_path):
        root, list_path = image_list
        export(list_path, tmp_path)
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert set(manifest) == {"pic0", "pic1"}
        fmaps = []
        for image_id, meta in manifest.items():
            fms = read_fmap((tmp_path / meta["file"]).read_bytes())
            assert fms.image_id == image_id
            assert fms.image_size == (224, 224)
            assert len(fms.layers) == 2
            top = fms.meta(1)
            assert (top.channels, top.height, top.width) == (512, 14, 14)
            assert top.stride_px == 16.0 and top.offset_px == 8.0
            fmaps.append(fms)
        normalized, stats = normalize_activations(fmaps)
        assert normalized[0].is_normalized

    def test_deterministic_re_export(self, image_list, tmp_path):
        root, list_path = image_list
        export(list_path, tmp_path / "a")
        export(list_path, tmp_path / "b")
        for name in ("pic0.fmap", "pic1.fmap"):
            da = (tmp_path / "a" / name).read_bytes()
            db = (tmp_path / "b" / name).read_bytes()
            assert hashlib.sha256(da).hexdigest() == hashlib.sha256(db).hexdigest()

    def test_flip_commutes_with_mirroring(self, image_list, tmp_path):
        root, list_path = image_list
        export(list_path, tmp_path / "plain")
        flips = tmp_path / "flips.txt"
        flips.write_text("pic0\n")
        export(list_path, tmp_path / "flipped", extra=("--flip-list", str(flips)))
        plain = read_fmap((tmp_path / "plain" / "pic0.fmap").read_bytes())
        flipped = read_fmap((tmp_path / "flipped" / "pic0.fmap").read_bytes())
        for li in range(2):
            mirrored = plain.raw(li)[:, :, ::-1]
            assert np.allclose(flipped.raw(li), mirrored, atol=1e-4)
        untouched_a = (tmp_path / "plain" / "pic1.fmap").read_bytes()
        untouched_b = (tmp_path / "flipped" / "pic1.fmap").read_bytes()
        assert untouched_a == untouched_b
