#!/usr/bin/env python3
"""Export conv-layer activations of cropped objects as FMAP containers.

Reads an image list (JSONL: {image_id, path, box?, flip?}), crops each object
box, resizes to the network input, runs a 16-layer VGG forward pass, and
writes the last K conv-layers (pre-ReLU) with analytically derived
stride/offset/receptive-field metadata. A manifest.json maps image ids to
files and sizes.

Without --weights the network is randomly initialized from a fixed seed, so
exports are deterministic run-to-run; real localization quality needs trained
weights, but container layout, geometry, and all downstream mechanics are
identical.

The flip flag mirrors the exported activation grids (feature-space flip).
The downstream consumer treats flipped annotations by mirroring feature maps,
and convolutions with asymmetric kernels do not commute with pixel-space
mirroring, so mirroring pixels here would silently disagree with it.
"""

import argparse
import hashlib
import json
import struct
import sys
from pathlib import Path

import numpy as np
import torch
import torchvision
from PIL import Image

INPUT_SIDE = 224
NORM_MEAN = (0.485, 0.456, 0.406)
NORM_STD = (0.229, 0.224, 0.225)
CONV_BLOCKS = (2, 2, 3, 3, 3)  # convs per stage of the 16-layer network


def conv_geometry(features):
    """(stride, offset, rf) of every Conv2d output, by composing the chain.

    Coordinates follow the container convention: cell (0,0) of a map is
    centered at ``offset`` pixels, consecutive cells are ``stride`` apart,
    with pixel i of the input centered at i + 0.5.
    """
    jump, start, rf = 1.0, 0.5, 1.0
    names = []
    out = {}
    stage, conv_in_stage = 1, 0
    for idx, layer in enumerate(features):
        if isinstance(layer, torch.nn.Conv2d):
            k = layer.kernel_size[0]
            p = layer.padding[0]
            start += ((k - 1) / 2 - p) * jump
            rf += (k - 1) * jump
            conv_in_stage += 1
            out[idx] = (f"conv{stage}_{conv_in_stage}", jump, start, rf)
        elif isinstance(layer, torch.nn.MaxPool2d):
            k = layer.kernel_size if isinstance(layer.kernel_size, int) else layer.kernel_size[0]
            s = layer.stride if isinstance(layer.stride, int) else layer.stride[0]
            start += ((k - 1) / 2) * jump
            rf += (k - 1) * jump
            jump *= s
            stage += 1
            conv_in_stage = 0
    return out


def load_network(weights_path=None):
    torch.manual_seed(0)
    model = torchvision.models.vgg16(weights=None)
    if weights_path:
        state = torch.load(weights_path, map_location="cpu")
        model.load_state_dict(state)
    model.eval()
    return model


def prepare(image: Image.Image, box=None, flip=False) -> torch.Tensor:
    if box is not None:
        image = image.crop(tuple(box))
    image = image.convert("RGB").resize((INPUT_SIDE, INPUT_SIDE), Image.BILINEAR)
    arr = np.asarray(image, dtype=np.float32) / 255.0
    arr = (arr - np.asarray(NORM_MEAN, dtype=np.float32)) / np.asarray(NORM_STD, dtype=np.float32)
    del flip  # flips are applied to the exported maps, not the pixels
    return torch.from_numpy(arr.transpose(2, 0, 1))[None]


def forward_convs(model, x, conv_indices):
    captured = {}
    hooks = [
        model.features[i].register_forward_hook(
            lambda mod, inp, out, i=i: captured.__setitem__(i, out.detach())
        )
        for i in conv_indices
    ]
    with torch.no_grad():
        model.features(x)
    for h in hooks:
        h.remove()
    return captured


def _put_text(out: bytearray, text: str):
    raw = text.encode("utf-8")
    out += struct.pack("<H", len(raw))
    out += raw


def encode_fmap(image_id, image_size, layers):
    """Assemble one FMAP container; layers = [(name, stride, offset, rf, grid)]."""
    out = bytearray()
    out += b"FMAP"
    out += struct.pack("<I", 1)
    _put_text(out, image_id)
    out += struct.pack("<II", image_size[0], image_size[1])
    out += struct.pack("<H", len(layers))
    for name, stride, offset, rf, grid in layers:
        c, h, w = grid.shape
        _put_text(out, name)
        out += struct.pack("<HHH", c, h, w)
        out += struct.pack("<fff", stride, offset, rf)
        out += np.ascontiguousarray(grid, dtype="<f4").tobytes()
    return bytes(out)


def export_image(model, geometry, conv_indices, entry, flip=False):
    image = Image.open(entry["path"])
    x = prepare(image, entry.get("box"), flip)
    captured = forward_convs(model, x, conv_indices)
    layers = []
    for idx in conv_indices:
        name, stride, offset, rf = geometry[idx]
        grid = captured[idx][0].numpy()
        if flip:
            grid = grid[:, :, ::-1].copy()
        layers.append((name, stride, offset, rf, grid))
    return encode_fmap(entry["image_id"], (INPUT_SIDE, INPUT_SIDE), layers)


def run(args):
    entries = [
        json.loads(line)
        for line in Path(args.images).read_text().splitlines()
        if line.strip()
    ]
    flip_ids = set()
    if args.flip_list:
        flip_ids = {
            line.strip()
            for line in Path(args.flip_list).read_text().splitlines()
            if line.strip()
        }
    model = load_network(args.weights)
    conv_indices = [
        i for i, l in enumerate(model.features) if isinstance(l, torch.nn.Conv2d)
    ][-args.layers :]
    geometry = conv_geometry(model.features)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {}
    for entry in entries:
        flip = bool(entry.get("flip", False)) or entry["image_id"] in flip_ids
        blob = export_image(model, geometry, conv_indices, entry, flip)
        path = out_dir / f"{entry['image_id']}.fmap"
        path.write_bytes(blob)
        manifest[entry["image_id"]] = {
            "file": path.name,
            "width": INPUT_SIDE,
            "height": INPUT_SIDE,
            "flipped": flip,
            "sha256": hashlib.sha256(blob).hexdigest(),
        }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=1))
    print(f"exported {len(entries)} images -> {out_dir}")


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--images", required=True, help="JSONL image list")
    parser.add_argument("--layers", type=int, default=9, help="last K conv-layers")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--flip-list", default=None, help="file of image ids to mirror")
    parser.add_argument("--weights", default=None, help="state-dict file (optional)")
    run(parser.parse_args(argv))


if __name__ == "__main__":
    main(sys.argv[1:])
