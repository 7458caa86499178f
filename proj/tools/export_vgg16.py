"""Convert torchvision VGG-16 weights into the archive layout the backbone loader reads.

    python tools/export_vgg16.py --out vgg16.mda [--state-dict vgg16.pth]

Without --state-dict the torchvision ImageNet weights are fetched (needs network).
"""

import argparse
import json
import struct
import sys
import zlib

import numpy as np

MAGIC = b"MDAARCH\n"
FORMAT_VERSION = 1

# torchvision `features` indices of the 13 conv layers, grouped by pooling stage.
STAGES = [
    [("conv1_1", 0), ("conv1_2", 2)],
    [("conv2_1", 5), ("conv2_2", 7)],
    [("conv3_1", 10), ("conv3_2", 12), ("conv3_3", 14)],
    [("conv4_1", 17), ("conv4_2", 19), ("conv4_3", 21)],
    [("conv5_1", 24), ("conv5_2", 26), ("conv5_3", 28)],
]


def write_archive(path, kind, arrays, meta=None):
    """arrays: list of (name, ndarray); stored as little-endian float64."""
    entries, blobs, offset, total = [], [], 0, 0
    for name, a in arrays:
        a = np.ascontiguousarray(a, dtype="<f8")
        blob = a.tobytes()
        entries.append({"name": name, "shape": list(a.shape), "offset": offset, "count": int(a.size),
                        "crc32": zlib.crc32(blob)})
        total = zlib.crc32(blob, total)
        blobs.append(blob)
        offset += int(a.size)
    manifest = {"format_version": FORMAT_VERSION, "kind": kind, "meta": meta or {}, "arrays": entries,
                "payload_count": offset, "checksum": total}
    text = json.dumps(manifest, separators=(",", ":")).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(text)))
        f.write(text)
        for blob in blobs:
            f.write(blob)


def vgg16_arrays(state_dict):
    """OIHW torch kernels -> (kh, kw, Cin, Cout) arrays named conv{s}_{i}.w / .b."""
    out = []
    for stage in STAGES:
        for name, idx in stage:
            w = np.asarray(state_dict[f"features.{idx}.weight"], dtype=np.float64)
            b = np.asarray(state_dict[f"features.{idx}.bias"], dtype=np.float64)
            out.append((name + ".w", w.transpose(2, 3, 1, 0)))
            out.append((name + ".b", b))
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", required=True)
    ap.add_argument("--state-dict", help="torchvision vgg16 state dict (.pth)")
    args = ap.parse_args(argv)

    import torch

    if args.state_dict:
        sd = torch.load(args.state_dict, map_location="cpu")
    else:
        from torchvision.models import VGG16_Weights, vgg16

        sd = vgg16(weights=VGG16_Weights.IMAGENET1K_V1).state_dict()
    sd = {k: v.numpy() for k, v in sd.items()}
    write_archive(args.out, "vgg16", vgg16_arrays(sd), {"provenance": "pretrained", "depth": 5})
    print(args.out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
