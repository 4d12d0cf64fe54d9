"""Self-describing network checkpoint container.

Byte layout (all integers little-endian):

    offset 0   : 8-byte magic ``ALTNNET1``
    offset 8   : u32 header length ``L``
    offset 12  : ``L`` bytes of UTF-8 JSON header with sorted keys:
                 ``{"format_version": 1, "dtype": "<f8",
                    "nets": [{"name", "layers": [...], "param_shapes": [...]}],
                    "payload_bytes": N, "payload_crc32": C, "meta": {...}}``
    offset 12+L: ``N`` bytes of payload — for each net in listed order, for
                 each layer in order, each parameter array in insertion order
                 (weights then bias), raw little-endian float64, C order.

The header fully determines how to rebuild each network, so files are
readable without knowing the producing configuration. Unknown versions and
truncated or corrupt payloads are rejected.
"""

from __future__ import annotations

import json
import struct
import zlib

import numpy as np

from .network import Network, network_from_descriptors

MAGIC = b"ALTNNET1"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_networks(path, nets: dict[str, Network], meta: dict | None = None) -> None:
    parts = []
    net_entries = []
    for name, net in nets.items():
        shapes = []
        for _, arr in net.parameters():
            shapes.append(list(arr.shape))
            parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        net_entries.append({"name": name, "layers": net.descriptors(), "param_shapes": shapes})
    payload = b"".join(parts)
    header = {
        "format_version": FORMAT_VERSION,
        "dtype": "<f8",
        "nets": net_entries,
        "payload_bytes": len(payload),
        "payload_crc32": zlib.crc32(payload),
        "meta": meta or {},
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(hbytes)))
        fh.write(hbytes)
        fh.write(payload)


def load_networks(path):
    """Returns (nets, meta) where nets maps name -> Network."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 12 or raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a network checkpoint (bad magic)")
    (hlen,) = struct.unpack("<I", raw[8:12])
    if len(raw) < 12 + hlen:
        raise CheckpointError(f"{path}: truncated header at byte {len(raw)} (need {12 + hlen})")
    header = json.loads(raw[12:12 + hlen].decode())
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {header.get('format_version')}")
    payload = raw[12 + hlen:]
    if len(payload) != header["payload_bytes"]:
        raise CheckpointError(
            f"{path}: truncated payload at byte {12 + hlen + len(payload)}"
            f" (expected {header['payload_bytes']} payload bytes, got {len(payload)})")
    if zlib.crc32(payload) != header["payload_crc32"]:
        raise CheckpointError(f"{path}: payload checksum mismatch")
    nets: dict[str, Network] = {}
    offset = 0
    for entry in header["nets"]:
        net = network_from_descriptors(entry["layers"], name=entry["name"])
        arrays = []
        for shape in entry["param_shapes"]:
            n = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(payload, dtype="<f8", count=n, offset=offset).reshape(shape)
            arrays.append(arr.astype(np.float64))
            offset += n * 8
        net.set_params(arrays)
        nets[entry["name"]] = net
    return nets, header["meta"]


def save_network(path, net: Network, meta: dict | None = None) -> None:
    save_networks(path, {net.name: net}, meta=meta)


def load_network(path) -> Network:
    nets, _ = load_networks(path)
    if len(nets) != 1:
        raise CheckpointError(f"{path}: expected a single network, found {sorted(nets)}")
    return next(iter(nets.values()))
