"""Binary checkpoint container for network parameters and fitted solutions.

Layout (all integers little-endian):

    bytes 0..7    magic ``b"SPECCHK\\0"``
    byte  8       format version (currently 1)
    bytes 9..12   uint32 length of the JSON header
    ...           UTF-8 JSON header
    ...           raw float64 little-endian array payloads, concatenated in
                  the order listed by the header

The JSON header carries ``meta`` (arbitrary JSON-serializable metadata, e.g.
a network spec or solver diagnostics) and ``arrays``, a list of
``{"name": ..., "shape": [...]}`` entries in payload order.  Because payloads
are the raw float64 bytes, a save/load round trip is bit-exact.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"SPECCHK\0"
VERSION = 1


def save_arrays(path, named_arrays: list[tuple[str, np.ndarray]], meta: dict) -> None:
    """Write named float64 arrays plus metadata to ``path``."""
    header = {
        "meta": meta,
        "arrays": [{"name": n, "shape": list(a.shape)} for n, a in named_arrays],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(bytes([VERSION]))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for _, a in named_arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_arrays(path):
    """Read a checkpoint, returning ``(meta, dict_of_arrays)``."""
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file (bad magic)")
    if raw[8] != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {raw[8]}")
    (hlen,) = struct.unpack("<I", raw[9:13])
    header = json.loads(raw[13 : 13 + hlen].decode("utf-8"))
    offset = 13 + hlen
    arrays = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        buf = raw[offset : offset + nbytes]
        if len(buf) != nbytes:
            raise ValueError(f"{path}: truncated payload for array {entry['name']!r}")
        arrays[entry["name"]] = np.frombuffer(buf, dtype="<f8").astype(
            np.float64
        ).reshape(shape)
        offset += nbytes
    if offset != len(raw):
        raise ValueError(f"{path}: {len(raw) - offset} trailing bytes")
    return header["meta"], arrays


def network_to_entries(prefix: str, spec, params) -> tuple[dict, list]:
    """Flatten a network into (spec-metadata, named-array list) for a checkpoint."""
    from .nets import NetworkSpec  # local import to avoid cycle at module load

    assert isinstance(spec, NetworkSpec)
    meta = {
        "layer_dims": list(spec.layer_dims),
        "activations": list(spec.activations),
        "batch_norm": list(spec.batch_norm),
    }
    entries = []
    for k in range(spec.n_layers):
        entries.append((f"{prefix}.layer{k}.weight", params.weights[k]))
        entries.append((f"{prefix}.layer{k}.bias", params.biases[k]))
        if params.bn_scale[k] is not None:
            entries.append((f"{prefix}.layer{k}.bn_scale", params.bn_scale[k]))
            entries.append((f"{prefix}.layer{k}.bn_shift", params.bn_shift[k]))
            entries.append((f"{prefix}.layer{k}.bn_running_mean", params.bn_running_mean[k]))
            entries.append((f"{prefix}.layer{k}.bn_running_var", params.bn_running_var[k]))
    return meta, entries


def network_from_entries(meta: dict, arrays: dict, prefix: str):
    """Rebuild (spec, params) from checkpoint contents."""
    from .nets import NetworkParams, NetworkSpec

    spec = NetworkSpec(
        tuple(meta["layer_dims"]),
        tuple(meta["activations"]),
        tuple(meta["batch_norm"]),
    )
    weights, biases = [], []
    bn_scale, bn_shift, bn_rm, bn_rv = [], [], [], []
    for k in range(spec.n_layers):
        weights.append(arrays[f"{prefix}.layer{k}.weight"].copy())
        biases.append(arrays[f"{prefix}.layer{k}.bias"].copy())
        if spec.batch_norm[k]:
            bn_scale.append(arrays[f"{prefix}.layer{k}.bn_scale"].copy())
            bn_shift.append(arrays[f"{prefix}.layer{k}.bn_shift"].copy())
            bn_rm.append(arrays[f"{prefix}.layer{k}.bn_running_mean"].copy())
            bn_rv.append(arrays[f"{prefix}.layer{k}.bn_running_var"].copy())
        else:
            bn_scale.append(None)
            bn_shift.append(None)
            bn_rm.append(None)
            bn_rv.append(None)
    return spec, NetworkParams(weights, biases, bn_scale, bn_shift, bn_rm, bn_rv)


def save_network(path, spec, params) -> None:
    meta, entries = network_to_entries("net", spec, params)
    save_arrays(path, entries, {"kind": "network", "net": meta})


def load_network(path):
    meta, arrays = load_arrays(path)
    if meta.get("kind") != "network":
        raise ValueError(f"{path}: checkpoint holds {meta.get('kind')!r}, not a network")
    return network_from_entries(meta["net"], arrays, "net")
