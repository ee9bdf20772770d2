"""Checkpoint container: ``FCKP`` magic, u32 little-endian header length,
a UTF-8 JSON header, then one FTEN record per parameter.

The header holds the model config, free-form metadata, and a table of
``{name, shape, offset, nbytes}`` where ``offset`` counts from the first
byte after the header.
"""

import io
import json
import struct
from collections import OrderedDict

from ..tensor_core import FormatError, ften_bytes, read_ften
from .model import ModelConfig, validate_state

MAGIC = b"FCKP"


def checkpoint_bytes(state, config: ModelConfig, meta=None) -> bytes:
    payloads = []
    table = []
    offset = 0
    for name, arr in state.items():
        blob = ften_bytes(arr)
        table.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(blob)})
        payloads.append(blob)
        offset += len(blob)
    header = json.dumps({"config": config.to_dict(), "params": table, "meta": meta or {}},
                        sort_keys=True).encode()
    return MAGIC + struct.pack("<I", len(header)) + header + b"".join(payloads)


def save_checkpoint(path, state, config: ModelConfig, meta=None) -> None:
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(state, config, meta))


def load_checkpoint(path):
    """Returns ``(state, config, meta)``."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise FormatError(f"{path}: not a checkpoint (bad magic)")
    (hlen,) = struct.unpack("<I", data[4:8])
    try:
        header = json.loads(data[8:8 + hlen])
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: corrupt header: {exc}") from None
    body = data[8 + hlen:]
    config = ModelConfig.from_dict(header["config"])
    state = OrderedDict()
    for entry in header["params"]:
        chunk = body[entry["offset"]:entry["offset"] + entry["nbytes"]]
        arr = read_ften(io.BytesIO(chunk))
        if list(arr.shape) != entry["shape"]:
            raise FormatError(f"{path}: parameter {entry['name']} shape disagrees with header")
        state[entry["name"]] = arr
    validate_state(state, config)
    return state, config, header.get("meta", {})
