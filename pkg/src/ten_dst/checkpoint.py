"""Parameter checkpoint files.

Layout (all integers little-endian)::

    8 bytes   magic  b"TENCKPT\\n"
    4 bytes   uint32 format version (currently 1)
    8 bytes   uint64 header length N
    N bytes   UTF-8 JSON header
    ...       float64 little-endian row-major data, arrays back to back

The header holds ``"arrays"``: a list of ``{"name", "shape", "offset"}``
(offset in float64 elements from the start of the data block) and ``"meta"``:
the ontology, vocabulary token list, model config and training metadata.
Files are byte-identical for identical parameters and metadata.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .corpus import OOV, Vocab
from .model import ModelConfig, ModelParams
from .state import Ontology

MAGIC = b"TENCKPT\n"
VERSION = 1


class CheckpointError(ValueError):
    pass


def write_arrays(path, arrays: Mapping[str, np.ndarray], meta: dict) -> None:
    entries, offset = [], 0
    for name, a in arrays.items():
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        offset += int(a.size)
    header = json.dumps({"arrays": entries, "meta": meta}, sort_keys=True).encode("utf-8")
    with Path(path).open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(header)))
        fh.write(header)
        for a in arrays.values():
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def read_arrays(path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"{path}: no such checkpoint")
    raw = path.read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack("<IQ", raw[8:20])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(raw[20:20 + hlen].decode("utf-8"))
    data = np.frombuffer(raw, dtype="<f8", offset=20 + hlen)
    arrays = {}
    for e in header["arrays"]:
        n = int(np.prod(e["shape"], dtype=np.int64))
        arrays[e["name"]] = data[e["offset"]:e["offset"] + n].astype(np.float64).reshape(e["shape"])
    return arrays, header["meta"]


def save_checkpoint(params: ModelParams, path, **meta) -> None:
    full_meta = {
        "ontology": params.ontology.to_json(),
        "vocab": params.vocab.tokens,
        "model": vars(params.config).copy(),
    }
    full_meta.update(meta)
    arrays = {name: t.value for name, t in params.named_parameters().items()}
    write_arrays(path, arrays, full_meta)


def load_checkpoint(path) -> tuple[ModelParams, dict]:
    """Rebuild the parameters stored in ``path``; returns ``(params, meta)``."""
    arrays, meta = read_arrays(path)
    ontology = Ontology.from_json(meta["ontology"])
    vocab = Vocab(meta["vocab"])
    if vocab.tokens != meta["vocab"] or meta["vocab"][0] != OOV:
        raise CheckpointError(f"{path}: stored vocabulary is not in canonical order")
    params = ModelParams.init(ontology, vocab, ModelConfig(**meta["model"]))
    load_into(params, arrays, source=str(path))
    return params, meta


def load_into(params: ModelParams, arrays: Mapping[str, np.ndarray],
              names: Iterable[str] | None = None, source: str = "checkpoint") -> list[str]:
    """Copy stored arrays into ``params`` (all names, or just ``names``).

    Raises :class:`CheckpointError` naming the offending parameter on a
    missing entry or a shape mismatch. Returns the names copied.
    """
    named = params.named_parameters()
    wanted = list(named) if names is None else list(names)
    for name in wanted:
        if name not in named:
            raise CheckpointError(f"{source}: model has no parameter {name!r}")
        if name not in arrays:
            raise CheckpointError(f"{source}: parameter {name!r} missing")
        if arrays[name].shape != named[name].shape:
            raise CheckpointError(
                f"{source}: parameter {name!r} has shape {arrays[name].shape}, "
                f"model expects {named[name].shape}")
    for name in wanted:
        named[name].value = np.array(arrays[name], dtype=np.float64)
        named[name].grad = np.zeros_like(named[name].value)
    return wanted
