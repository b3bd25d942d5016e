"""Model files and annotation output files.

Model file layout::

    magic  b"RADPGN\\0\\0"
    u4     format version
    u4     header length in bytes
    bytes  UTF-8 JSON header: dims, vocabulary, parameter names and shapes,
           training configuration
    f4...  parameter tensors, row-major little-endian, in header order

Parameters are stored in single precision; a loaded model therefore differs
from the in-memory one by float32 rounding.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import MalformedRecord
from .model import ModelDims, PointerGenModel
from .vocab import SPECIALS, Vocab

MAGIC = b"RADPGN\x00\x00"
VERSION = 1


def save_model(model: PointerGenModel, path, train_config: Optional[dict] = None) -> None:
    names = sorted(model.params)
    header = {
        "dims": model.dims.to_dict(),
        "vocab": model.vocab.itos,
        "params": [[n, list(model.params[n].shape)] for n in names],
        "train_config": train_config or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(np.ascontiguousarray(model.params[n], dtype="<f4").tobytes())


def load_model(path) -> Tuple[PointerGenModel, dict]:
    """Return the model and the training configuration stored with it."""
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise MalformedRecord(f"{path}: not a model file")
    version, hlen = struct.unpack_from("<II", data, 8)
    if version != VERSION:
        raise MalformedRecord(f"{path}: unsupported model version {version}")
    header = json.loads(data[16 : 16 + hlen].decode("utf-8"))
    itos = header["vocab"]
    if tuple(itos[: len(SPECIALS)]) != SPECIALS:
        raise MalformedRecord(f"{path}: vocabulary does not start with the special tokens")
    vocab = Vocab(itos[len(SPECIALS) :])
    dims = ModelDims(**header["dims"])
    offset = 16 + hlen
    params: Dict[str, np.ndarray] = {}
    for name, shape in header["params"]:
        n = int(np.prod(shape))
        if offset + 4 * n > len(data):
            raise MalformedRecord(f"{path}: truncated at parameter {name}")
        params[name] = np.frombuffer(data, dtype="<f4", count=n, offset=offset).reshape(shape).astype(np.float64)
        offset += 4 * n
    if offset != len(data):
        raise MalformedRecord(f"{path}: {len(data) - offset} trailing bytes")
    return PointerGenModel(vocab, dims, params=params), header.get("train_config", {})


def write_annotations(path, rows: Iterable[Tuple[str, Sequence[str]]]) -> None:
    """One line per report: ``id<TAB>ann1; ann2``."""
    with open(path, "w", encoding="utf-8") as fh:
        for rid, anns in rows:
            fh.write(f"{rid}\t{'; '.join(anns)}\n")


def read_annotations(path) -> List[Tuple[str, List[str]]]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for i, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            if "\t" not in line:
                raise MalformedRecord("expected <id><TAB><annotations>", i)
            rid, rest = line.split("\t", 1)
            out.append((rid, [a.strip() for a in rest.split(";") if a.strip()]))
    return out
