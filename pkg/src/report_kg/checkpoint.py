"""Named-tensor checkpoint files.

Layout: a one-line magic+version header, a JSON metadata line listing tensor
names and shapes plus arbitrary model metadata, then the raw little-endian
float64 buffers concatenated in listing order.  Writing is fully
deterministic and values round-trip exactly.
"""

import json

import numpy as np

from .errors import DataError

MAGIC = b"RKGCKPT 1\n"


def save_checkpoint(path, tensors: dict, meta: dict | None = None):
    names = list(tensors)
    header = {
        "tensors": [{"name": n, "shape": list(np.asarray(tensors[n]).shape)}
                    for n in names],
        "meta": meta or {},
    }
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for n in names:
            arr = np.ascontiguousarray(np.asarray(tensors[n], dtype=np.float64))
            fh.write(arr.tobytes())


def load_checkpoint(path):
    """Returns (tensors: dict name -> ndarray, meta: dict)."""
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise DataError(f"{path}: not a checkpoint file (bad header)")
        header = json.loads(fh.readline().decode("utf-8"))
        tensors = {}
        for spec in header["tensors"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * 8)
            if len(buf) != count * 8:
                raise DataError(f"{path}: truncated tensor {spec['name']}")
            tensors[spec["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
        if fh.read(1):
            raise DataError(f"{path}: trailing bytes after last tensor")
    return tensors, header["meta"]
