"""Writer for the featstack binary feature-file format.

Layout (little-endian): 8-byte magic ``SNNFEAT1``, u32 n, u32 d,
length-prefixed UTF-8 network id and dataset id, then n*d row-major
float32 values. This module implements the documented byte format
directly so the extractor has no runtime dependency on the consumer
package.
"""

from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path

import numpy as np

FEATURE_MAGIC = b"SNNFEAT1"


def write_feature_file(network_id: str, dataset_id: str, data: np.ndarray, path) -> None:
    data = np.ascontiguousarray(data, dtype="<f4")
    if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
        raise ValueError("feature data must be a 2-D array with n >= 1 and d >= 1")
    if not np.isfinite(data).all():
        raise ValueError("feature data contains non-finite values")
    nid = network_id.encode("utf-8")
    did = dataset_id.encode("utf-8")
    blob = bytearray()
    blob += FEATURE_MAGIC
    blob += struct.pack("<II", data.shape[0], data.shape[1])
    blob += struct.pack("<I", len(nid)) + nid
    blob += struct.pack("<I", len(did)) + did
    blob += data.tobytes()

    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(bytes(blob))
        os.replace(tmp, path)
    except OSError:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise
