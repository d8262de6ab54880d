"""Versioned binary model container with a plain-text header.

Layout: an ASCII magic/version line, one JSON header line naming every array
and its shape plus a SHA-256 of the payload, then the arrays themselves as
little-endian float64 in header order.  Round trips are bit-exact; scalars
travel in the JSON header (Python's float repr round-trips exactly).
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .errors import ChecksumError, FormatError, VersionError
from .model import Layer, ReduNetModel

__all__ = ["save_model", "load_model", "FORMAT_VERSION"]

MAGIC = b"redunet-model"
FORMAT_VERSION = 1
META_ARRAY_PREFIX = "meta:"


def _atomic_write(path: Path, data: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _collect_arrays(model: ReduNetModel) -> list[tuple[str, np.ndarray]]:
    # every float in the container lives in the binary payload; the JSON
    # header carries only structure (names, shapes, registry, counts)
    arrays: list[tuple[str, np.ndarray]] = [
        ("coding_scalars", np.array([model.epsilon, model.lam])),
        ("etas", np.array([layer.eta for layer in model.layers])),
        ("layer_alpha", np.array([layer.alpha for layer in model.layers])),
    ]
    for i, layer in enumerate(model.layers):
        arrays.append((f"layer{i}/E", layer.E))
        arrays.append((f"layer{i}/C", np.stack(layer.C)))
        arrays.append((f"layer{i}/gamma", layer.gamma))
        arrays.append((f"layer{i}/alphas", layer.alphas))
    arrays.append(("final_covariances", np.stack(model.final_covariances)))
    for key in sorted(k for k, v in model.meta.items() if isinstance(v, np.ndarray)):
        arrays.append((META_ARRAY_PREFIX + key, model.meta[key]))
    return arrays


def save_model(model: ReduNetModel, path) -> None:
    """Write the model container atomically (temp file + rename)."""
    path = Path(path)
    arrays = _collect_arrays(model)
    payload = b"".join(
        np.ascontiguousarray(a, dtype="<f8").tobytes() for _, a in arrays
    )
    header = {
        "dim": int(model.dim),
        "depth": int(model.depth),
        "registry": model.registry,
        "counts": [int(c) for c in model.counts],
        "meta": {k: v for k, v in model.meta.items() if not isinstance(v, np.ndarray)},
        "arrays": [[name, list(a.shape)] for name, a in arrays],
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    head = MAGIC + b" " + str(FORMAT_VERSION).encode() + b"\n"
    head += json.dumps(header, sort_keys=True).encode() + b"\n"
    _atomic_write(path, head + payload)


def load_model(path) -> ReduNetModel:
    """Read a model container, verifying version and payload checksum."""
    path = Path(path)
    blob = path.read_bytes()
    nl1 = blob.find(b"\n")
    if nl1 < 0 or not blob[:nl1].startswith(MAGIC + b" "):
        raise FormatError(f"{path}: not a redunet model container")
    try:
        version = int(blob[len(MAGIC) + 1 : nl1])
    except ValueError:
        raise FormatError(f"{path}: malformed version field") from None
    if version != FORMAT_VERSION:
        raise VersionError(
            f"{path}: container version {version}, this build reads {FORMAT_VERSION}"
        )
    nl2 = blob.find(b"\n", nl1 + 1)
    if nl2 < 0:
        raise FormatError(f"{path}: missing header line")
    try:
        header = json.loads(blob[nl1 + 1 : nl2])
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: malformed JSON header ({exc})") from None

    payload = blob[nl2 + 1 :]
    digest = hashlib.sha256(payload).hexdigest()
    if digest != header.get("payload_sha256"):
        raise ChecksumError(
            f"{path}: payload checksum {digest[:12]}... does not match header"
        )

    arrays: dict[str, np.ndarray] = {}
    offset = 0
    for name, shape in header["arrays"]:
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        nbytes = count * 8
        if offset + nbytes > len(payload):
            raise FormatError(f"{path}: payload too short for array {name!r}")
        arrays[name] = (
            np.frombuffer(payload, dtype="<f8", count=count, offset=offset)
            .reshape(shape)
            .copy()
        )
        offset += nbytes
    if offset != len(payload):
        raise FormatError(f"{path}: {len(payload) - offset} trailing payload bytes")

    dim = int(header["dim"])
    depth = int(header["depth"])
    try:
        epsilon, lam = arrays["coding_scalars"]
        etas = arrays["etas"]
        layer_alpha = arrays["layer_alpha"]
        layers = [
            Layer(
                eta=float(etas[i]),
                E=arrays[f"layer{i}/E"],
                C=list(arrays[f"layer{i}/C"]),
                gamma=arrays[f"layer{i}/gamma"],
                alpha=float(layer_alpha[i]),
                alphas=arrays[f"layer{i}/alphas"],
            )
            for i in range(depth)
        ]
        final_covariances = list(arrays["final_covariances"])
    except KeyError as exc:
        raise FormatError(f"{path}: header is missing array {exc}") from None
    meta = dict(header.get("meta", {}))
    for name, arr in arrays.items():
        if name.startswith(META_ARRAY_PREFIX):
            meta[name[len(META_ARRAY_PREFIX) :]] = arr
    model = ReduNetModel(
        dim=dim,
        epsilon=float(epsilon),
        lam=float(lam),
        registry=list(header["registry"]),
        counts=np.array(header["counts"], dtype=np.int64),
        layers=layers,
        final_covariances=final_covariances,
        meta=meta,
    )
    model.validate()
    return model
