"""Tensor-file and pair-manifest I/O.

Dense arrays travel as NPY version 1.0 files: 6-byte magic, version,
little-endian uint16 header length, an ASCII dict header padded to a
64-byte boundary, then the row-major payload. Only float32, uint8 and
int32 payloads are accepted. Manifests are UTF-8 JSON with file paths
relative to the manifest's directory.
"""

from __future__ import annotations

import ast
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import (
    BadHeaderError,
    BadMagicError,
    MissingFileError,
    ShapeMismatchError,
    UnsupportedDtypeError,
    ValueOutOfRangeError,
)

MAGIC = b"\x93NUMPY"
_VERSION = b"\x01\x00"

# descr accepted on read / emitted on write, keyed by canonical dtype
_DESCR_FOR_DTYPE = {
    np.dtype(np.float32): "<f4",
    np.dtype(np.uint8): "|u1",
    np.dtype(np.int32): "<i4",
}
_DTYPE_FOR_DESCR = {v: k for k, v in _DESCR_FOR_DTYPE.items()}

# exporters may overshoot [0, 1] by float round-off; anything worse is a bug
SCORE_TOLERANCE = 1e-6


def write_dense_array(path: str | Path, arr: np.ndarray) -> None:
    """Write ``arr`` as an NPY 1.0 file with a deterministic header."""
    arr = np.asarray(arr)  # tobytes() below emits C order for any strides
    if arr.dtype not in _DESCR_FOR_DTYPE:
        raise UnsupportedDtypeError(f"cannot write dtype {arr.dtype}")
    if arr.dtype == np.float32 and not np.all(np.isfinite(arr)):
        raise ValueOutOfRangeError("refusing to write non-finite float payload")
    descr = _DESCR_FOR_DTYPE[arr.dtype]
    header = "{'descr': '%s', 'fortran_order': False, 'shape': %s, }" % (
        descr,
        repr(arr.shape),
    )
    # pad with spaces so magic+version+len+header is a multiple of 64,
    # newline-terminated like the format requires
    unpadded = len(MAGIC) + 2 + 2 + len(header) + 1
    header = header + " " * (-unpadded % 64) + "\n"
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_VERSION)
        fh.write(struct.pack("<H", len(header)))
        fh.write(header.encode("ascii"))
        fh.write(arr.tobytes())


def read_dense_array(path: str | Path) -> np.ndarray:
    """Read an NPY 1.0 file, validating magic, header, dtype and size."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < len(MAGIC) or not data.startswith(MAGIC):
        raise BadMagicError(f"{path}: not a tensor file")
    if len(data) < 10:
        raise BadHeaderError(f"{path}: truncated header")
    major, minor = data[6], data[7]
    if (major, minor) != (1, 0):
        raise BadHeaderError(f"{path}: unsupported format version {major}.{minor}")
    (hlen,) = struct.unpack("<H", data[8:10])
    if len(data) < 10 + hlen:
        raise BadHeaderError(f"{path}: truncated header")
    try:
        meta = ast.literal_eval(data[10 : 10 + hlen].decode("ascii"))
    except (ValueError, SyntaxError, UnicodeDecodeError) as exc:
        raise BadHeaderError(f"{path}: unparsable header: {exc}") from exc
    if not isinstance(meta, dict) or set(meta) != {"descr", "fortran_order", "shape"}:
        raise BadHeaderError(f"{path}: malformed header dict {meta!r}")
    if meta["fortran_order"] is not False:
        raise BadHeaderError(f"{path}: only row-major payloads are supported")
    shape = meta["shape"]
    if not isinstance(shape, tuple) or not all(
        isinstance(d, int) and d >= 0 for d in shape
    ):
        raise BadHeaderError(f"{path}: bad shape {shape!r}")
    descr = meta["descr"]
    if descr not in _DTYPE_FOR_DESCR:
        raise UnsupportedDtypeError(f"{path}: unsupported dtype {descr!r}")
    dtype = _DTYPE_FOR_DESCR[descr]
    count = int(np.prod(shape, dtype=np.int64)) if shape else 1
    payload = data[10 + hlen :]
    if len(payload) != count * dtype.itemsize:
        raise ShapeMismatchError(
            f"{path}: payload is {len(payload)} bytes, header implies "
            f"{count * dtype.itemsize}"
        )
    arr = np.frombuffer(payload, dtype=dtype).reshape(shape).copy()
    if dtype == np.float32 and not np.all(np.isfinite(arr)):
        raise ValueOutOfRangeError(f"{path}: payload contains NaN/Inf")
    return arr


def _clamp_unit(arr: np.ndarray, what: str) -> np.ndarray:
    """Clamp score-like values to [0, 1], rejecting real violations."""
    lo, hi = float(arr.min(initial=0.0)), float(arr.max(initial=0.0))
    if lo < -SCORE_TOLERANCE or hi > 1.0 + SCORE_TOLERANCE:
        raise ValueOutOfRangeError(f"{what}: values in [{lo}, {hi}] exceed [0, 1]")
    return np.clip(arr, 0.0, 1.0)


@dataclass(frozen=True)
class InstanceRecord:
    """One retained instance: a soft mask at native resolution plus its confidence."""

    mask: np.ndarray
    confidence: float


@dataclass(frozen=True)
class DateInputs:
    """All per-date inputs resolved into memory."""

    instances: list[list[InstanceRecord]]  # one list per vocabulary prompt
    dense: np.ndarray  # (K, H, W) float32, zero where the branch is absent
    tokens: np.ndarray  # (h, w, D) float32
    image: np.ndarray  # (H, W, 3) float32, values in [0, 255]


@dataclass(frozen=True)
class PairManifest:
    """Parsed manifest; file paths are kept relative to ``base_dir``."""

    pair_id: str
    height: int
    width: int
    vocabulary: list[str]
    queried_prompt_sets: dict[str, list[int]]
    dates: dict  # raw per-date file-reference dicts, keys "a" and "b"
    base_dir: Path


@dataclass(frozen=True)
class PairBundle:
    manifest: PairManifest
    a: DateInputs
    b: DateInputs


def read_manifest(path: str | Path) -> PairManifest:
    """Parse and structurally validate a pair manifest."""
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"manifest not found: {path}")
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    try:
        height = int(data["image_height"])
        width = int(data["image_width"])
        vocabulary = list(data["vocabulary"])
        prompt_sets = {
            str(name): [int(i) for i in idx]
            for name, idx in data["queried_prompt_sets"].items()
        }
        dates = data["dates"]
    except (KeyError, TypeError, ValueError) as exc:
        raise BadHeaderError(f"{path}: malformed manifest: {exc}") from exc
    if height <= 0 or width <= 0 or not vocabulary:
        raise BadHeaderError(f"{path}: non-positive dimensions or empty vocabulary")
    k = len(vocabulary)
    for name, idx in prompt_sets.items():
        bad = [i for i in idx if not 0 <= i < k]
        if bad:
            raise ValueOutOfRangeError(
                f"{path}: prompt indices {bad} for class {name!r} exceed K={k}"
            )
    if set(dates) != {"a", "b"}:
        raise BadHeaderError(f"{path}: manifest must reference dates 'a' and 'b'")
    pair_id = str(data.get("pair_id") or "")
    if not pair_id:
        pair_id = path.parent.name if path.stem == "manifest" else path.stem
    return PairManifest(
        pair_id=pair_id,
        height=height,
        width=width,
        vocabulary=vocabulary,
        queried_prompt_sets=prompt_sets,
        dates=dates,
        base_dir=path.parent,
    )


def read_image(path: str | Path) -> np.ndarray:
    """Read an RGB image as float32 (H, W, 3) in [0, 255] from PNG or NPY."""
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"image not found: {path}")
    if path.suffix.lower() == ".png":
        with Image.open(path) as img:
            arr = np.asarray(img.convert("RGB"), dtype=np.float32)
    else:
        arr = read_dense_array(path).astype(np.float32)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ShapeMismatchError(f"{path}: expected (H, W, 3) image, got {arr.shape}")
    return arr


def _load_date(manifest: PairManifest, key: str) -> DateInputs:
    spec = manifest.dates[key]
    h, w, k = manifest.height, manifest.width, len(manifest.vocabulary)
    base = manifest.base_dir

    def resolve(rel: str) -> Path:
        p = base / rel
        if not p.is_file():
            raise MissingFileError(f"{manifest.pair_id}: missing file {p}")
        return p

    inst_refs = spec.get("instances") or [[] for _ in range(k)]
    if len(inst_refs) != k:
        raise ShapeMismatchError(
            f"{manifest.pair_id}/{key}: {len(inst_refs)} instance lists for K={k}"
        )
    instances: list[list[InstanceRecord]] = []
    for prompt_idx, records in enumerate(inst_refs):
        loaded = []
        for rec in records:
            mask = read_dense_array(resolve(rec["mask"])).astype(np.float32)
            if mask.ndim != 2 or min(mask.shape) < 1:
                raise ShapeMismatchError(
                    f"{manifest.pair_id}/{key}: instance mask for prompt "
                    f"{prompt_idx} has shape {mask.shape}"
                )
            mask = _clamp_unit(mask, f"{manifest.pair_id}/{key} instance mask")
            conf = float(rec["confidence"])
            if not -SCORE_TOLERANCE <= conf <= 1.0 + SCORE_TOLERANCE:
                raise ValueOutOfRangeError(
                    f"{manifest.pair_id}/{key}: confidence {conf} outside [0, 1]"
                )
            loaded.append(InstanceRecord(mask=mask, confidence=min(max(conf, 0.0), 1.0)))
        instances.append(loaded)

    dense = np.zeros((k, h, w), dtype=np.float32)
    dense_refs = spec.get("dense")
    if dense_refs is not None:
        if len(dense_refs) != k:
            raise ShapeMismatchError(
                f"{manifest.pair_id}/{key}: {len(dense_refs)} dense maps for K={k}"
            )
        for i, ref in enumerate(dense_refs):
            if ref is None:
                continue
            d = read_dense_array(resolve(ref)).astype(np.float32)
            if d.shape != (h, w):
                raise ShapeMismatchError(
                    f"{manifest.pair_id}/{key}: dense map {i} is {d.shape}, "
                    f"expected {(h, w)}"
                )
            dense[i] = _clamp_unit(d, f"{manifest.pair_id}/{key} dense map {i}")

    tokens = read_dense_array(resolve(spec["tokens"])).astype(np.float32)
    if tokens.ndim != 3:
        raise ShapeMismatchError(
            f"{manifest.pair_id}/{key}: token grid must be (h, w, D), "
            f"got {tokens.shape}"
        )

    image = read_image(resolve(spec["image"]))
    if image.shape[:2] != (h, w):
        raise ShapeMismatchError(
            f"{manifest.pair_id}/{key}: image is {image.shape[:2]}, expected {(h, w)}"
        )
    return DateInputs(instances=instances, dense=dense, tokens=tokens, image=image)


def load_pair_bundle(manifest: PairManifest) -> PairBundle:
    """Resolve every per-date input into memory, or fail with a typed error."""
    a = _load_date(manifest, "a")
    b = _load_date(manifest, "b")
    if a.tokens.shape != b.tokens.shape:
        raise ShapeMismatchError(
            f"{manifest.pair_id}: token grids disagree across dates: "
            f"{a.tokens.shape} vs {b.tokens.shape}"
        )
    return PairBundle(manifest=manifest, a=a, b=b)
