"""Feature vector -> 130-dim [0, 1] vector -> 12x12 grayscale image.

Layout: 36 min-max normalized numeric attributes (schema order), then the
one-hot blocks for protocol (4), service (79) and connection state (11).
"""

from __future__ import annotations

import json
import struct
import warnings
from collections import Counter
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .flows import FEATURE_NAMES, FeatureVector39
from .seeding import sha256_hex

TOTAL_DIMS = 130
IMAGE_SIDE = 12
SCHEMA_VERSIONS = (1,)
OTHER_TOKENS = {"protocol": "other", "service": "other", "flag": "oth"}
LABEL_CODES = {"normal": 0, "anomalous": 1}
LABEL_NAMES = ("normal", "anomalous")

_NAME_TO_INDEX = {name: i for i, name in enumerate(FEATURE_NAMES, 1)}


class SchemaError(ValueError):
    pass


class DatasetFormatError(ValueError):
    pass


class UnknownTokenWarning(UserWarning):
    pass


@dataclass(frozen=True)
class FeatureSchema:
    version: int
    numeric: tuple
    protocol: tuple
    service: tuple
    flag: tuple

    @property
    def total_dims(self) -> int:
        return len(self.numeric) + len(self.protocol) + len(self.service) + len(self.flag)

    @property
    def numeric_indices(self) -> tuple:
        return tuple(_NAME_TO_INDEX[n] for n in self.numeric)

    @property
    def blocks(self) -> tuple:
        """(feature index, vocabulary, offset) for each one-hot block."""
        off = len(self.numeric)
        out = []
        for idx, vocab in ((2, self.protocol), (3, self.service), (4, self.flag)):
            out.append((idx, vocab, off))
            off += len(vocab)
        return tuple(out)

    def as_dict(self) -> dict:
        return {
            "version": self.version,
            "numeric": list(self.numeric),
            "protocol": list(self.protocol),
            "service": list(self.service),
            "flag": list(self.flag),
        }

    @property
    def hash(self) -> str:
        return sha256_hex(self.as_dict())


def schema_from_dict(d: dict) -> FeatureSchema:
    try:
        schema = FeatureSchema(
            version=d["version"],
            numeric=tuple(d["numeric"]),
            protocol=tuple(d["protocol"]),
            service=tuple(d["service"]),
            flag=tuple(d["flag"]),
        )
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"schema missing field: {exc}") from exc
    if schema.version not in SCHEMA_VERSIONS:
        raise SchemaError(f"unknown schema version {schema.version!r}")
    for name in ("numeric", "protocol", "service", "flag"):
        vals = getattr(schema, name)
        dup = [v for v, c in Counter(vals).items() if c > 1]
        if dup:
            raise SchemaError(f"duplicate token(s) in {name}: {dup}")
    unknown = [n for n in schema.numeric if n not in _NAME_TO_INDEX or _NAME_TO_INDEX[n] in (2, 3, 4)]
    if unknown:
        raise SchemaError(f"unknown numeric feature name(s): {unknown}")
    for block, token in OTHER_TOKENS.items():
        if token not in getattr(schema, block):
            raise SchemaError(f"{block} vocabulary lacks the fallback token {token!r}")
    if schema.total_dims != TOTAL_DIMS:
        raise SchemaError(
            f"schema totals {schema.total_dims} dims "
            f"({len(schema.numeric)}+{len(schema.protocol)}+{len(schema.service)}+{len(schema.flag)}), "
            f"expected {TOTAL_DIMS}"
        )
    return schema


def load_schema(path=None) -> FeatureSchema:
    """Parse and validate a schema file; ``None`` loads the bundled default."""
    if path is None:
        text = resources.files("flowsense").joinpath("data/schema_v1.json").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"schema is not valid JSON: {exc}") from exc
    return schema_from_dict(d)


@dataclass(frozen=True)
class Calibration:
    mins: np.ndarray
    maxs: np.ndarray
    schema_hash: str

    def to_json(self) -> str:
        return json.dumps({"schema_hash": self.schema_hash, "min": [float(v) for v in self.mins],
                           "max": [float(v) for v in self.maxs]}, indent=1) + "\n"

    @classmethod
    def from_json(cls, text: str) -> Calibration:
        d = json.loads(text)
        return cls(np.array(d["min"], dtype=np.float64), np.array(d["max"], dtype=np.float64), d["schema_hash"])

    @property
    def hash(self) -> str:
        return sha256_hex(self.to_json().encode())

    def save(self, path):
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> Calibration:
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def _numeric_matrix(vectors: Sequence[FeatureVector39], schema: FeatureSchema) -> np.ndarray:
    idx = schema.numeric_indices
    return np.array([[fv.values[i - 1] for i in idx] for fv in vectors], dtype=np.float64)


def fit_normalizer(vectors: Sequence[FeatureVector39], schema: FeatureSchema) -> Calibration:
    """Per-feature min/max over the training vectors; constant features get max = min + 1."""
    if len(vectors) == 0:
        raise ValueError("cannot calibrate on an empty training set")
    m = _numeric_matrix(vectors, schema)
    lo, hi = m.min(axis=0), m.max(axis=0)
    hi = np.where(hi > lo, hi, lo + 1.0)
    return Calibration(lo, hi, schema.hash)


def _check_calib(schema: FeatureSchema, calib: Calibration):
    if calib.schema_hash != schema.hash:
        raise SchemaError("calibration was fitted under a different schema")


def encode_vector(fv: FeatureVector39, schema: FeatureSchema, calib: Calibration,
                  unknown: Counter | None = None) -> np.ndarray:
    """130 float32 values in [0, 1].

    Unknown symbolic tokens fall back to the block's "other" token, emit an
    UnknownTokenWarning and are tallied in ``unknown`` when given.
    """
    _check_calib(schema, calib)
    out = np.zeros(schema.total_dims, dtype=np.float64)
    n = len(schema.numeric)
    raw = np.array([fv.values[i - 1] for i in schema.numeric_indices], dtype=np.float64)
    out[:n] = np.clip((raw - calib.mins) / (calib.maxs - calib.mins), 0.0, 1.0)
    for (feat, vocab, off), block in zip(schema.blocks, ("protocol", "service", "flag")):
        token = str(fv.values[feat - 1]).lower()
        try:
            pos = vocab.index(token)
        except ValueError:
            warnings.warn(f"unknown {block} token {token!r}; using {OTHER_TOKENS[block]!r}",
                          UnknownTokenWarning, stacklevel=2)
            if unknown is not None:
                unknown[(block, token)] += 1
            pos = vocab.index(OTHER_TOKENS[block])
        out[off + pos] = 1.0
    return out.astype(np.float32)


def encode_all(vectors: Sequence[FeatureVector39], schema: FeatureSchema, calib: Calibration,
               unknown: Counter | None = None) -> np.ndarray:
    if not len(vectors):
        return np.zeros((0, schema.total_dims), dtype=np.float32)
    return np.stack([encode_vector(fv, schema, calib, unknown) for fv in vectors])


def to_image(vec) -> np.ndarray:
    """Zero-pad to 144 and reshape row-major to 12x12 (batched input keeps its leading axis)."""
    v = np.asarray(vec, dtype=np.float32)
    if v.shape[-1] != TOTAL_DIMS:
        raise ValueError(f"expected vectors of length {TOTAL_DIMS}, got {v.shape[-1]}")
    pad = [(0, 0)] * (v.ndim - 1) + [(0, IMAGE_SIDE * IMAGE_SIDE - TOTAL_DIMS)]
    return np.pad(v, pad).reshape(v.shape[:-1] + (IMAGE_SIDE, IMAGE_SIDE))


def from_image(img) -> np.ndarray:
    img = np.asarray(img)
    return img.reshape(img.shape[:-2] + (IMAGE_SIDE * IMAGE_SIDE,))[..., :TOTAL_DIMS]


def export_png(vec, path):
    """8-bit PNG of one sample, for inspection only."""
    from PIL import Image

    px = np.round(255.0 * np.clip(to_image(vec), 0.0, 1.0)).astype(np.uint8)
    Image.fromarray(px).save(path)  # uint8 2-D arrays become mode "L"


# ---------------------------------------------------------------------------
# FSDS dataset files

_MAGIC = b"FSDS"
_VERSION = 1
_HEADER = struct.Struct("<4sHIH")
_RECORD = np.dtype([("vec", "<f4", (TOTAL_DIMS,)), ("label", "u1")])


@dataclass
class EncodedDataset:
    x: np.ndarray  # (N, 130) float32
    y: np.ndarray  # (N,) uint8, 1 = anomalous
    schema_hash: str | None = None

    def __post_init__(self):
        self.x = np.ascontiguousarray(self.x, dtype=np.float32)
        self.y = np.asarray(self.y, dtype=np.uint8)
        if self.x.ndim != 2 or self.x.shape[1] != TOTAL_DIMS or len(self.y) != len(self.x):
            raise DatasetFormatError(f"bad dataset shapes x={self.x.shape} y={self.y.shape}")

    def __len__(self):
        return len(self.y)

    @property
    def images(self) -> np.ndarray:
        return to_image(self.x)[:, None, :, :]

    def subset(self, idx) -> EncodedDataset:
        return EncodedDataset(self.x[idx], self.y[idx], self.schema_hash)


def meta_path(path) -> Path:
    return Path(str(path) + ".meta.json")


def write_dataset(path, ds: EncodedDataset, calib_hash: str | None = None):
    rec = np.zeros(len(ds), dtype=_RECORD)
    rec["vec"] = ds.x
    rec["label"] = ds.y
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _VERSION, len(ds), TOTAL_DIMS))
        fh.write(rec.tobytes())
    meta = {"count": len(ds), "schema_hash": ds.schema_hash, "calib_hash": calib_hash}
    meta_path(path).write_text(json.dumps(meta, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def read_dataset(path) -> EncodedDataset:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise DatasetFormatError(f"{path}: truncated header")
    magic, version, count, veclen = _HEADER.unpack_from(data)
    if magic != _MAGIC:
        raise DatasetFormatError(f"{path}: bad magic {magic!r}")
    if version != _VERSION:
        raise DatasetFormatError(f"{path}: unsupported version {version}")
    if veclen != TOTAL_DIMS:
        raise DatasetFormatError(f"{path}: vector length {veclen}, expected {TOTAL_DIMS}")
    expected = _HEADER.size + count * _RECORD.itemsize
    if len(data) != expected:
        raise DatasetFormatError(f"{path}: expected {expected} bytes, got {len(data)}")
    rec = np.frombuffer(data, dtype=_RECORD, offset=_HEADER.size, count=count)
    if np.any(rec["label"] > 1):
        raise DatasetFormatError(f"{path}: label byte outside {{0, 1}}")
    schema_hash = None
    mp = meta_path(path)
    if mp.exists():
        schema_hash = json.loads(mp.read_text(encoding="utf-8")).get("schema_hash")
    return EncodedDataset(rec["vec"].copy(), rec["label"].copy(), schema_hash)
