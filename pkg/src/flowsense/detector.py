"""DNN / plain-CNN / split-attention classifiers, training, transfer learning
and the FSNT checkpoint format."""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .encoding import TOTAL_DIMS, EncodedDataset, to_image
from .nn import (
    ConvBlock,
    Dense,
    GlobalAvgPool,
    ReLU,
    Sequential,
    ShapeError,
    SplitAttention,
    Conv2d,
    sgd_step,
    softmax,
    softmax_cross_entropy,
)
from .seeding import canonical_json, derive_seed

ARCHS = ("dnn", "cnn", "resnest")
DEFAULT_FREEZE = {
    "resnest": ("stem", "block1"),
    "cnn": ("stem", "block1"),
    "dnn": ("fc1",),
}
_LAYER_NAMES = {
    "resnest": ("stem", "block1", "block2", "head"),
    "cnn": ("stem", "block1", "block2", "head"),
    "dnn": ("fc1", "fc2", "head"),
}


class HomogeneityError(ValueError):
    """Source and target datasets were encoded under different schemas."""


class SchemaMismatch(ValueError):
    pass


class TrainingDiverged(ArithmeticError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class Hyper:
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 1e-4
    batch_size: int = 32
    epochs: int = 30
    finetune_epochs: int = 15
    finetune_lr_scale: float = 0.1


@dataclass(frozen=True)
class ModelSpec:
    arch: str = "resnest"
    seed: int = 0
    hyper: Hyper = field(default_factory=Hyper)
    freeze: tuple | None = None  # None -> DEFAULT_FREEZE[arch]

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ValueError(f"unknown arch {self.arch!r}; choose from {ARCHS}")
        bad = [n for n in (self.freeze or ()) if n not in _LAYER_NAMES[self.arch]]
        if bad:
            raise ValueError(f"freeze names {bad} are not layers of {self.arch}")
        if self.hyper.batch_size < 1 or self.hyper.epochs < 0 or self.hyper.lr < 0:
            raise ValueError("invalid hyper-parameters")

    @property
    def freeze_layers(self) -> tuple:
        return DEFAULT_FREEZE[self.arch] if self.freeze is None else tuple(self.freeze)


@dataclass
class Model:
    arch: str
    net: Sequential
    schema_hash: str | None = None
    train_seed: int = 0
    epochs_done: int = 0

    @property
    def layer_names(self) -> tuple:
        return _LAYER_NAMES[self.arch]

    @property
    def wants_image(self) -> bool:
        return self.arch != "dnn"

    def prepare(self, vectors: np.ndarray) -> np.ndarray:
        """Map (N, 130) encoded vectors to this architecture's input."""
        v = np.asarray(vectors, dtype=np.float32)
        if v.ndim != 2 or v.shape[1] != TOTAL_DIMS:
            raise ShapeError(f"expected (N, {TOTAL_DIMS}) encoded vectors, got {v.shape}")
        return to_image(v)[:, None] if self.wants_image else v

    def check_input(self, x: np.ndarray):
        want = (1, 12, 12) if self.wants_image else (TOTAL_DIMS,)
        if x.shape[1:] != want:
            raise ShapeError(f"{self.arch} expects (N, {', '.join(map(str, want))}), got {x.shape}")

    def forward(self, x: np.ndarray) -> np.ndarray:
        self.check_input(x)
        return self.net.forward(x)

    def named_parameters(self) -> list[tuple[str, np.ndarray]]:
        return self.net.named_parameters()

    def layer_parameters(self, layer: str) -> list[tuple[str, np.ndarray]]:
        return [(n, p) for n, p in self.named_parameters() if n.split(".", 1)[0] == layer]

    def n_parameters(self) -> int:
        return sum(p.size for _, p in self.named_parameters())


def _resnest(rng):
    return Sequential([
        ("stem", Conv2d(1, 16, 3, 1, 1, rng)),
        ("stem_relu", ReLU()),
        ("block1", SplitAttention(16, 16, radix=2, stride=1, rng=rng)),
        ("block2", SplitAttention(16, 32, radix=2, stride=2, rng=rng)),
        ("pool", GlobalAvgPool()),
        ("head", Dense(32, 2, rng)),
    ])


def _cnn(rng):
    return Sequential([
        ("stem", Conv2d(1, 16, 3, 1, 1, rng)),
        ("stem_relu", ReLU()),
        ("block1", ConvBlock(16, 16, stride=1, rng=rng)),
        ("block2", ConvBlock(16, 32, stride=2, rng=rng)),
        ("pool", GlobalAvgPool()),
        ("head", Dense(32, 2, rng)),
    ])


def _dnn(rng):
    return Sequential([
        ("fc1", Dense(TOTAL_DIMS, 64, rng)),
        ("fc1_relu", ReLU()),
        ("fc2", Dense(64, 32, rng)),
        ("fc2_relu", ReLU()),
        ("head", Dense(32, 2, rng)),
    ])


_BUILDERS = {"resnest": _resnest, "cnn": _cnn, "dnn": _dnn}


def build_model(spec: ModelSpec, schema_hash: str | None = None) -> Model:
    if spec.arch not in _BUILDERS:
        raise ValueError(f"unknown arch {spec.arch!r}")
    rng = np.random.default_rng(derive_seed(spec.seed, f"init:{spec.arch}"))
    return Model(spec.arch, _BUILDERS[spec.arch](rng), schema_hash, spec.seed, 0)


# ---------------------------------------------------------------------------
# training


@dataclass
class History:
    epochs: list = field(default_factory=list)
    loss: list = field(default_factory=list)
    train_acc: list = field(default_factory=list)

    def extend(self, other: History):
        self.epochs += other.epochs
        self.loss += other.loss
        self.train_acc += other.train_acc

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("epoch", "loss", "train_acc"))
            for row in zip(self.epochs, self.loss, self.train_acc):
                w.writerow((row[0], format(row[1], ".9g"), format(row[2], ".9g")))


def train(model: Model, dataset: EncodedDataset, spec: ModelSpec, *, epochs: int | None = None,
          lr: float | None = None, frozen: tuple = (), stage: str = "train") -> History:
    """Mini-batch SGD with momentum; layers in ``frozen`` are not updated.

    The per-epoch shuffle comes from a generator seeded by (spec.seed, stage),
    so a run is fully determined by seed, data and spec.
    """
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    if not np.isin(dataset.y, (0, 1)).all():
        raise ValueError("labels must be binary (0 normal, 1 anomalous)")
    h = spec.hyper
    epochs = h.epochs if epochs is None else epochs
    lr = h.lr if lr is None else lr
    for name in frozen:
        if name not in model.layer_names:
            raise ValueError(f"cannot freeze unknown layer {name!r}")
    x = model.prepare(dataset.x)
    y = dataset.y.astype(np.int64)
    n = len(y)
    rng = np.random.default_rng(derive_seed(spec.seed, stage))
    names = [nm for nm, _ in model.named_parameters() if nm.split(".", 1)[0] not in frozen]
    params = dict(model.named_parameters())
    velocity = {nm: np.zeros_like(params[nm]) for nm in names}
    hist = History()
    for ep in range(epochs):
        order = rng.permutation(n)
        total_loss, correct = 0.0, 0
        for b0 in range(0, n, h.batch_size):
            idx = order[b0:b0 + h.batch_size]
            with np.errstate(over="ignore", invalid="ignore"):
                # a diverging run surfaces as a non-finite loss just below
                logits = model.net.forward(x[idx])
                loss, dlogits = softmax_cross_entropy(logits, y[idx])
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {model.epochs_done + 1}, batch {b0 // h.batch_size}")
            model.net.backward(dlogits.astype(logits.dtype))
            grads = dict(model.net.named_grads())
            sgd_step([params[nm] for nm in names], [grads[nm] for nm in names],
                     [velocity[nm] for nm in names], lr, h.momentum, h.weight_decay)
            total_loss += loss * len(idx)
            correct += int((logits.argmax(axis=1) == y[idx]).sum())
        model.epochs_done += 1
        hist.epochs.append(model.epochs_done)
        hist.loss.append(total_loss / n)
        hist.train_acc.append(correct / n)
    return hist


def finetune(model: Model, dataset: EncodedDataset, spec: ModelSpec, freeze: tuple | None = None,
             epochs: int | None = None, lr: float | None = None) -> History:
    """Continue training on ``dataset`` with ``freeze`` layers held fixed, by
    default for finetune_epochs at lr * finetune_lr_scale."""
    _check_schema(model, dataset, HomogeneityError)
    h = spec.hyper
    freeze = spec.freeze_layers if freeze is None else tuple(freeze)
    return train(model, dataset, spec,
                 epochs=h.finetune_epochs if epochs is None else epochs,
                 lr=h.lr * h.finetune_lr_scale if lr is None else lr,
                 frozen=freeze, stage="finetune")


def pretrain_then_finetune(spec: ModelSpec, source_ds: EncodedDataset, target_ds: EncodedDataset,
                           ) -> tuple[Model, History]:
    """Train on the source domain, then adapt to the target domain with the
    spec's freeze list held fixed."""
    if source_ds.schema_hash != target_ds.schema_hash:
        raise HomogeneityError(
            f"source schema {source_ds.schema_hash} != target schema {target_ds.schema_hash}")
    model = build_model(spec, source_ds.schema_hash)
    hist = train(model, source_ds, spec)
    hist.extend(finetune(model, target_ds, spec))
    return model, hist


# ---------------------------------------------------------------------------
# inference


def _check_schema(model: Model, ds: EncodedDataset, exc=SchemaMismatch):
    if model.schema_hash and ds.schema_hash and model.schema_hash != ds.schema_hash:
        raise exc(f"model schema {model.schema_hash[:12]} != dataset schema {ds.schema_hash[:12]}")


def predict(model: Model, sample: np.ndarray) -> tuple[int, float]:
    """(class, probability of that class) for one sample in the model's input
    shape; ties go to class 0 (normal)."""
    x = np.asarray(sample, dtype=np.float32)[None]
    probs = softmax(model.forward(x).astype(np.float64))[0]
    cls = int(np.argmax(probs))
    return cls, float(probs[cls])


def predict_batch(model: Model, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-by-row predict; results do not depend on how samples are batched."""
    classes = np.empty(len(x), dtype=np.int64)
    probs = np.empty(len(x), dtype=np.float64)
    for i in range(len(x)):
        classes[i], probs[i] = predict(model, x[i])
    return classes, probs


def predict_dataset(model: Model, ds: EncodedDataset) -> tuple[np.ndarray, np.ndarray]:
    _check_schema(model, ds)
    return predict_batch(model, model.prepare(ds.x))


def accuracy(model: Model, ds: EncodedDataset) -> float:
    pred, _ = predict_dataset(model, ds)
    return float((pred == ds.y).mean())


# ---------------------------------------------------------------------------
# checkpoints

_MAGIC = b"FSNT"
_VERSION = 1
_PREFIX = struct.Struct("<4sHI")


def checkpoint_bytes(model: Model) -> bytes:
    params = model.named_parameters()
    header = {
        "arch": model.arch,
        "layers": [{"name": n, "shape": list(p.shape)} for n, p in params],
        "schema_hash": model.schema_hash,
        "train_seed": model.train_seed,
        "epochs_done": model.epochs_done,
    }
    hb = canonical_json(header).encode()
    payload = b"".join(np.ascontiguousarray(p, dtype="<f4").tobytes() for _, p in params)
    return _PREFIX.pack(_MAGIC, _VERSION, len(hb)) + hb + payload


def save_checkpoint(model: Model, path):
    Path(path).write_bytes(checkpoint_bytes(model))


def load_checkpoint_bytes(data: bytes, source: str = "<bytes>") -> Model:
    if len(data) < _PREFIX.size:
        raise CheckpointError(f"{source}: truncated header")
    magic, version, hlen = _PREFIX.unpack_from(data)
    if magic != _MAGIC:
        raise CheckpointError(f"{source}: bad magic {magic!r}, expected {_MAGIC!r}")
    if version != _VERSION:
        raise CheckpointError(f"{source}: unsupported checkpoint version {version}")
    try:
        header = json.loads(data[_PREFIX.size:_PREFIX.size + hlen])
        arch = header["arch"]
        layers = header["layers"]
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"{source}: unreadable header ({exc})") from exc
    if arch not in ARCHS:
        raise CheckpointError(f"{source}: unknown arch {arch!r}")
    model = build_model(ModelSpec(arch=arch, seed=0))
    params = model.named_parameters()
    want = [(n, list(p.shape)) for n, p in params]
    got = [(d.get("name"), list(d.get("shape", []))) for d in layers]
    if want != got:
        raise CheckpointError(f"{source}: layer names/shapes do not match arch {arch}")
    expected = 4 * sum(int(np.prod(s)) for _, s in want)
    payload = data[_PREFIX.size + hlen:]
    if len(payload) != expected:
        raise CheckpointError(f"{source}: expected {expected} payload bytes, got {len(payload)}")
    flat = np.frombuffer(payload, dtype="<f4")
    off = 0
    for _, p in params:
        p[...] = flat[off:off + p.size].reshape(p.shape)
        off += p.size
    model.schema_hash = header.get("schema_hash")
    model.train_seed = int(header.get("train_seed", 0))
    model.epochs_done = int(header.get("epochs_done", 0))
    return model


def load_checkpoint(path, schema_hash: str | None = None) -> Model:
    """Load and verify; with ``schema_hash`` given, refuse a model trained under another schema."""
    model = load_checkpoint_bytes(Path(path).read_bytes(), str(path))
    if schema_hash is not None and model.schema_hash not in (None, schema_hash):
        raise SchemaMismatch(f"{path}: checkpoint schema {model.schema_hash} != {schema_hash}")
    return model
