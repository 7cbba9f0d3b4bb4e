"""Stage helpers shared by the benchmark and the command line."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from .encoding import LABEL_CODES, Calibration, EncodedDataset, FeatureSchema, encode_all
from .flows import FeatureVector39, FlowRecord, flow_features
from .records import iter_log


@dataclass
class FlowTable:
    """Closed flows of one log with their feature vectors, in closing order."""

    flows: list[FlowRecord]
    vectors: list[FeatureVector39]

    def __len__(self):
        return len(self.vectors)

    @property
    def labels(self) -> np.ndarray:
        return np.array([LABEL_CODES[v.label] for v in self.vectors], dtype=np.uint8)

    def kinds(self, idx=None) -> Counter:
        idx = range(len(self)) if idx is None else idx
        return Counter(self.flows[i].attack_kind for i in idx)


def features_from_log(path) -> FlowTable:
    flows, vectors = [], []
    for flow, fv in flow_features(iter_log(path)):
        flows.append(flow)
        vectors.append(fv)
    return FlowTable(flows, vectors)


def balanced_indices(labels: np.ndarray, rng: np.random.Generator, limit: int | None = None) -> np.ndarray:
    """Equal numbers of each class (the minority count, capped at limit/2),
    drawn without replacement; returned in ascending order."""
    pos = np.flatnonzero(labels == 1)
    neg = np.flatnonzero(labels == 0)
    k = min(len(pos), len(neg))
    if limit is not None:
        k = min(k, limit // 2)
    if k == 0:
        raise ValueError("cannot balance: one class is absent")
    picked = np.concatenate([rng.choice(pos, k, replace=False), rng.choice(neg, k, replace=False)])
    return np.sort(picked)


def stratified_split(labels: np.ndarray, fraction: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """(first, rest) index arrays; ``fraction`` of each class goes to first."""
    first = []
    for cls in (0, 1):
        idx = np.flatnonzero(labels == cls)
        idx = idx[rng.permutation(len(idx))]
        first.append(idx[: int(round(fraction * len(idx)))])
    first = np.sort(np.concatenate(first))
    rest = np.setdiff1d(np.arange(len(labels)), first)
    return first, rest


def encode_table(vectors, schema: FeatureSchema, calib: Calibration, unknown: Counter | None = None
                 ) -> EncodedDataset:
    x = encode_all(vectors, schema, calib, unknown)
    y = np.array([LABEL_CODES[v.label] for v in vectors], dtype=np.uint8)
    return EncodedDataset(x, y, schema.hash)
