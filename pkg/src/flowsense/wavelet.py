"""Haar wavelet packet decomposition and sub-band energy features."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_S = 1.0 / math.sqrt(2.0)
FILTERS = {
    # analysis pair (low-pass, high-pass) as integer taps; each level carries a
    # gain of 1/sqrt(2) that is applied once per depth (see _depth_gain)
    "haar": (np.array([1.0, 1.0]), np.array([1.0, -1.0])),
}
FEATURE_LEVEL = 3


class WaveletShapeError(ValueError):
    pass


@dataclass(frozen=True)
class WaveletPacketTree:
    """nodes[d][i] holds the coefficients of node i (natural order) at depth d."""

    level: int
    nodes: tuple

    def node(self, depth: int, index: int) -> np.ndarray:
        return self.nodes[depth][index]

    def leaves(self, order: str = "freq") -> list[np.ndarray]:
        natural = self.nodes[self.level]
        if order == "natural":
            return list(natural)
        if order != "freq":
            raise ValueError("order must be 'freq' or 'natural'")
        return [natural[i] for i in frequency_permutation(self.level)]


def frequency_permutation(level: int) -> list[int]:
    """Natural-order index of the leaf in each frequency position.

    High-pass filtering followed by downsampling mirrors the spectrum, so
    frequency position f lives at natural index gray(f) = f ^ (f >> 1).
    """
    return [f ^ (f >> 1) for f in range(2 ** level)]


def _split(x: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # periodic extension; output[k] = sum_j h[j] * x[(2k + j) mod n]
    # tap-by-tap elementwise sums so equal inputs cancel exactly (no BLAS/FMA)
    n = x.shape[-1]
    base = 2 * np.arange(n // 2)
    a = np.zeros(x.shape[:-1] + (n // 2,))
    d = np.zeros_like(a)
    for j in range(len(lo)):
        xj = x[..., (base + j) % n]
        a = a + lo[j] * xj
        d = d + hi[j] * xj
    return a, d


def wp_decompose(series, level: int, wavelet: str = "haar") -> WaveletPacketTree:
    x = np.asarray(series, dtype=np.float64)
    if x.ndim != 1:
        raise WaveletShapeError("series must be one-dimensional")
    if level < 1:
        raise WaveletShapeError("level must be >= 1")
    if x.size == 0 or x.size % (2 ** level):
        raise WaveletShapeError(f"series length {x.size} is not divisible by 2**{level}")
    lo, hi = FILTERS[wavelet]
    raw = [(x.copy(),)]
    for _ in range(level):
        nxt = []
        for parent in raw[-1]:
            a, d = _split(parent, lo, hi)
            nxt.extend((a, d))
        raw.append(tuple(nxt))
    nodes = tuple(tuple(c * _depth_gain(depth) for c in row) for depth, row in enumerate(raw))
    return WaveletPacketTree(level, nodes)


def _depth_gain(depth: int) -> float:
    # (1/sqrt 2)**depth with the even part as an exact power of two, so
    # integer inputs give exact coefficients at even depths
    return 0.5 ** (depth // 2) * (_S if depth % 2 else 1.0)


def subband_energies(tree: WaveletPacketTree) -> np.ndarray:
    """Leaf energies ordered from lowest to highest frequency band."""
    return np.array([float(np.dot(c, c)) for c in tree.leaves("freq")])


def frequency_features(series, level: int = FEATURE_LEVEL) -> list[float]:
    """f14..f24: 8 band-energy ratios, log(1 + E), normalized spectral
    entropy, and the upper-half band ratio. All zero for a zero series."""
    e = subband_energies(wp_decompose(series, level))
    total = float(e.sum())
    n = len(e)
    if total <= 0.0:
        return [0.0] * (n + 3)
    p = e / total
    nz = p[p > 0]
    entropy = float(-(nz * np.log(nz)).sum() / math.log(n))
    entropy = min(max(entropy, 0.0), 1.0) + 0.0  # no -0.0
    high = float(p[n // 2:].sum())
    return [float(v) for v in p] + [math.log1p(total), entropy, high]
