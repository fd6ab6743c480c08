"""Load tokenizer: 1-D k-means over sampled loads, then a merge pass over the
sorted centroids.

The merge is anchored: a run grows while the next centroid is less than
``tau`` above the run's *first* centroid, and each run collapses to its
mean. Values are tokenized by finding the nearest original centroid and
mapping it through the merge.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

DEFAULT_TAU = 0.01
MAX_SUBSAMPLE = 1_000_000
MAX_ITER = 100


class TokenizerError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class TokenVocabulary:
    centroids: np.ndarray           # merged, strictly increasing
    bin_width: np.ndarray           # per merged token
    original_centroids: np.ndarray  # sorted k-means centroids
    token_of_original: np.ndarray   # original index -> merged token
    k_initial: int
    tau: float

    def __len__(self) -> int:
        return self.centroids.size

    def encode(self, x):
        return encode(x, self)

    def decode(self, t):
        return decode(t, self)

    def save(self, path: Union[str, Path]) -> None:
        originals = ";".join(repr(float(c)) for c in self.original_centroids)
        with open(path, "w", newline="") as fh:
            fh.write(f"# k_initial={self.k_initial} tau={self.tau!r} original_centroids={originals}\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["token", "centroid_kwh", "bin_width_kwh"])
            for t, (c, w) in enumerate(zip(self.centroids, self.bin_width)):
                writer.writerow([t, repr(float(c)), repr(float(w))])

    @classmethod
    def load(cls, path: Union[str, Path]) -> "TokenVocabulary":
        with open(path, newline="") as fh:
            meta_line = fh.readline()
            if not meta_line.startswith("#"):
                raise TokenizerError(f"{path}: missing vocabulary metadata line")
            meta = dict(item.split("=", 1) for item in meta_line[1:].split())
            rows = list(csv.DictReader(fh))
        centroids = np.array([float(r["centroid_kwh"]) for r in rows])
        widths = np.array([float(r["bin_width_kwh"]) for r in rows])
        originals = np.array([float(v) for v in meta["original_centroids"].split(";") if v])
        _, mapping = merge_centroids(originals, float(meta["tau"]))
        return cls(centroids, widths, originals, mapping, int(meta["k_initial"]), float(meta["tau"]))


def _sample(x: np.ndarray, rng: np.random.Generator, size: int) -> np.ndarray:
    if x.size <= size:
        return x
    return x[rng.choice(x.size, size=size, replace=False)]


def kmeans_pp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centers = np.empty(k)
    centers[0] = x[rng.integers(x.size)]
    d2 = (x - centers[0]) ** 2
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            raise TokenizerError("fewer distinct samples than clusters")
        idx = np.searchsorted(np.cumsum(d2), rng.uniform(0.0, total), side="right")
        centers[j] = x[min(idx, x.size - 1)]
        np.minimum(d2, (x - centers[j]) ** 2, out=d2)
    return np.sort(centers)


def _assign_sorted(centers: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Nearest-center index for ``xs``; ties go to the lower center."""
    mids = 0.5 * (centers[1:] + centers[:-1])
    return np.searchsorted(mids, xs, side="left")


def kmeans_1d(x: np.ndarray, k: int, rng: np.random.Generator, max_iter: int = MAX_ITER) -> np.ndarray:
    """Lloyd iterations on sorted 1-D data from a k-means++ start.

    Empty clusters keep their previous center.
    """
    xs = np.sort(x)
    centers = kmeans_pp_init(xs, k, rng)
    csum = np.concatenate([[0.0], np.cumsum(xs)])
    labels = None
    for _ in range(max_iter):
        new_labels = _assign_sorted(centers, xs)
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        # sorted data => each cluster is a contiguous slice
        bounds = np.searchsorted(labels, np.arange(k + 1), side="left")
        counts = np.diff(bounds)
        sums = csum[bounds[1:]] - csum[bounds[:-1]]
        nonempty = counts > 0
        centers = centers.copy()
        centers[nonempty] = sums[nonempty] / counts[nonempty]
        centers = np.sort(centers)
    return centers


def merge_centroids(sorted_centroids: np.ndarray, tau: float) -> tuple[np.ndarray, np.ndarray]:
    """Anchored merge; returns ``(merged, token_of_original)``."""
    c = np.asarray(sorted_centroids, dtype=float)
    if c.size == 0:
        raise TokenizerError("no centroids to merge")
    merged: list[float] = []
    mapping = np.empty(c.size, dtype=np.int64)
    current = c[0]
    run = [c[0]]
    mapping[0] = 0
    for i in range(1, c.size):
        if c[i] - current < tau:
            run.append(c[i])
        else:
            merged.append(float(np.mean(run)))
            run = [c[i]]
            current = c[i]
        mapping[i] = len(merged)
    merged.append(float(np.mean(run)))
    return np.array(merged), mapping


def fit(samples, k: int, tau: float = DEFAULT_TAU, seed: int = 0,
        max_subsample: int = MAX_SUBSAMPLE) -> TokenVocabulary:
    x = np.asarray(samples, dtype=float).ravel()
    if k < 2:
        raise TokenizerError("k must be >= 2")
    if tau < 0:
        raise TokenizerError("tau must be >= 0")
    if np.unique(x).size < k:
        raise TokenizerError(f"need at least {k} distinct samples, got {np.unique(x).size}")
    rng = np.random.default_rng(seed)
    sub = _sample(x, rng, max_subsample)
    if np.unique(sub).size < k:
        sub = x
    originals = kmeans_1d(sub, k, rng)
    merged, mapping = merge_centroids(originals, tau)

    orig_labels = _assign_sorted(originals, x)
    lo = np.full(originals.size, np.inf)
    hi = np.full(originals.size, -np.inf)
    np.minimum.at(lo, orig_labels, x)
    np.maximum.at(hi, orig_labels, x)
    tok_lo = np.full(merged.size, np.inf)
    tok_hi = np.full(merged.size, -np.inf)
    np.minimum.at(tok_lo, mapping, lo)
    np.maximum.at(tok_hi, mapping, hi)
    widths = np.where(np.isfinite(tok_lo), tok_hi - tok_lo, 0.0)
    return TokenVocabulary(merged, widths, originals, mapping, k, float(tau))


def encode(x, vocab: TokenVocabulary):
    xs = np.asarray(x, dtype=float)
    tokens = vocab.token_of_original[_assign_sorted(vocab.original_centroids, xs)]
    return tokens if tokens.ndim else int(tokens)


def decode(t, vocab: TokenVocabulary):
    out = vocab.centroids[np.asarray(t, dtype=np.int64)]
    return out if np.ndim(out) else float(out)


@dataclass(frozen=True)
class CompressionStats:
    mae_by_type: dict[str, float]
    token_counts: np.ndarray

    @property
    def utilization(self) -> float:
        return float(np.mean(self.token_counts > 0))


def compression_stats(samples, vocab: TokenVocabulary,
                      building_types: Optional[Sequence[str]] = None) -> CompressionStats:
    """Quantization MAE (overall and per building type) and token usage counts."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise TokenizerError("compression_stats needs samples")
    tokens = encode(x, vocab)
    err = np.abs(x - decode(tokens, vocab))
    mae = {"all": float(err.mean())}
    if building_types is not None:
        types = np.asarray(building_types)
        if types.size != x.size:
            raise TokenizerError("building_types must align with samples")
        for kind in sorted(set(types.tolist())):
            mae[kind] = float(err[types == kind].mean())
    counts = np.bincount(np.atleast_1d(tokens), minlength=len(vocab))
    return CompressionStats(mae, counts)
