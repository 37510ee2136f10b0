"""Discrete speech units: fallback k-means quantizer, run-length dedup, expansion."""

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.cluster import KMeans

from .signal_features import mel_spectrogram

VOCAB_FORMAT_VERSION = 1


@dataclass
class UnitSequence:
    units: np.ndarray
    durations: np.ndarray

    def __post_init__(self):
        self.units = np.asarray(self.units, dtype=np.int64)
        self.durations = np.asarray(self.durations, dtype=np.int64)
        if self.units.shape != self.durations.shape or self.units.ndim != 1:
            raise ValueError("units and durations must be 1-d and equally long")
        if len(self.units) == 0:
            raise ValueError("empty unit sequence")
        if (self.durations < 1).any():
            raise ValueError("durations must be >= 1")
        if (self.units[1:] == self.units[:-1]).any():
            raise ValueError("consecutive units must differ")

    def __len__(self):
        return len(self.units)

    @property
    def n_frames(self):
        return int(self.durations.sum())


@dataclass
class UnitVocabulary:
    """k-means codebook over standardized frame descriptors."""

    codebook: np.ndarray
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.codebook = np.asarray(self.codebook, dtype=np.float64)
        if self.codebook.ndim != 2 or len(self.codebook) < 2:
            raise ValueError("vocabulary needs at least 2 centroids")

    @property
    def size(self):
        return len(self.codebook)

    def save(self, path):
        with open(path, "wb") as fh:
            np.savez(fh, version=np.int64(VOCAB_FORMAT_VERSION), size=np.int64(self.size),
                     codebook=self.codebook, mean=self.mean, std=self.std)

    @classmethod
    def load(cls, path):
        with np.load(Path(path)) as data:
            version = int(data["version"])
            if version != VOCAB_FORMAT_VERSION:
                raise ValueError(f"unsupported vocabulary version {version}")
            vocab = cls(data["codebook"], data["mean"], data["std"])
            if vocab.size != int(data["size"]):
                raise ValueError("corrupt vocabulary: size field disagrees with codebook")
        return vocab

    def digest(self):
        h = hashlib.sha256()
        for arr in (self.codebook, self.mean, self.std):
            h.update(np.ascontiguousarray(arr, dtype=np.float64).tobytes())
        return h.hexdigest()[:16]


def _deltas(feats, width=2):
    """Regression deltas over +/- ``width`` frames with edge padding."""
    padded = np.pad(feats, ((width, width), (0, 0)), mode="edge")
    n = len(feats)
    num = sum(k * (padded[width + k:width + k + n] - padded[width - k:width - k + n])
              for k in range(1, width + 1))
    return num / (2 * sum(k * k for k in range(1, width + 1)))


def frame_descriptors(wave, cfg):
    """Per-frame log-mel plus first-order deltas, shape (N, 2 * n_mels)."""
    mel = mel_spectrogram(wave, cfg).astype(np.float64)
    return np.concatenate([mel, _deltas(mel)], axis=1)


def fit_vocabulary(corpus, size, cfg, seed=0, max_iter=50):
    """Fit a ``size``-unit vocabulary on a collection of waveforms."""
    if size < 2:
        raise ValueError("vocabulary size must be >= 2")
    feats = np.concatenate([frame_descriptors(w, cfg) for w in corpus], axis=0)
    if len(feats) < 10 * size:
        raise ValueError(
            f"insufficient data: {len(feats)} frames for {size} units (need {10 * size})"
        )
    mean = feats.mean(axis=0)
    std = feats.std(axis=0) + 1e-8
    z = (feats - mean) / std
    km = KMeans(n_clusters=size, init="k-means++", n_init=1, max_iter=max_iter,
                random_state=seed, algorithm="lloyd")
    labels = km.fit_predict(z)
    if len(np.unique(labels)) != size:
        raise ValueError("degenerate clustering: some units own no training frame "
                         "(corpus has too few distinct frames)")
    return UnitVocabulary(km.cluster_centers_, mean, std)


def quantize(wave, vocab, cfg):
    """Nearest-centroid unit id for every mel frame."""
    if vocab is None:
        raise ValueError("vocabulary not fitted")
    z = (frame_descriptors(wave, cfg) - vocab.mean) / vocab.std
    d2 = ((z ** 2).sum(1, keepdims=True) - 2.0 * z @ vocab.codebook.T
          + (vocab.codebook ** 2).sum(1)[None, :])
    return np.argmin(d2, axis=1).astype(np.int64)


def deduplicate(frames):
    """Run-length encode a frame-level unit sequence."""
    frames = np.asarray(frames, dtype=np.int64)
    if frames.size == 0:
        raise ValueError("cannot deduplicate an empty sequence")
    starts = np.flatnonzero(np.r_[True, frames[1:] != frames[:-1]])
    durations = np.diff(np.r_[starts, len(frames)])
    return UnitSequence(frames[starts], durations)


def expand(us):
    """Repeat each unit by its duration."""
    return np.repeat(us.units, us.durations)
