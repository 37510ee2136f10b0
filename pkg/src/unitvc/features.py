"""Per-utterance feature bundle and the on-disk feature cache.

A cache record is ``<id>.npz`` (named arrays) plus ``<id>.json`` (scalars:
mean f0, lengths, content hash, feature fingerprint).
"""

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import adapters
from .signal_features import (
    PitchTrack,
    Waveform,
    energy_contour,
    estimate_pitch,
    mean_normalize_pitch,
    mel_spectrogram,
)
from .units import deduplicate, quantize

CACHE_FORMAT_VERSION = 1
ARRAYS = ("wave", "mel", "pitch", "voicing", "energy", "units", "durations")


@dataclass
class UtteranceFeatures:
    """Everything observable about one utterance, on a shared frame grid."""

    utt_id: str
    wave: np.ndarray      # (T,) float32 at the system rate
    mel: np.ndarray       # (N, n_mels) log-mel
    pitch: np.ndarray     # (N,) mean-normalized Hz, 0 on unvoiced frames
    voicing: np.ndarray   # (N,) 0/1
    energy: np.ndarray    # (N,) spectral L2 norm
    units: np.ndarray     # (K,) deduplicated unit ids
    durations: np.ndarray  # (K,) frames per unit, sums to N
    mean_f0: float
    sample_rate: int = 16000
    hop_length: int = 320
    label: str = ""
    content_hash: str = ""

    @property
    def n_frames(self):
        return len(self.mel)

    def pitch_track(self):
        return PitchTrack(self.pitch, self.voicing, normalized=True, mean_f0=self.mean_f0)

    def check(self):
        n = self.n_frames
        if not (len(self.pitch) == len(self.voicing) == len(self.energy) == n):
            raise ValueError(f"{self.utt_id}: pitch/voicing/energy not aligned with {n} mel frames")
        if int(np.sum(self.durations)) != n:
            raise ValueError(f"{self.utt_id}: durations sum to {int(np.sum(self.durations))}, expected {n}")
        return self


def content_hash(samples):
    return hashlib.sha256(np.ascontiguousarray(samples, dtype=np.float32).tobytes()).hexdigest()[:16]


def extract_utterance(wave, cfg, vocab, utt_id="utt", wav_path=None, label=""):
    """Compute X, P, V, Q, U, L for one waveform.

    External pitch / unit adapters from ``cfg.adapters`` are used when
    configured (they need ``wav_path``); otherwise the internal tracker and
    the fallback quantizer run.
    """
    fcfg = cfg.features
    if wave.sample_rate != fcfg.sample_rate:
        raise ValueError(f"waveform at {wave.sample_rate} Hz, system rate is {fcfg.sample_rate} Hz")
    mel = mel_spectrogram(wave, fcfg)
    n = len(mel)
    frame_hop = fcfg.hop_length / fcfg.sample_rate
    energy = energy_contour(wave, fcfg, n_frames=n)

    if cfg.adapters.pitch_command and wav_path is not None:
        pitch, voicing, hop = adapters.run_pitch_adapter(cfg.adapters.pitch_command, wav_path)
        track = PitchTrack(adapters.to_frame_grid(pitch, n, hop, frame_hop),
                           adapters.to_frame_grid(voicing, n, hop, frame_hop))
    else:
        track = estimate_pitch(wave, fcfg)
    track = mean_normalize_pitch(track, fcfg.default_mean_f0)

    if cfg.adapters.unit_command and wav_path is not None:
        frames, hop = adapters.run_unit_adapter(cfg.adapters.unit_command, wav_path)
        frames = adapters.to_frame_grid(frames, n, hop, frame_hop)
    else:
        frames = quantize(wave, vocab, fcfg)
    us = deduplicate(frames)

    return UtteranceFeatures(
        utt_id=utt_id, wave=wave.samples, mel=mel, pitch=track.pitch, voicing=track.voicing,
        energy=energy, units=us.units, durations=us.durations, mean_f0=track.mean_f0,
        sample_rate=fcfg.sample_rate, hop_length=fcfg.hop_length, label=label,
        content_hash=content_hash(wave.samples),
    ).check()


def waveform_of(feats):
    return Waveform(feats.wave, feats.sample_rate)


def record_paths(cache_dir, utt_id):
    cache_dir = Path(cache_dir)
    return cache_dir / f"{utt_id}.npz", cache_dir / f"{utt_id}.json"


def save_record(cache_dir, feats, fingerprint):
    arrays_path, meta_path = record_paths(cache_dir, feats.utt_id)
    arrays_path.parent.mkdir(parents=True, exist_ok=True)
    with open(arrays_path, "wb") as fh:
        np.savez(fh, **{k: getattr(feats, k) for k in ARRAYS})
    meta = {
        "version": CACHE_FORMAT_VERSION,
        "utt_id": feats.utt_id,
        "label": feats.label,
        "mean_f0": feats.mean_f0,
        "sample_rate": feats.sample_rate,
        "hop_length": feats.hop_length,
        "n_samples": int(len(feats.wave)),
        "n_frames": feats.n_frames,
        "n_units": int(len(feats.units)),
        "content_hash": feats.content_hash,
        "fingerprint": fingerprint,
    }
    meta_path.write_text(json.dumps(meta, indent=2) + "\n")


def read_meta(meta_path):
    meta = json.loads(Path(meta_path).read_text())
    if meta.get("version") != CACHE_FORMAT_VERSION:
        raise ValueError(f"unsupported cache record version in {meta_path}")
    return meta


def load_record(cache_dir, utt_id, fingerprint=None):
    arrays_path, meta_path = record_paths(cache_dir, utt_id)
    meta = read_meta(meta_path)
    if fingerprint is not None and meta["fingerprint"] != fingerprint:
        raise ValueError(
            f"cache record {utt_id} was built with feature fingerprint {meta['fingerprint']}, "
            f"config has {fingerprint}")
    with np.load(arrays_path) as data:
        arrays = {k: data[k] for k in ARRAYS}
    return UtteranceFeatures(
        utt_id=meta["utt_id"], mean_f0=float(meta["mean_f0"]), sample_rate=meta["sample_rate"],
        hop_length=meta["hop_length"], label=meta.get("label", ""),
        content_hash=meta["content_hash"], **arrays,
    ).check()


def list_records(cache_dir):
    return sorted(p.stem for p in Path(cache_dir).glob("*.json") if p.with_suffix(".npz").is_file())


def load_cache(cache_dir, fingerprint=None):
    return [load_record(cache_dir, utt_id, fingerprint) for utt_id in list_records(cache_dir)]
