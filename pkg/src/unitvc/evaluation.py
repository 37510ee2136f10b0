"""Objective metrics: prosody PCC, embedding cosine, and attribute-embedding export."""

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .signal_features import (
    align_length,
    energy_contour,
    estimate_pitch,
    load_waveform,
    mean_normalize_pitch,
    mel_spectrogram,
)

log = logging.getLogger(__name__)

# enumerable skip reasons
ZERO_VARIANCE = "zero variance"
TOO_SHORT = "fewer than 2 frames"
TOO_FEW_VOICED = "fewer than 2 common voiced frames"
UNREADABLE = "unreadable audio"
MISSING_EMBEDDING = "missing embedding"
ZERO_NORM = "zero-norm embedding"
SKIP_REASONS = (ZERO_VARIANCE, TOO_SHORT, TOO_FEW_VOICED, UNREADABLE, MISSING_EMBEDDING, ZERO_NORM)


class SkipPair(ValueError):
    def __init__(self, reason, detail=""):
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason


def pcc(a, b):
    """Pearson correlation; ``b`` is nearest-neighbour resampled to len(a)."""
    a = np.asarray(a, dtype=np.float64)
    b = align_length(np.asarray(b, dtype=np.float64), len(a)) if len(b) else np.asarray(b)
    if len(a) < 2 or len(b) < 2:
        raise SkipPair(TOO_SHORT)
    da, db = a - a.mean(), b - b.mean()
    na, nb = np.sqrt(da @ da), np.sqrt(db @ db)
    # relative threshold: constant sequences leave only rounding residue
    if na <= 1e-12 * max(1.0, np.abs(a).max()) * np.sqrt(len(a)) or \
            nb <= 1e-12 * max(1.0, np.abs(b).max()) * np.sqrt(len(b)):
        raise SkipPair(ZERO_VARIANCE)
    return float(np.clip(da @ db / (na * nb), -1.0, 1.0))


def embedding_cosine(e1, e2):
    e1, e2 = np.asarray(e1, dtype=np.float64), np.asarray(e2, dtype=np.float64)
    if e1.shape != e2.shape:
        raise ValueError(f"embedding dimensions differ: {e1.shape} vs {e2.shape}")
    n1, n2 = np.linalg.norm(e1), np.linalg.norm(e2)
    if n1 == 0 or n2 == 0:
        raise SkipPair(ZERO_NORM)
    return float(np.clip(e1 @ e2 / (n1 * n2), -1.0, 1.0))


@dataclass
class ProsodyFeatures:
    pitch: np.ndarray    # mean-normalized Hz
    voicing: np.ndarray
    mean_f0: float
    energy: np.ndarray

    @classmethod
    def from_wave(cls, wave, fcfg):
        n = len(mel_spectrogram(wave, fcfg))
        track = mean_normalize_pitch(estimate_pitch(wave, fcfg), fcfg.default_mean_f0)
        return cls(track.pitch, track.voicing, track.mean_f0, energy_contour(wave, fcfg, n))

    @classmethod
    def from_utterance(cls, feats):
        return cls(feats.pitch, feats.voicing, feats.mean_f0, feats.energy)


def prosody_pcc(target, converted):
    """(pcc_log_f0, pcc_energy) with per-metric skip reasons.

    Returns a dict with keys ``pcc_log_f0``, ``pcc_energy`` (None when
    skipped) and ``skipped`` mapping metric name to reason.
    """
    n = len(target.pitch)
    out = {"pcc_log_f0": None, "pcc_energy": None, "skipped": {}}

    conv_pitch = align_length(converted.pitch, n)
    conv_voiced = align_length(converted.voicing, n).astype(bool)
    both = target.voicing.astype(bool) & conv_voiced
    try:
        if both.sum() < 2:
            raise SkipPair(TOO_FEW_VOICED)
        f0_t = np.log(target.pitch[both] + target.mean_f0)
        f0_c = np.log(conv_pitch[both] + converted.mean_f0)
        out["pcc_log_f0"] = pcc(f0_t, f0_c)
    except SkipPair as skip:
        out["skipped"]["pcc_log_f0"] = skip.reason

    try:
        out["pcc_energy"] = pcc(target.energy, converted.energy)
    except SkipPair as skip:
        out["skipped"]["pcc_energy"] = skip.reason
    return out


@dataclass
class MetricReport:
    pairs: list = field(default_factory=list)

    def add(self, pair_id, values):
        self.pairs.append({"id": pair_id, **values})

    def aggregate(self, metric):
        vals = [p[metric] for p in self.pairs if p.get(metric) is not None]
        return float(np.mean(vals)) if vals else None

    def skip_counts(self):
        counts = {}
        for p in self.pairs:
            for reason in p.get("skipped", {}).values():
                counts[reason] = counts.get(reason, 0) + 1
        return counts

    def to_dict(self):
        metrics = ("pcc_log_f0", "pcc_energy", "cosine_similarity")
        return {
            "n_pairs": len(self.pairs),
            "aggregate": {m: self.aggregate(m) for m in metrics},
            "valid_counts": {m: sum(p.get(m) is not None for p in self.pairs) for m in metrics},
            "skipped": self.skip_counts(),
            "pairs": self.pairs,
        }

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    def summary(self):
        d = self.to_dict()
        lines = [f"pairs evaluated: {d['n_pairs']}"]
        for metric, value in d["aggregate"].items():
            if d["valid_counts"][metric]:
                lines.append(f"{metric:>18}: {value:.4f}  (n={d['valid_counts'][metric]})")
        for reason, count in sorted(d["skipped"].items()):
            lines.append(f"skipped ({reason}): {count}")
        return "\n".join(lines)


def evaluate_pairs(pairs, fcfg, embeddings=None):
    """Prosody PCC (and optional embedding cosine) for (id, reference, converted) triples.

    ``embeddings`` is an optional pair of dicts (reference, converted) keyed by
    pair id, read from the external embedding-vector files.
    """
    report = MetricReport()
    for pair_id, ref_path, conv_path in pairs:
        try:
            ref = ProsodyFeatures.from_wave(load_waveform(ref_path, fcfg.sample_rate), fcfg)
            conv = ProsodyFeatures.from_wave(load_waveform(conv_path, fcfg.sample_rate), fcfg)
        except (OSError, ValueError) as exc:
            log.warning("pair %s skipped: %s", pair_id, exc)
            report.add(pair_id, {"pcc_log_f0": None, "pcc_energy": None,
                                 "skipped": {"pair": UNREADABLE}})
            continue
        values = prosody_pcc(ref, conv)
        if embeddings is not None:
            ref_emb, conv_emb = embeddings
            values["cosine_similarity"] = None
            try:
                if pair_id not in ref_emb or pair_id not in conv_emb:
                    raise SkipPair(MISSING_EMBEDDING)
                values["cosine_similarity"] = embedding_cosine(ref_emb[pair_id], conv_emb[pair_id])
            except SkipPair as skip:
                values["skipped"]["cosine_similarity"] = skip.reason
        report.add(pair_id, values)
    return report


@torch.no_grad()
def export_attribute_embeddings(entries, kind, state, out_path):
    """Write one row per utterance: id, label, then the d_a attribute values.

    ``entries`` are (utt_id, wav_path, label) triples.  Output is tab-separated
    with a header, ready for t-SNE or any other offline projection.
    """
    cfg = state.config
    model = state.generator
    model.eval()
    rows = []
    for utt_id, path, label in entries:
        wave = load_waveform(path, cfg.features.sample_rate)
        samples = torch.from_numpy(wave.samples)[None]
        vec = model.encode_attribute(samples, torch.tensor([len(wave)]), kind).values[0]
        rows.append([utt_id, label] + [repr(float(v)) for v in vec])
    with open(out_path, "w", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t")
        writer.writerow(["id", "label"] + [f"{kind}{i}" for i in range(cfg.model.d_a)])
        writer.writerows(rows)
    return len(rows)

