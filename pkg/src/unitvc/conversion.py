"""Inference: reconstruction, speaker conversion, prosody conversion, rendering."""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import adapters
from .bins import BinGrid, gaussian_bin_weights
from .features import extract_utterance
from .networks import decode_durations
from .signal_features import (
    Waveform,
    frame_signal,
    hann_window,
    load_waveform,
    mel_filterbank,
    save_waveform,
)

log = logging.getLogger(__name__)

SPEAKER, PITCH_ENERGY, RHYTHM = "speaker", "pitch-energy", "rhythm"
ATTRIBUTES = (SPEAKER, PITCH_ENERGY, RHYTHM)
KIND_OF = {SPEAKER: "s", PITCH_ENERGY: "p", RHYTHM: "r"}
GROUND_TRUTH, PREDICTED = "ground_truth", "predicted"

# command-line presets: --transfer value -> (attributes, default prosody source)
PRESETS = {
    "speaker": (frozenset({SPEAKER}), GROUND_TRUTH),
    "prosody": (frozenset({RHYTHM, PITCH_ENERGY}), PREDICTED),
    "all": (frozenset({SPEAKER, RHYTHM, PITCH_ENERGY}), PREDICTED),
    "none": (frozenset(), GROUND_TRUTH),
}


@dataclass
class ConversionRequest:
    source: object  # UtteranceFeatures
    target: object
    transfer: frozenset = frozenset()
    prosody_source: str = GROUND_TRUTH

    def __post_init__(self):
        self.transfer = frozenset(self.transfer)
        self.validate()

    def validate(self):
        unknown = self.transfer - set(ATTRIBUTES)
        if unknown:
            raise ValueError(f"unknown attributes to transfer: {sorted(unknown)}")
        if self.prosody_source not in (GROUND_TRUTH, PREDICTED):
            raise ValueError(f"prosody_source must be {GROUND_TRUTH!r} or {PREDICTED!r}")
        if self.prosody_source == GROUND_TRUTH and RHYTHM in self.transfer:
            raise ValueError("ground-truth prosody is frame-aligned to the source; "
                             "it cannot be combined with rhythm transfer")


@dataclass
class ConversionResult:
    mel: np.ndarray
    durations: np.ndarray
    voicing: np.ndarray
    energy_branch: np.ndarray
    info: dict = field(default_factory=dict)

    @property
    def n_frames(self):
        return len(self.mel)


def _wave_batch(feats):
    wave = torch.from_numpy(np.asarray(feats.wave, dtype=np.float32))[None]
    return wave, torch.tensor([wave.shape[1]])


@torch.no_grad()
def convert(req, state, seed=0):
    """Run the generator for one request; returns a ConversionResult."""
    cfg = state.config
    model = state.generator
    model.eval()
    torch.manual_seed(seed)
    src = req.source

    attrs = {}
    for name in ATTRIBUTES:
        donor = req.target if name in req.transfer else src
        wave, lengths = _wave_batch(donor)
        attrs[name] = model.encode_attribute(wave, lengths, KIND_OF[name])

    units = torch.from_numpy(np.asarray(src.units, dtype=np.int64))[None]
    unit_lengths = torch.tensor([units.shape[1]])

    if req.prosody_source == GROUND_TRUTH:
        durations = torch.from_numpy(np.asarray(src.durations, dtype=np.int64))[None]
        pitch_bw = gaussian_bin_weights(torch.from_numpy(src.pitch).float()[None],
                                        BinGrid.pitch(cfg.grid), clamp=True)
        energy_bw = gaussian_bin_weights(torch.from_numpy(src.energy).float()[None],
                                         BinGrid.energy(cfg.grid), clamp=True)
        voicing = torch.from_numpy(np.asarray(src.voicing, dtype=np.int64))[None]
    else:
        log_dur = model.predict_duration(units, unit_lengths, attrs[RHYTHM])
        durations = decode_durations(log_dur, cfg.model.max_duration)
        pitch_logits, voicing_logit, energy_logits, _ = model.predict_pitch_energy(
            units, durations, attrs[PITCH_ENERGY])
        pitch_bw = torch.sigmoid(pitch_logits)
        energy_bw = torch.sigmoid(energy_logits)
        voicing = (torch.sigmoid(voicing_logit) > cfg.model.voicing_threshold).long()

    lengths = durations.sum(1)
    mel, parts = model.synthesize(pitch_bw, voicing, energy_bw, units, durations,
                                  attrs[SPEAKER], lengths)
    info = {
        "source": src.utt_id,
        "target": req.target.utt_id,
        "transfer": sorted(req.transfer),
        "prosody_source": req.prosody_source,
        "n_frames": int(lengths[0]),
        "source_frames": src.n_frames,
        "seed": seed,
    }
    return ConversionResult(mel[0].numpy(), durations[0].numpy(), voicing[0].numpy(),
                            parts["energy"][0].numpy(), info)


def _istft(spectrum, cfg, length):
    """Weighted overlap-add inverse of the center-padded STFT framing."""
    win = hann_window(cfg.win_length)
    frames = np.fft.irfft(spectrum, n=cfg.n_fft, axis=-1)[:, :cfg.win_length] * win
    half = cfg.win_length // 2
    total = length + 2 * half
    out = np.zeros(total)
    norm = np.zeros(total)
    for n, frame in enumerate(frames):
        start = n * cfg.hop_length
        out[start:start + cfg.win_length] += frame
        norm[start:start + cfg.win_length] += win ** 2
    out /= np.maximum(norm, 1e-8)
    return out[half:half + length]


def _stft(samples, cfg):
    frames = frame_signal(samples, cfg) * hann_window(cfg.win_length)
    return np.fft.rfft(frames, n=cfg.n_fft, axis=-1)


def mel_to_magnitude(mel, cfg):
    """Least-squares linear magnitude from a log-mel power spectrogram."""
    power_mel = np.maximum(np.exp(np.asarray(mel, dtype=np.float64)) - cfg.log_eps, 0.0)
    inv = np.linalg.pinv(mel_filterbank(cfg))
    power = np.maximum(power_mel @ inv.T, 0.0)
    return np.sqrt(power)


def griffin_lim(magnitude, cfg, n_iter=60, seed=0):
    """Iterative phase reconstruction; output length N * hop samples."""
    length = len(magnitude) * cfg.hop_length
    rng = np.random.default_rng(seed)
    phase = np.exp(2j * np.pi * rng.random(magnitude.shape))
    samples = _istft(magnitude * phase, cfg, length)
    for _ in range(n_iter):
        rebuilt = _stft(samples, cfg)
        phase = np.exp(1j * np.angle(rebuilt))
        samples = _istft(magnitude * phase, cfg, length)
    return samples


def render_waveform(mel, cfg, n_iter=None, seed=None, vocoder_command=None):
    """Mel to waveform through the external vocoder seam or the fallback inversion."""
    fcfg = cfg.features
    mel = np.asarray(mel)
    if mel.ndim != 2 or mel.shape[1] != fcfg.n_mels:
        raise ValueError(f"mel has shape {mel.shape}, config expects (N, {fcfg.n_mels})")
    command = cfg.adapters.vocoder_command if vocoder_command is None else vocoder_command
    if command:
        return adapters.run_vocoder_adapter(command, mel, fcfg.sample_rate)
    n_iter = cfg.adapters.griffin_lim_iters if n_iter is None else n_iter
    seed = cfg.adapters.seed if seed is None else seed
    samples = griffin_lim(mel_to_magnitude(mel, fcfg), fcfg, n_iter, seed)
    peak = np.abs(samples).max()
    if peak > 1.0:
        samples = samples / peak
    return Waveform(samples.astype(np.float32), fcfg.sample_rate)


def features_from_wav(path, state, utt_id=None):
    cfg = state.config
    if state.vocab is None and not cfg.adapters.unit_command:
        raise ValueError("model state carries no unit vocabulary")
    wave = load_waveform(path, cfg.features.sample_rate)
    return extract_utterance(wave, cfg, state.vocab, utt_id or Path(path).stem, wav_path=path)


def request_from_entry(entry, state):
    """Build a ConversionRequest from a manifest entry.

    ``entry`` holds ``source`` and ``target`` WAV paths, a ``transfer`` preset
    (speaker | prosody | all | none) and optionally ``prosody_source``.
    """
    preset = entry.get("transfer", "speaker")
    if preset not in PRESETS:
        raise ValueError(f"unknown transfer preset {preset!r}")
    attrs, default_source = PRESETS[preset]
    prosody_source = entry.get("prosody_source") or default_source
    prosody_source = {"gt": GROUND_TRUTH, "predicted": PREDICTED}.get(prosody_source, prosody_source)
    # validate the flag combination before paying for feature extraction
    if prosody_source == GROUND_TRUTH and RHYTHM in attrs:
        raise ValueError("ground-truth prosody cannot be combined with rhythm transfer")
    src = features_from_wav(entry["source"], state)
    tgt = features_from_wav(entry["target"], state)
    return ConversionRequest(src, tgt, attrs, prosody_source)


def write_output(out_dir, name, result, wave):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_waveform(out_dir / f"{name}.wav", wave)
    meta = dict(result.info, duration_seconds=len(wave) / wave.sample_rate)
    (out_dir / f"{name}.json").write_text(json.dumps(meta, indent=2) + "\n")


def batch_convert(manifest, state, out_dir, seed=0):
    """Convert every manifest entry; failures are collected, not raised."""
    report = {"succeeded": [], "failed": []}
    for i, entry in enumerate(manifest):
        name = entry.get("id") or f"conv{i:04d}"
        try:
            req = request_from_entry(entry, state)
            result = convert(req, state, seed)
            wave = render_waveform(result.mel, state.config, seed=seed)
            write_output(out_dir, name, result, wave)
        except Exception as exc:  # per-item failure is reported, never fatal
            log.warning("conversion %s failed: %s", name, exc)
            report["failed"].append({"id": name, "reason": str(exc)})
            continue
        report["succeeded"].append({"id": name, "n_frames": result.n_frames})
    return report
