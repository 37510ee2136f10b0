"""Synthetic speech-like utterances for toy training and tests.

Each utterance is a chain of segments: vowels (glottal pulse train through
formant resonators), fricatives (filtered noise) and short pauses.  A
"speaker" fixes the mean f0 and a vocal-tract scale applied to every formant.
"""

from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from .signal_features import Waveform

# (F1, F2, F3) in Hz
VOWELS = {
    "a": (730, 1090, 2440),
    "i": (270, 2290, 3010),
    "u": (300, 870, 2240),
    "e": (530, 1840, 2480),
    "o": (570, 840, 2410),
}
FRICATIVE_BANDS = {"s": (4000, 7000), "f": (1500, 6000)}


@dataclass(frozen=True)
class Speaker:
    mean_f0: float
    tract_scale: float


def _resonator(x, freq, bandwidth, sr):
    r = np.exp(-np.pi * bandwidth / sr)
    theta = 2 * np.pi * freq / sr
    a = [1.0, -2 * r * np.cos(theta), r * r]
    return lfilter([1.0 - r], a, x)


def glottal_source(f0, sr):
    """Pulse train following an f0 contour (Hz per sample), lightly low-passed."""
    phase = np.cumsum(f0 / sr)
    pulses = np.diff(np.floor(phase), prepend=0.0)
    return lfilter([1.0], [1.0, -0.9], pulses)


def vowel(f0, formants, sr):
    x = glottal_source(f0, sr)
    for i, f in enumerate(formants):
        x = _resonator(x, f, 60.0 + 40.0 * i, sr)
    return x


def fricative(n, band, sr, rng):
    x = rng.standard_normal(n)
    lo, hi = band
    return _resonator(x, 0.5 * (lo + hi), hi - lo, sr)


def _envelope(n, sr, ramp=0.01):
    k = min(n // 2, int(ramp * sr))
    env = np.ones(n)
    if k:
        env[:k] = np.linspace(0, 1, k)
        env[-k:] = np.linspace(1, 0, k)
    return env


def make_utterance(rng, speaker, duration=1.0, sr=16000, peak=0.5, vowels=None):
    """One utterance of roughly ``duration`` seconds."""
    vowels = list(VOWELS) if vowels is None else list(vowels)
    total = int(duration * sr)
    t = np.arange(total) / sr
    # declining f0 with a slow random modulation
    f0 = speaker.mean_f0 * (1.1 - 0.2 * t / duration
                            + 0.06 * np.sin(2 * np.pi * rng.uniform(1.5, 3.5) * t + rng.uniform(0, 6.3)))
    out = np.zeros(total)
    pos = int(rng.uniform(0.03, 0.08) * sr)
    while pos < total - int(0.05 * sr):
        seg = min(int(rng.uniform(0.08, 0.22) * sr), total - pos)
        kind = rng.random()
        if kind < 0.7:
            formants = [f * speaker.tract_scale for f in VOWELS[vowels[rng.integers(len(vowels))]]]
            x = vowel(f0[pos:pos + seg], formants, sr)
        elif kind < 0.9:
            band = FRICATIVE_BANDS[list(FRICATIVE_BANDS)[rng.integers(len(FRICATIVE_BANDS))]]
            x = 0.3 * fricative(seg, band, sr, rng)
        else:
            x = np.zeros(seg)
        x = x * _envelope(seg, sr) * rng.uniform(0.5, 1.0)
        out[pos:pos + seg] += x / (np.abs(x).max() + 1e-9)
        pos += seg
    out = out / (np.abs(out).max() + 1e-9) * peak
    return Waveform(out.astype(np.float32), sr)


def toy_corpus(n_utterances=10, seed=0, duration=1.0, sr=16000):
    """``n_utterances`` clips from a handful of synthetic speakers."""
    rng = np.random.default_rng(seed)
    speakers = [Speaker(110.0, 1.0), Speaker(220.0, 1.15), Speaker(160.0, 0.92),
                Speaker(95.0, 0.95), Speaker(250.0, 1.2)]
    clips = []
    for i in range(n_utterances):
        spk = speakers[i % len(speakers)]
        clips.append(make_utterance(rng, spk, duration * rng.uniform(0.9, 1.2), sr))
    return clips


def steady_vowel(name, f0=150.0, duration=1.0, sr=16000, tract_scale=1.0, peak=0.5):
    """A sustained vowel at constant f0."""
    n = int(duration * sr)
    x = vowel(np.full(n, f0), [f * tract_scale for f in VOWELS[name]], sr)
    x = x * _envelope(n, sr)
    return Waveform((x / (np.abs(x).max() + 1e-9) * peak).astype(np.float32), sr)
