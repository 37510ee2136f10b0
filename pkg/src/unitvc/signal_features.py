"""Waveform-level features: log-mel spectrogram, energy, pitch and voicing.

All framing is center-padded with frame ``n`` centred on sample ``n * hop``,
and the number of frames is ``floor(T / hop)``.  Mel, energy, pitch and
voicing therefore share one time axis.
"""

from dataclasses import dataclass
from functools import lru_cache
from math import gcd
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32)
        if self.samples.ndim != 1:
            raise ValueError("waveform must be one-dimensional")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("waveform contains non-finite samples")

    def __len__(self):
        return len(self.samples)

    @property
    def duration(self):
        return len(self.samples) / self.sample_rate


@dataclass
class PitchTrack:
    pitch: np.ndarray
    voicing: np.ndarray
    normalized: bool = False
    mean_f0: float = 0.0

    def __post_init__(self):
        self.pitch = np.asarray(self.pitch, dtype=np.float64)
        self.voicing = np.asarray(self.voicing, dtype=np.int64)
        if self.pitch.shape != self.voicing.shape:
            raise ValueError("pitch and voicing lengths differ")
        if not np.isin(self.voicing, (0, 1)).all():
            raise ValueError("voicing entries must be 0 or 1")

    def __len__(self):
        return len(self.pitch)


def load_waveform(path, target_rate=16000):
    """Read a PCM or float WAV file as mono float32 at ``target_rate``."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such audio file: {path}")
    try:
        rate, data = wavfile.read(path)
    except Exception as exc:
        raise ValueError(f"unreadable audio file {path}: {exc}") from exc

    if data.dtype == np.uint8:
        data = (data.astype(np.float32) - 128.0) / 128.0
    elif data.dtype == np.int16:
        data = data.astype(np.float32) / 32768.0
    elif data.dtype == np.int32:
        data = data.astype(np.float32) / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        data = data.astype(np.float32)
    else:
        raise ValueError(f"unsupported encoding {data.dtype} in {path}")

    if data.ndim == 2:
        data = data.mean(axis=1)
    if data.size == 0:
        raise ValueError(f"empty audio: {path}")

    if rate != target_rate:
        g = gcd(int(rate), int(target_rate))
        data = resample_poly(data, target_rate // g, rate // g).astype(np.float32)
    return Waveform(data, target_rate)


def save_waveform(path, wave):
    """Write a 16-bit PCM WAV, clipping to [-1, 1]."""
    pcm = np.clip(wave.samples, -1.0, 1.0)
    wavfile.write(Path(path), wave.sample_rate, (pcm * 32767.0).astype(np.int16))


def num_frames(n_samples, cfg):
    return n_samples // cfg.hop_length


def frame_signal(samples, cfg):
    """Center-padded analysis frames, shape (floor(T/hop), win_length)."""
    n = num_frames(len(samples), cfg)
    if len(samples) < cfg.win_length or n < 1:
        raise ValueError(
            f"waveform shorter than one analysis window ({len(samples)} < {cfg.win_length})"
        )
    half = cfg.win_length // 2
    padded = np.pad(np.asarray(samples, dtype=np.float64), (half, half), mode="reflect")
    starts = np.arange(n) * cfg.hop_length
    view = np.lib.stride_tricks.sliding_window_view(padded, cfg.win_length)
    return view[starts]


@lru_cache(maxsize=8)
def hann_window(length):
    return np.hanning(length + 1)[:-1]  # periodic


def linear_spectrogram(samples, cfg):
    """Magnitude STFT with a periodic Hann window, shape (N, n_fft // 2 + 1)."""
    frames = frame_signal(samples, cfg) * hann_window(cfg.win_length)
    return np.abs(np.fft.rfft(frames, n=cfg.n_fft, axis=-1))


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


@lru_cache(maxsize=8)
def _mel_filterbank(sample_rate, n_fft, n_mels, fmin, fmax):
    fft_freqs = np.linspace(0.0, sample_rate / 2, n_fft // 2 + 1)
    mel_points = np.linspace(_hz_to_mel(fmin), _hz_to_mel(fmax), n_mels + 2)
    hz_points = _mel_to_hz(mel_points)
    fb = np.zeros((n_mels, len(fft_freqs)))
    for m in range(n_mels):
        lo, center, hi = hz_points[m], hz_points[m + 1], hz_points[m + 2]
        rising = (fft_freqs - lo) / (center - lo)
        falling = (hi - fft_freqs) / (hi - center)
        fb[m] = np.maximum(0.0, np.minimum(rising, falling))
        fb[m] *= 2.0 / (hi - lo)  # area normalisation
    fb.setflags(write=False)
    return fb


def mel_filterbank(cfg):
    """Triangular filters on the HTK mel scale, shape (n_mels, n_fft // 2 + 1)."""
    return _mel_filterbank(cfg.sample_rate, cfg.n_fft, cfg.n_mels,
                           float(cfg.mel_fmin), float(cfg.mel_fmax))


def mel_spectrogram(wave, cfg):
    """Log-mel power spectrogram, shape (N, n_mels), entries log(mel + eps)."""
    power = linear_spectrogram(wave.samples, cfg) ** 2
    mel = power @ mel_filterbank(cfg).T
    return np.log(mel + cfg.log_eps).astype(np.float32)


def energy_contour(wave, cfg, n_frames=None):
    """Frame-wise L2 norm of the linear magnitude spectrogram.

    ``n_frames`` is the mel length of the same utterance, when known; a
    mismatch means the two were framed with different settings.
    """
    energy = np.sqrt((linear_spectrogram(wave.samples, cfg) ** 2).sum(axis=-1))
    if n_frames is not None and len(energy) != n_frames:
        raise ValueError(f"framing mismatch: energy has {len(energy)} frames, mel has {n_frames}")
    return energy.astype(np.float32)


def estimate_pitch(wave, cfg):
    """Normalized-autocorrelation f0 tracker on the mel frame grid.

    A frame is voiced when its best normalized autocorrelation inside
    [sr/fmax, sr/fmin] reaches ``periodicity_threshold``.  Among lags scoring
    within 90% of the best one the shortest is taken, which suppresses
    octave-down errors on strongly periodic input.
    """
    sr = wave.sample_rate
    frames = frame_signal(wave.samples, cfg)
    lag_min = int(np.floor(sr / cfg.pitch_fmax))
    lag_max = int(np.ceil(sr / cfg.pitch_fmin))
    seg = cfg.win_length - lag_max - 1
    if seg < lag_max:
        raise ValueError("analysis window too short for the pitch search range")

    lags = np.arange(lag_min, lag_max + 1)
    pitch = np.zeros(len(frames))
    voicing = np.zeros(len(frames), dtype=np.int64)

    for n, frame in enumerate(frames):
        head = frame[:seg] - frame[:seg].mean()
        if head.std() < cfg.silence_rms:
            continue
        shifted = np.lib.stride_tricks.sliding_window_view(frame, seg)[lag_min - 1:lag_max + 2]
        # Pearson form: each shifted window is centred on its own mean
        shifted_var = np.einsum("ij,ij->i", shifted, shifted) - seg * shifted.mean(1) ** 2
        acf = shifted @ head / np.sqrt((head @ head) * np.maximum(shifted_var, 0.0) + 1e-20)
        # acf[i] corresponds to lag lag_min - 1 + i; keep one guard lag on each side
        core = acf[1:-1]
        best = core.max()
        if best < cfg.periodicity_threshold:
            continue
        # local maxima close to the best score; take the shortest lag
        is_peak = (core >= acf[:-2]) & (core >= acf[2:])
        candidates = np.flatnonzero(is_peak & (core >= 0.9 * best))
        i = candidates[0] if len(candidates) else int(np.argmax(core))
        y0, y1, y2 = acf[i], acf[i + 1], acf[i + 2]
        denom = y0 - 2 * y1 + y2
        offset = 0.5 * (y0 - y2) / denom if denom < 0 else 0.0
        # the lag search already bounds f0; interpolation can step just past an edge
        pitch[n] = np.clip(sr / (lags[i] + offset), cfg.pitch_fmin, cfg.pitch_fmax)
        voicing[n] = 1
    return PitchTrack(pitch, voicing)


def mean_normalize_pitch(pt, default_mean_f0=120.0):
    """Subtract the voiced-frame mean; unvoiced frames are set to 0.

    An all-unvoiced track uses ``default_mean_f0`` as its mean.  Tracks that
    are already normalized are returned unchanged.
    """
    if pt.normalized:
        return pt
    voiced = pt.voicing.astype(bool)
    mean_f0 = float(pt.pitch[voiced].mean()) if voiced.any() else float(default_mean_f0)
    pitch = np.where(voiced, pt.pitch - mean_f0, 0.0)
    return PitchTrack(pitch, pt.voicing.copy(), normalized=True, mean_f0=mean_f0)


def align_length(seq, length):
    """Nearest-neighbour resampling of a sequence along its first axis."""
    seq = np.asarray(seq)
    if len(seq) == length:
        return seq
    if len(seq) == 0:
        raise ValueError("cannot resample an empty sequence")
    idx = np.floor(np.arange(length) * len(seq) / length).astype(np.int64)
    return seq[np.minimum(idx, len(seq) - 1)]
