import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.io import wavfile
from scipy.signal import sawtooth

from unitvc.config import FeatureConfig
from unitvc.signal_features import (
    PitchTrack,
    Waveform,
    align_length,
    energy_contour,
    estimate_pitch,
    load_waveform,
    mean_normalize_pitch,
    mel_filterbank,
    mel_spectrogram,
)

SR = 16000
FC = FeatureConfig()


def tone(f0, seconds=1.0, kind="sine", amp=0.5):
    t = np.arange(int(seconds * SR)) / SR
    x = np.sin(2 * np.pi * f0 * t) if kind == "sine" else sawtooth(2 * np.pi * f0 * t)
    return Waveform((amp * x).astype(np.float32), SR)


# -- loading -------------------------------------------------------------------

def test_load_mono_16k(tmp_path):
    p = tmp_path / "a.wav"
    wavfile.write(p, SR, (np.random.default_rng(0).uniform(-0.5, 0.5, SR) * 32767).astype(np.int16))
    w = load_waveform(p, SR)
    assert len(w) == 16000 and w.sample_rate == SR
    assert np.abs(w.samples).max() <= 1.0


def test_load_resamples_32k(tmp_path):
    p = tmp_path / "a.wav"
    wavfile.write(p, 32000, np.zeros(32000, dtype=np.float32))
    assert len(load_waveform(p, SR)) == 16000


def test_load_stereo_is_averaged(tmp_path):
    p = tmp_path / "s.wav"
    left = np.full(1000, 0.5, dtype=np.float32)
    wavfile.write(p, SR, np.stack([left, -0.25 * np.ones(1000, np.float32)], axis=1))
    np.testing.assert_allclose(load_waveform(p, SR).samples, 0.125)


def test_load_int16_scaling(tmp_path):
    p = tmp_path / "i.wav"
    wavfile.write(p, SR, np.array([-32768, 0, 16384], dtype=np.int16))
    np.testing.assert_allclose(load_waveform(p, SR).samples, [-1.0, 0.0, 0.5])


def test_load_empty_audio(tmp_path):
    p = tmp_path / "e.wav"
    wavfile.write(p, SR, np.zeros(0, dtype=np.int16))
    with pytest.raises(ValueError, match="empty audio"):
        load_waveform(p, SR)


def test_load_missing_and_garbage(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_waveform(tmp_path / "nope.wav", SR)
    bad = tmp_path / "bad.wav"
    bad.write_bytes(b"not a wav file at all")
    with pytest.raises(ValueError):
        load_waveform(bad, SR)


def test_waveform_rejects_nonfinite():
    with pytest.raises(ValueError):
        Waveform(np.array([0.0, np.nan], dtype=np.float32), SR)


# -- mel / energy --------------------------------------------------------------

def test_mel_frame_count():
    mel = mel_spectrogram(tone(220), FC)
    assert mel.shape == (50, 80)
    assert np.isfinite(mel).all()


def test_mel_silence_is_log_eps():
    mel = mel_spectrogram(Waveform(np.zeros(SR, np.float32), SR), FC)
    np.testing.assert_allclose(mel, np.log(FC.log_eps), rtol=1e-6)


def test_mel_too_short():
    with pytest.raises(ValueError, match="shorter than one analysis window"):
        mel_spectrogram(Waveform(np.zeros(500, np.float32), SR), FC)


def test_mel_filterbank_peaks_follow_htk_scale():
    fb = mel_filterbank(FC)
    assert fb.shape == (80, FC.n_fft // 2 + 1)
    assert (fb >= 0).all()
    peaks = fb.argmax(axis=1)
    assert (np.diff(peaks) >= 0).all()


def test_energy_matches_direct_dft():
    # oracle: explicit DFT matrix on hand-built centred frames
    w = tone(180, seconds=0.1, kind="saw")
    win = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(FC.win_length) / FC.win_length)
    x = w.samples.astype(np.float64)
    half = FC.win_length // 2
    padded = np.concatenate([x[half:0:-1], x, x[-2:-half - 2:-1]])
    k = np.arange(FC.n_fft // 2 + 1)[:, None]
    dft = np.exp(-2j * np.pi * k * np.arange(FC.n_fft)[None] / FC.n_fft)
    expected = []
    for n in range(len(x) // FC.hop_length):
        frame = padded[n * FC.hop_length:n * FC.hop_length + FC.win_length] * win
        expected.append(np.sqrt(np.sum(np.abs(dft @ frame) ** 2)))
    np.testing.assert_allclose(energy_contour(w, FC), expected, rtol=1e-5)


def test_energy_silence_and_length():
    silent = Waveform(np.zeros(SR, np.float32), SR)
    assert (energy_contour(silent, FC) == 0).all()
    w = tone(300)
    assert len(energy_contour(w, FC)) == len(mel_spectrogram(w, FC))
    with pytest.raises(ValueError, match="framing mismatch"):
        energy_contour(w, FC, n_frames=49)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.01, 10.0))
def test_energy_homogeneity(alpha):
    w = tone(150, seconds=0.2, kind="saw", amp=0.1)
    scaled = Waveform((w.samples.astype(np.float64) * alpha).astype(np.float32), SR)
    base = energy_contour(w, FC).astype(np.float64)
    np.testing.assert_allclose(energy_contour(scaled, FC), alpha * base, rtol=1e-5, atol=1e-6)


# -- pitch ---------------------------------------------------------------------

def test_pitch_sawtooth_200():
    pt = estimate_pitch(tone(200, kind="saw"), FC)
    assert len(pt) == 50
    voiced = pt.voicing == 1
    assert voiced.mean() >= 0.9
    assert (np.abs(pt.pitch[voiced] - 200) <= 5).mean() >= 0.9


@pytest.mark.parametrize("f0", [70.0, 110.0, 250.0, 380.0])
def test_pitch_sines_across_range(f0):
    pt = estimate_pitch(tone(f0), FC)
    voiced = pt.voicing == 1
    assert voiced.mean() >= 0.9
    assert np.median(np.abs(pt.pitch[voiced] - f0)) < 0.02 * f0


def test_pitch_white_noise_unvoiced():
    noise = np.random.default_rng(1).standard_normal(SR).astype(np.float32) * 0.3
    pt = estimate_pitch(Waveform(noise, SR), FC)
    assert (pt.voicing == 0).mean() >= 0.8


def test_pitch_silence_unvoiced():
    pt = estimate_pitch(Waveform(np.zeros(SR, np.float32), SR), FC)
    assert (pt.voicing == 0).all() and (pt.pitch == 0).all()


def test_pitch_range_respected():
    pt = estimate_pitch(tone(150, kind="saw"), FC)
    v = pt.voicing == 1
    assert ((pt.pitch[v] >= FC.pitch_fmin) & (pt.pitch[v] <= FC.pitch_fmax)).all()
    assert (pt.pitch[~v] == 0).all()


# -- normalization -------------------------------------------------------------

def test_normalize_examples():
    pt = mean_normalize_pitch(PitchTrack(np.array([100.0, 200.0]), np.array([1, 1])))
    np.testing.assert_allclose(pt.pitch, [-50, 50])
    assert pt.mean_f0 == 150

    pt = mean_normalize_pitch(PitchTrack(np.array([-50.0, 50.0]), np.array([1, 1])))
    np.testing.assert_allclose(pt.pitch, [-50, 50])
    assert pt.mean_f0 == 0

    pt = mean_normalize_pitch(PitchTrack(np.array([100.0, 0.0, 300.0]), np.array([1, 0, 1])))
    np.testing.assert_allclose(pt.pitch, [-100, 0, 100])
    assert pt.mean_f0 == 200


def test_normalize_all_unvoiced_uses_default():
    pt = mean_normalize_pitch(PitchTrack(np.zeros(4), np.zeros(4, np.int64)), 120.0)
    assert pt.mean_f0 == 120.0 and (pt.pitch == 0).all()


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(60, 400), st.booleans()), min_size=1, max_size=40))
def test_normalize_zero_mean_and_idempotent(frames):
    pitch = np.array([f for f, _ in frames])
    voicing = np.array([int(v) for _, v in frames])
    pitch = np.where(voicing == 1, pitch, 0.0)
    once = mean_normalize_pitch(PitchTrack(pitch, voicing))
    if voicing.any():
        assert abs(once.pitch[voicing == 1].mean()) < 1e-6
    assert (once.pitch[voicing == 0] == 0).all()
    twice = mean_normalize_pitch(once)
    np.testing.assert_array_equal(twice.pitch, once.pitch)
    assert twice.mean_f0 == once.mean_f0


def test_pitch_track_invariants():
    with pytest.raises(ValueError):
        PitchTrack(np.zeros(3), np.zeros(2, np.int64))
    with pytest.raises(ValueError):
        PitchTrack(np.zeros(2), np.array([0, 2]))


# -- purity / alignment --------------------------------------------------------

def test_extraction_is_pure():
    w = tone(170, kind="saw")
    assert np.array_equal(mel_spectrogram(w, FC), mel_spectrogram(w, FC))
    a, b = estimate_pitch(w, FC), estimate_pitch(w, FC)
    assert np.array_equal(a.pitch, b.pitch) and np.array_equal(a.voicing, b.voicing)


def test_align_length_nearest():
    np.testing.assert_array_equal(align_length(np.array([1, 2, 3]), 6), [1, 1, 2, 2, 3, 3])
    np.testing.assert_array_equal(align_length(np.arange(6), 3), [0, 2, 4])
