"""File- and process-based seams for external models.

Every command is a template string; ``{wav}``, ``{mel}`` and ``{out}`` are
replaced with file paths before the command runs.  The external program
must write its result to ``{out}``:

* pitch adapter: ``.npz`` with ``pitch`` (Hz), ``voicing`` (0/1) and ``hop`` (seconds)
* unit adapter: ``.npz`` with ``units`` (one id per frame) and ``hop`` (seconds)
* vocoder adapter: reads a ``.npy`` float32 log-mel matrix (N x n_mels), writes a WAV
"""

import shlex
import subprocess
import tempfile
from pathlib import Path

import numpy as np

from .signal_features import align_length, load_waveform


class AdapterError(RuntimeError):
    pass


def _run(command, **paths):
    args = [part.format(**{k: str(v) for k, v in paths.items()}) for part in shlex.split(command)]
    proc = subprocess.run(args, capture_output=True, text=True)
    if proc.returncode != 0:
        raise AdapterError(f"adapter failed ({proc.returncode}): {' '.join(args)}\n{proc.stderr.strip()}")


def _read_npz(path, keys):
    try:
        with np.load(path) as data:
            return [np.asarray(data[k]) for k in keys]
    except (OSError, KeyError, ValueError) as exc:
        raise AdapterError(f"bad adapter output {path}: {exc}") from exc


def run_pitch_adapter(command, wav_path):
    with tempfile.TemporaryDirectory() as tmp:
        out = Path(tmp) / "pitch.npz"
        _run(command, wav=wav_path, out=out)
        pitch, voicing, hop = _read_npz(out, ("pitch", "voicing", "hop"))
    return pitch.astype(np.float64), voicing.astype(np.int64), float(hop)


def load_unit_record(path):
    units, hop = _read_npz(path, ("units", "hop"))
    return units.astype(np.int64), float(hop)


def save_unit_record(path, units, hop):
    with open(path, "wb") as fh:
        np.savez(fh, units=np.asarray(units, dtype=np.int64), hop=np.float64(hop))


def run_unit_adapter(command, wav_path):
    with tempfile.TemporaryDirectory() as tmp:
        out = Path(tmp) / "units.npz"
        _run(command, wav=wav_path, out=out)
        return load_unit_record(out)


def to_frame_grid(seq, n_frames, hop=None, frame_hop=None):
    """Map an adapter sequence onto the mel frame grid (nearest neighbour).

    With both hops (seconds) known, frame n reads the adapter frame closest in
    time to n * frame_hop; otherwise the sequence is stretched by length.
    """
    seq = np.asarray(seq)
    if len(seq) == 0:
        raise AdapterError("adapter returned an empty sequence")
    if not hop or not frame_hop:
        return align_length(seq, n_frames)
    idx = np.rint(np.arange(n_frames) * frame_hop / hop).astype(np.int64)
    return seq[np.clip(idx, 0, len(seq) - 1)]


def run_vocoder_adapter(command, mel, sample_rate):
    with tempfile.TemporaryDirectory() as tmp:
        mel_path = Path(tmp) / "mel.npy"
        out = Path(tmp) / "out.wav"
        np.save(mel_path, np.asarray(mel, dtype=np.float32))
        _run(command, mel=mel_path, out=out)
        if not out.is_file():
            raise AdapterError("vocoder adapter produced no WAV")
        return load_waveform(out, sample_rate)


def read_embedding_file(path):
    """Read ``id v1 v2 ...`` lines (whitespace separated) into a dict."""
    table = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        if len(parts) < 2:
            raise ValueError(f"{path}:{lineno}: expected an id followed by values")
        table[parts[0]] = np.array([float(v) for v in parts[1:]])
    return table


def write_embedding_file(path, table):
    with open(path, "w") as fh:
        for key, vec in table.items():
            fh.write(key + " " + " ".join(repr(float(v)) for v in vec) + "\n")
