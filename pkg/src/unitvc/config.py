"""System configuration, fingerprints and the flat ``key = value`` file format."""

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path


@dataclass
class FeatureConfig:
    sample_rate: int = 16000
    hop_length: int = 320  # 20 ms, one mel frame per unit frame
    win_length: int = 1024
    n_fft: int = 1024
    n_mels: int = 80
    mel_fmin: float = 0.0
    mel_fmax: float = 8000.0
    log_eps: float = 1e-5
    pitch_fmin: float = 60.0
    pitch_fmax: float = 400.0
    periodicity_threshold: float = 0.3
    silence_rms: float = 1e-4
    default_mean_f0: float = 120.0


@dataclass
class GridConfig:
    pitch_min: float = -250.0
    pitch_width: float = 2.5
    pitch_count: int = 200
    pitch_sigma: float = 4.0
    energy_min: float = 0.0
    energy_width: float = 1.0
    energy_count: int = 200
    energy_sigma: float = 4.0


@dataclass
class UnitConfig:
    vocab_size: int = 200
    kmeans_iters: int = 50
    seed: int = 0


@dataclass
class ModelConfig:
    d_a: int = 128
    d_e: int = 128
    width: int = 256
    kernel_size: int = 5
    filter_blocks: int = 16
    source_blocks: int = 16
    energy_blocks: int = 4
    duration_blocks: int = 2
    pitch_energy_blocks: int = 6
    filter_interp_after: int = 8
    encoder_channels: int = 128
    encoder_heads: int = 4
    disc_channels: int = 32
    disc_layers: int = 5
    max_duration: int = 100
    voicing_threshold: float = 0.5


@dataclass
class TrainConfig:
    w_recon_l1: float = 1.0
    w_adv_gen: float = 0.1
    w_adv_disc: float = 0.1
    w_voicing_bce: float = 1.0
    w_duration_mse: float = 1.0
    w_pitch_bin_bce: float = 1.0
    w_energy_bin_bce: float = 1.0
    w_pitch_consistency_mse: float = 1.0
    w_energy_consistency_mse: float = 1.0
    lr_gen: float = 2e-4
    lr_disc: float = 2e-4
    batch_size: int = 8
    steps: int = 1000
    checkpoint_every: int = 100
    seed: int = 0
    joint_optimization: bool = True
    mix_coef: float = 0.5
    grad_clip: float = 5.0


@dataclass
class AdapterConfig:
    """External seams. Empty command strings select the internal fallbacks."""

    pitch_command: str = ""
    unit_command: str = ""
    vocoder_command: str = ""
    griffin_lim_iters: int = 60
    seed: int = 0


SECTIONS = {
    "features": FeatureConfig,
    "grid": GridConfig,
    "units": UnitConfig,
    "model": ModelConfig,
    "train": TrainConfig,
    "adapters": AdapterConfig,
}

# sections that define what cached features mean / what parameters mean
FEATURE_SECTIONS = ("features", "units")
MODEL_SECTIONS = ("features", "grid", "units", "model")


@dataclass
class SystemConfig:
    features: FeatureConfig = field(default_factory=FeatureConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    units: UnitConfig = field(default_factory=UnitConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    adapters: AdapterConfig = field(default_factory=AdapterConfig)

    @classmethod
    def toy(cls):
        """Narrow networks and a small vocabulary for CPU-scale runs.

        Block counts and bin grids are left at their defaults.
        """
        cfg = cls()
        cfg.units.vocab_size = 16
        cfg.model.d_a = 32
        cfg.model.d_e = 32
        cfg.model.width = 64
        cfg.model.encoder_channels = 32
        cfg.model.disc_channels = 16
        cfg.train.batch_size = 10
        cfg.train.lr_gen = 1e-3
        cfg.train.lr_disc = 1e-3
        cfg.train.steps = 300
        return cfg

    def to_flat(self):
        flat = {}
        for name in SECTIONS:
            for key, value in dataclasses.asdict(getattr(self, name)).items():
                flat[f"{name}.{key}"] = value
        return flat

    @classmethod
    def from_flat(cls, flat):
        cfg = cls()
        for dotted, value in flat.items():
            section, _, key = dotted.partition(".")
            if section not in SECTIONS or not hasattr(getattr(cfg, section), key):
                raise KeyError(f"unknown config key: {dotted}")
            target = getattr(cfg, section)
            current = getattr(target, key)
            setattr(target, key, _coerce(value, current, dotted))
        return cfg

    def _hash(self, sections):
        flat = {k: v for k, v in self.to_flat().items() if k.split(".")[0] in sections}
        blob = json.dumps(flat, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def fingerprint(self):
        """Hash of every field that changes the meaning of model parameters."""
        return self._hash(MODEL_SECTIONS)

    def feature_fingerprint(self):
        """Hash of every field that changes the content of a feature cache."""
        return self._hash(FEATURE_SECTIONS)

    def dumps(self):
        lines = ["# unitvc configuration (flat key = value; '#' starts a comment)"]
        current = None
        for dotted, value in self.to_flat().items():
            section = dotted.split(".")[0]
            if section != current:
                lines.append("")
                lines.append(f"# [{section}]")
                current = section
            lines.append(f"{dotted} = {json.dumps(value)}")
        return "\n".join(lines) + "\n"

    def save(self, path):
        Path(path).write_text(self.dumps())

    @classmethod
    def loads(cls, text):
        flat = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"line {lineno}: expected 'key = value'")
            key, _, value = line.partition("=")
            value = value.strip()
            try:
                flat[key.strip()] = json.loads(value)
            except json.JSONDecodeError:
                flat[key.strip()] = value
        return cls.from_flat(flat)

    @classmethod
    def load(cls, path):
        return cls.loads(Path(path).read_text())


def _coerce(value, current, key):
    if isinstance(current, bool):
        if isinstance(value, str):
            value = value.lower() in ("1", "true", "yes", "on")
        return bool(value)
    if isinstance(current, int):
        if isinstance(value, float) and not value.is_integer():
            raise ValueError(f"{key}: expected an integer, got {value}")
        return int(value)
    if isinstance(current, float):
        return float(value)
    return str(value)
