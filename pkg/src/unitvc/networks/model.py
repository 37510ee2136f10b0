"""The full generator: attribute encoders, prosody predictor and synthesizer."""

from dataclasses import dataclass

import torch
from torch import nn

from .blocks import lengths_to_mask
from .encoders import AttributeEncoder
from .prosody import DurationNet, PitchEnergyNet
from .synthesizer import EnergyNet, FilterNet, SourceNet

KINDS = ("p", "r", "s")


@dataclass
class AttributeVector:
    """Utterance-level representation of one attribute (p, r or s)."""

    values: torch.Tensor
    kind: str

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown attribute kind {self.kind!r}")


def _values(a, kind):
    if isinstance(a, AttributeVector):
        if a.kind != kind:
            raise ValueError(f"expected an attribute vector of kind {kind!r}, got {a.kind!r}")
        return a.values
    return a


class VoiceConversionModel(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        m, g = cfg.model, cfg.grid
        self.cfg = cfg
        self.encoders = nn.ModuleDict(
            {k: AttributeEncoder(m.encoder_channels, m.d_a, m.encoder_heads) for k in KINDS})
        self.unit_embedding = nn.Embedding(cfg.units.vocab_size, m.d_e)
        nn.init.normal_(self.unit_embedding.weight, std=0.02)
        self.duration_net = DurationNet(m.d_e, m.d_a, m.width, m.duration_blocks, m.kernel_size)
        self.pitch_energy_net = PitchEnergyNet(m.d_e, m.d_a, m.width, m.pitch_energy_blocks,
                                               g.pitch_count, g.energy_count, m.kernel_size)
        self.source = SourceNet(g.pitch_count, m.d_e, m.d_a, m.width, cfg.features.n_mels,
                                m.source_blocks, m.kernel_size)
        self.filter = FilterNet(m.d_e, m.d_a, m.width, cfg.features.n_mels, m.filter_blocks,
                                m.filter_interp_after, m.kernel_size)
        self.energy = EnergyNet(g.energy_count, m.d_e, m.width, m.energy_blocks, m.kernel_size)

    def encode_attribute(self, wave, lengths=None, kind="s", features=None, frame_lengths=None):
        if kind not in KINDS:
            raise ValueError(f"unknown attribute kind {kind!r}")
        values = self.encoders[kind](wave, lengths, features, frame_lengths)
        return AttributeVector(values, kind)

    def predict_duration(self, units, unit_lengths, a_r):
        """Log-scale duration per unit, shape (B, K)."""
        emb = self.unit_embedding(units)
        return self.duration_net(emb, unit_lengths, _values(a_r, "r"))

    def predict_pitch_energy(self, units, durations, a_p):
        """Frame-level logits at the resolution given by ``durations``.

        Returns (pitch_logits, voicing_logit, energy_logits, frame_lengths);
        sigmoid of the logits gives bin weights and voicing probabilities.
        """
        emb = self.unit_embedding(units)
        return self.pitch_energy_net(emb, durations, _values(a_p, "p"))

    def filter_forward(self, units, durations, a_s, target_lengths):
        if int(target_lengths.min()) < 1:
            raise ValueError("target length must be >= 1")
        emb = self.unit_embedding(units)
        return self.filter(emb, durations, _values(a_s, "s"), target_lengths)

    def source_forward(self, pitch_bw, voicing, a_s, lengths):
        mask = lengths_to_mask(lengths, pitch_bw.shape[1])
        return self.source(pitch_bw, voicing, _values(a_s, "s"), lengths, mask)

    def energy_forward(self, energy_bw, lengths):
        mask = lengths_to_mask(lengths, energy_bw.shape[1])
        return self.energy(energy_bw, lengths, mask)

    def synthesize(self, pitch_bw, voicing, energy_bw, units, durations, a_s, lengths):
        """Source + filter, plus the energy scalar broadcast over mel channels.

        Returns the mel estimate (B, N, n_mels) and the three branch outputs.
        """
        source = self.source_forward(pitch_bw, voicing, a_s, lengths)
        filt = self.filter_forward(units, durations, a_s, lengths)
        energy = self.energy_forward(energy_bw, lengths)
        mel = source + filt + energy.unsqueeze(-1)
        return mel, {"source": source, "filter": filt, "energy": energy}
