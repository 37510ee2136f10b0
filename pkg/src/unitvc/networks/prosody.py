"""Prosody predictor: duration net (unit rate) and pitch-energy net (frame rate)."""

import torch
from torch import nn

from .blocks import ResidualStack, fuse, length_regulate


def log_duration_target(durations):
    """Regression target log(l + 1); defined for every duration >= 1."""
    return torch.log(durations.to(torch.float32) + 1.0)


def decode_durations(log_durations, max_duration=100):
    """round(exp(x) - 1), clamped to [1, max_duration]."""
    return torch.round(torch.exp(log_durations) - 1.0).clamp(1, max_duration).to(torch.long)


class DurationNet(nn.Module):
    def __init__(self, d_e, d_a, width, n_blocks, kernel_size=5):
        super().__init__()
        self.stack = ResidualStack(d_e + d_a, width, 1, n_blocks, kernel_size)

    def forward(self, unit_emb, unit_lengths, a_r):
        return self.stack(fuse(unit_emb, a_r), unit_lengths).squeeze(-1)


class PitchEnergyNet(nn.Module):
    """Predicts pitch-bin logits, a voicing logit and energy-bin logits per frame."""

    def __init__(self, d_e, d_a, width, n_blocks, pitch_bins, energy_bins, kernel_size=5):
        super().__init__()
        self.pitch_bins = pitch_bins
        self.energy_bins = energy_bins
        self.stack = ResidualStack(d_e + d_a, width, pitch_bins + 1 + energy_bins, n_blocks,
                                   kernel_size)

    def forward(self, unit_emb, durations, a_p):
        frames, lengths = length_regulate(unit_emb, durations)
        out = self.stack(fuse(frames, a_p), lengths)
        pitch_logits, voicing_logit, energy_logits = torch.split(
            out, [self.pitch_bins, 1, self.energy_bins], dim=-1)
        return pitch_logits, voicing_logit.squeeze(-1), energy_logits, lengths
