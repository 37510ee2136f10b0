"""Utterance-level attribute encoders over raw waveforms."""

import torch
from torch import nn

from .blocks import lengths_to_mask

# (kernel, stride) of the strided feature extractor: 5 * 8 * 8 = 320 samples per frame
CONV_LAYERS = ((10, 5), (8, 8), (8, 8))


def feature_lengths(n_samples):
    lengths = n_samples
    for kernel, stride in CONV_LAYERS:
        lengths = torch.div(lengths - kernel, stride, rounding_mode="floor") + 1
    return lengths


def min_samples():
    """Shortest waveform that yields one backbone frame."""
    need = 1
    for kernel, stride in reversed(CONV_LAYERS):
        need = (need - 1) * stride + kernel
    return need


class ChannelNorm(nn.Module):
    """LayerNorm over channels of a (B, C, T) tensor; independent of padding."""

    def __init__(self, channels):
        super().__init__()
        self.norm = nn.LayerNorm(channels)

    def forward(self, x):
        return self.norm(x.transpose(1, 2)).transpose(1, 2)


class ConvFeatureExtractor(nn.Module):
    def __init__(self, channels):
        super().__init__()
        layers = []
        in_ch = 1
        for kernel, stride in CONV_LAYERS:
            layers += [nn.Conv1d(in_ch, channels, kernel, stride), ChannelNorm(channels), nn.GELU()]
            in_ch = channels
        self.layers = nn.Sequential(*layers)

    def forward(self, wave):
        # (B, T) -> (B, frames, C)
        return self.layers(wave.unsqueeze(1)).transpose(1, 2)


class AttributeEncoder(nn.Module):
    """Strided CNN, one self-attention layer, masked mean pooling, linear head.

    ``forward`` also accepts precomputed backbone features (B, frames, C)
    through ``features=``, which skips the CNN; this is the seam for
    externally computed (e.g. pretrained) representations.
    """

    def __init__(self, channels, d_a, heads=4):
        super().__init__()
        self.extractor = ConvFeatureExtractor(channels)
        self.proj = nn.Linear(channels, channels)
        self.transformer = nn.TransformerEncoderLayer(
            channels, heads, dim_feedforward=2 * channels, dropout=0.0,
            activation="gelu", batch_first=True)
        self.head = nn.Linear(channels, d_a)

    def backbone(self, wave=None, lengths=None, features=None, frame_lengths=None):
        if features is None:
            if wave.shape[1] < min_samples():
                raise ValueError(f"waveform shorter than one backbone frame ({min_samples()} samples)")
            if lengths is None:
                lengths = torch.full((len(wave),), wave.shape[1], dtype=torch.long)
            if int(lengths.min()) < min_samples():
                raise ValueError(f"waveform shorter than one backbone frame ({min_samples()} samples)")
            features = self.extractor(wave)
            frame_lengths = feature_lengths(lengths)
        elif frame_lengths is None:
            frame_lengths = torch.full((len(features),), features.shape[1], dtype=torch.long)
        mask = lengths_to_mask(frame_lengths, features.shape[1])
        h = self.transformer(self.proj(features), src_key_padding_mask=~mask)
        return h, mask

    def pool(self, h, mask):
        m = mask.unsqueeze(-1).to(h.dtype)
        pooled = (h * m).sum(1) / m.sum(1).clamp_min(1.0)
        return self.head(pooled)

    def forward(self, wave=None, lengths=None, features=None, frame_lengths=None):
        h, mask = self.backbone(wave, lengths, features, frame_lengths)
        return self.pool(h, mask)
