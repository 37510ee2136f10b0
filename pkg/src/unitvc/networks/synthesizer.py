"""Source, filter and energy branches of the mel synthesizer."""

from torch import nn

from ..bins import BinEmbeddingTable, apply_voicing, encode_with_embeddings
from .blocks import ResidualStack, fuse, length_regulate


class FilterNet(nn.Module):
    """Expanded unit embeddings fused with the speaker vector.

    The hidden sequence is resampled to the mel length after
    ``interp_after`` blocks.
    """

    def __init__(self, d_e, d_a, width, n_mels, n_blocks, interp_after, kernel_size=5):
        super().__init__()
        self.stack = ResidualStack(d_e + d_a, width, n_mels, n_blocks, kernel_size,
                                   interp_after=interp_after)

    def forward(self, unit_emb, durations, a_s, target_lengths):
        frames, lengths = length_regulate(unit_emb, durations)
        return self.stack(fuse(frames, a_s), lengths, target_lengths)


class SourceNet(nn.Module):
    def __init__(self, pitch_bins, d_e, d_a, width, n_mels, n_blocks, kernel_size=5):
        super().__init__()
        self.table = BinEmbeddingTable(pitch_bins, d_e, with_unvoiced=True)
        self.stack = ResidualStack(d_e + d_a, width, n_mels, n_blocks, kernel_size)

    def encode(self, pitch_bw, voicing, mask=None):
        voiced = voicing.bool() if mask is None else voicing.bool() & mask
        encoded = encode_with_embeddings(pitch_bw, self.table, mask=voiced)
        return apply_voicing(encoded, voicing, self.table)

    def forward(self, pitch_bw, voicing, a_s, lengths, mask=None):
        if pitch_bw.shape[:-1] != voicing.shape:
            raise ValueError("pitch bin weights and voicing differ in length")
        return self.stack(fuse(self.encode(pitch_bw, voicing, mask), a_s), lengths)


class EnergyNet(nn.Module):
    def __init__(self, energy_bins, d_e, width, n_blocks, kernel_size=5):
        super().__init__()
        self.table = BinEmbeddingTable(energy_bins, d_e)
        self.stack = ResidualStack(d_e, width, 1, n_blocks, kernel_size)

    def encode(self, energy_bw, mask=None):
        return encode_with_embeddings(energy_bw, self.table, mask=mask)

    def forward(self, energy_bw, lengths, mask=None):
        return self.stack(self.encode(energy_bw, mask), lengths).squeeze(-1)
