"""Gaussian-blurred bin encoding of pitch and energy, and learnable bin embeddings."""

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

DEGENERATE_ROW = 1e-12


@dataclass(frozen=True)
class BinGrid:
    """Uniform grid with centers ``minimum + i * width`` for i = 1..count."""

    minimum: float
    width: float
    count: int
    sigma: float

    def __post_init__(self):
        if self.width <= 0 or self.sigma <= 0:
            raise ValueError("bin width and sigma must be positive")
        if self.count < 2:
            raise ValueError("a bin grid needs at least 2 bins")

    @classmethod
    def pitch(cls, grid_cfg):
        return cls(grid_cfg.pitch_min, grid_cfg.pitch_width, grid_cfg.pitch_count, grid_cfg.pitch_sigma)

    @classmethod
    def energy(cls, grid_cfg):
        return cls(grid_cfg.energy_min, grid_cfg.energy_width, grid_cfg.energy_count,
                   grid_cfg.energy_sigma)

    def centers(self, dtype=torch.float64):
        i = torch.arange(1, self.count + 1, dtype=dtype)
        return i * self.width + self.minimum

    @property
    def low(self):
        return self.minimum + self.width

    @property
    def high(self):
        return self.minimum + self.count * self.width


def gaussian_bin_weights(values, grid, clamp=False):
    """Unnormalized Gaussian weight of every bin center for every value.

    ``values`` of shape (...,) gives weights of shape (..., count).  With
    ``clamp`` the values are first clipped to the outermost centers, which
    keeps out-of-range inputs from producing all-zero rows.
    """
    if not torch.is_tensor(values):
        values = torch.as_tensor(np.asarray(values, dtype=np.float64))
    if not torch.isfinite(values).all():
        raise ValueError("non-finite value in bin-weight input")
    if clamp:
        values = values.clamp(grid.low, grid.high)
    centers = grid.centers(values.dtype if values.is_floating_point() else torch.float64)
    centers = centers.to(values.device)
    diff = values.unsqueeze(-1) - centers
    return torch.exp(-diff.pow(2) / (2.0 * grid.sigma ** 2))


def _row_sums(bw, mask):
    total = bw.sum(-1, keepdim=True)
    bad = total.squeeze(-1) < DEGENERATE_ROW
    if mask is not None:
        bad = bad & mask.bool()
    if bad.any():
        raise ValueError("degenerate bin row: total weight below 1e-12")
    return total.clamp_min(DEGENERATE_ROW)


class BinEmbeddingTable(nn.Module):
    """One learnable vector per bin, plus an optional unvoiced vector."""

    def __init__(self, count, dim, with_unvoiced=False, init_std=0.02):
        super().__init__()
        self.embeddings = nn.Parameter(torch.randn(count, dim) * init_std)
        self.unvoiced = nn.Parameter(torch.randn(dim) * init_std) if with_unvoiced else None

    @property
    def count(self):
        return self.embeddings.shape[0]


def encode_with_embeddings(bw, table, mask=None):
    """Weight-normalized combination of bin embeddings, shape (..., dim).

    Rows where ``mask`` is false are exempt from the degenerate-row check
    (padding, or unvoiced frames that get replaced afterwards).
    """
    if bw.shape[-1] != table.count:
        raise ValueError(f"bin weights have {bw.shape[-1]} columns, table has {table.count} bins")
    emb = table.embeddings
    bw = bw.to(emb.dtype)
    return (bw @ emb) / _row_sums(bw, mask)


def apply_voicing(encoded, voicing, table):
    """Replace frames with voicing 0 by the table's unvoiced vector."""
    if encoded.shape[:-1] != voicing.shape:
        raise ValueError("voicing length does not match the encoded sequence")
    if table.unvoiced is None:
        raise ValueError("table has no unvoiced embedding")
    voiced = voicing.bool().unsqueeze(-1)
    return torch.where(voiced, encoded, table.unvoiced.to(encoded.dtype))


def decode_scalar(bw, grid, mask=None):
    """Weighted mean of bin centers per row."""
    if not torch.is_tensor(bw):
        bw = torch.as_tensor(np.asarray(bw, dtype=np.float64))
    centers = grid.centers(bw.dtype).to(bw.device)
    return (bw @ centers) / _row_sums(bw, mask).squeeze(-1)
