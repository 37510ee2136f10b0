import torch
import torch.nn.functional as F
from torch import nn


def lengths_to_mask(lengths, max_len=None):
    """Boolean (B, T) mask, True on valid positions."""
    max_len = int(lengths.max()) if max_len is None else max_len
    return torch.arange(max_len, device=lengths.device)[None, :] < lengths[:, None]


def nearest_interpolate(x, in_lengths, out_lengths):
    """Per-item nearest-neighbour resampling along time.

    x: (B, T_in, C).  Output position t of item b reads input position
    floor(t * in_len / out_len), the same rule as ``F.interpolate(mode="nearest")``.
    """
    t_out = int(out_lengths.max())
    t = torch.arange(t_out, device=x.device)[None, :]
    idx = torch.div(t * in_lengths[:, None], out_lengths[:, None], rounding_mode="floor")
    idx = torch.minimum(idx, (in_lengths[:, None] - 1).clamp_min(0))
    idx = torch.where(t < out_lengths[:, None], idx, torch.zeros_like(idx))
    return torch.gather(x, 1, idx.unsqueeze(-1).expand(-1, -1, x.shape[-1]))


def length_regulate(x, durations):
    """Repeat each position of x (B, K, C) by its integer duration (B, K).

    Returns the expanded (B, T, C) tensor and per-item frame counts.
    """
    lengths = durations.sum(dim=1)
    t_max = max(int(lengths.max()), 1)
    # frame -> source position via cumulative durations
    ends = durations.cumsum(dim=1)
    frames = torch.arange(t_max, device=x.device)[None, :]
    idx = torch.searchsorted(ends, frames.expand(len(x), -1).contiguous(), right=True)
    idx = idx.clamp_max(x.shape[1] - 1)
    out = torch.gather(x, 1, idx.unsqueeze(-1).expand(-1, -1, x.shape[-1]))
    mask = lengths_to_mask(lengths, t_max).unsqueeze(-1)
    return out * mask, lengths


def fuse(x, a):
    """Channel-wise concatenation of a per-utterance vector onto every frame."""
    return torch.cat([x, a.unsqueeze(1).expand(-1, x.shape[1], -1)], dim=-1)


class ResidualBlock(nn.Module):
    """conv1d -> ReLU -> linear -> residual add -> layer norm."""

    def __init__(self, width, kernel_size=5):
        super().__init__()
        self.conv = nn.Conv1d(width, width, kernel_size, padding=kernel_size // 2)
        self.linear = nn.Linear(width, width)
        self.norm = nn.LayerNorm(width)

    def forward(self, x, mask):
        # x: (B, T, C); mask: (B, T, 1) float
        h = self.conv((x * mask).transpose(1, 2)).transpose(1, 2)
        h = self.linear(F.relu(h))
        return self.norm(x + h) * mask


class ResidualStack(nn.Module):
    """Input projection, ``n_blocks`` residual blocks, output projection.

    When ``interp_after`` is set, the hidden sequence is nearest-interpolated
    to the requested target lengths after that many blocks.
    """

    def __init__(self, in_dim, width, out_dim, n_blocks, kernel_size=5, interp_after=None):
        super().__init__()
        if interp_after is not None and not 0 < interp_after < n_blocks:
            raise ValueError("interp_after must fall strictly inside the stack")
        self.in_proj = nn.Linear(in_dim, width)
        self.blocks = nn.ModuleList(ResidualBlock(width, kernel_size) for _ in range(n_blocks))
        self.out_proj = nn.Linear(width, out_dim)
        self.interp_after = interp_after

    def __len__(self):
        return len(self.blocks)

    def forward(self, x, lengths, target_lengths=None):
        mask = lengths_to_mask(lengths, x.shape[1]).unsqueeze(-1).to(x.dtype)
        h = self.in_proj(x) * mask
        for i, block in enumerate(self.blocks):
            if i == self.interp_after and target_lengths is not None:
                h = nearest_interpolate(h, lengths, target_lengths)
                lengths = target_lengths
                mask = lengths_to_mask(lengths, h.shape[1]).unsqueeze(-1).to(x.dtype)
            h = block(h, mask)
        return self.out_proj(h) * mask
