import torch.nn.functional as F
from torch import nn

MIN_FRAMES = 3


class Discriminator(nn.Module):
    """2-d conv stack over the mel as an image; one least-squares score per patch.

    The time axis is never strided, so scores come out as (B, N, F') with
    F' the downsampled mel axis.
    """

    def __init__(self, channels=32, n_layers=5):
        super().__init__()
        layers = []
        in_ch = 1
        for _ in range(n_layers - 1):
            layers.append(nn.Conv2d(in_ch, channels, (3, 3), stride=(1, 2), padding=(1, 1)))
            in_ch = channels
        self.layers = nn.ModuleList(layers)
        self.out = nn.Conv2d(in_ch, 1, (3, 3), padding=(1, 1))

    def forward(self, mel):
        if mel.shape[1] < MIN_FRAMES:
            raise ValueError(f"input too short for the discriminator ({mel.shape[1]} < {MIN_FRAMES} frames)")
        h = mel.unsqueeze(1)
        for layer in self.layers:
            h = F.leaky_relu(layer(h), 0.2)
        return self.out(h).squeeze(1)
