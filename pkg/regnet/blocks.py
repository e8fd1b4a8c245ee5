import torch
import torch.nn.functional as F
from torch import nn


class ConvNormAct(nn.Sequential):
    def __init__(self, in_channels: int, out_channels: int, kernel_size: int = 3):
        super().__init__(
            nn.Conv3d(in_channels, out_channels, kernel_size, padding=kernel_size // 2),
            nn.InstanceNorm3d(out_channels, affine=True),
            nn.ReLU(),
        )


class ResidualBlock(nn.Module):
    """Entry conv changing width, then ``n_convs - 1`` convs on an additive skip."""

    def __init__(self, in_channels: int, out_channels: int, n_convs: int = 3):
        super().__init__()
        self.entry = ConvNormAct(in_channels, out_channels)
        body = []
        for i in range(n_convs - 1):
            body.append(nn.Conv3d(out_channels, out_channels, 3, padding=1))
            body.append(nn.InstanceNorm3d(out_channels, affine=True))
            if i < n_convs - 2:
                body.append(nn.ReLU())
        self.body = nn.Sequential(*body)
        self.act = nn.ReLU()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.entry(x)
        if len(self.body) == 0:
            return h
        return self.act(h + self.body(h))


class UpBlock(nn.Module):
    """Nearest-neighbour upsampling to the skip's grid, conv, concat skip, conv."""

    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        self.up_conv = ConvNormAct(in_channels, out_channels)
        self.merge = ConvNormAct(2 * out_channels, out_channels)

    def forward(self, x: torch.Tensor, skip: torch.Tensor) -> torch.Tensor:
        x = F.interpolate(x, size=skip.shape[2:], mode="nearest")
        x = self.up_conv(x)
        return self.merge(torch.cat([x, skip], dim=1))


def pool(x: torch.Tensor) -> torch.Tensor:
    return F.max_pool3d(x, kernel_size=2, stride=2, ceil_mode=True)


def zero_init(conv: nn.Conv3d) -> nn.Conv3d:
    nn.init.zeros_(conv.weight)
    if conv.bias is not None:
        nn.init.zeros_(conv.bias)
    return conv
