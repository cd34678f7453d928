"""Image restoration backbone: a 4-level NAF-style encoder-decoder whose
encoder and decoder levels are gated by instruction-derived channel masks."""
from __future__ import annotations

from dataclasses import dataclass, field, asdict

import torch
import torch.nn as nn
import torch.nn.functional as F


@dataclass
class ModelConfig:
    base_width: int = 32
    encoder_depths: list[int] = field(default_factory=lambda: [2, 2, 4, 8])
    decoder_depths: list[int] = field(default_factory=lambda: [2, 2, 2, 2])
    middle_blocks: int = 4
    d_v: int = 256
    task_count: int = 7
    skip_mode: str = "additive"

    def __post_init__(self):
        if self.base_width < 1:
            raise ValueError("base_width must be >= 1")
        if len(self.encoder_depths) != len(self.decoder_depths):
            raise ValueError("encoder and decoder must have the same number of levels")
        if not self.encoder_depths:
            raise ValueError("model needs at least one encoder/decoder level")
        if any(d < 1 for d in self.encoder_depths + self.decoder_depths):
            raise ValueError("level depths must be >= 1")
        if self.middle_blocks < 1:
            raise ValueError("middle_blocks must be >= 1")
        if self.skip_mode != "additive":
            raise ValueError("only additive skips are supported")

    @property
    def level_widths(self) -> list[int]:
        return [self.base_width * (2 ** i) for i in range(len(self.encoder_depths))]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)

    @classmethod
    def toy(cls, base_width: int = 4, d_v: int = 256, task_count: int = 3) -> "ModelConfig":
        return cls(base_width=base_width, encoder_depths=[1, 1, 1, 1],
                   decoder_depths=[1, 1, 1, 1], middle_blocks=1,
                   d_v=d_v, task_count=task_count)


class LayerNorm2d(nn.Module):
    """Channel layer norm for BCHW maps with per-channel affine."""

    def __init__(self, channels: int, eps: float = 1e-6):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))
        self.eps = eps

    def forward(self, x):
        u = x.mean(1, keepdim=True)
        s = (x - u).pow(2).mean(1, keepdim=True)
        x = (x - u) / torch.sqrt(s + self.eps)
        return self.weight[:, None, None] * x + self.bias[:, None, None]


def simple_gate(x: torch.Tensor) -> torch.Tensor:
    """Split channels in half and multiply elementwise."""
    a, b = x.chunk(2, dim=1)
    return a * b


class NAFBlock(nn.Module):
    """Gated convolution block: spatial unit (1x1 expand, 3x3 depthwise, gate,
    simplified channel attention, 1x1) and channel unit (1x1 expand, gate, 1x1),
    each added back through a zero-initialized per-channel scale."""

    def __init__(self, channels: int, expansion: int = 2):
        super().__init__()
        dw = channels * expansion
        self.channels = channels
        self.norm1 = LayerNorm2d(channels)
        self.conv1 = nn.Conv2d(channels, dw, 1)
        self.conv2 = nn.Conv2d(dw, dw, 3, padding=1, groups=dw)
        self.sca = nn.Conv2d(dw // 2, dw // 2, 1)
        self.conv3 = nn.Conv2d(dw // 2, channels, 1)

        ffn = channels * expansion
        self.norm2 = LayerNorm2d(channels)
        self.conv4 = nn.Conv2d(channels, ffn, 1)
        self.conv5 = nn.Conv2d(ffn // 2, channels, 1)

        self.beta = nn.Parameter(torch.zeros(1, channels, 1, 1))
        self.gamma = nn.Parameter(torch.zeros(1, channels, 1, 1))

    def _spatial(self, x):
        x = self.conv1(x)
        x = self.conv2(x)
        x = simple_gate(x)
        x = x * self.sca(F.adaptive_avg_pool2d(x, 1))
        return self.conv3(x)

    def _channel(self, x):
        x = self.conv4(x)
        x = simple_gate(x)
        return self.conv5(x)

    def delta(self, x: torch.Tensor) -> torch.Tensor:
        """Residual contribution only; exactly zero while beta and gamma are zero."""
        d1 = self.beta * self._spatial(self.norm1(x))
        y = x + d1
        d2 = self.gamma * self._channel(self.norm2(y))
        return d1 + d2

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[1] != self.channels:
            raise ValueError(f"expected {self.channels} channels, got {x.shape[1]}")
        return x + self.delta(x)


class InstructionConditionBlock(nn.Module):
    """Sigmoid channel mask from the guidance vector gating a NAF unit.

    out = F + Unit(F * m), with m = sigmoid(W_c e) broadcast over space and
    Unit the residual branch of a NAF block. At zero initialization the block
    is an exact identity, so conditioning cannot destroy information.
    """

    def __init__(self, channels: int, d_v: int):
        super().__init__()
        self.channels = channels
        self.routing = nn.Linear(d_v, channels, bias=False)
        self.block = NAFBlock(channels)

    def mask(self, e: torch.Tensor) -> torch.Tensor:
        """Per-(batch, channel) mask in (0, 1); e is (d_v,) or (B, d_v)."""
        if e.dim() == 1:
            e = e.unsqueeze(0)
        return torch.sigmoid(self.routing(e))

    def forward(self, x: torch.Tensor, e: torch.Tensor) -> torch.Tensor:
        m = self.mask(e)
        if m.shape[0] == 1 and x.shape[0] > 1:
            m = m.expand(x.shape[0], -1)
        masked = x * m[:, :, None, None]
        return x + self.block.delta(masked)


class RoutedUNet(nn.Module):
    """Encoder-decoder of NAF blocks with one conditioning block per level.

    Level widths double per level (c0, 2c0, 4c0, 8c0); the middle stage sits
    below the last downsample at 16*c0. Skips are additive. The final conv is
    zero-initialized so the untrained network is the identity map.
    """

    def __init__(self, config: ModelConfig, in_channels: int = 3):
        super().__init__()
        self.config = config
        c0 = config.base_width
        self.intro = nn.Conv2d(in_channels, c0, 3, padding=1)

        self.encoders = nn.ModuleList()
        self.enc_icbs = nn.ModuleList()
        self.downs = nn.ModuleList()
        chan = c0
        for depth in config.encoder_depths:
            self.encoders.append(nn.Sequential(*[NAFBlock(chan) for _ in range(depth)]))
            self.enc_icbs.append(InstructionConditionBlock(chan, config.d_v))
            self.downs.append(nn.Conv2d(chan, chan * 2, 2, stride=2))
            chan *= 2

        self.middle = nn.Sequential(*[NAFBlock(chan) for _ in range(config.middle_blocks)])

        self.ups = nn.ModuleList()
        self.decoders = nn.ModuleList()
        self.dec_icbs = nn.ModuleList()
        for depth in config.decoder_depths:
            self.ups.append(nn.Sequential(
                nn.Conv2d(chan, chan * 2, 1, bias=False),
                nn.PixelShuffle(2),
            ))
            chan //= 2
            self.decoders.append(nn.Sequential(*[NAFBlock(chan) for _ in range(depth)]))
            self.dec_icbs.append(InstructionConditionBlock(chan, config.d_v))

        self.ending = nn.Conv2d(chan, in_channels, 3, padding=1)
        nn.init.zeros_(self.ending.weight)
        nn.init.zeros_(self.ending.bias)

        self.pad_multiple = 2 ** len(config.encoder_depths)

    def _pad(self, x: torch.Tensor) -> torch.Tensor:
        h, w = x.shape[-2:]
        ph = (self.pad_multiple - h % self.pad_multiple) % self.pad_multiple
        pw = (self.pad_multiple - w % self.pad_multiple) % self.pad_multiple
        if ph == 0 and pw == 0:
            return x
        mode = "reflect" if ph < h and pw < w else "replicate"
        return F.pad(x, (0, pw, 0, ph), mode=mode)

    def forward(self, image: torch.Tensor, e: torch.Tensor) -> torch.Tensor:
        if image.dim() != 4:
            raise ValueError(f"expected BCHW input, got shape {tuple(image.shape)}")
        if not torch.isfinite(image).all():
            raise ValueError("input image contains non-finite values")
        h, w = image.shape[-2:]
        x = self._pad(image)
        padded = x

        x = self.intro(x)
        skips = []
        for blocks, icb, down in zip(self.encoders, self.enc_icbs, self.downs):
            x = blocks(x)
            x = icb(x, e)
            skips.append(x)
            x = down(x)

        x = self.middle(x)

        for up, blocks, icb, skip in zip(self.ups, self.decoders, self.dec_icbs,
                                         reversed(skips)):
            x = up(x)
            x = x + skip
            x = blocks(x)
            x = icb(x, e)

        x = self.ending(x) + padded
        return x[..., :h, :w]

    def routing_masks(self, e: torch.Tensor) -> list[torch.Tensor]:
        """Channel masks of every conditioning block (encoder then decoder)."""
        with torch.no_grad():
            return [icb.mask(e) for icb in list(self.enc_icbs) + list(self.dec_icbs)]

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())


def count_parameters(backbone: RoutedUNet, head=None) -> tuple[int, int]:
    """Exact (image_params, head_params); head_params is 0 without a head."""
    image = backbone.parameter_count()
    head_count = head.parameter_count() if head is not None else 0
    return image, head_count
