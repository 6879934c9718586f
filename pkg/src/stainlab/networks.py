"""Generator and discriminator architectures.

The generator is an encoder-decoder U-Net with skip connections whose depth
equals log2(input_size), so the bottleneck is always 1x1 and the same design
scales from 64x64 desk configs up to 1024x1024 slides. Dropout in the first
decoder levels is the generator's noise source and therefore stays available
at inference: the ``stochastic`` forward flag, not module train/eval mode,
controls it.

The discriminator is a patch classifier: it maps the channel-concatenation
of condition and candidate to a 2-D map of real/fake probabilities, one per
local receptive field (70x70 pixels for the default four-layer ladder).

Normalization is per-channel instance normalization, which stays well
defined at the batch size of one used for training.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, ContractError

_KERNEL = 4
_PAD = 1


def _is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass
class GeneratorSpec:
    input_size: int = 1024
    depth: int | None = None  # defaults to log2(input_size)
    base_channels: int = 64
    max_channels: int = 512
    dropout_rate: float = 0.5
    dropout_decoder_layers: int = 3

    def __post_init__(self) -> None:
        if not _is_power_of_two(self.input_size) or self.input_size < 4:
            raise ConfigError(f"input_size must be a power of two >= 4, got {self.input_size}")
        if self.depth is None:
            self.depth = self.input_size.bit_length() - 1
        if 2**self.depth != self.input_size:
            raise ConfigError(
                f"2^depth must equal input_size (bottleneck reaches 1x1): "
                f"depth={self.depth}, input_size={self.input_size}"
            )
        if self.dropout_decoder_layers > self.depth:
            raise ConfigError("dropout_decoder_layers cannot exceed depth")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.base_channels < 1 or self.max_channels < self.base_channels:
            raise ConfigError("need 1 <= base_channels <= max_channels")

    def encoder_channels(self) -> list[int]:
        """Channel width at each encoder level: min(base * 2^k, max)."""
        return [min(self.base_channels << k, self.max_channels) for k in range(self.depth)]


@dataclass
class DiscriminatorSpec:
    input_size: int = 1024
    conv_layers: int = 4  # the 64-128-256-512 ladder
    base_channels: int = 64
    max_channels: int = 512

    def __post_init__(self) -> None:
        if self.conv_layers < 1:
            raise ConfigError("conv_layers must be >= 1")
        if self.input_size < 2**self.conv_layers:
            raise ConfigError(
                f"input_size {self.input_size} too small for {self.conv_layers} conv layers"
            )

    def ladder_channels(self) -> list[int]:
        return [min(self.base_channels << k, self.max_channels) for k in range(self.conv_layers)]

    def strides(self) -> list[int]:
        # stride 2 except the last ladder layer and the score head
        return [2] * (self.conv_layers - 1) + [1, 1]

    @property
    def receptive_field(self) -> int:
        rf = 1
        for stride in reversed(self.strides()):
            rf = rf * stride + (_KERNEL - stride)
        return rf

    def score_map_size(self, n: int | None = None) -> int:
        """Spatial size of the score map for an n x n input."""
        n = self.input_size if n is None else n
        for stride in self.strides():
            n = (n + 2 * _PAD - _KERNEL) // stride + 1
        return n


class UNetGenerator(nn.Module):
    def __init__(self, spec: GeneratorSpec):
        super().__init__()
        self.spec = spec
        ch = spec.encoder_channels()
        d = spec.depth

        self.down = nn.ModuleList()
        self.down_norm = nn.ModuleList()
        for k in range(d):
            in_ch = 3 if k == 0 else ch[k - 1]
            self.down.append(nn.Conv2d(in_ch, ch[k], _KERNEL, 2, _PAD))
            # no norm on the first level (raw input) or the 1x1 bottleneck
            use_norm = 0 < k < d - 1
            self.down_norm.append(nn.InstanceNorm2d(ch[k]) if use_norm else nn.Identity())

        self.up = nn.ModuleList()
        self.up_norm = nn.ModuleList()
        for j in range(d):
            in_ch = ch[d - 1] if j == 0 else 2 * ch[d - 1 - j]
            out_ch = 3 if j == d - 1 else ch[d - 2 - j]
            self.up.append(nn.ConvTranspose2d(in_ch, out_ch, _KERNEL, 2, _PAD))
            self.up_norm.append(nn.InstanceNorm2d(out_ch) if j < d - 1 else nn.Identity())

        self._last_bottleneck_hw: tuple[int, int] | None = None

    def forward(
        self,
        x: torch.Tensor,
        stochastic: bool = True,
        zero_skip: int | None = None,
    ) -> torch.Tensor:
        spec = self.spec
        if x.ndim != 4 or x.shape[1] != 3:
            raise ContractError(f"generator expects Nx3xHxW input, got {tuple(x.shape)}")
        if x.shape[2] != spec.input_size or x.shape[3] != spec.input_size:
            raise ContractError(
                f"generator built for {spec.input_size}x{spec.input_size}, got "
                f"{x.shape[2]}x{x.shape[3]}"
            )

        skips: list[torch.Tensor] = []
        h = x
        for k in range(spec.depth):
            h = self.down[k](h if k == 0 else F.leaky_relu(h, 0.2))
            h = self.down_norm[k](h)
            skips.append(h)
        self._last_bottleneck_hw = (h.shape[2], h.shape[3])

        for j in range(spec.depth):
            h = self.up[j](F.relu(h))
            h = self.up_norm[j](h)
            if j == spec.depth - 1:
                break
            if j < spec.dropout_decoder_layers:
                h = F.dropout(h, spec.dropout_rate, training=stochastic)
            skip = skips[spec.depth - 2 - j]
            if zero_skip is not None and zero_skip == spec.depth - 2 - j:
                skip = torch.zeros_like(skip)
            h = torch.cat([h, skip], dim=1)
        return torch.tanh(h)


class PatchDiscriminator(nn.Module):
    def __init__(self, spec: DiscriminatorSpec):
        super().__init__()
        self.spec = spec
        ch = spec.ladder_channels()
        strides = spec.strides()
        layers: list[nn.Module] = []
        in_ch = 6
        for k, out_ch in enumerate(ch):
            layers.append(nn.Conv2d(in_ch, out_ch, _KERNEL, strides[k], _PAD))
            if k > 0:
                layers.append(nn.InstanceNorm2d(out_ch))
            layers.append(nn.LeakyReLU(0.2))
            in_ch = out_ch
        layers.append(nn.Conv2d(in_ch, 1, _KERNEL, 1, _PAD))
        layers.append(nn.Sigmoid())
        self.model = nn.Sequential(*layers)

    def forward(self, condition: torch.Tensor, candidate: torch.Tensor) -> torch.Tensor:
        if condition.ndim != 4 or candidate.ndim != 4:
            raise ContractError("discriminator expects Nx3xHxW inputs")
        if condition.shape[1] != 3 or candidate.shape[1] != 3:
            raise ContractError(
                f"discriminator expects two 3-channel images, got "
                f"{condition.shape[1]} and {candidate.shape[1]} channels"
            )
        if condition.shape != candidate.shape:
            raise ContractError(
                f"condition/candidate shape mismatch: {tuple(condition.shape)} vs "
                f"{tuple(candidate.shape)}"
            )
        return self.model(torch.cat([condition, candidate], dim=1))


def _init_weights(module: nn.Module) -> None:
    if isinstance(module, (nn.Conv2d, nn.ConvTranspose2d)):
        nn.init.normal_(module.weight, 0.0, 0.02)
        if module.bias is not None:
            nn.init.zeros_(module.bias)


def build_generator(spec: GeneratorSpec) -> UNetGenerator:
    model = UNetGenerator(spec)
    model.apply(_init_weights)
    return model


def build_discriminator(spec: DiscriminatorSpec) -> PatchDiscriminator:
    model = PatchDiscriminator(spec)
    model.apply(_init_weights)
    return model


def generator_forward(model: UNetGenerator, x: torch.Tensor, stochastic: bool = False) -> torch.Tensor:
    """Inference-path forward; stochastic=False disables the dropout noise."""
    if x.amin() < -1.0 - 1e-5 or x.amax() > 1.0 + 1e-5:
        raise ContractError("generator input must be in [-1, 1]")
    with torch.no_grad():
        return model(x, stochastic=stochastic)


def generator_parameter_count(spec: GeneratorSpec) -> int:
    """Closed-form parameter count for the U-Net (4x4 convs plus biases).

    Instance normalization here carries no affine parameters, so the count
    is exactly the conv/deconv kernels and biases. Asserted in tests to
    guard against architecture drift.
    """
    ch = spec.encoder_channels()
    d = spec.depth
    total = 0
    for k in range(d):
        in_ch = 3 if k == 0 else ch[k - 1]
        total += _KERNEL * _KERNEL * in_ch * ch[k] + ch[k]
    for j in range(d):
        in_ch = ch[d - 1] if j == 0 else 2 * ch[d - 1 - j]
        out_ch = 3 if j == d - 1 else ch[d - 2 - j]
        total += _KERNEL * _KERNEL * in_ch * out_ch + out_ch
    return total


def discriminator_parameter_count(spec: DiscriminatorSpec) -> int:
    ch = spec.ladder_channels()
    total = 0
    in_ch = 6
    for out_ch in ch:
        total += _KERNEL * _KERNEL * in_ch * out_ch + out_ch
        in_ch = out_ch
    total += _KERNEL * _KERNEL * in_ch * 1 + 1
    return total
