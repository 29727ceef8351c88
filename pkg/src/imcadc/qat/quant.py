"""Tensor-side fixed-point quantization and weight-noise injection."""

from __future__ import annotations

from dataclasses import dataclass

import torch

from ..fixedpoint import FixedFormat


def quantize_fixed(x: torch.Tensor, total_bits: int, int_bits: int, signed: bool) -> torch.Tensor:
    """Round to nearest (ties away from zero) on the fixed-point grid and saturate.

    Matches :func:`imcadc.fixedpoint.quantize_fixed` element for element.
    """
    fmt = FixedFormat(total_bits, int_bits, signed)
    code = torch.sign(x) * torch.floor(x.abs() / fmt.lsb + 0.5)
    code = code.clamp(-fmt.max_code if signed else 0, fmt.max_code)
    return code * fmt.lsb


class _QuantSTE(torch.autograd.Function):
    """Quantize forward, identity backward (gradient reaches the shadow weights)."""

    @staticmethod
    def forward(ctx, w, fmt: FixedFormat):
        return quantize_fixed(w, fmt.total_bits, fmt.int_bits, fmt.signed)

    @staticmethod
    def backward(ctx, grad):
        return grad, None


def quantize_ste(w: torch.Tensor, fmt: FixedFormat) -> torch.Tensor:
    return _QuantSTE.apply(w, fmt)


@dataclass(frozen=True)
class NoiseConfig:
    """Multiplicative Gaussian weight noise, ``w' = w * (1 + gamma * eps)``.

    A fresh draw is taken on every forward pass.
    """

    gamma: float = 0.0

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")


def inject_weight_noise(w_q: torch.Tensor, cfg: NoiseConfig,
                        generator: torch.Generator | None = None) -> torch.Tensor:
    if cfg.gamma == 0:
        return w_q
    eps = torch.randn(w_q.shape, generator=generator, dtype=w_q.dtype)
    # noise enters as a constant so STE gradients are scaled by the drawn factor
    return w_q * (1.0 + cfg.gamma * eps)
