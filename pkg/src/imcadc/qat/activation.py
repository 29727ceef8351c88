"""ADC transfer curves used as the activation function of a network layer.

The pre-activation ``u`` maps linearly onto bit-line current,
``i / i_max = clamp(u, 0, FS) / FS`` with ``FS = 4 - 2**-5`` for the default
format, the curve gives the code, and the layer emits ``code * act_lsb``.
Gradients use a clipped straight-through estimator.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
from torch import nn

from ..adc import TransferCurve
from ..fixedpoint import QuantConfig


class ActMode(str, enum.Enum):
    IDEAL_RELU_FLOAT = "ideal_relu_float"
    IDEAL_QUANTIZED = "ideal_quantized"
    FIXED_CURVE = "fixed_curve"
    VAT_POOL = "vat_pool"


class ReassignPolicy(str, enum.Enum):
    PER_ITERATION = "per_iteration"
    PER_EPOCH = "per_epoch"
    FIXED = "fixed"


class CurveBank:
    """Stack of transfer curves on one shared input grid, as lookup tables."""

    def __init__(self, curves: Sequence[TransferCurve]):
        if not curves:
            raise ValueError("need at least one curve")
        grid = curves[0].inputs
        n_bits = curves[0].n_bits
        for c in curves[1:]:
            if c.n_bits != n_bits or not np.array_equal(c.inputs, grid):
                raise ValueError("curves in a bank must share resolution and input grid")
        self.n_bits = n_bits
        self.grid = torch.tensor(np.asarray(grid), dtype=torch.float64)
        self.codes = torch.tensor(np.stack([c.codes for c in curves]), dtype=torch.float32)
        self.curves = list(curves)
        steps = np.diff(grid)
        self._step = float(steps.mean()) if np.allclose(steps, steps.mean()) else None

    def __len__(self) -> int:
        return self.codes.shape[0]

    def index(self, x_norm: torch.Tensor) -> torch.Tensor:
        """Grid index at or below each normalized input (same as ``TransferCurve.lookup``)."""
        x = x_norm.detach().double()
        last = self.grid.numel() - 1
        if self._step is None:
            idx = torch.searchsorted(self.grid, x.contiguous(), right=True) - 1
            return idx.clamp_(0, last)
        # uniform grid: arithmetic guess, then a one-step correction each way
        idx = torch.floor((x - self.grid[0]) / self._step).long().clamp_(0, last)
        idx = idx - (self.grid[idx] > x).long()
        idx = idx.clamp_(0, last)
        up = (idx < last) & (self.grid[(idx + 1).clamp_max(last)] <= x)
        return idx + up.long()


@dataclass
class VatPool:
    """Monte-Carlo curve pool with a channel -> curve assignment per layer."""

    bank: CurveBank
    policy: ReassignPolicy = ReassignPolicy.PER_ITERATION

    def __post_init__(self):
        self.policy = ReassignPolicy(self.policy)

    def draw(self, n_channels: int, generator: torch.Generator) -> torch.Tensor:
        return torch.randint(len(self.bank), (n_channels,), generator=generator)


class _CurveLookup(torch.autograd.Function):
    @staticmethod
    def forward(ctx, u, table, bank: CurveBank, full_scale: float, lsb: float):
        # table: (C, G) codes per channel, broadcast over dims after the channel axis
        x = u.clamp(0.0, full_scale) / full_scale
        idx = bank.index(x)
        n_ch, g = table.shape
        ch_shape = [1] * u.dim()
        ch_shape[1] = n_ch
        ch = torch.arange(n_ch).view(ch_shape)
        codes = table.reshape(-1)[(ch * g + idx).reshape(-1)].reshape(u.shape)
        ctx.save_for_backward(u)
        ctx.full_scale = full_scale
        return codes.to(u.dtype) * lsb

    @staticmethod
    def backward(ctx, grad):
        (u,) = ctx.saved_tensors
        mask = (u > 0) & (u < ctx.full_scale)
        return grad * mask, None, None, None, None


class _QuantReluSTE(torch.autograd.Function):
    @staticmethod
    def forward(ctx, u, lsb: float, max_code: int, full_scale: float):
        ctx.save_for_backward(u)
        ctx.full_scale = full_scale
        code = torch.floor(u.clamp_min(0.0) / lsb + 0.5).clamp_max(max_code)
        return code * lsb

    @staticmethod
    def backward(ctx, grad):
        (u,) = ctx.saved_tensors
        return grad * ((u > 0) & (u < ctx.full_scale)), None, None, None


def adc_backward(u: torch.Tensor, upstream: torch.Tensor, full_scale: float) -> torch.Tensor:
    """Clipped straight-through gradient: pass where ``0 < u < full_scale``."""
    return upstream * ((u > 0) & (u < full_scale))


class AdcActivation(nn.Module):
    """Per-channel ADC readout in place of ReLU.

    Channel axis is dim 1 (NCHW or NC). The mode and curves are swapped in and
    out by the training harness; the module holds no trainable state.
    """

    def __init__(self, n_channels: int, qcfg: QuantConfig | None = None):
        super().__init__()
        self.n_channels = n_channels
        self.qcfg = qcfg or QuantConfig()
        self.mode = ActMode.IDEAL_RELU_FLOAT
        self.bank: CurveBank | None = None
        self.pool: VatPool | None = None
        self.assignment: torch.Tensor | None = None

    @property
    def full_scale(self) -> float:
        return self.qcfg.act_full_scale

    def configure(self, mode: ActMode | str, qcfg: QuantConfig | None = None,
                  curve: TransferCurve | CurveBank | None = None, pool: VatPool | None = None):
        self.mode = ActMode(mode)
        if qcfg is not None:
            self.qcfg = qcfg
        self.bank = None
        self.pool = None
        self.assignment = None
        if self.mode is ActMode.FIXED_CURVE:
            if curve is None:
                raise ValueError("fixed_curve mode needs a curve")
            self.bank = curve if isinstance(curve, CurveBank) else CurveBank([curve])
            self._check_bits(self.bank)
        elif self.mode is ActMode.VAT_POOL:
            if pool is None:
                raise ValueError("vat_pool mode needs a VatPool")
            self.pool = pool
            self._check_bits(pool.bank)

    def _check_bits(self, bank: CurveBank):
        if bank.n_bits != self.qcfg.act_total_bits:
            raise ValueError(
                f"{bank.n_bits}-bit curves cannot drive a {self.qcfg.act_total_bits}-bit activation")

    def reassign(self, generator: torch.Generator):
        if self.mode is ActMode.VAT_POOL:
            self.assignment = self.pool.draw(self.n_channels, generator)

    def forward(self, u: torch.Tensor) -> torch.Tensor:
        if self.mode is ActMode.IDEAL_RELU_FLOAT:
            return torch.relu(u)
        fmt = self.qcfg.act_format
        if self.mode is ActMode.IDEAL_QUANTIZED:
            return _QuantReluSTE.apply(u, fmt.lsb, fmt.max_code, self.full_scale)
        if self.mode is ActMode.FIXED_CURVE:
            bank = self.bank
            table = bank.codes[0].expand(self.n_channels, -1)
        else:
            bank = self.pool.bank
            if self.assignment is None:
                raise RuntimeError("VAT pool assignment not drawn; call reassign() first")
            table = bank.codes[self.assignment]
        return _CurveLookup.apply(u, table, bank, self.full_scale, fmt.lsb)

    def extra_repr(self) -> str:
        return f"n_channels={self.n_channels}, mode={self.mode.value}"


def adc_forward(act: AdcActivation, u: torch.Tensor) -> torch.Tensor:
    return act(u)
