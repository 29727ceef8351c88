"""Desk-scale reference CNN with quantized IMC layers and ADC activations."""

from __future__ import annotations

from typing import Iterator

import torch
import torch.nn.functional as F
from torch import nn

from ..fixedpoint import QuantConfig
from .activation import ActMode, AdcActivation, CurveBank, VatPool
from .quant import NoiseConfig, inject_weight_noise, quantize_ste


class _ImcMixin:
    """Shadow full-precision weights; the forward pass sees quantized (+noisy) copies."""

    quantize: bool
    qcfg: QuantConfig
    noise: NoiseConfig
    noise_gen: torch.Generator | None
    noisy: bool

    def _init_imc(self, noisy: bool):
        self.quantize = False
        self.qcfg = QuantConfig()
        self.noise = NoiseConfig()
        self.noise_gen = None
        self.noisy = noisy

    def effective_weight(self) -> torch.Tensor:
        w = self.weight
        if self.quantize:
            w = quantize_ste(w, self.qcfg.weight_format)
        if self.noisy and self.noise.gamma > 0:
            w = inject_weight_noise(w, self.noise, self.noise_gen)
        return w


class ImcConv2d(nn.Conv2d, _ImcMixin):
    def __init__(self, *args, noisy: bool = True, **kwargs):
        super().__init__(*args, **kwargs)
        self._init_imc(noisy)

    def forward(self, x):
        return self._conv_forward(x, self.effective_weight(), self.bias)


class ImcLinear(nn.Linear, _ImcMixin):
    def __init__(self, *args, noisy: bool = True, **kwargs):
        super().__init__(*args, **kwargs)
        self._init_imc(noisy)

    def forward(self, x):
        return F.linear(x, self.effective_weight(), self.bias)


class DeskCNN(nn.Module):
    """conv(1->c1) ADC, conv(c1->c2) ADC, maxpool, dense(->hidden) ADC, dense(->10).

    Sized for 8x8 digit images; about 40k parameters with the defaults. The
    final classifier is digital, so it has no ADC and receives no array noise.
    """

    def __init__(self, c1: int = 16, c2: int = 32, hidden: int = 64, n_classes: int = 10,
                 image_size: int = 8, seed: int | None = None):
        super().__init__()
        self.topology = dict(c1=c1, c2=c2, hidden=hidden, n_classes=n_classes,
                             image_size=image_size)
        with torch.random.fork_rng(devices=[]):
            if seed is not None:
                torch.manual_seed(seed)
            self._build(c1, c2, hidden, n_classes, image_size)

    def _build(self, c1, c2, hidden, n_classes, image_size):
        self.conv1 = ImcConv2d(1, c1, 3, padding=1)
        self.act1 = AdcActivation(c1)
        self.conv2 = ImcConv2d(c1, c2, 3, padding=1)
        self.act2 = AdcActivation(c2)
        self.fc1 = ImcLinear(c2 * (image_size // 2) ** 2, hidden)
        self.act3 = AdcActivation(hidden)
        self.fc2 = ImcLinear(hidden, n_classes, noisy=False)
        self.quantize_inputs = False
        self.qcfg = QuantConfig()

    def forward(self, x):
        if self.quantize_inputs:
            fmt = self.qcfg.act_format
            x = torch.floor(x.clamp(0, fmt.max_value) / fmt.lsb + 0.5) * fmt.lsb
        x = self.act1(self.conv1(x))
        x = F.max_pool2d(self.act2(self.conv2(x)), 2)
        x = self.act3(self.fc1(x.flatten(1)))
        return self.fc2(x)

    def imc_layers(self) -> Iterator[_ImcMixin]:
        return (m for m in self.modules() if isinstance(m, _ImcMixin))

    def activations(self) -> Iterator[AdcActivation]:
        return (m for m in self.modules() if isinstance(m, AdcActivation))

    def set_quantization(self, qcfg: QuantConfig | None):
        """Quantize weights and inputs to ``qcfg`` (``None`` = full precision)."""
        for layer in self.imc_layers():
            layer.quantize = qcfg is not None
            if qcfg is not None:
                layer.qcfg = qcfg
        self.quantize_inputs = qcfg is not None
        if qcfg is not None:
            self.qcfg = qcfg

    def set_noise(self, noise: NoiseConfig, generator: torch.Generator | None = None):
        for layer in self.imc_layers():
            layer.noise = noise
            layer.noise_gen = generator

    def set_activation(self, mode: ActMode | str, qcfg: QuantConfig | None = None,
                       curve=None, pool: VatPool | None = None):
        qcfg = qcfg or self.qcfg
        if curve is not None and not isinstance(curve, CurveBank):
            curve = CurveBank([curve])
        for act in self.activations():
            act.configure(mode, qcfg, curve=curve, pool=pool)

    def reassign(self, generator: torch.Generator):
        for act in self.activations():
            act.reassign(generator)

    def shadow_state(self) -> dict[str, torch.Tensor]:
        return {k: v.detach().clone() for k, v in self.state_dict().items()}
