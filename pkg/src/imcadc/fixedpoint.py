"""Fixed-point formats for weights and activations."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class FixedFormat:
    total_bits: int
    int_bits: int
    signed: bool

    def __post_init__(self):
        if self.total_bits <= self.int_bits + (1 if self.signed else 0):
            raise ValueError(
                f"{self.total_bits} total bits leave no fractional bits "
                f"(int_bits={self.int_bits}, signed={self.signed})")
        if self.int_bits < 0:
            raise ValueError("int_bits must be >= 0")

    @property
    def frac_bits(self) -> int:
        return self.total_bits - self.int_bits - (1 if self.signed else 0)

    @property
    def lsb(self) -> float:
        return 2.0 ** -self.frac_bits

    @property
    def max_code(self) -> int:
        """Largest magnitude code."""
        return 2 ** (self.total_bits - (1 if self.signed else 0)) - 1

    @property
    def max_value(self) -> float:
        return self.max_code * self.lsb

    @property
    def min_value(self) -> float:
        return -self.max_value if self.signed else 0.0


@dataclass(frozen=True)
class QuantConfig:
    """Weight and activation formats.

    Defaults: weights 1 sign + 0 integer + 6 fractional bits (LSB 2**-6),
    activations unsigned with 2 integer + 5 fractional bits (LSB 2**-5,
    full scale 4 - 2**-5).
    """

    weight_total_bits: int = 7
    weight_int_bits: int = 0
    weight_signed: bool = True
    act_total_bits: int = 7
    act_int_bits: int = 2
    act_signed: bool = False

    def __post_init__(self):
        # validate eagerly
        self.weight_format, self.act_format  # noqa: B018

    @property
    def weight_format(self) -> FixedFormat:
        return FixedFormat(self.weight_total_bits, self.weight_int_bits, self.weight_signed)

    @property
    def act_format(self) -> FixedFormat:
        return FixedFormat(self.act_total_bits, self.act_int_bits, self.act_signed)

    @property
    def weight_lsb(self) -> float:
        return self.weight_format.lsb

    @property
    def act_lsb(self) -> float:
        return self.act_format.lsb

    @property
    def act_full_scale(self) -> float:
        return self.act_format.max_value


def quantize_fixed(x, total_bits: int, int_bits: int, signed: bool):
    """Round to the nearest grid point (ties away from zero), saturating at the range edges."""
    fmt = FixedFormat(total_bits, int_bits, signed)
    x = np.asarray(x, dtype=float)
    code = np.sign(x) * np.floor(np.abs(x) / fmt.lsb + 0.5)
    code = np.clip(code, -fmt.max_code if signed else 0, fmt.max_code)
    out = code * fmt.lsb
    return float(out) if out.ndim == 0 else out


def to_codes(x, fmt: FixedFormat) -> np.ndarray:
    """Integer codes of values already on the ``fmt`` grid (sign included)."""
    return np.rint(np.asarray(x, dtype=float) / fmt.lsb).astype(np.int64)
