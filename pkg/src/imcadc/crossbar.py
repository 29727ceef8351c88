"""Bit-sliced, bit-serial current-mode crossbar.

Weights are stored sign-magnitude: every magnitude bit lives in its own binary
array (a slice) and a sign plane routes each cell to a positive or negative
column of a differential pair. Activations are streamed one bit per cycle. Each
(input bit, weight slice) partial sum is read out by a column ADC and the
digital periphery recombines the codes with shifts and adds.
"""

from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import adc as adcm
from .fixedpoint import QuantConfig, quantize_fixed, to_codes


class ParasiticModel(str, enum.Enum):
    IDEAL = "ideal"
    ANALYTIC = "analytic"


@dataclass(frozen=True)
class CrossbarConfig:
    """Array geometry and non-idealities.

    ``r_wire`` is the bit-line resistance per cell pitch; ``c_wire`` only feeds
    the reported settling-time estimate. ``v_ref`` is the clamped bit-line
    voltage, which sets the equivalent cell resistance ``v_ref / i_cell``.
    """

    rows: int = 64
    cols: int = 64
    i_cell: float = 0.15625e-6
    gamma: float = 0.0
    r_wire: float = 0.0
    c_wire: float = 0.0
    v_ref: float = 0.2
    parasitic_model: ParasiticModel = ParasiticModel.IDEAL

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("rows and cols must be >= 1")
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if not self.i_cell > 0:
            raise ValueError("i_cell must be positive")
        object.__setattr__(self, "parasitic_model", ParasiticModel(self.parasitic_model))

    @property
    def i_full_scale(self) -> float:
        """Bit-line current with every cell of a column conducting."""
        return self.rows * self.i_cell

    @property
    def r_cell(self) -> float:
        return self.v_ref / self.i_cell

    def settling_time(self) -> float:
        """Distributed-RC (Elmore) estimate for a full column, metadata only."""
        return 0.5 * self.r_wire * self.c_wire * self.rows**2


@dataclass(frozen=True)
class LayerMapping:
    """Convolution layer shape: M input channels, K kernels of size S, P output pixels."""

    in_channels: int
    n_kernels: int
    kernel_size: int
    out_pixels: int

    def __post_init__(self):
        if min(self.in_channels, self.n_kernels, self.kernel_size, self.out_pixels) < 1:
            raise ValueError("all layer dimensions must be >= 1")

    @property
    def column_height(self) -> int:
        return self.in_channels * self.kernel_size**2

    def tiles(self, cfg: CrossbarConfig) -> tuple[int, int]:
        return plan_tiles(self.column_height, self.n_kernels, cfg)


def plan_tiles(n_in: int, n_out: int, cfg: CrossbarConfig) -> tuple[int, int]:
    """Number of (row, column) tiles needed to hold an ``n_in x n_out`` matrix."""
    return math.ceil(n_in / cfg.rows), math.ceil(n_out / cfg.cols)


class ArrayOverflowError(ValueError):
    pass


@dataclass(frozen=True)
class BitSlicedWeights:
    """Programmed array contents.

    ``slices[b]`` holds magnitude bit ``b`` (LSB first); ``programmed_currents``
    has the same shape and stores the per-cell read current drawn once at
    programming time.
    """

    slices: np.ndarray  # (n_bits, n_in, n_out) uint8
    sign_plane: np.ndarray  # (n_in, n_out) uint8, 1 = negative
    programmed_currents: np.ndarray  # (n_bits, n_in, n_out) float
    frac_bits: int
    i_cell: float
    gamma: float
    seed: int | None = None

    @property
    def n_weight_bits(self) -> int:
        return self.slices.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.sign_plane.shape

    def magnitude_codes(self) -> np.ndarray:
        weights = (1 << np.arange(self.n_weight_bits, dtype=np.int64))[:, None, None]
        return (self.slices.astype(np.int64) * weights).sum(axis=0)

    def signed_codes(self) -> np.ndarray:
        return np.where(self.sign_plane == 1, -1, 1) * self.magnitude_codes()

    def dequantize(self) -> np.ndarray:
        return self.signed_codes() * 2.0 ** -self.frac_bits


def program(weights, qcfg: QuantConfig, cfg: CrossbarConfig, seed=None) -> BitSlicedWeights:
    """Quantize ``weights`` (n_in x n_out), slice the magnitude and draw cell currents."""
    w = np.asarray(weights, dtype=float)
    if w.ndim != 2:
        raise ValueError("weights must be a 2-D (inputs x outputs) matrix")
    if w.shape[0] > cfg.rows or w.shape[1] > cfg.cols:
        rt, ct = plan_tiles(w.shape[0], w.shape[1], cfg)
        raise ArrayOverflowError(
            f"{w.shape[0]}x{w.shape[1]} weights exceed the {cfg.rows}x{cfg.cols} array; "
            f"partition into {rt} row tiles x {ct} column tiles ({rt * ct} arrays)")
    fmt = qcfg.weight_format
    q = quantize_fixed(w, fmt.total_bits, fmt.int_bits, fmt.signed)
    codes = to_codes(q, fmt)
    mag = np.abs(codes)
    n_bits = fmt.total_bits - (1 if fmt.signed else 0)
    slices = np.stack([(mag >> b) & 1 for b in range(n_bits)]).astype(np.uint8)
    sign = (codes < 0).astype(np.uint8)
    rng = np.random.default_rng(seed)
    eps = rng.standard_normal(slices.shape) if cfg.gamma > 0 else np.zeros(slices.shape)
    currents = cfg.i_cell * (1.0 + cfg.gamma * eps)
    for arr in (slices, sign, currents):
        arr.flags.writeable = False
    return BitSlicedWeights(slices, sign, currents, fmt.frac_bits, cfg.i_cell, cfg.gamma,
                            None if seed is None else int(seed))


def attenuation(cfg: CrossbarConfig, n_rows: int | None = None) -> np.ndarray:
    """Per-row current scaling from first-order bit-line IR drop.

    Row ``r`` sits ``r + 1`` pitches from the sense node at the bottom of the
    column, and its contribution is scaled by ``1 / (1 + n_r * r_wire / R_cell)``.
    """
    n_rows = cfg.rows if n_rows is None else n_rows
    if cfg.parasitic_model is ParasiticModel.IDEAL or cfg.r_wire == 0:
        return np.ones(n_rows)
    distance = np.arange(1, n_rows + 1, dtype=float)
    return 1.0 / (1.0 + distance * cfg.r_wire / cfg.r_cell)


def column_current(mask, currents, input_bits, cfg: CrossbarConfig) -> np.ndarray:
    """Bit-line current of every column for one binary input vector.

    ``mask`` marks conducting cells (rows x cols), ``currents`` gives each
    cell's programmed current.
    """
    mask = np.asarray(mask)
    x = np.asarray(input_bits)
    if x.shape != (mask.shape[0],):
        raise ValueError(f"input length {x.shape} does not match {mask.shape[0]} rows")
    # sum in units of i_cell so nominal cells add up to exact integers
    rel = np.asarray(currents, dtype=float) / cfg.i_cell
    drive = (x.astype(float) * attenuation(cfg, mask.shape[0]))[:, None]
    return (drive * mask * rel).sum(axis=0) * cfg.i_cell


def column_adc(cfg: CrossbarConfig, n_bits: int = 7) -> adcm.IdealAdcModel:
    """Ideal column converter whose full scale is a fully conducting column."""
    return adcm.IdealAdcModel(adcm.AdcSpec(n_bits=n_bits, i_max=cfg.i_full_scale))


def oracle_adc(cfg: CrossbarConfig) -> adcm.IdealAdcModel:
    """Ideal converter with one code per cell current (lossless for integer sums)."""
    n_bits = max(1, math.ceil(math.log2(cfg.rows + 1)))
    return adcm.IdealAdcModel(adcm.AdcSpec(n_bits=n_bits, i_max=2**n_bits * cfg.i_cell))


@dataclass
class MvmResult:
    """Digitized MVM.

    ``values`` are in units of (activation LSB x weight LSB): with a lossless
    readout they equal the integer dot product of the activation and weight
    codes.
    """

    values: np.ndarray
    saturation_fraction: float
    trace: list[tuple] = field(default_factory=list)

    def scaled(self, qcfg: QuantConfig) -> np.ndarray:
        return self.values * qcfg.act_lsb * qcfg.weight_lsb


def _convert_columns(adcs, currents: np.ndarray) -> np.ndarray:
    if isinstance(adcs, (list, tuple)):
        return np.array([adcm.convert(m, float(i)) for m, i in zip(adcs, currents)],
                        dtype=np.int64)
    return np.atleast_1d(adcm.convert(adcs, currents))


def mvm(x, w: BitSlicedWeights, adc, qcfg: QuantConfig, cfg: CrossbarConfig,
        trace: bool = False) -> MvmResult:
    """Bit-serial multiply of activation codes ``x`` by the programmed weights.

    ``adc`` is one model shared by all columns or a sequence with one model per
    output column (used for both halves of its differential pair).
    """
    x = np.asarray(x)
    if x.ndim != 1 or x.shape[0] != w.shape[0]:
        raise ValueError(f"expected {w.shape[0]} activation codes, got shape {x.shape}")
    fmt = qcfg.act_format
    if np.any(x < 0) or np.any(x > fmt.max_code) or np.any(x != np.round(x)):
        raise ValueError("activation codes outside the unsigned activation range")
    x = x.astype(np.int64)
    n_out = w.shape[1]
    if isinstance(adc, (list, tuple)) and len(adc) != n_out:
        raise ValueError("need one ADC per output column")
    spec = adc[0].spec if isinstance(adc, (list, tuple)) else adc.spec
    # cell-equivalents per ADC code
    code_weight = spec.i_max / spec.levels / cfg.i_cell

    neg = w.sign_plane.astype(bool)
    acc = np.zeros(n_out, dtype=float)
    n_conv = n_sat = 0
    rows = []
    for i in range(fmt.total_bits):
        bits = (x >> i) & 1
        if not bits.any():
            continue
        for b in range(w.n_weight_bits):
            sl = w.slices[b].astype(bool)
            cur = w.programmed_currents[b]
            for polarity, mask in ((1, sl & ~neg), (-1, sl & neg)):
                i_col = column_current(mask, cur, bits, cfg)
                codes = _convert_columns(adc, i_col)
                sat = i_col > spec.i_max
                n_conv += i_col.size
                n_sat += int(sat.sum())
                acc += polarity * (codes * code_weight) * 2.0 ** (i + b)
                if trace:
                    rows.extend((i, b, c, polarity, float(i_col[c]), int(codes[c]), int(sat[c]))
                                for c in range(n_out))
    return MvmResult(acc, n_sat / n_conv if n_conv else 0.0, rows)


def write_trace_csv(result: MvmResult, path) -> None:
    with Path(path).open("w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["inbit", "slice", "col", "current", "code", "saturated", "polarity"])
        for inbit, sl, col, pol, cur, code, sat in result.trace:
            wr.writerow([inbit, sl, col, repr(cur), code, sat, "+" if pol > 0 else "-"])


def write_weight_image(w: BitSlicedWeights, qcfg: QuantConfig, path) -> None:
    """Dump slices, sign plane and currents to ``.npz`` with a JSON manifest inside."""
    manifest = {
        "shape": list(w.shape), "n_weight_bits": w.n_weight_bits, "frac_bits": w.frac_bits,
        "i_cell": w.i_cell, "gamma": w.gamma, "seed": w.seed, "qcfg": asdict(qcfg),
    }
    np.savez(path, slices=w.slices, sign_plane=w.sign_plane,
             programmed_currents=w.programmed_currents,
             manifest=np.array(json.dumps(manifest, sort_keys=True)))


def read_weight_image(path) -> tuple[BitSlicedWeights, QuantConfig]:
    with np.load(path) as data:
        manifest = json.loads(str(data["manifest"]))
        w = BitSlicedWeights(data["slices"], data["sign_plane"], data["programmed_currents"],
                             manifest["frac_bits"], manifest["i_cell"], manifest["gamma"],
                             manifest["seed"])
    return w, QuantConfig(**manifest["qcfg"])


def tile_matrix(weights, cfg: CrossbarConfig) -> list[list[np.ndarray]]:
    """Split an oversized weight matrix into ``rows x cols`` tiles (row-major)."""
    w = np.asarray(weights, dtype=float)
    rt, ct = plan_tiles(w.shape[0], w.shape[1], cfg)
    return [[w[r * cfg.rows:(r + 1) * cfg.rows, c * cfg.cols:(c + 1) * cfg.cols]
             for c in range(ct)] for r in range(rt)]


def tiled_mvm(x, weights, qcfg: QuantConfig, cfg: CrossbarConfig, adc=None,
              seed=None) -> MvmResult:
    """Program and multiply an arbitrarily large layer across several arrays.

    Row tiles are accumulated digitally; column tiles are concatenated.
    """
    x = np.asarray(x)
    adc = adc if adc is not None else column_adc(cfg)
    tiles = tile_matrix(weights, cfg)
    # integer per-tile seeds, so every programmed tile records a reusable seed
    seeds = np.random.SeedSequence(seed).generate_state(len(tiles) * len(tiles[0]))
    out_parts, n_sat, n_tot = [], 0.0, 0
    for c in range(len(tiles[0])):
        acc = None
        for r in range(len(tiles)):
            tile = tiles[r][c]
            w = program(tile, qcfg, cfg, int(seeds[r * len(tiles[0]) + c]))
            res = mvm(x[r * cfg.rows:r * cfg.rows + tile.shape[0]], w, adc, qcfg, cfg)
            acc = res.values if acc is None else acc + res.values
            n_sat += res.saturation_fraction
            n_tot += 1
        out_parts.append(acc)
    return MvmResult(np.concatenate(out_parts), n_sat / n_tot if n_tot else 0.0)


__all__ = [
    "ArrayOverflowError", "BitSlicedWeights", "CrossbarConfig", "LayerMapping", "MvmResult",
    "ParasiticModel", "attenuation", "column_adc", "column_current", "mvm", "oracle_adc",
    "plan_tiles", "program", "read_weight_image", "tile_matrix", "tiled_mvm",
    "write_trace_csv", "write_weight_image",
]
