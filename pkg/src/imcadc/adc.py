"""Behavioral models of column readout ADCs for current-mode IMC arrays.

Four topologies share one calling convention: ``convert(model, i_bl)`` maps a
bit-line current (amperes, scalar or array) to an integer output code.

* :class:`IdealAdcModel` -- uniform quantizer, ``floor(2**N * i / i_max)``.
* :class:`CcoAdcModel` -- current-controlled ring oscillator followed by a
  counter gated for ``t_eval = 2**N / f_max``.
* :class:`SarAdcModel` -- front-end TIA/integrator followed by a binary
  weighted capacitive SAR converter.
* :class:`SsAdcModel` -- single-slope ramp converter.

Mismatch instances are drawn with :func:`sample_instance` and tabulated with
:func:`sample_curve` into :class:`TransferCurve` objects, which is what the
metrics, calibration and training code consume.
"""

from __future__ import annotations

import csv
import enum
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence, Union

import numpy as np

# Largest nonlinearity for which the CCO transfer stays monotone over the
# sampled range [0, 1.05] with offsets up to 5 % of full scale.
NL_COEFF_MAX = 0.25


class Topology(str, enum.Enum):
    CCO = "cco"
    SAR = "sar"
    SS = "ss"
    IDEAL = "ideal"


@dataclass(frozen=True)
class AdcSpec:
    """Resolution and full scale shared by every topology.

    ``energy_per_conversion`` is user metadata only; nothing computes it.
    """

    n_bits: int = 7
    i_max: float = 10e-6
    energy_per_conversion: float = 0.0

    def __post_init__(self):
        if self.n_bits < 1:
            raise ValueError(f"n_bits must be >= 1, got {self.n_bits}")
        if not self.i_max > 0:
            raise ValueError(f"i_max must be positive, got {self.i_max}")

    @property
    def code_max(self) -> int:
        return 2**self.n_bits - 1

    @property
    def levels(self) -> int:
        return 2**self.n_bits


@dataclass(frozen=True)
class SupplyNonlinearity:
    """Supply dependence of the CCO compression coefficient.

    ``nl_coeff(s) = nl0 * c1 * (1/s - 1) + nl_base``, capped at
    :data:`NL_COEFF_MAX`. Defaults give ~2-3 LSB worst-case INL at s = 0.6 for
    a 7-bit converter and a linear characteristic at nominal supply.
    """

    nl0: float = 0.075
    c1: float = 1.0
    nl_base: float = 0.0

    def coeff(self, supply_scale: float) -> float:
        _check_supply(supply_scale)
        value = self.nl0 * self.c1 * (1.0 / supply_scale - 1.0) + self.nl_base
        return float(min(max(value, 0.0), NL_COEFF_MAX))


@dataclass(frozen=True)
class IdealAdcModel:
    spec: AdcSpec = field(default_factory=AdcSpec)

    @property
    def topology(self) -> Topology:
        return Topology.IDEAL


@dataclass(frozen=True)
class CcoAdcModel:
    """Ring-oscillator ADC.

    The oscillator frequency is
    ``f = (1 + slope_err) * trim * k_cco * (i + offset_err) * (1 - nl_coeff * u**2)``
    with ``u = i / i_max``; the counter accumulates ``t_eval * f`` cycles.
    ``trim`` is the mirror-ratio multiplier set by calibration (1.0 untrimmed).
    """

    spec: AdcSpec = field(default_factory=AdcSpec)
    k_cco: float = 12.8e12  # Hz/A, i.e. 12.8 MHz/uA
    supply_scale: float = 1.0
    nl_coeff: float = 0.0
    slope_err: float = 0.0
    offset_err: float = 0.0
    v_ref: float = 0.2
    trim: float = 1.0
    nl_law: SupplyNonlinearity | None = None

    def __post_init__(self):
        _check_supply(self.supply_scale)
        if not self.k_cco > 0:
            raise ValueError("k_cco must be positive")
        if self.nl_coeff < 0:
            raise ValueError("nl_coeff must be non-negative")

    @classmethod
    def at_supply(cls, spec: AdcSpec, supply_scale: float = 1.0,
                  nl_law: SupplyNonlinearity | None = None, **kwargs) -> "CcoAdcModel":
        """Nominal instance whose ``nl_coeff`` follows ``nl_law`` at ``supply_scale``."""
        nl_law = nl_law or SupplyNonlinearity()
        return cls(spec=spec, supply_scale=supply_scale,
                   nl_coeff=nl_law.coeff(supply_scale), nl_law=nl_law, **kwargs)

    @property
    def topology(self) -> Topology:
        return Topology.CCO

    @property
    def f_max(self) -> float:
        return self.k_cco * self.spec.i_max

    @property
    def t_eval(self) -> float:
        return eval_time(self.spec, self.f_max)

    def relative_frequency(self, i_bl):
        """``f / f_max`` as a function of bit-line current."""
        i = np.asarray(i_bl, dtype=float)
        u = i / self.spec.i_max
        rel = ((1.0 + self.slope_err) * self.trim
               * ((i + self.offset_err) / self.spec.i_max)
               * (1.0 - self.nl_coeff * u * u))
        return np.maximum(rel, 0.0)


@dataclass(frozen=True)
class SarAdcModel:
    """Front-end transimpedance stage plus a binary-weighted SAR converter.

    ``cap_weights[k]`` is the capacitor switched by bit ``N-1-k`` (MSB first)
    in unit-capacitor multiples; ``c_term`` is the termination capacitor, so
    the nominal array totals ``2**N`` units. The DAC level for a trial code is
    ``v_fs * sum(b_k * c_k) / (sum(c_k) + c_term)`` with
    ``v_fs = frontend_gain * i_max``.
    """

    spec: AdcSpec = field(default_factory=AdcSpec)
    frontend_gain: float = 1e5  # V/A
    frontend_gain_err: float = 0.0
    cap_weights: tuple[float, ...] = ()
    c_term: float = 1.0
    comparator_offset: float = 0.0

    def __post_init__(self):
        if not self.cap_weights:
            object.__setattr__(self, "cap_weights", nominal_caps(self.spec.n_bits))
        else:
            object.__setattr__(self, "cap_weights", tuple(float(c) for c in self.cap_weights))
        if len(self.cap_weights) != self.spec.n_bits:
            raise ValueError(
                f"expected {self.spec.n_bits} cap weights, got {len(self.cap_weights)}")
        if min(self.cap_weights) <= 0 or self.c_term <= 0:
            raise ValueError("capacitor weights must be positive")

    @property
    def topology(self) -> Topology:
        return Topology.SAR

    @property
    def v_fs(self) -> float:
        return self.frontend_gain * self.spec.i_max


@dataclass(frozen=True)
class SsAdcModel:
    spec: AdcSpec = field(default_factory=AdcSpec)
    gain_err: float = 0.0
    offset_err: float = 0.0  # amperes, input referred

    @property
    def topology(self) -> Topology:
        return Topology.SS


AdcModel = Union[IdealAdcModel, CcoAdcModel, SarAdcModel, SsAdcModel]


@dataclass(frozen=True)
class VariationConfig:
    """Standard deviations of the per-instance mismatch draws at nominal supply.

    ``sigma_offset`` is a fraction of ``i_max``; ``sigma_cap`` is the relative
    mismatch of a single unit capacitor; ``sigma_comp`` is in volts. All
    sigmas scale by ``supply_scale ** -supply_variation_exponent``.
    """

    sigma_slope: float = 0.0
    sigma_offset: float = 0.0
    sigma_cap: float = 0.0
    sigma_comp: float = 0.0
    supply_variation_exponent: float = 1.0

    def __post_init__(self):
        for name in ("sigma_slope", "sigma_offset", "sigma_cap", "sigma_comp"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    def scale(self, supply_scale: float) -> float:
        _check_supply(supply_scale)
        return supply_scale ** (-self.supply_variation_exponent)


@dataclass(frozen=True)
class TransferCurve:
    """Tabulated code-vs-input characteristic.

    ``inputs`` are normalized to full scale (1.0 == ``i_max``).
    """

    inputs: np.ndarray
    codes: np.ndarray
    n_bits: int

    def __post_init__(self):
        inputs = np.asarray(self.inputs, dtype=float)
        codes = np.asarray(self.codes, dtype=np.int64)
        if inputs.ndim != 1 or inputs.shape != codes.shape:
            raise ValueError("inputs and codes must be 1-D and of equal length")
        if inputs.size > 1 and np.any(np.diff(inputs) <= 0):
            raise ValueError("inputs must be strictly increasing")
        if codes.size and (codes.min() < 0 or codes.max() > 2**self.n_bits - 1):
            raise ValueError("codes outside [0, 2**n_bits - 1]")
        inputs.flags.writeable = False
        codes.flags.writeable = False
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "codes", codes)

    @property
    def is_monotone(self) -> bool:
        return bool(np.all(np.diff(self.codes) >= 0))

    def lookup(self, x):
        """Code at normalized input ``x``, holding the value of the grid point at or below ``x``."""
        idx = np.searchsorted(self.inputs, np.asarray(x, dtype=float), side="right") - 1
        return self.codes[np.clip(idx, 0, self.codes.size - 1)]

    def __eq__(self, other):
        if not isinstance(other, TransferCurve):
            return NotImplemented
        return (self.n_bits == other.n_bits and np.array_equal(self.inputs, other.inputs)
                and np.array_equal(self.codes, other.codes))

    __hash__ = None


def _check_supply(supply_scale: float) -> None:
    if not 0 < supply_scale <= 1:
        raise ValueError(f"supply_scale must lie in (0, 1], got {supply_scale}")


def _check_current(i_bl) -> np.ndarray:
    i = np.asarray(i_bl, dtype=float)
    if np.any(i < 0) or np.any(np.isnan(i)):
        raise ValueError("bit-line current must be non-negative")
    return i


def nominal_caps(n_bits: int) -> tuple[float, ...]:
    return tuple(float(2 ** (n_bits - 1 - k)) for k in range(n_bits))


def eval_time(spec: AdcSpec, f_max: float) -> float:
    """Counter window of a CCO converter, ``2**N / f_max`` seconds."""
    if not f_max > 0:
        raise ValueError(f"f_max must be positive, got {f_max}")
    return 2**spec.n_bits / f_max


def latency_cycles(topology: Topology | str, n_bits: int) -> int:
    """Clock cycles per conversion: N for SAR, 2**N for ramp and counter types."""
    if n_bits < 1:
        raise ValueError("n_bits must be >= 1")
    topology = Topology(topology)
    if topology is Topology.SAR:
        return n_bits
    if topology in (Topology.SS, Topology.CCO):
        return 2**n_bits
    raise ValueError(f"no latency model for {topology.value}")


def cco_frequency(model: CcoAdcModel, i_bl):
    """Oscillation frequency in Hz for bit-line current ``i_bl``."""
    i = _check_current(i_bl)
    f = model.f_max * model.relative_frequency(i)
    return float(f) if np.ndim(f) == 0 else f


def _floor_clamp(value, code_max: int):
    return np.clip(np.floor(value), 0, code_max).astype(np.int64)


def _sar_convert(model: SarAdcModel, i: np.ndarray) -> np.ndarray:
    n = model.spec.n_bits
    caps = np.asarray(model.cap_weights)
    total = caps.sum() + model.c_term
    # everything in units of v_fs so nominal comparisons are exact
    v_in = (1.0 + model.frontend_gain_err) * i / model.spec.i_max
    offset = model.comparator_offset / model.v_fs
    code = np.zeros(i.shape, dtype=np.int64)
    dac = np.zeros(i.shape, dtype=float)
    for k in range(n):
        trial = dac + caps[k] / total
        keep = v_in >= trial + offset
        dac = np.where(keep, trial, dac)
        code = np.where(keep, code | (1 << (n - 1 - k)), code)
    return code


def convert(model: AdcModel, i_bl):
    """Digitize bit-line current(s); out-of-range inputs clamp silently."""
    i = _check_current(i_bl)
    spec = model.spec
    if isinstance(model, IdealAdcModel):
        code = _floor_clamp(spec.levels * (i / spec.i_max), spec.code_max)
    elif isinstance(model, CcoAdcModel):
        code = _floor_clamp(spec.levels * model.relative_frequency(i), spec.code_max)
    elif isinstance(model, SsAdcModel):
        code = _floor_clamp(
            spec.levels * (1.0 + model.gain_err) * ((i + model.offset_err) / spec.i_max),
            spec.code_max)
    elif isinstance(model, SarAdcModel):
        code = _sar_convert(model, i)
    else:
        raise TypeError(f"unsupported ADC model {type(model).__name__}")
    return int(code) if code.ndim == 0 else code


def convert_batch(model: AdcModel, i_bl) -> tuple[np.ndarray, float]:
    """Convert an array and report the fraction of inputs beyond full scale."""
    i = np.atleast_1d(_check_current(i_bl))
    codes = np.atleast_1d(convert(model, i))
    saturated = float(np.mean(i > model.spec.i_max)) if i.size else 0.0
    return codes, saturated


def sample_instance(template: AdcModel, var: VariationConfig, supply_scale: float,
                    seed) -> AdcModel:
    """Draw one mismatch instance around ``template``.

    Template error fields act as the population mean (e.g. a configured corner
    shift). The result is a pure function of the arguments.
    """
    scale = var.scale(supply_scale)
    rng = np.random.default_rng(seed)
    # fixed draw order keeps instances comparable across supply levels
    z = rng.standard_normal(4)
    i_max = template.spec.i_max
    if isinstance(template, CcoAdcModel):
        nl = template.nl_law.coeff(supply_scale) if template.nl_law else template.nl_coeff
        return replace(
            template, supply_scale=supply_scale, nl_coeff=nl,
            slope_err=template.slope_err + var.sigma_slope * scale * z[0],
            offset_err=template.offset_err + var.sigma_offset * scale * i_max * z[1])
    if isinstance(template, SsAdcModel):
        return replace(
            template,
            gain_err=template.gain_err + var.sigma_slope * scale * z[0],
            offset_err=template.offset_err + var.sigma_offset * scale * i_max * z[1])
    if isinstance(template, SarAdcModel):
        caps = np.asarray(template.cap_weights + (template.c_term,))
        # a cap of n unit devices has relative sigma sigma_cap / sqrt(n)
        zc = rng.standard_normal(caps.size)
        drawn = caps + var.sigma_cap * scale * np.sqrt(caps) * zc
        drawn = np.maximum(drawn, 1e-3 * caps)
        return replace(
            template,
            frontend_gain_err=template.frontend_gain_err + var.sigma_slope * scale * z[0],
            comparator_offset=template.comparator_offset + var.sigma_comp * scale * z[2],
            cap_weights=tuple(drawn[:-1]), c_term=float(drawn[-1]))
    if isinstance(template, IdealAdcModel):
        return template
    raise TypeError(f"unsupported ADC model {type(template).__name__}")


def sample_population(template: AdcModel, var: VariationConfig, supply_scale: float,
                      seed: int, n: int) -> list[AdcModel]:
    """``n`` instances with per-instance seeds spawned from ``seed``."""
    children = np.random.SeedSequence(seed).spawn(n)
    return [sample_instance(template, var, supply_scale, child) for child in children]


def default_grid_points(n_bits: int, oversample: int = 16) -> int:
    return oversample * 2**n_bits + 1


def sample_curve(model: AdcModel, n_points: int | None = None) -> TransferCurve:
    """Tabulate ``model`` on a uniform grid over [0, 1.05] of full scale."""
    n_bits = model.spec.n_bits
    if n_points is None:
        n_points = default_grid_points(n_bits)
    if n_points < 2**n_bits:
        raise ValueError(
            f"n_points={n_points} cannot resolve {2**n_bits} codes; need >= {2**n_bits}")
    x = np.linspace(0.0, 1.05, n_points)
    codes = convert(model, x * model.spec.i_max)
    return TransferCurve(x, codes, n_bits)


# --- serialization -------------------------------------------------------

def write_curve_csv(curve: TransferCurve, path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["input_norm", "code"])
        for x, c in zip(curve.inputs, curve.codes):
            writer.writerow([repr(float(x)), int(c)])


def read_curve_csv(path, n_bits: int) -> TransferCurve:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return TransferCurve(data[:, 0], data[:, 1].astype(np.int64), n_bits)


def model_to_dict(model: AdcModel) -> dict:
    d = asdict(model)
    d["topology"] = model.topology.value
    return d


def model_from_dict(d: dict) -> AdcModel:
    d = dict(d)
    topology = Topology(d.pop("topology"))
    spec = AdcSpec(**d.pop("spec"))
    if topology is Topology.CCO:
        law = d.pop("nl_law", None)
        return CcoAdcModel(spec=spec, nl_law=SupplyNonlinearity(**law) if law else None, **d)
    if topology is Topology.SAR:
        d["cap_weights"] = tuple(d["cap_weights"])
        return SarAdcModel(spec=spec, **d)
    if topology is Topology.SS:
        return SsAdcModel(spec=spec, **d)
    return IdealAdcModel(spec=spec)


def write_population(curves: Sequence[TransferCurve], directory, *, seed: int,
                     var: VariationConfig, supply_scale: float,
                     template: AdcModel | None = None) -> Path:
    """Write ``mc_<index>.csv`` curves plus ``manifest.json`` into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for k, curve in enumerate(curves):
        write_curve_csv(curve, directory / f"mc_{k}.csv")
    manifest = {
        "seed": seed,
        "n_curves": len(curves),
        "n_bits": curves[0].n_bits if curves else None,
        "supply_scale": supply_scale,
        "variation": asdict(var),
        "template": model_to_dict(template) if template is not None else None,
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return directory


def read_population(directory) -> tuple[list[TransferCurve], dict]:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    n_bits = manifest["n_bits"]
    curves = [read_curve_csv(directory / f"mc_{k}.csv", n_bits)
              for k in range(manifest["n_curves"])]
    return curves, manifest


def transition_gaps(curve: TransferCurve) -> np.ndarray:
    """Input spacing between successive code changes (helper for quick checks)."""
    changes = np.flatnonzero(np.diff(curve.codes) > 0) + 1
    return np.diff(curve.inputs[changes])


def ideal_codes(x, n_bits: int):
    """Reference ``floor(2**N * x)`` clamped to the code range."""
    return _floor_clamp(2**n_bits * np.asarray(x, dtype=float), 2**n_bits - 1)


__all__ = [
    "AdcModel", "AdcSpec", "CcoAdcModel", "IdealAdcModel", "NL_COEFF_MAX", "SarAdcModel",
    "SsAdcModel", "SupplyNonlinearity", "Topology", "TransferCurve", "VariationConfig",
    "cco_frequency", "convert", "convert_batch", "default_grid_points", "eval_time",
    "ideal_codes", "latency_cycles", "model_from_dict", "model_to_dict", "nominal_caps",
    "read_curve_csv", "read_population", "sample_curve", "sample_instance",
    "sample_population", "transition_gaps", "write_curve_csv", "write_population",
]
