"""Static linearity metrics for tabulated ADC transfer curves.

Transition points are located by linear interpolation between the two grid
samples bracketing each code change (the midpoint of the bracket for a single
step). INL/DNL use an endpoint fit: the first and last transitions define the
effective LSB, so INL is zero at both ends and DNL sums to zero.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .adc import TransferCurve


class NonMonotoneCurveError(ValueError):
    pass


@dataclass(frozen=True)
class LinearityReport:
    """DNL/INL in LSB for codes ``1 .. 2**N - 2``.

    Entries for codes outside the range spanned by the observed transitions
    are NaN. Missing codes carry DNL = -1 and NaN INL.
    """

    dnl: np.ndarray
    inl: np.ndarray
    max_abs_dnl: float
    max_abs_inl: float
    missing_codes: tuple[int, ...]
    lsb: float  # effective LSB, normalized input units
    n_bits: int

    @property
    def codes(self) -> np.ndarray:
        return np.arange(1, 2**self.n_bits - 1)


def _thresholds(curve: TransferCurve) -> np.ndarray:
    """Input at which the output first reaches each code 1..code_max (NaN if never)."""
    if not curve.is_monotone:
        raise NonMonotoneCurveError("transfer curve is not monotone")
    code_max = 2**curve.n_bits - 1
    x, c = curve.inputs, curve.codes
    out = np.full(code_max + 1, np.nan)
    jumps = np.flatnonzero(np.diff(c) > 0)
    for j in jumps:
        lo, hi = int(c[j]), int(c[j + 1])
        # every code crossed by a multi-code jump shares the bracket midpoint
        out[lo + 1:hi + 1] = 0.5 * (x[j] + x[j + 1])
    # codes already present at the first grid point transition below the
    # sampled range and stay NaN
    return out


def _missing(curve: TransferCurve, thresholds: np.ndarray) -> list[int]:
    present = set(np.unique(curve.codes).tolist())
    bottom, top = int(curve.codes[0]), int(curve.codes.max())
    return [k for k in range(bottom + 1, top) if k not in present]


def transition_points(curve: TransferCurve) -> dict[int, float]:
    """Map code -> interpolated input where the output first reaches that code.

    Codes that never appear on their own (skipped by a jump) are omitted.
    """
    thr = _thresholds(curve)
    missing = set(_missing(curve, thr))
    return {k: float(thr[k]) for k in range(1, thr.size)
            if not np.isnan(thr[k]) and k not in missing}


def linearity(curve: TransferCurve) -> LinearityReport:
    thr = _thresholds(curve)
    valid = np.flatnonzero(~np.isnan(thr))
    valid = valid[valid >= 1]
    if valid.size < 2:
        raise ValueError("need at least two code transitions for a linearity report")
    first, last = int(valid[0]), int(valid[-1])
    lsb = (thr[last] - thr[first]) / (last - first)
    if not lsb > 0:
        raise ValueError("degenerate transfer curve: zero effective LSB")

    n_codes = 2**curve.n_bits - 2
    dnl = np.full(n_codes, np.nan)
    inl = np.full(n_codes, np.nan)
    ks = np.arange(first, last)
    dnl_vals = (thr[ks + 1] - thr[ks]) / lsb - 1.0
    dnl[ks - 1] = dnl_vals
    inl_k = np.arange(first, last + 1)
    inl_vals = (thr[inl_k] - thr[first]) / lsb - (inl_k - first)
    keep = inl_k <= n_codes
    inl[inl_k[keep] - 1] = inl_vals[keep]

    missing = _missing(curve, thr)
    for k in missing:
        inl[k - 1] = np.nan
    return LinearityReport(
        dnl=dnl, inl=inl,
        max_abs_dnl=float(np.nanmax(np.abs(dnl))),
        max_abs_inl=float(np.nanmax(np.abs(inl))),
        missing_codes=tuple(missing), lsb=float(lsb), n_bits=curve.n_bits)


@dataclass(frozen=True)
class PopulationSpread:
    input_norm: float
    mean_code: float
    std_code: float
    min: int
    max: int


def population_spread(curves: Sequence[TransferCurve], input_norm: float) -> PopulationSpread:
    """Code statistics across a Monte-Carlo population at one input level."""
    if not curves:
        raise ValueError("empty population")
    if len({c.n_bits for c in curves}) != 1:
        raise ValueError("population mixes ADC resolutions")
    codes = np.array([int(c.lookup(input_norm)) for c in curves])
    return PopulationSpread(float(input_norm), float(codes.mean()), float(codes.std()),
                            int(codes.min()), int(codes.max()))


def spread_vs_input(curves: Sequence[TransferCurve], inputs) -> list[PopulationSpread]:
    return [population_spread(curves, float(x)) for x in inputs]


def write_linearity_csv(report: LinearityReport, path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["code", "dnl_lsb", "inl_lsb"])
        for code, d, i in zip(report.codes, report.dnl, report.inl):
            w.writerow([int(code), _fmt(d), _fmt(i)])
        w.writerow([f"# max_abs_dnl={report.max_abs_dnl:.6f} max_abs_inl={report.max_abs_inl:.6f} "
                    f"missing_codes={' '.join(map(str, report.missing_codes)) or 'none'}"])


def write_spread_csv(rows: Sequence[PopulationSpread], path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["input_norm", "mean_code", "std_code", "min_code", "max_code"])
        for r in rows:
            w.writerow([f"{r.input_norm:.6f}", f"{r.mean_code:.6f}", f"{r.std_code:.6f}",
                        r.min, r.max])


def _fmt(v: float) -> str:
    return "nan" if np.isnan(v) else f"{v:.6f}"
