"""Single-point gain calibration of CCO converters.

A thermometer-coded bank of equally sized devices diverts mirror current away
from the oscillator. Each enabled device lowers the effective slope by
``tuning_step``. The hardware loop enables one device per clock and freezes the
shift register as soon as the count at the calibration current drops to the
reference count, so tuning is one-directional: slow instances stay slow.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .adc import CcoAdcModel, convert


class CalibrationOutOfRange(RuntimeError):
    """The instance is still too fast with every tuning device enabled."""

    def __init__(self, message: str, code_at_ical: int):
        super().__init__(message)
        self.code_at_ical = code_at_ical


@dataclass(frozen=True)
class CalibrationConfig:
    n_tuning_bits: int = 9
    tuning_step: float = 0.01
    i_cal_fraction: float = 1.0 / 3.0  # of i_max
    ref_count: int | None = None  # defaults to the ideal code at i_cal
    area_factor: float = 3.0  # layout overhead, reported only

    def __post_init__(self):
        if self.n_tuning_bits < 1:
            raise ValueError("n_tuning_bits must be >= 1")
        if not 0 < self.i_cal_fraction <= 1:
            raise ValueError("i_cal must lie in (0, i_max]")
        if self.n_tuning_bits * self.tuning_step >= 1:
            raise ValueError("tuning bank would remove the whole mirror current")

    def i_cal(self, model: CcoAdcModel) -> float:
        return self.i_cal_fraction * model.spec.i_max

    def reference(self, model: CcoAdcModel) -> int:
        if self.ref_count is not None:
            if not 0 <= self.ref_count <= model.spec.code_max:
                raise ValueError("ref_count outside the code range")
            return self.ref_count
        return int(np.floor(model.spec.levels * self.i_cal_fraction))


@dataclass(frozen=True)
class CalibratedAdc:
    base: CcoAdcModel
    tuning_code: int
    tuning_step: float

    @property
    def slope_multiplier(self) -> float:
        return 1.0 - self.tuning_code * self.tuning_step

    @property
    def model(self) -> CcoAdcModel:
        """The base instance with the mirror trim applied."""
        return replace(self.base, trim=self.base.trim * self.slope_multiplier)

    def convert(self, i_bl):
        return convert(self.model, i_bl)


def with_tuning(model: CcoAdcModel, tuning_code: int, cfg: CalibrationConfig) -> CalibratedAdc:
    if not 0 <= tuning_code <= cfg.n_tuning_bits:
        raise ValueError("tuning_code outside the thermometer bank")
    return CalibratedAdc(model, tuning_code, cfg.tuning_step)


def calibrate(model: CcoAdcModel, cfg: CalibrationConfig) -> CalibratedAdc:
    """Emulate the shift-register loop and return the frozen setting."""
    i_cal = cfg.i_cal(model)
    ref = cfg.reference(model)
    code = None
    for t in range(cfg.n_tuning_bits + 1):
        cal = with_tuning(model, t, cfg)
        code = cal.convert(i_cal)
        if code <= ref:
            return cal
    raise CalibrationOutOfRange(
        f"count {code} at i_cal still above reference {ref} with all "
        f"{cfg.n_tuning_bits} tuning bits enabled", code)


@dataclass(frozen=True)
class CalibrationRecord:
    instance_id: int
    tuning_code: int | None
    code_at_ical: int
    status: str  # "ok" or "out_of_range"


@dataclass(frozen=True)
class PostCalSpread:
    spread_at_ical: float
    spread_at_imax: float
    area_factor: float
    n_calibrated: int
    n_out_of_range: int


def calibrate_population(population: Sequence[CcoAdcModel], cfg: CalibrationConfig
                         ) -> tuple[list[CalibratedAdc | None], list[CalibrationRecord]]:
    calibrated: list[CalibratedAdc | None] = []
    records = []
    for k, model in enumerate(population):
        try:
            cal = calibrate(model, cfg)
        except CalibrationOutOfRange as exc:
            calibrated.append(None)
            records.append(CalibrationRecord(k, None, exc.code_at_ical, "out_of_range"))
            continue
        calibrated.append(cal)
        records.append(CalibrationRecord(k, cal.tuning_code, cal.convert(cfg.i_cal(model)), "ok"))
    return calibrated, records


def post_cal_spread(population: Sequence[CcoAdcModel], cfg: CalibrationConfig) -> PostCalSpread:
    """Code std-dev across calibrated instances at i_cal and at i_max.

    Out-of-range instances are excluded from the statistics and counted.
    """
    if not population:
        raise ValueError("empty population")
    calibrated, _ = calibrate_population(population, cfg)
    ok = [c for c in calibrated if c is not None]
    if not ok:
        raise CalibrationOutOfRange("no instance could be calibrated", -1)
    i_cal = cfg.i_cal(population[0])
    i_max = population[0].spec.i_max
    at_cal = np.array([c.convert(i_cal) for c in ok], dtype=float)
    at_max = np.array([c.convert(i_max) for c in ok], dtype=float)
    return PostCalSpread(float(at_cal.std()), float(at_max.std()), cfg.area_factor,
                         len(ok), len(calibrated) - len(ok))


def uncalibrated_spread(population: Sequence[CcoAdcModel], i_bl: float) -> float:
    return float(np.std([convert(m, i_bl) for m in population]))


def write_calibration_csv(records: Sequence[CalibrationRecord], path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["instance_id", "tuning_code", "code_at_ical", "status"])
        for r in records:
            w.writerow([r.instance_id, "" if r.tuning_code is None else r.tuning_code,
                        r.code_at_ical, r.status])
