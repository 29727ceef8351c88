"""Experiment configuration: one JSON tree with dotted-path overrides.

Every command resolves the tree (defaults, then ``--config`` file, then
``--set`` overrides), validates it, and writes the result into its output
directory next to the tool version.
"""

from __future__ import annotations

import copy
import json
from pathlib import Path
from typing import Any

from . import __version__
from .adc import AdcSpec, CcoAdcModel, SarAdcModel, SsAdcModel, IdealAdcModel, SupplyNonlinearity
from .adc import Topology, VariationConfig
from .calibration import CalibrationConfig
from .crossbar import CrossbarConfig, ParasiticModel
from .fixedpoint import QuantConfig
from .qat.activation import ActMode, ReassignPolicy
from .qat.quant import NoiseConfig


class ConfigError(ValueError):
    pass


RECIPES = ("bitwidth-sweep", "adc-retrain", "vat", "weight-noise")


DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "output_dir": "runs/out",
    "jobs": 1,
    "adc": {
        "topology": "cco",
        "n_bits": 7,
        "i_max": 10e-6,
        "k_cco": 12.8e12,
        "v_ref": 0.2,
        "slope_err": 0.0,
        "offset_err": 0.0,
        "nl_coeff": None,  # None: follow the supply law
        "nl_law": {"nl0": 0.075, "c1": 1.0, "nl_base": 0.0},
        "supply_scales": [1.0, 0.8, 0.6],
        "grid_points": None,
        "spread_inputs": 21,
    },
    "variation": {
        "sigma_slope": 0.03,
        "sigma_offset": 0.01,
        "sigma_cap": 0.0,
        "sigma_comp": 0.0,
        "supply_variation_exponent": 1.0,
        "n_instances": 200,
    },
    "calibration": {
        "n_tuning_bits": 9,
        "tuning_step": 0.01,
        "i_cal_fraction": 1.0 / 3.0,
        "ref_count": None,
        "area_factor": 3.0,
        "supply_scale": 1.0,
        # fast-by-design slope so the one-directional bank can pull instances down
        "slope_mean": 0.045,
        "sigma_slope": 0.03,
        "sigma_offset": 0.0,
        "n_instances": 200,
        "spread_inputs": 21,
    },
    "crossbar": {
        "rows": 16,
        "cols": 16,
        "i_cell": 0.15625e-6,
        "gamma": 0.0,
        "r_wire": 0.0,
        "c_wire": 0.0,
        "v_ref": 0.2,
        "parasitic_model": "ideal",
        "n_cases": 1000,
        "adc_bits": 7,
    },
    "quant": {
        "weight_total_bits": 7,
        "weight_int_bits": 0,
        "act_total_bits": 7,
        "act_int_bits": 2,
    },
    "noise": {"gamma": 0.1, "layers": ["conv1", "conv2"], "eval_repeats": 10},
    "data": {"cache": "data/digits.npz", "test_fraction": 0.3, "split_seed": 0},
    "training": {
        "recipe": "adc-retrain",
        "seeds": [0, 1, 2],
        "pretrain_epochs": 15,
        "pretrain_lr": 0.05,
        "quant_epochs": 5,
        "finetune_epochs": 8,
        "finetune_lr": 0.01,
        "batch_size": 32,
        "momentum": 0.9,
        "weight_decay": 0.0,
        "bit_widths": [5, 6, 7, 8],
    },
    "evaluate": {
        "checkpoint": None,
        "mode": "ideal_quantized",
        "curve": None,  # curve CSV for fixed_curve mode
        "population": None,  # population directory: per-curve evaluation
        "with_noise": False,
        "repeats": 1,
    },
    "curves": {
        # typical-corner curves for the retraining table
        "cco": {"supply_scale": 0.4, "slope_err": 0.25, "offset_err_frac": 0.15},
        "sar": {"comparator_offset": -0.1, "sigma_cap": 0.1, "instance_seed": 3},
        # Monte-Carlo pool for variation-aware training
        "vat": {
            "supply_scale": 0.6,
            "sigma_slope": 0.1,
            "sigma_offset": 0.06,
            "pool_size": 200,
            "pool_seed": 1,
            "held_out": 100,
            "held_out_seed": 2,
            "policy": "per_iteration",
        },
    },
}


def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        here = f"{path}{k}"
        if k not in out:
            raise ConfigError(f"unknown config key '{here}'")
        if isinstance(out[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"'{here}' is a section, got {type(v).__name__}")
            out[k] = _merge(out[k], v, here + ".")
        else:
            out[k] = copy.deepcopy(v)
    return out


def parse_override(text: str) -> tuple[list[str], Any]:
    """``a.b.c=value``; the value is JSON when it parses, a bare string otherwise."""
    if "=" not in text:
        raise ConfigError(f"override '{text}' is not of the form key=value")
    key, raw = text.split("=", 1)
    parts = [p for p in key.strip().split(".") if p]
    if not parts:
        raise ConfigError(f"override '{text}' has an empty key")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return parts, value


def apply_override(tree: dict, parts: list[str], value: Any) -> dict:
    nested: Any = value
    for p in reversed(parts):
        nested = {p: nested}
    return _merge(tree, nested)


def resolve(config_path: str | Path | None = None, overrides: list[str] = (),
            **top_level) -> dict:
    """Defaults <- file <- ``--set`` overrides <- explicit top-level flags."""
    tree = copy.deepcopy(DEFAULTS)
    if config_path is not None:
        try:
            loaded = json.loads(Path(config_path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {config_path}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a JSON object")
        tree = _merge(tree, loaded)
    for text in overrides:
        tree = apply_override(tree, *parse_override(text))
    for k, v in top_level.items():
        if v is not None:
            tree = apply_override(tree, [k], v)
    validate(tree)
    return tree


def validate(tree: dict) -> None:
    """Build every typed config once so errors surface before any work starts."""
    try:
        adc_spec(tree)
        adc_template(tree, 1.0)
        variation(tree)
        calibration(tree)
        crossbar(tree)
        quant(tree)
        noise(tree)
        ReassignPolicy(tree["curves"]["vat"]["policy"])
        ActMode(tree["evaluate"]["mode"])
        if not tree["adc"]["supply_scales"]:
            raise ValueError("adc.supply_scales is empty")
        if int(tree["variation"]["n_instances"]) < 1:
            raise ValueError("variation.n_instances must be >= 1")
        if tree["training"]["recipe"] not in RECIPES:
            raise ValueError(f"unknown recipe '{tree['training']['recipe']}' "
                             f"(choose from {', '.join(RECIPES)})")
        if not tree["training"]["seeds"]:
            raise ValueError("training.seeds is empty")
        if int(tree["jobs"]) < 1:
            raise ValueError("jobs must be >= 1")
    except (TypeError, ValueError, KeyError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def adc_spec(tree: dict) -> AdcSpec:
    a = tree["adc"]
    return AdcSpec(n_bits=int(a["n_bits"]), i_max=float(a["i_max"]))


def adc_template(tree: dict, supply_scale: float):
    a = tree["adc"]
    spec = adc_spec(tree)
    topo = Topology(a["topology"])
    if topo is Topology.CCO:
        law = SupplyNonlinearity(**a["nl_law"])
        kw = dict(k_cco=float(a["k_cco"]), v_ref=float(a["v_ref"]),
                  slope_err=float(a["slope_err"]), offset_err=float(a["offset_err"]))
        if a["nl_coeff"] is not None:
            return CcoAdcModel(spec, supply_scale=supply_scale, nl_coeff=float(a["nl_coeff"]),
                               nl_law=law, **kw)
        return CcoAdcModel.at_supply(spec, supply_scale, nl_law=law, **kw)
    if topo is Topology.SAR:
        return SarAdcModel(spec)
    if topo is Topology.SS:
        return SsAdcModel(spec, gain_err=float(a["slope_err"]), offset_err=float(a["offset_err"]))
    return IdealAdcModel(spec)


def variation(tree: dict) -> VariationConfig:
    v = tree["variation"]
    return VariationConfig(sigma_slope=float(v["sigma_slope"]),
                           sigma_offset=float(v["sigma_offset"]),
                           sigma_cap=float(v["sigma_cap"]), sigma_comp=float(v["sigma_comp"]),
                           supply_variation_exponent=float(v["supply_variation_exponent"]))


def calibration(tree: dict) -> CalibrationConfig:
    c = tree["calibration"]
    return CalibrationConfig(n_tuning_bits=int(c["n_tuning_bits"]),
                             tuning_step=float(c["tuning_step"]),
                             i_cal_fraction=float(c["i_cal_fraction"]),
                             ref_count=None if c["ref_count"] is None else int(c["ref_count"]),
                             area_factor=float(c["area_factor"]))


def crossbar(tree: dict) -> CrossbarConfig:
    c = tree["crossbar"]
    return CrossbarConfig(rows=int(c["rows"]), cols=int(c["cols"]), i_cell=float(c["i_cell"]),
                          gamma=float(c["gamma"]), r_wire=float(c["r_wire"]),
                          c_wire=float(c["c_wire"]), v_ref=float(c["v_ref"]),
                          parasitic_model=ParasiticModel(c["parasitic_model"]))


def quant(tree: dict, weight_bits: int | None = None, act_bits: int | None = None) -> QuantConfig:
    q = tree["quant"]
    return QuantConfig(weight_total_bits=int(weight_bits or q["weight_total_bits"]),
                       weight_int_bits=int(q["weight_int_bits"]),
                       act_total_bits=int(act_bits or q["act_total_bits"]),
                       act_int_bits=int(q["act_int_bits"]))


def noise(tree: dict) -> NoiseConfig:
    return NoiseConfig(gamma=float(tree["noise"]["gamma"]))


def write_provenance(tree: dict, out_dir: str | Path, command: str) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "config.json"
    record = {"tool": "imcadc", "version": __version__, "command": command, "config": tree}
    path.write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
    return path
