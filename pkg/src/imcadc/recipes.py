"""Accuracy-trend recipes on the desk-scale CNN.

Each recipe is a deterministic function of the resolved config: it trains
from a shared float/quantized warm start per seed, writes CSV (and aligned
text) tables into the output directory and returns the summary rows.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from . import adc as A
from . import config as C
from .qat import (ActMode, CurveBank, DeskCNN, History, ReassignPolicy, TrainConfig, VatPool,
                  evaluate, evaluate_curves, load_digits_split, save_checkpoint, train)
from .qat.data import Dataset

log = logging.getLogger(__name__)

RECIPES = C.RECIPES


def load_data(tree: dict) -> Dataset:
    d = tree["data"]
    return load_digits_split(d["cache"], test_fraction=float(d["test_fraction"]),
                             split_seed=int(d["split_seed"]))


def new_net(tree: dict, seed: int) -> DeskCNN:
    net = DeskCNN(seed=seed)
    noisy = set(tree["noise"]["layers"])
    for name, mod in net.named_modules():
        if hasattr(mod, "noisy"):
            mod.noisy = name in noisy
    return net


def train_config(tree: dict, seed: int, stage: str) -> TrainConfig:
    t = tree["training"]
    epochs, lr = {
        "pretrain": (t["pretrain_epochs"], t["pretrain_lr"]),
        "quant": (t["quant_epochs"], t["finetune_lr"]),
        "finetune": (t["finetune_epochs"], t["finetune_lr"]),
    }[stage]
    return TrainConfig(epochs=int(epochs), lr=float(lr), momentum=float(t["momentum"]),
                       weight_decay=float(t["weight_decay"]), batch_size=int(t["batch_size"]),
                       seed=int(seed))


# -- curves ---------------------------------------------------------------

def _cco_template(tree: dict, supply_scale: float, **kw) -> A.CcoAdcModel:
    a = tree["adc"]
    return A.CcoAdcModel.at_supply(C.adc_spec(tree), supply_scale,
                                   nl_law=A.SupplyNonlinearity(**a["nl_law"]),
                                   k_cco=float(a["k_cco"]), v_ref=float(a["v_ref"]), **kw)


def typical_cco_curve(tree: dict) -> A.TransferCurve:
    c = tree["curves"]["cco"]
    spec = C.adc_spec(tree)
    model = _cco_template(tree, float(c["supply_scale"]), slope_err=float(c["slope_err"]),
                          offset_err=float(c["offset_err_frac"]) * spec.i_max)
    return A.sample_curve(model)


def typical_sar_curve(tree: dict) -> A.TransferCurve:
    c = tree["curves"]["sar"]
    tmpl = A.SarAdcModel(C.adc_spec(tree), comparator_offset=float(c["comparator_offset"]))
    inst = A.sample_instance(tmpl, A.VariationConfig(sigma_cap=float(c["sigma_cap"])), 1.0,
                             int(c["instance_seed"]))
    return A.sample_curve(inst)


def vat_curves(tree: dict) -> tuple[list[A.TransferCurve], list[A.TransferCurve]]:
    """(training pool, held-out population) from the same variation model."""
    v = tree["curves"]["vat"]
    s = float(v["supply_scale"])
    tmpl = _cco_template(tree, s)
    var = A.VariationConfig(sigma_slope=float(v["sigma_slope"]),
                            sigma_offset=float(v["sigma_offset"]))
    pool = [A.sample_curve(m) for m in
            A.sample_population(tmpl, var, s, int(v["pool_seed"]), int(v["pool_size"]))]
    held = [A.sample_curve(m) for m in
            A.sample_population(tmpl, var, s, int(v["held_out_seed"]), int(v["held_out"]))]
    return pool, held


# -- warm starts ----------------------------------------------------------

@dataclass
class WarmStart:
    float_state: dict
    float_acc: float
    float_as_quant_acc: float  # float weights read through the ideal 7-bit path
    quant_state: dict
    quant_acc: float
    histories: dict[str, History]


class PretrainCache:
    """Float and ideal-quantized warm starts per seed, reused across recipes.

    Keyed on the parts of the config that influence them, so one cache can be
    shared safely by several recipe runs.
    """

    def __init__(self):
        self._store: dict[tuple, WarmStart] = {}
        self._float: dict[tuple, tuple[dict, float, History]] = {}

    @staticmethod
    def _key(tree: dict, seed: int, with_quant: bool) -> tuple:
        t = tree["training"]
        parts = [seed, repr(tree["data"]), t["pretrain_epochs"], t["pretrain_lr"],
                 t["batch_size"], t["momentum"], t["weight_decay"], repr(tree["noise"]["layers"])]
        if with_quant:
            parts += [t["quant_epochs"], t["finetune_lr"], repr(tree["quant"])]
        return tuple(parts)

    def float_start(self, tree: dict, data: Dataset, seed: int) -> tuple[dict, float, History]:
        key = self._key(tree, seed, False)
        if key not in self._float:
            net = new_net(tree, seed)
            hist = train(net, data, None, ActMode.IDEAL_RELU_FLOAT,
                         train_config(tree, seed, "pretrain"), label="float")
            acc = evaluate(net, data, None, ActMode.IDEAL_RELU_FLOAT)
            self._float[key] = (net.shadow_state(), acc, hist)
        return self._float[key]

    def get(self, tree: dict, data: Dataset, seed: int) -> WarmStart:
        key = self._key(tree, seed, True)
        if key not in self._store:
            f_state, f_acc, f_hist = self.float_start(tree, data, seed)
            qcfg = C.quant(tree)
            net = new_net(tree, seed)
            net.load_state_dict(f_state)
            as_q = evaluate(net, data, qcfg, ActMode.IDEAL_QUANTIZED)
            q_hist = train(net, data, qcfg, ActMode.IDEAL_QUANTIZED,
                           train_config(tree, seed, "quant"), label="ideal_quantized")
            q_acc = evaluate(net, data, qcfg, ActMode.IDEAL_QUANTIZED)
            self._store[key] = WarmStart(f_state, f_acc, as_q, net.shadow_state(), q_acc,
                                         {"float": f_hist, "ideal_quantized": q_hist})
        return self._store[key]


# -- tables ---------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.2f}"
    return str(v)


def write_table(path_stem: Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    """Same table as ``<stem>.csv`` and as aligned plain text ``<stem>.txt``."""
    cells = [[_fmt(v) for v in r] for r in rows]
    with path_stem.with_suffix(".csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(cells)
    widths = [max(len(h), *(len(r[k]) for r in cells)) if cells else len(h)
              for k, h in enumerate(header)]
    lines = ["  ".join(h.ljust(widths[k]) for k, h in enumerate(header)),
             "  ".join("-" * w for w in widths)]
    for r in cells:
        lines.append("  ".join(c.ljust(widths[0]) if k == 0 else c.rjust(widths[k])
                               for k, c in enumerate(r)))
    path_stem.with_suffix(".txt").write_text("\n".join(lines) + "\n")


def _checkpoint(net: DeskCNN, out: Path, name: str, qcfg, seed: int, hist: History | None):
    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir(exist_ok=True)
    save_checkpoint(net, ckpt_dir / f"{name}_seed{seed}.npz", qcfg, seed, hist)
    if hist is not None:
        hist.to_csv(out / "histories" / f"{name}_seed{seed}.csv")


def _prepare(out: Path) -> Path:
    out = Path(out)
    (out / "histories").mkdir(parents=True, exist_ok=True)
    return out


# -- recipes --------------------------------------------------------------

def bitwidth_sweep(tree: dict, out: Path, data: Dataset | None = None,
                   cache: PretrainCache | None = None) -> dict:
    """Ideal-quantized accuracy for every (weight bits, activation bits) pair.

    Each point fine-tunes from the float warm start of the same seed.
    """
    out = _prepare(out)
    data = data or load_data(tree)
    cache = cache or PretrainCache()
    bits = [int(b) for b in tree["training"]["bit_widths"]]
    seeds = [int(s) for s in tree["training"]["seeds"]]
    acc = np.zeros((len(seeds), len(bits), len(bits)))
    float_accs = []
    per_seed = []
    for si, seed in enumerate(seeds):
        f_state, f_acc, _ = cache.float_start(tree, data, seed)
        float_accs.append(f_acc)
        for wi, wb in enumerate(bits):
            for ai, ab in enumerate(bits):
                qcfg = C.quant(tree, weight_bits=wb, act_bits=ab)
                net = new_net(tree, seed)
                net.load_state_dict(f_state)
                hist = train(net, data, qcfg, ActMode.IDEAL_QUANTIZED,
                             train_config(tree, seed, "quant"), label=f"w{wb}a{ab}")
                acc[si, wi, ai] = evaluate(net, data, qcfg, ActMode.IDEAL_QUANTIZED)
                per_seed.append([seed, wb, ab, acc[si, wi, ai]])
                if wb == ab == int(tree["quant"]["weight_total_bits"]):
                    _checkpoint(net, out, f"w{wb}a{ab}", qcfg, seed, hist)
    mean = acc.mean(axis=0)
    header = ["weight_bits \\ act_bits"] + [str(b) for b in bits]
    rows = [[str(wb)] + [float(mean[wi, ai]) for ai in range(len(bits))]
            for wi, wb in enumerate(bits)]
    rows.append(["float"] + [float(np.mean(float_accs))] * len(bits))
    write_table(out / "summary", header, rows)
    write_table(out / "per_seed", ["seed", "weight_bits", "act_bits", "test_acc"], per_seed)
    return {"bits": bits, "mean": mean, "float": float(np.mean(float_accs)), "per_seed": acc}


def adc_retrain(tree: dict, out: Path, data: Dataset | None = None,
                cache: PretrainCache | None = None) -> dict:
    """Ideal FP / ideal 7-bit / SAR / CCO, each without and with retraining."""
    out = _prepare(out)
    data = data or load_data(tree)
    cache = cache or PretrainCache()
    qcfg = C.quant(tree)
    curves = {"SAR": typical_sar_curve(tree), "CCO": typical_cco_curve(tree)}
    seeds = [int(s) for s in tree["training"]["seeds"]]
    per_seed = []
    for seed in seeds:
        ws = cache.get(tree, data, seed)
        rec = {"Ideal (32 bit FP ReLU)": (ws.float_acc, ws.float_acc),
               f"Ideal ({qcfg.act_total_bits}bit)": (ws.float_as_quant_acc, ws.quant_acc)}
        for name, curve in curves.items():
            net = new_net(tree, seed)
            net.load_state_dict(ws.quant_state)
            no_rt = evaluate(net, data, qcfg, ActMode.FIXED_CURVE, curve=curve)
            hist = train(net, data, qcfg, ActMode.FIXED_CURVE, train_config(tree, seed, "finetune"),
                         curve=curve, label=f"{name.lower()}_rt")
            rt = evaluate(net, data, qcfg, ActMode.FIXED_CURVE, curve=curve)
            rec[f"{name} ADC ({qcfg.act_total_bits}bit)"] = (no_rt, rt)
            _checkpoint(net, out, f"{name.lower()}_rt", qcfg, seed, hist)
        for scheme, (a, b) in rec.items():
            per_seed.append([seed, scheme, a, b])
    schemes = list(dict.fromkeys(r[1] for r in per_seed))
    rows = []
    for scheme in schemes:
        sel = [r for r in per_seed if r[1] == scheme]
        rows.append([scheme, float(np.mean([r[2] for r in sel])),
                     float(np.mean([r[3] for r in sel]))])
    write_table(out / "summary", ["ADC Scheme", "w/o RT", "with RT"], rows)
    write_table(out / "per_seed", ["seed", "ADC Scheme", "w/o RT", "with RT"], per_seed)
    for name, curve in curves.items():
        A.write_curve_csv(curve, out / f"curve_{name.lower()}.csv")
    return {"rows": rows, "per_seed": per_seed}


def _histogram(accs: Sequence[float], lo: float, hi: float, width: float = 0.5):
    edges = np.arange(np.floor(lo / width) * width, hi + width, width)
    if edges.size < 2:
        edges = np.array([lo, lo + width])
    counts, edges = np.histogram(accs, bins=edges)
    return edges, counts


def vat(tree: dict, out: Path, data: Dataset | None = None,
        cache: PretrainCache | None = None) -> dict:
    """Single-curve retraining vs variation-aware training, on held-out curves."""
    out = _prepare(out)
    data = data or load_data(tree)
    cache = cache or PretrainCache()
    qcfg = C.quant(tree)
    pool, held = vat_curves(tree)
    policy = ReassignPolicy(tree["curves"]["vat"]["policy"])
    seeds = [int(s) for s in tree["training"]["seeds"]]
    per_curve, summary, results = [], [], {}
    for seed in seeds:
        ws = cache.get(tree, data, seed)
        for model_name in ("single", "vat"):
            net = new_net(tree, seed)
            net.load_state_dict(ws.quant_state)
            tc = train_config(tree, seed, "finetune")
            if model_name == "single":
                hist = train(net, data, qcfg, ActMode.FIXED_CURVE, tc, curve=pool[0],
                             label="single_curve")
            else:
                hist = train(net, data, qcfg, ActMode.VAT_POOL, tc,
                             vat_pool=VatPool(CurveBank(pool), policy), label="vat")
            res = evaluate_curves(net, data, qcfg, held, seed=seed)
            results[(seed, model_name)] = res
            per_curve.extend([seed, model_name, k, a] for k, a in enumerate(res.accuracies))
            summary.append([seed, model_name, res.mean, res.std, res.min])
            _checkpoint(net, out, model_name, qcfg, seed, hist)
    write_table(out / "summary", ["seed", "model", "mean_acc", "std_acc", "min_acc"], summary)
    write_table(out / "per_curve", ["seed", "model", "curve_id", "test_acc"], per_curve)
    all_acc = [r[3] for r in per_curve]
    lo, hi = min(all_acc), max(all_acc)
    hist_rows = []
    for (seed, model_name), res in results.items():
        edges, counts = _histogram(res.accuracies, lo, hi)
        hist_rows.extend([seed, model_name, float(edges[k]), float(edges[k + 1]), int(c)]
                         for k, c in enumerate(counts))
    write_table(out / "histogram", ["seed", "model", "bin_lo", "bin_hi", "count"], hist_rows)
    return {"summary": summary, "results": results}


def weight_noise(tree: dict, out: Path, data: Dataset | None = None,
                 cache: PretrainCache | None = None) -> dict:
    """Ideal ADC with and without weight noise, then single-curve and VAT CCO with noise."""
    out = _prepare(out)
    data = data or load_data(tree)
    cache = cache or PretrainCache()
    qcfg = C.quant(tree)
    nz = C.noise(tree)
    repeats = int(tree["noise"]["eval_repeats"])
    pool, held = vat_curves(tree)
    policy = ReassignPolicy(tree["curves"]["vat"]["policy"])
    g = f"{nz.gamma:g}"
    labels = ["Ideal ADC, gamma = 0.0", f"Ideal ADC, gamma = {g}", f"CCO ADC, gamma = {g}",
              f"CCO ADC VAT, gamma = {g}"]
    seeds = [int(s) for s in tree["training"]["seeds"]]
    per_seed = []
    for seed in seeds:
        ws = cache.get(tree, data, seed)
        tc = train_config(tree, seed, "finetune")
        accs = [ws.quant_acc]

        net = new_net(tree, seed)
        net.load_state_dict(ws.quant_state)
        train(net, data, qcfg, ActMode.IDEAL_QUANTIZED, tc, noise=nz, label="ideal_noisy")
        accs.append(evaluate(net, data, qcfg, ActMode.IDEAL_QUANTIZED, noise=nz, seed=seed,
                             repeats=repeats))

        net = new_net(tree, seed)
        net.load_state_dict(ws.quant_state)
        train(net, data, qcfg, ActMode.FIXED_CURVE, tc, noise=nz, curve=pool[0],
              label="cco_noisy")
        accs.append(evaluate(net, data, qcfg, ActMode.FIXED_CURVE, curve=pool[0], noise=nz,
                             seed=seed, repeats=repeats))

        net = new_net(tree, seed)
        net.load_state_dict(ws.quant_state)
        hist = train(net, data, qcfg, ActMode.VAT_POOL, tc, noise=nz,
                     vat_pool=VatPool(CurveBank(pool), policy), label="vat_noisy")
        accs.append(evaluate_curves(net, data, qcfg, held, noise=nz, seed=seed).mean)
        _checkpoint(net, out, "vat_noisy", qcfg, seed, hist)
        per_seed.extend([seed, lab, a] for lab, a in zip(labels, accs))
    rows = [[lab, float(np.mean([r[2] for r in per_seed if r[1] == lab]))] for lab in labels]
    write_table(out / "summary", ["Condition", "Accuracy (%)"], rows)
    write_table(out / "per_seed", ["seed", "Condition", "Accuracy (%)"], per_seed)
    return {"rows": rows, "per_seed": per_seed}


RECIPE_FUNCS: dict[str, Callable] = {
    "bitwidth-sweep": bitwidth_sweep,
    "adc-retrain": adc_retrain,
    "vat": vat,
    "weight-noise": weight_noise,
}


def run_recipe(name: str, tree: dict, out: Path, data: Dataset | None = None,
               cache: PretrainCache | None = None) -> dict:
    if name not in RECIPE_FUNCS:
        raise C.ConfigError(f"unknown recipe '{name}' (choose from {', '.join(RECIPES)})")
    torch.set_num_threads(1)
    return RECIPE_FUNCS[name](tree, Path(out), data=data, cache=cache)
