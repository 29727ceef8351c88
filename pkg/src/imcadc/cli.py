"""``imcadc`` command-line front end.

Exit codes: 0 success, 1 configuration error, 2 numerical failure or
divergence, 3 oracle mismatch.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import adc as A
from . import calibration as CAL
from . import config as C
from . import crossbar as X
from . import metrics as M
from . import recipes as R

log = logging.getLogger("imcadc")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_ORACLE = 0, 1, 2, 3


class OracleMismatch(RuntimeError):
    pass


class NumericalFailure(RuntimeError):
    pass


def _parallel_map(fn, items, jobs: int):
    """Ordered map; results do not depend on ``jobs``."""
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(*it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, *zip(*items)))


# -- characterize ---------------------------------------------------------

def _supply_tag(s: float) -> str:
    return f"s{s:.3f}".rstrip("0").rstrip(".")


def _characterize_supply(tree: dict, s: float, out: str) -> list:
    out = Path(out)
    tag = _supply_tag(s)
    template = C.adc_template(tree, s)
    grid = tree["adc"]["grid_points"]
    nominal = A.sample_curve(template, grid)
    A.write_curve_csv(nominal, out / f"curve_{tag}.csv")
    try:
        rep = M.linearity(nominal)
    except M.NonMonotoneCurveError as exc:
        raise NumericalFailure(f"nominal curve at supply {s}: {exc}") from exc
    M.write_linearity_csv(rep, out / f"linearity_{tag}.csv")

    n = int(tree["variation"]["n_instances"])
    pop = A.sample_population(template, C.variation(tree), s, int(tree["seed"]), n)
    curves = [A.sample_curve(m, grid) for m in pop]
    A.write_population(curves, out / f"mc_{tag}", seed=int(tree["seed"]),
                       var=C.variation(tree), supply_scale=s, template=template)
    inls, n_nonmono = [], 0
    for c in curves:
        try:
            inls.append(M.linearity(c).max_abs_inl)
        except (M.NonMonotoneCurveError, ValueError):
            n_nonmono += 1
    inputs = np.linspace(0.0, 1.0, int(tree["adc"]["spread_inputs"]))
    M.write_spread_csv(M.spread_vs_input(curves, inputs), out / f"spread_{tag}.csv")
    mid = M.population_spread(curves, 0.5)
    nl = getattr(template, "nl_coeff", 0.0)
    return [s, float(nl), rep.max_abs_dnl, rep.max_abs_inl, len(rep.missing_codes),
            mid.std_code, float(np.mean(inls)) if inls else float("nan"),
            float(np.max(inls)) if inls else float("nan"), n_nonmono]


def cmd_characterize(tree: dict, out: Path) -> int:
    supplies = [float(s) for s in tree["adc"]["supply_scales"]]
    rows = _parallel_map(_characterize_supply, [(tree, s, str(out)) for s in supplies],
                         int(tree["jobs"]))
    header = ["supply_scale", "nl_coeff", "max_abs_dnl", "max_abs_inl", "missing_codes",
              "mid_scale_std", "mc_mean_max_abs_inl", "mc_worst_max_abs_inl", "mc_non_monotone"]
    _write_rows(out / "summary.csv", header, rows)
    return EXIT_OK


def _write_rows(path: Path, header, rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([f"{v:.6f}" if isinstance(v, float) else v for v in r])


# -- calibrate ------------------------------------------------------------

def calibration_population(tree: dict) -> list[A.CcoAdcModel]:
    c = tree["calibration"]
    if A.Topology(tree["adc"]["topology"]) is not A.Topology.CCO:
        raise C.ConfigError("calibration needs adc.topology = cco")
    s = float(c["supply_scale"])
    tree_t = C.apply_override(tree, ["adc", "slope_err"], float(c["slope_mean"]))
    template = C.adc_template(tree_t, s)
    var = A.VariationConfig(sigma_slope=float(c["sigma_slope"]),
                            sigma_offset=float(c["sigma_offset"]),
                            supply_variation_exponent=float(
                                tree["variation"]["supply_variation_exponent"]))
    return A.sample_population(template, var, s, int(tree["seed"]), int(c["n_instances"]))


def cmd_calibrate(tree: dict, out: Path) -> int:
    cfg = C.calibration(tree)
    pop = calibration_population(tree)
    calibrated, records = CAL.calibrate_population(pop, cfg)
    CAL.write_calibration_csv(records, out / "calibration.csv")
    ok = [c for c in calibrated if c is not None]
    if not ok:
        raise NumericalFailure("no instance could be calibrated")
    spec = pop[0].spec
    inputs = np.linspace(0.0, 1.0, int(tree["calibration"]["spread_inputs"]))
    rows = []
    for x in inputs:
        pre = np.array([A.convert(m, x * spec.i_max) for m in pop], dtype=float)
        post = np.array([c.convert(x * spec.i_max) for c in ok], dtype=float)
        rows.append([float(x), pre.mean(), pre.std(), post.mean(), post.std()])
    _write_rows(out / "spread.csv", ["input_norm", "pre_mean", "pre_std", "post_mean", "post_std"],
                rows)
    post = CAL.post_cal_spread(pop, cfg)
    i_cal = cfg.i_cal(pop[0])
    pre_cal = CAL.uncalibrated_spread(pop, i_cal)
    pre_max = CAL.uncalibrated_spread(pop, spec.i_max)
    summary = [[len(pop), post.n_calibrated, post.n_out_of_range, pre_cal, post.spread_at_ical,
                pre_max, post.spread_at_imax,
                pre_cal / post.spread_at_ical if post.spread_at_ical > 0 else float("inf"),
                post.area_factor]]
    _write_rows(out / "summary.csv",
                ["n_instances", "n_calibrated", "n_out_of_range", "pre_std_ical", "post_std_ical",
                 "pre_std_imax", "post_std_imax", "reduction_ical", "area_factor"], summary)
    for r in records:
        if r.status != "ok":
            log.warning("instance %d out of tuning range (count %d at i_cal)", r.instance_id,
                        r.code_at_ical)
    return EXIT_OK


# -- mvm-check ------------------------------------------------------------

def mvm_check(tree: dict) -> dict:
    """Random bit-sliced MVMs against the integer dot product, plus saturation stats."""
    base = C.crossbar(tree)
    qcfg = C.quant(tree)
    ideal = X.CrossbarConfig(rows=base.rows, cols=base.cols, i_cell=base.i_cell, v_ref=base.v_ref)
    n = int(tree["crossbar"]["n_cases"])
    ss = np.random.SeedSequence(int(tree["seed"]))
    rng = np.random.default_rng(ss.spawn(1)[0])
    adc_ideal = X.oracle_adc(ideal)
    adc_real = X.column_adc(base, int(tree["crossbar"]["adc_bits"]))
    max_dev, n_bad, sats = 0, 0, []
    for k in range(n):
        w = rng.uniform(-1, 1, (base.rows, base.cols))
        x = rng.integers(0, qcfg.act_format.max_code + 1, base.rows)
        bsw = X.program(w, qcfg, ideal, seed=k)
        got = X.mvm(x, bsw, adc_ideal, qcfg, ideal).values
        want = x @ bsw.signed_codes()
        dev = float(np.max(np.abs(got - want)))
        max_dev = max(max_dev, dev)
        n_bad += int(dev != 0)
        real_w = X.program(w, qcfg, base, seed=k)
        sats.append(X.mvm(x, real_w, adc_real, qcfg, base).saturation_fraction)
    # boundary: every cell and every input bit on reaches full scale exactly
    dense_w = np.full((base.rows, base.cols), qcfg.weight_format.max_value)
    dense_x = np.full(base.rows, qcfg.act_format.max_code)
    dense = X.mvm(dense_x, X.program(dense_w, qcfg, ideal, seed=0),
                  X.column_adc(ideal, int(tree["crossbar"]["adc_bits"])), qcfg, ideal)
    zero = X.mvm(np.zeros(base.rows, dtype=int), X.program(dense_w, qcfg, ideal, seed=0),
                 adc_ideal, qcfg, ideal)
    return {"n_cases": n, "max_abs_deviation": max_dev, "n_mismatch": n_bad,
            "mean_saturation_fraction": float(np.mean(sats)) if sats else 0.0,
            "max_saturation_fraction": float(np.max(sats)) if sats else 0.0,
            "dense_ones_saturation_fraction": dense.saturation_fraction,
            "zero_input_max_abs_output": float(np.max(np.abs(zero.values)))}


def cmd_mvm_check(tree: dict, out: Path) -> int:
    report = mvm_check(tree)
    (out / "mvm_check.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    _write_rows(out / "mvm_check.csv", list(report), [list(report.values())])
    if report["n_mismatch"] or report["zero_input_max_abs_output"] != 0:
        raise OracleMismatch(f"{report['n_mismatch']} of {report['n_cases']} cases deviate "
                             f"(max {report['max_abs_deviation']})")
    return EXIT_OK


# -- train / evaluate -----------------------------------------------------

def cmd_train(tree: dict, out: Path) -> int:
    from .qat import DeskCNN, TrainingDiverged, save_checkpoint

    try:
        R.run_recipe(tree["training"]["recipe"], tree, out)
    except TrainingDiverged as exc:
        if exc.last_good is not None:
            net = DeskCNN()
            net.load_state_dict(exc.last_good)
            save_checkpoint(net, out / "last_good.npz", C.quant(tree), int(tree["seed"]))
        raise NumericalFailure(str(exc)) from exc
    return EXIT_OK


def cmd_evaluate(tree: dict, out: Path) -> int:
    from .qat import ActMode, NoiseConfig, evaluate, evaluate_curves, load_checkpoint

    e = tree["evaluate"]
    if not e["checkpoint"]:
        raise C.ConfigError("evaluate.checkpoint is required")
    try:
        net, meta = load_checkpoint(e["checkpoint"])
    except (OSError, KeyError, ValueError) as exc:
        raise C.ConfigError(f"cannot load checkpoint {e['checkpoint']}: {exc}") from exc
    noisy = set(tree["noise"]["layers"])
    for name, mod in net.named_modules():
        if hasattr(mod, "noisy"):
            mod.noisy = name in noisy
    data = R.load_data(tree)
    qcfg = C.quant(tree)
    nz = C.noise(tree) if e["with_noise"] else NoiseConfig()
    mode = ActMode(e["mode"])
    seed = int(tree["seed"])
    rows = []
    if e["population"]:
        curves, _ = A.read_population(e["population"])
        res = evaluate_curves(net, data, qcfg, curves, noise=nz, seed=seed)
        _write_rows(out / "per_curve.csv", ["curve_id", "test_acc"],
                    [[k, a] for k, a in enumerate(res.accuracies)])
        rows.append(["population", res.mean, res.std, res.min])
    else:
        curve = None
        if mode is ActMode.FIXED_CURVE:
            if not e["curve"]:
                raise C.ConfigError("fixed_curve evaluation needs evaluate.curve")
            curve = A.read_curve_csv(e["curve"], qcfg.act_total_bits)
        acc = evaluate(net, data, None if mode is ActMode.IDEAL_RELU_FLOAT else qcfg, mode,
                       curve=curve, noise=nz, seed=seed, repeats=int(e["repeats"]))
        rows.append([mode.value, acc, 0.0, acc])
    _write_rows(out / "evaluation.csv", ["condition", "mean_acc", "std_acc", "min_acc"], rows)
    return EXIT_OK


def cmd_fetch_data(tree: dict, out: Path | None) -> int:
    from .qat import fetch_digits

    path = fetch_digits(tree["data"]["cache"])
    print(path)
    return EXIT_OK


COMMANDS = {
    "characterize": cmd_characterize,
    "calibrate": cmd_calibrate,
    "mvm-check": cmd_mvm_check,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "fetch-data": cmd_fetch_data,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="imcadc", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config entry, e.g. adc.n_bits=6 (repeatable)")
        sp.add_argument("--seed", type=int, help="run seed (train: replaces training.seeds)")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--jobs", type=int, help="worker processes for independent sweep points")
        if name == "train":
            sp.add_argument("--recipe", choices=R.RECIPES)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = list(args.set)
        if args.seed is not None and args.command == "train":
            overrides.append(f"training.seeds=[{args.seed}]")
        if getattr(args, "recipe", None):
            overrides.append(f"training.recipe={args.recipe}")
        tree = C.resolve(args.config, overrides, seed=args.seed, output_dir=args.out,
                         jobs=args.jobs)
    except C.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = None
    if args.command != "fetch-data":
        out = Path(tree["output_dir"])
        C.write_provenance(tree, out, args.command)
    try:
        return COMMANDS[args.command](tree, out)
    except C.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OracleMismatch as exc:
        print(f"oracle mismatch: {exc}", file=sys.stderr)
        return EXIT_ORACLE
    except (NumericalFailure, M.NonMonotoneCurveError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
