import csv
import json

import pytest

from imcadc import __version__, cli
from imcadc import config as C

TINY = [
    "training.seeds=[0]", "training.pretrain_epochs=1", "training.quant_epochs=1",
    "training.finetune_epochs=1", "training.bit_widths=[6,7]", "curves.vat.pool_size=8",
    "curves.vat.held_out=4", "noise.eval_repeats=2",
]


def _rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


# -- config -----------------------------------------------------------------------

def test_defaults_resolve():
    tree = C.resolve()
    assert tree["adc"]["n_bits"] == 7 and tree["calibration"]["n_tuning_bits"] == 9
    assert C.quant(tree).act_full_scale == 4 - 2**-5


def test_override_parsing():
    assert C.parse_override("adc.n_bits=6") == (["adc", "n_bits"], 6)
    assert C.parse_override("adc.topology=sar") == (["adc", "topology"], "sar")
    assert C.parse_override("adc.supply_scales=[1.0, 0.5]")[1] == [1.0, 0.5]
    with pytest.raises(C.ConfigError):
        C.parse_override("adc.n_bits")
    tree = C.resolve(overrides=["adc.n_bits=6", "variation.sigma_slope=0.1"], seed=9)
    assert tree["adc"]["n_bits"] == 6 and tree["variation"]["sigma_slope"] == 0.1
    assert tree["seed"] == 9


@pytest.mark.parametrize("override", ["adc.bogus=1", "adc=3", "adc.n_bits=0",
                                      "training.recipe=nope", "adc.topology=flash",
                                      "crossbar.gamma=-1"])
def test_bad_config_rejected(override):
    with pytest.raises(C.ConfigError):
        C.resolve(overrides=[override])


def test_config_file(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"adc": {"n_bits": 5}, "seed": 3}))
    tree = C.resolve(p, ["adc.n_bits=6"])
    assert tree["adc"]["n_bits"] == 6 and tree["seed"] == 3
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(C.ConfigError):
        C.resolve(tmp_path / "bad.json")


# -- commands ---------------------------------------------------------------------

def test_characterize(tmp_path):
    out = tmp_path / "char"
    rc = cli.main(["characterize", "--out", str(out), "--set", "variation.n_instances=40"])
    assert rc == 0
    prov = json.loads((out / "config.json").read_text())
    assert prov["version"] == __version__ and prov["command"] == "characterize"
    rows = _rows(out / "summary.csv")
    inl = [float(r[3]) for r in rows[1:]]
    assert inl == sorted(inl)
    manifest = json.loads((out / "mc_s0.8" / "manifest.json").read_text())
    assert manifest["seed"] == 0 and manifest["n_curves"] == 40


def test_characterize_ideal_has_zero_dnl(tmp_path):
    out = tmp_path / "ideal"
    rc = cli.main(["characterize", "--out", str(out), "--set", "adc.topology=ideal",
                   "--set", "adc.supply_scales=[1.0]", "--set", "variation.n_instances=3",
                   "--set", "adc.grid_points=16385"])
    assert rc == 0
    dnl = [abs(float(r[1])) for r in _rows(out / "linearity_s1.csv")[1:-1] if r[1] != "nan"]
    # an ideal quantizer sampled 128 points per code: only grid-placement residue remains
    assert max(dnl) <= 0.02


def test_characterize_jobs_do_not_change_output(tmp_path):
    args = ["characterize", "--set", "variation.n_instances=10", "--set",
            "adc.supply_scales=[1.0,0.7]"]
    assert cli.main(args + ["--out", str(tmp_path / "a")]) == 0
    assert cli.main(args + ["--out", str(tmp_path / "b"), "--jobs", "2"]) == 0
    for name in ("summary.csv", "spread_s0.7.csv", "linearity_s0.7.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_calibrate(tmp_path):
    assert cli.main(["calibrate", "--out", str(tmp_path / "z"), "--set",
                     "calibration.sigma_slope=0", "--set", "calibration.slope_mean=0",
                     "--set", "calibration.n_instances=20"]) == 0
    assert {r[1] for r in _rows(tmp_path / "z" / "calibration.csv")[1:]} == {"0"}

    assert cli.main(["calibrate", "--out", str(tmp_path / "w"), "--set",
                     "calibration.sigma_slope=0.15"]) == 0
    status = [r[3] for r in _rows(tmp_path / "w" / "calibration.csv")[1:]]
    assert "out_of_range" in status
    header, row = _rows(tmp_path / "w" / "summary.csv")
    assert int(row[header.index("n_out_of_range")]) == status.count("out_of_range")


def test_calibrate_requires_cco(tmp_path):
    assert cli.main(["calibrate", "--out", str(tmp_path), "--set", "adc.topology=sar"]) == 1


def test_mvm_check(tmp_path):
    assert cli.main(["mvm-check", "--out", str(tmp_path), "--set", "crossbar.n_cases=30"]) == 0
    report = json.loads((tmp_path / "mvm_check.json").read_text())
    assert report["max_abs_deviation"] == 0 and report["n_mismatch"] == 0
    assert report["dense_ones_saturation_fraction"] == 0.0
    assert report["zero_input_max_abs_output"] == 0.0


def test_mvm_check_mismatch_exit_code(tmp_path, monkeypatch):
    monkeypatch.setattr(cli, "mvm_check", lambda tree: {
        "n_cases": 1, "max_abs_deviation": 1.0, "n_mismatch": 1,
        "zero_input_max_abs_output": 0.0})
    assert cli.main(["mvm-check", "--out", str(tmp_path)]) == 3


def test_config_error_exit_code(tmp_path, capsys):
    assert cli.main(["characterize", "--out", str(tmp_path), "--set", "adc.n_bits=-1"]) == 1
    assert "config error" in capsys.readouterr().err


def test_fetch_data(tmp_path):
    cache = tmp_path / "digits.npz"
    assert cli.main(["fetch-data", "--set", f"data.cache={cache}"]) == 0
    assert cache.exists()


@pytest.mark.parametrize("recipe", ["adc-retrain", "vat", "weight-noise", "bitwidth-sweep"])
def test_train_recipes_rerun_identical(tmp_path, recipe):
    sets = [a for s in TINY for a in ("--set", s)]
    for run in ("a", "b"):
        assert cli.main(["train", "--recipe", recipe, "--out", str(tmp_path / run)] + sets) == 0
    for name in ("summary.csv", "summary.txt", "per_seed.csv"):
        a = tmp_path / "a" / name
        if a.exists():
            assert a.read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert list((tmp_path / "a" / "checkpoints").glob("*.npz"))


def test_adc_retrain_table_layout(tmp_path):
    sets = [a for s in TINY for a in ("--set", s)]
    assert cli.main(["train", "--recipe", "adc-retrain", "--out", str(tmp_path)] + sets) == 0
    rows = _rows(tmp_path / "summary.csv")
    assert rows[0] == ["ADC Scheme", "w/o RT", "with RT"]
    assert [r[0] for r in rows[1:]] == ["Ideal (32 bit FP ReLU)", "Ideal (7bit)",
                                        "SAR ADC (7bit)", "CCO ADC (7bit)"]


def test_vat_histograms(tmp_path):
    sets = [a for s in TINY for a in ("--set", s)]
    assert cli.main(["train", "--recipe", "vat", "--out", str(tmp_path)] + sets) == 0
    hist = _rows(tmp_path / "histogram.csv")
    assert hist[0] == ["seed", "model", "bin_lo", "bin_hi", "count"]
    for model in ("single", "vat"):
        assert sum(int(r[4]) for r in hist[1:] if r[1] == model) == 4


def test_divergence_exit_code(tmp_path):
    sets = [a for s in TINY for a in ("--set", s)]
    rc = cli.main(["train", "--out", str(tmp_path), "--set", "training.pretrain_lr=1e30"] + sets)
    assert rc == 2
    assert (tmp_path / "last_good.npz").exists()


def test_evaluate_checkpoint(tmp_path):
    sets = [a for s in TINY for a in ("--set", s)]
    assert cli.main(["train", "--recipe", "adc-retrain", "--out", str(tmp_path / "t")] + sets) == 0
    ckpt = tmp_path / "t" / "checkpoints" / "cco_rt_seed0.npz"
    curve = tmp_path / "t" / "curve_cco.csv"
    assert cli.main(["evaluate", "--out", str(tmp_path / "e"), "--set", f"evaluate.checkpoint={ckpt}",
                     "--set", "evaluate.mode=fixed_curve", "--set", f"evaluate.curve={curve}"]) == 0
    acc = float(_rows(tmp_path / "e" / "evaluation.csv")[1][1])
    rt = [r for r in _rows(tmp_path / "t" / "per_seed.csv") if r[1] == "CCO ADC (7bit)"][0]
    assert acc == pytest.approx(float(rt[3]), abs=0.01)
    assert cli.main(["evaluate", "--out", str(tmp_path / "x")]) == 1
