import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from imcadc import adc as A
from imcadc import crossbar as X
from imcadc.fixedpoint import QuantConfig

Q = QuantConfig()
CFG16 = X.CrossbarConfig(rows=16, cols=16)


def test_config_validation():
    with pytest.raises(ValueError):
        X.CrossbarConfig(rows=0)
    with pytest.raises(ValueError):
        X.CrossbarConfig(gamma=-0.1)
    with pytest.raises(ValueError):
        X.CrossbarConfig(i_cell=0)
    assert X.CrossbarConfig(rows=64).i_full_scale == pytest.approx(10e-6)


def test_program_gamma_zero_exact_currents():
    w = X.program(np.random.default_rng(0).uniform(-1, 1, (16, 16)), Q, CFG16, seed=1)
    assert np.all(w.programmed_currents == CFG16.i_cell)


def test_program_half_is_code_32():
    w = X.program(np.array([[0.5]]), Q, X.CrossbarConfig(rows=1, cols=1))
    assert w.magnitude_codes()[0, 0] == 32
    assert [int(w.slices[b, 0, 0]) for b in range(6)] == [0, 0, 0, 0, 0, 1]
    assert w.sign_plane[0, 0] == 0


def test_program_negative_sign_plane():
    w = X.program(np.array([[-0.25, 0.0]]), Q, X.CrossbarConfig(rows=1, cols=2))
    assert w.signed_codes().tolist() == [[-16, 0]]


def test_gamma_statistics():
    cfg = X.CrossbarConfig(rows=100, cols=100, gamma=0.1)
    w = X.program(np.full((100, 100), 0.5), Q, cfg, seed=3)
    cur = w.programmed_currents[5]
    assert 0.09 <= cur.std() / cur.mean() <= 0.11


def test_gamma_scaling():
    shape = (200, 100)
    a = X.program(np.ones(shape) * 0.3, Q, X.CrossbarConfig(rows=200, cols=100, gamma=0.05), 4)
    b = X.program(np.ones(shape) * 0.3, Q, X.CrossbarConfig(rows=200, cols=100, gamma=0.10), 4)
    ra = a.programmed_currents.std() / a.programmed_currents.mean()
    rb = b.programmed_currents.std() / b.programmed_currents.mean()
    assert rb / ra == pytest.approx(2.0, rel=0.02)


def test_program_overflow_lists_partitioning():
    with pytest.raises(X.ArrayOverflowError, match="2 row tiles x 1 column tiles"):
        X.program(np.zeros((20, 10)), Q, CFG16)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_slicing_roundtrip(seed):
    rng = np.random.default_rng(seed)
    w = rng.uniform(-1.2, 1.2, (8, 5))
    bsw = X.program(w, Q, CFG16, seed=seed)
    from imcadc.fixedpoint import quantize_fixed

    np.testing.assert_array_equal(bsw.dequantize(), quantize_fixed(w, 7, 0, True))
    assert set(np.unique(bsw.slices)) <= {0, 1}


def test_column_current_basics():
    mask = np.zeros((16, 4), dtype=bool)
    mask[[1, 5, 9], 2] = True
    cur = np.full(mask.shape, CFG16.i_cell)
    assert np.all(X.column_current(mask, cur, np.zeros(16), CFG16) == 0)
    i = X.column_current(mask, cur, np.ones(16), CFG16)
    assert i[2] == 3 * CFG16.i_cell and i[0] == 0


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_column_current_additive(seed):
    rng = np.random.default_rng(seed)
    cfg = X.CrossbarConfig(rows=16, cols=4, gamma=0.1, r_wire=5.0,
                           parasitic_model=X.ParasiticModel.ANALYTIC)
    w = X.program(rng.uniform(-1, 1, (16, 4)), Q, cfg, seed=seed)
    mask, cur = w.slices[3].astype(bool), w.programmed_currents[3]
    x = rng.integers(0, 2, 16)
    split = rng.integers(0, 2, 16).astype(bool)
    whole = X.column_current(mask, cur, x, cfg)
    parts = X.column_current(mask, cur, x * split, cfg) + X.column_current(mask, cur, x * ~split, cfg)
    np.testing.assert_allclose(whole, parts, rtol=1e-12)


def test_far_cell_attenuated_more():
    cfg = X.CrossbarConfig(rows=64, cols=1, r_wire=10.0, parasitic_model="analytic")
    mask = np.ones((64, 1), dtype=bool)
    cur = np.full((64, 1), cfg.i_cell)
    near = np.zeros(64)
    near[0] = 1
    far = np.zeros(64)
    far[-1] = 1
    i_near = X.column_current(mask, cur, near, cfg)[0]
    i_far = X.column_current(mask, cur, far, cfg)[0]
    assert i_far < i_near < cfg.i_cell
    assert i_far == pytest.approx(cfg.i_cell / (1 + 64 * 10.0 / cfg.r_cell))


def test_single_cell_code_two():
    cfg = X.CrossbarConfig(rows=64, cols=1)
    adc = X.column_adc(cfg, 7)
    assert adc.spec.i_max == pytest.approx(64 * cfg.i_cell)
    mask = np.zeros((64, 1), dtype=bool)
    mask[0, 0] = True
    x = np.zeros(64)
    x[0] = 1
    i = X.column_current(mask, np.full((64, 1), cfg.i_cell), x, cfg)
    assert A.convert(adc, i)[0] == 2


def test_mvm_matches_integer_oracle():
    rng = np.random.default_rng(11)
    adc = X.oracle_adc(CFG16)
    for k in range(100):
        w = X.program(rng.uniform(-1, 1, (16, 16)), Q, CFG16, seed=k)
        x = rng.integers(0, 128, 16)
        res = X.mvm(x, w, adc, Q, CFG16)
        np.testing.assert_array_equal(res.values, x @ w.signed_codes())
        np.testing.assert_allclose(res.scaled(Q), (x * Q.act_lsb) @ w.dequantize(), atol=1e-12)


def test_mvm_large_resolution_ideal_adc():
    # a wide-range ideal converter (many bits, generous full scale) is also exact
    rng = np.random.default_rng(2)
    adc = A.IdealAdcModel(A.AdcSpec(n_bits=12, i_max=2**12 / 256 * 16 * CFG16.i_cell))
    w = X.program(rng.uniform(-1, 1, (16, 16)), Q, CFG16, seed=0)
    x = rng.integers(0, 128, 16)
    assert np.array_equal(X.mvm(x, w, adc, Q, CFG16).values, x @ w.signed_codes())


def test_mvm_zero_input_and_validation():
    w = X.program(np.ones((16, 16)) * 0.7, Q, CFG16)
    res = X.mvm(np.zeros(16, dtype=int), w, X.oracle_adc(CFG16), Q, CFG16)
    assert np.all(res.values == 0) and res.saturation_fraction == 0
    with pytest.raises(ValueError):
        X.mvm(np.zeros(15, dtype=int), w, X.oracle_adc(CFG16), Q, CFG16)
    with pytest.raises(ValueError):
        X.mvm(np.full(16, 128), w, X.oracle_adc(CFG16), Q, CFG16)


def test_dense_full_scale_does_not_saturate():
    w = X.program(np.full((16, 16), Q.weight_format.max_value), Q, CFG16)
    res = X.mvm(np.full(16, 127), w, X.column_adc(CFG16, 7), Q, CFG16)
    assert res.saturation_fraction == 0.0


def test_saturation_counted_not_raised():
    # an ADC sized for half a column saturates on dense inputs
    adc = A.IdealAdcModel(A.AdcSpec(n_bits=7, i_max=8 * CFG16.i_cell))
    w = X.program(np.full((16, 16), Q.weight_format.max_value), Q, CFG16)
    res = X.mvm(np.full(16, 127), w, adc, Q, CFG16)
    # every positive column clips; the idle negative halves of the pairs do not
    assert res.saturation_fraction == 0.5


def test_per_column_adcs():
    rng = np.random.default_rng(8)
    w = X.program(rng.uniform(-1, 1, (16, 4)), Q, CFG16)
    x = rng.integers(0, 128, 16)
    adcs = [X.oracle_adc(CFG16)] * 4
    assert np.array_equal(X.mvm(x, w, adcs, Q, CFG16).values, x @ w.signed_codes())
    with pytest.raises(ValueError):
        X.mvm(x, w, adcs[:3], Q, CFG16)


def test_trace_csv(tmp_path):
    w = X.program(np.array([[0.5], [-0.25]]), Q, X.CrossbarConfig(rows=2, cols=1))
    res = X.mvm(np.array([1, 1]), w, X.oracle_adc(X.CrossbarConfig(rows=2, cols=1)), Q,
                X.CrossbarConfig(rows=2, cols=1), trace=True)
    X.write_trace_csv(res, tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "inbit,slice,col,current,code,saturated,polarity"
    assert len(lines) == 1 + len(res.trace)


def test_weight_image_roundtrip(tmp_path):
    cfg = X.CrossbarConfig(rows=8, cols=8, gamma=0.1)
    w = X.program(np.random.default_rng(1).uniform(-1, 1, (8, 8)), Q, cfg, seed=9)
    X.write_weight_image(w, Q, tmp_path / "img.npz")
    back, q = X.read_weight_image(tmp_path / "img.npz")
    assert q == Q and back.seed == 9 and back.gamma == 0.1
    np.testing.assert_array_equal(back.slices, w.slices)
    np.testing.assert_array_equal(back.programmed_currents, w.programmed_currents)


def test_layer_mapping_and_tiling():
    m = X.LayerMapping(in_channels=16, n_kernels=32, kernel_size=3, out_pixels=64)
    assert m.column_height == 144
    assert m.tiles(X.CrossbarConfig(rows=64, cols=64)) == (3, 1)
    rng = np.random.default_rng(3)
    w = rng.uniform(-1, 1, (40, 20))
    x = rng.integers(0, 128, 40)
    cfg = X.CrossbarConfig(rows=16, cols=8)
    res = X.tiled_mvm(x, w, Q, cfg, adc=X.oracle_adc(cfg), seed=0)
    codes = np.rint(np.clip(np.sign(w) * np.floor(np.abs(w) * 64 + 0.5), -63, 63)).astype(int)
    np.testing.assert_array_equal(res.values, x @ codes)
