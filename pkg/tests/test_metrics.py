import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from imcadc import adc as A
from imcadc import metrics as M


def _curve(codes, n_bits, x=None):
    codes = np.asarray(codes)
    x = np.linspace(0, 1, codes.size) if x is None else x
    return A.TransferCurve(x, codes, n_bits)


def analytic_transitions(nl: float, n_bits: int) -> dict[int, float]:
    """Roots of ``u (1 - nl u^2) = k / 2^N`` on the rising branch (pure numpy oracle)."""
    out = {}
    peak = np.sqrt(1 / (3 * nl)) if nl > 0 else np.inf
    for k in range(1, 2**n_bits):
        roots = np.roots([-nl, 0.0, 1.0, -k / 2**n_bits]) if nl > 0 else [k / 2**n_bits]
        real = [r.real for r in np.atleast_1d(roots) if abs(r.imag) < 1e-12 and 0 <= r.real <= peak]
        if real:
            out[k] = min(real)
    return out


def test_ideal_n2_transitions():
    curve = A.sample_curve(A.IdealAdcModel(A.AdcSpec(n_bits=2, i_max=1.0)), 1001)
    step = 1.05 / 1000
    tp = M.transition_points(curve)
    assert sorted(tp) == [1, 2, 3]
    for k in (1, 2, 3):
        assert tp[k] == pytest.approx(k / 4, abs=step)


def test_missing_code_skipped():
    curve = _curve([0, 0, 1, 1, 3, 3, 4, 4, 5, 5, 6, 6, 7, 7], 3)
    tp = M.transition_points(curve)
    assert 2 not in tp and 3 in tp
    rep = M.linearity(curve)
    assert rep.missing_codes == (2,)
    assert rep.dnl[2 - 1] == pytest.approx(-1.0)
    assert np.isnan(rep.inl[2 - 1])


def test_gain_error_transitions():
    spec = A.AdcSpec(n_bits=3, i_max=1.0)
    curve = A.sample_curve(A.SsAdcModel(spec, gain_err=0.1), 2001)
    step = 1.05 / 2000
    for k, t in M.transition_points(curve).items():
        assert t == pytest.approx((k / 8) / 1.1, abs=step)


def test_ideal_quantizer_linearity():
    curve = A.sample_curve(A.IdealAdcModel(A.AdcSpec(n_bits=7, i_max=1.0)))
    rep = M.linearity(curve)
    step = curve.inputs[1] - curve.inputs[0]
    assert rep.max_abs_dnl <= step / rep.lsb + 1e-9
    assert rep.max_abs_inl <= step / rep.lsb + 1e-9
    assert rep.missing_codes == ()


def test_pure_gain_has_zero_dnl():
    spec = A.AdcSpec(n_bits=5, i_max=1.0)
    x = np.linspace(0, 1.05, 5001)
    curve = A.TransferCurve(x, A.convert(A.SsAdcModel(spec, gain_err=0.15), x), 5)
    rep = M.linearity(curve)
    assert rep.max_abs_dnl <= 2 * (x[1] - x[0]) / rep.lsb


@pytest.mark.parametrize("nl", [0.1, 0.3])
def test_compressive_inl_matches_analytic(nl):
    n_bits = 7
    model = A.CcoAdcModel(A.AdcSpec(n_bits=n_bits, i_max=1.0), nl_coeff=nl)
    curve = A.sample_curve(model, 8193)
    step = curve.inputs[1] - curve.inputs[0]
    rep = M.linearity(curve)

    exact = analytic_transitions(nl, n_bits)
    tp = M.transition_points(curve)
    present = sorted(tp)
    for k in present:
        assert abs(tp[k] - exact[k]) <= 2 * step
    first, last = present[0], present[-1]
    lsb = (exact[last] - exact[first]) / (last - first)
    for k in present:
        inl_exact = (exact[k] - exact[first]) / lsb - (k - first)
        assert abs(rep.inl[k - 1] - inl_exact) <= 2 * step / lsb
    # compression pushes the transitions late: INL bows negative, deepest mid-range
    worst = present[int(np.nanargmax(np.abs(rep.inl[np.array(present) - 1])))]
    assert np.nanmin(rep.inl) < -1
    assert first + (last - first) // 4 < worst < last - (last - first) // 4


def test_linearity_needs_two_transitions():
    with pytest.raises(ValueError):
        M.linearity(_curve([0, 0, 0, 1, 1], 2))


def test_non_monotone_rejected():
    curve = _curve([0, 1, 2, 1, 3], 2)
    with pytest.raises(M.NonMonotoneCurveError):
        M.transition_points(curve)
    with pytest.raises(M.NonMonotoneCurveError):
        M.linearity(curve)


@settings(max_examples=40, deadline=None)
@given(nl=st.floats(0, A.NL_COEFF_MAX), slope=st.floats(-0.2, 0.2), off=st.floats(-0.03, 0.03))
def test_endpoint_fit_invariants(nl, slope, off):
    spec = A.AdcSpec(n_bits=6, i_max=1.0)
    curve = A.sample_curve(A.CcoAdcModel(spec, nl_coeff=nl, slope_err=slope, offset_err=off))
    rep = M.linearity(curve)
    tp = M.transition_points(curve)
    first, last = min(tp), max(tp)
    assert rep.inl[first - 1] == pytest.approx(0.0, abs=1e-9)
    if last <= 2**6 - 2:
        assert rep.inl[last - 1] == pytest.approx(0.0, abs=1e-9)
    assert abs(np.nansum(rep.dnl)) < 1e-9
    assert rep.max_abs_dnl == pytest.approx(np.nanmax(np.abs(rep.dnl)))


def test_population_spread_examples():
    c = A.sample_curve(A.IdealAdcModel(A.AdcSpec(n_bits=4, i_max=1.0)), 200)
    same = M.population_spread([c, c, c], 0.5)
    assert same.std_code == 0.0
    shifted = A.TransferCurve(c.inputs, np.minimum(c.codes + 1, 15), 4)
    two = M.population_spread([c, shifted], 0.5)
    assert two.std_code == pytest.approx(0.5)
    assert two.max - two.min == 1


def test_population_spread_errors():
    a = A.sample_curve(A.IdealAdcModel(A.AdcSpec(n_bits=4, i_max=1.0)), 200)
    b = A.sample_curve(A.IdealAdcModel(A.AdcSpec(n_bits=5, i_max=1.0)), 200)
    with pytest.raises(ValueError):
        M.population_spread([a, b], 0.5)
    with pytest.raises(ValueError):
        M.population_spread([], 0.5)


def test_spread_grows_at_lower_supply():
    spec = A.AdcSpec(n_bits=7, i_max=10e-6)
    var = A.VariationConfig(sigma_slope=0.03, sigma_offset=0.01)
    stds = {}
    for s in (1.0, 0.7):
        pop = A.sample_population(A.CcoAdcModel.at_supply(spec, s), var, s, seed=21, n=200)
        stds[s] = M.population_spread([A.sample_curve(m) for m in pop], 0.5).std_code
    assert stds[0.7] >= stds[1.0]


def test_csv_writers(tmp_path):
    curve = _curve([0, 0, 1, 1, 3, 3, 4, 4, 5, 5, 6, 6, 7, 7], 3)
    M.write_linearity_csv(M.linearity(curve), tmp_path / "lin.csv")
    lines = (tmp_path / "lin.csv").read_text().splitlines()
    assert lines[0] == "code,dnl_lsb,inl_lsb"
    assert len(lines) == 1 + 6 + 1
    assert lines[-1].startswith("# max_abs_dnl=") and "missing_codes=2" in lines[-1]
    M.write_spread_csv(M.spread_vs_input([curve], [0.0, 0.5]), tmp_path / "s.csv")
    assert (tmp_path / "s.csv").read_text().splitlines()[0] == \
        "input_norm,mean_code,std_code,min_code,max_code"
