import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from flatmetric.calibration import (
    DEFAULT_MODEL,
    PUBLISHED_MODEL,
    TABLE1,
    TABLE1_DIMS,
    TABLE1_RATIOS,
    DimensionModel,
    ErrorCurve,
    average_over_radii,
    correct,
    dump_model,
    expected_relative_error,
    fit_dimension_model,
    fit_error_curve,
    fit_table,
    parse_model,
    rows_to_csv,
    run_calibration,
    sphere_truth,
    symmetric_ratio,
)
from flatmetric.errors import BadRatio, DegenerateCorrection, InsufficientDimensions
from flatmetric.training import TrainConfig

RATIOS = np.array([0.25, 0.4, 0.5, 0.75, 0.9, 1.0, 1.2, 2.0, 3.0, 5.0, 7.5, 10.0])


def test_correct():
    assert correct(1.1, 0.1) == pytest.approx(1.0)
    assert correct(3.7, 0.0) == 3.7
    assert correct(1.0, -0.145) == pytest.approx(1 / 0.855)
    with pytest.raises(DegenerateCorrection):
        correct(1.0, -1.0)


def test_symmetric_ratio():
    assert symmetric_ratio(2.0, 8.0) == symmetric_ratio(8.0, 2.0) == 4.0
    with pytest.raises(BadRatio):
        symmetric_ratio(0.0, 1.0)


def test_default_model_reproduces_table():
    pred = np.array([[expected_relative_error(DEFAULT_MODEL, d, x) for x in TABLE1_RATIOS] for d in TABLE1_DIMS])
    assert np.sqrt(np.mean((pred - TABLE1) ** 2)) <= 0.03
    assert expected_relative_error(DEFAULT_MODEL, 2, 10) == pytest.approx(0.109, abs=0.01)
    assert expected_relative_error(DEFAULT_MODEL, 10, 1) == pytest.approx(-0.145, abs=0.03)


def test_default_model_dips_at_equal_mass():
    for d in TABLE1_DIMS:
        curve = [expected_relative_error(DEFAULT_MODEL, d, x) for x in TABLE1_RATIOS]
        assert int(np.argmin(curve)) == TABLE1_RATIOS.index(1.0)


def test_default_alpha_matches_published():
    np.testing.assert_allclose(DEFAULT_MODEL.alpha, PUBLISHED_MODEL.alpha, atol=0.05e-3 + 0.05 * abs(PUBLISHED_MODEL.alpha).max())
    np.testing.assert_array_equal(np.sign(DEFAULT_MODEL.alpha), np.sign(PUBLISHED_MODEL.alpha))


def test_expected_error_guards():
    with pytest.raises(BadRatio):
        expected_relative_error(DEFAULT_MODEL, 2, 0.0)
    with pytest.raises(ValueError):
        expected_relative_error(DEFAULT_MODEL, 25, 1.0)
    deep = DimensionModel([0, 0, 0, 0, 0], [-50.0, 0, 0, 0, 0.3])
    assert expected_relative_error(deep, 2, 1.0) == -0.9


@pytest.mark.parametrize("params", [(-0.05, 0.004, 0.06, 0.05, 0.3), (-0.12, 0.002, 0.03, -0.1, 0.5)])
def test_curve_round_trip(params):
    truth = ErrorCurve(*params)
    fit = fit_error_curve(np.column_stack([RATIOS, truth(RATIOS)]))
    np.testing.assert_allclose(fit.as_vector(), truth.as_vector(), rtol=0.01, atol=1e-6)


def test_constant_samples():
    fit = fit_error_curve(np.column_stack([RATIOS, np.full(RATIOS.shape, 0.07)]))
    np.testing.assert_allclose(fit(RATIOS), 0.07, atol=1e-6)
    assert abs(fit.a) < 1e-4 and abs(fit.b) < 1e-4
    assert fit.c == pytest.approx(0.07, abs=1e-3)


def test_fit_table_row_dips_near_one():
    fit = fit_error_curve(np.column_stack([TABLE1_RATIOS, TABLE1[0]]))
    grid = np.linspace(0.25, 10, 2000)
    assert 0.7 < grid[np.argmin(fit(grid))] < 1.4


def test_fit_needs_both_sides_of_one():
    with pytest.raises(ValueError):
        fit_error_curve(np.column_stack([RATIOS[RATIOS > 1], np.zeros(np.count_nonzero(RATIOS > 1))]))


def test_refit_signs_match_published():
    model = fit_table(TABLE1_DIMS, TABLE1_RATIOS, TABLE1)
    np.testing.assert_array_equal(np.sign(model.alpha), np.sign(PUBLISHED_MODEL.alpha))
    np.testing.assert_array_equal(np.sign(model.beta), np.sign(PUBLISHED_MODEL.beta))
    np.testing.assert_allclose(model.alpha, PUBLISHED_MODEL.alpha, rtol=0.5, atol=0.1e-3)


def test_dimension_model_lines():
    c = ErrorCurve(-0.05, 0.004, 0.06, 0.05, 0.3)
    same = fit_dimension_model([(2, c), (5, c), (9, c)])
    np.testing.assert_allclose(same.alpha, 0, atol=1e-12)
    np.testing.assert_allclose(same.beta, c.as_vector())

    c2 = ErrorCurve(-0.08, 0.005, 0.05, 0.15, 0.4)
    line = fit_dimension_model([(2, c), (4, c2)])
    np.testing.assert_allclose(line.params(2).as_vector(), c.as_vector())
    np.testing.assert_allclose(line.params(4).as_vector(), c2.as_vector())

    with pytest.raises(InsufficientDimensions):
        fit_dimension_model([(2, c), (2, c2)])


def test_model_file_round_trip(tmp_path):
    path = tmp_path / "model.txt"
    DEFAULT_MODEL.save(path)
    back = DimensionModel.load(path)
    np.testing.assert_array_equal(back.alpha, DEFAULT_MODEL.alpha)
    np.testing.assert_array_equal(back.beta, DEFAULT_MODEL.beta)
    assert back.note == DEFAULT_MODEL.note
    with pytest.raises(ValueError):
        parse_model("alpha = 1 2 3\n")
    assert dump_model(back) == dump_model(DEFAULT_MODEL)


@given(st.integers(1, 20), st.floats(0.05, 20))
def test_correction_keeps_sign(d, x):
    x_hat = expected_relative_error(DEFAULT_MODEL, d, x)
    assert correct(2.0, x_hat) > 0


def test_sphere_truth():
    assert sphere_truth(4, 4, 0.5) == pytest.approx(0.5)
    assert sphere_truth(4, 4, 8.0) == pytest.approx(2.0)
    # 2 Diracs against 4 at radius 1: transport 2, create 2, per unit of the smaller mass
    assert sphere_truth(2, 4, 1.0) == pytest.approx((2 * 1.0 + 2) / 2)


def test_reduced_calibration_grid():
    cfg = TrainConfig(epochs=600)
    rows = run_calibration(dims=(2,), ratios=(1.0,), radii=(1.0,), cfg=cfg, repetitions=1, seed=3)
    assert len(rows) == 1 and abs(rows[0].rel_err) < 0.3
    again = run_calibration(dims=(2,), ratios=(1.0,), radii=(1.0,), cfg=cfg, repetitions=1, seed=3)
    assert rows_to_csv(rows) == rows_to_csv(again)
    assert set(average_over_radii(rows)) == {(2, 1.0)}


@given(st.integers(1, 20), st.floats(0.1, 15), st.floats(0.1, 100))
def test_correction_inverts_the_model(d, x, truth):
    x_hat = expected_relative_error(DEFAULT_MODEL, d, x)
    assert correct(truth * (1 + x_hat), x_hat) == pytest.approx(truth, rel=1e-12)


def test_equal_mass_error_falls_with_dimension():
    vals = [expected_relative_error(DEFAULT_MODEL, d, 1.0) for d in TABLE1_DIMS]
    assert all(a > b for a, b in zip(vals, vals[1:]))
