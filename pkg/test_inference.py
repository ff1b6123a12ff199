#!/usr/bin/env python3
"""
Test Inference
Numerical information matrix, standard errors, confidence intervals and crash windows
"""
from datetime import date

import numpy as np
import pytest
from scipy.stats import norm

from conftest import make_series
from core.argarch import FULL_NAMES, ARGARCHParams, FullParams, loglik
from core.errors import InferenceError, InputDataError
from core.inference import (InferenceReport, InferenceRow, build_report, confidence_interval, crash_date_table,
                            crash_window, infer, information_matrix, normal_quantile, numerical_hessian)
from core.logperiodic import LPParams, evaluate_trend, sse, trend_gradient
from core.storage_manager import ReportStore, load_report
from core.timeseries import PriceSeries


def tc_report(lower, upper, coefficient=2.21, se=0.0138):
    row = InferenceRow('tc', coefficient, se, coefficient / se, lower, upper, False)
    return InferenceReport(rows=[row], covariance=np.array([[se ** 2]]), level=0.95)


# ---------------------------------------------------------------- intervals

def test_confidence_interval_arithmetic():
    lower, upper = confidence_interval(6.97, 0.375, 0.95)
    assert lower == pytest.approx(6.235, abs=1e-3)
    assert upper == pytest.approx(7.705, abs=1e-3)
    lower, upper = confidence_interval(3.200, 0.0023, 0.95)
    assert lower == pytest.approx(3.1955, abs=1e-4)
    assert upper == pytest.approx(3.2045, abs=1e-4)


def test_confidence_interval_errors():
    with pytest.raises(InferenceError):
        confidence_interval(1.0, 0.0)
    with pytest.raises(InferenceError):
        confidence_interval(1.0, float('nan'))
    with pytest.raises(InferenceError):
        normal_quantile(1.0)
    assert normal_quantile(0.95) == pytest.approx(1.959964, abs=1e-6)


def test_build_report_rows():
    report = build_report(['a', 'b'], [2.0, 0.1], np.diag([0.25, 1.0]), level=0.95)
    z = norm.ppf(0.975)
    a, b = report.row('a'), report.row('b')
    assert a.t == pytest.approx(4.0)
    assert not a.insignificant
    assert b.insignificant
    for r in report.rows:
        assert abs(r.t) * r.se == pytest.approx(abs(r.coefficient))
        assert r.ci_upper - r.ci_lower == pytest.approx(2 * z * r.se)
    with pytest.raises(InferenceError):
        report.row('c')


def test_build_report_withholds_invalid_variances():
    report = build_report(['a', 'b'], [1.0, 1.0], np.diag([1.0, -1.0]))
    assert report.withheld == ['b']
    assert np.isnan(report.row('b').se)
    assert report.row('b').insignificant
    with pytest.raises(InferenceError):
        build_report(['a'], [1.0], np.zeros((1, 1)))


# ---------------------------------------------------------------- information

def test_numerical_hessian_of_quadratic():
    a = np.array([[4.0, 1.0, 0.5], [1.0, 3.0, -0.2], [0.5, -0.2, 2.0]])

    def f(x):
        return 0.5 * float(x @ a @ x)

    x0 = np.array([0.3, -1.2, 2.0])
    serial = numerical_hessian(f, x0, threads=1)
    parallel = numerical_hessian(f, x0, threads=3)
    np.testing.assert_allclose(serial, a, atol=1e-6)
    np.testing.assert_array_equal(serial, parallel)
    np.testing.assert_array_equal(serial, serial.T)


def test_numerical_hessian_matches_gauss_newton_curvature():
    """At an exact fit the SSE Hessian is 2 J'J with J the analytic trend gradient"""
    truth = LPParams(A=400.0, B=-150.0, C=-12.0, tc=1.40, beta=0.4, omega=7.5, phi=1.5)
    t = make_series(np.ones(200)).t
    series = make_series(evaluate_trend(truth, t))
    jacobian = trend_gradient(truth, t)
    exact = 2.0 * jacobian.T @ jacobian
    numeric = numerical_hessian(lambda v: sse(LPParams.from_array(v), series), truth.as_array(), threads=1)
    np.testing.assert_allclose(numeric, exact, rtol=1e-3, atol=1e-3 * np.max(np.abs(exact)))
    assert np.max(np.abs(numeric - numeric.T)) <= 1e-4 * np.max(np.abs(numeric))


def test_gaussian_location_information():
    """With i.i.d. errors the curvature in A is (n - 1) / alpha0"""
    rng = np.random.default_rng(14)
    n, alpha0 = 200, 2.0
    series = make_series(100.0 + rng.normal(0, np.sqrt(alpha0), n))
    ag = ARGARCHParams(rho=0.0, alpha0=alpha0, alpha1=0.0, alpha2=0.0)

    def lnl(v):
        lp = LPParams(A=v[0], B=0.0, C=0.0, tc=5.0, beta=0.5, omega=7.0, phi=1.0)
        return loglik(FullParams(lp, ag), series)

    hessian = numerical_hessian(lnl, [100.0])
    assert -hessian[0, 0] == pytest.approx((n - 1) / alpha0, rel=1e-6)


def test_infer_on_simulated_data(simulated_series, sp500_truth):
    info = information_matrix(sp500_truth, simulated_series, threads=2)
    assert info.matrix.shape == (11, 11)
    assert info.asymmetry < 1e-12
    np.testing.assert_array_equal(info.matrix, info.matrix.T)

    report = infer(sp500_truth, simulated_series, level=0.95, threads=2)
    assert [r.name for r in report.rows] == list(FULL_NAMES)
    assert report.eigenvalues.shape == (11,)
    z = norm.ppf(0.975)
    for r in report.rows:
        if r.name in report.withheld:
            assert np.isnan(r.se)
            continue
        assert r.se > 0
        assert abs(r.t) * r.se == pytest.approx(abs(r.coefficient), rel=1e-10)
        assert r.ci_upper - r.ci_lower == pytest.approx(2 * z * r.se, abs=1e-10 * (1 + abs(r.coefficient)))
    assert report.positive_definite == (not report.withheld)


def test_infer_fails_off_the_likelihood_domain():
    series = make_series(np.linspace(100, 120, 60))
    theta = FullParams(LPParams(A=130.0, B=-10.0, C=1.0, tc=59 / 252 + 1e-5, beta=0.5, omega=7.0, phi=1.0),
                       ARGARCHParams(rho=0.5, alpha0=1.0, alpha1=0.1, alpha2=0.5))
    with pytest.raises(InferenceError):
        information_matrix(theta, series)


# ---------------------------------------------------------------- crash dates

def test_crash_window_anchored_on_trading_calendar(sp500_calendar):
    series = PriceSeries(sp500_calendar, np.linspace(180, 330, 544))
    window = crash_window(tc_report(2.183, 2.237), series.origin, series)
    assert window.start == date(1987, 9, 3)
    assert window.end == date(1987, 9, 23)
    assert window.to_dict()['start'] == '1987-09-03'


def test_crash_window_from_origin_only():
    window = crash_window(tc_report(1 / 252, 2 / 252), '1985-07-03', holidays=['1985-07-04'])
    assert (window.start, window.end) == (date(1985, 7, 5), date(1985, 7, 8))


def test_crash_window_errors():
    report = build_report(['A'], [1.0], np.eye(1))
    with pytest.raises(InferenceError):
        crash_window(report, '2000-01-03')
    with pytest.raises(InferenceError):
        crash_window(tc_report(float('nan'), float('nan')), '2000-01-03')


def test_crash_date_table(sp500_calendar):
    prices = np.concatenate([np.linspace(180, 330, 500), np.linspace(330, 300, 44)])
    series = PriceSeries(sp500_calendar, prices)
    table = crash_date_table(tc_report(2.183, 2.237), series)
    assert list(table.index) == ['t_max (drawdown start)', 't_min (drawdown trough)', 'tc lower', 'tc upper']
    assert table.loc['t_max (drawdown start)', 'date'] == sp500_calendar[499].date().isoformat()
    assert table.loc['tc lower', 'date'] == '1987-09-03'


# ---------------------------------------------------------------- report

def test_report_round_trip_and_render():
    report = build_report(['a', 'b', 'c'], [2.0, 0.1, 5.0], np.diag([0.25, 1.0, -1.0]))
    report.eigenvalues = np.array([4.0, 1.0, -1.0])
    report.positive_definite = False
    data = report.to_dict()
    restored = InferenceReport.from_dict(data)
    assert restored.withheld == ['c']
    assert [r.name for r in restored.rows] == ['a', 'b', 'c']
    np.testing.assert_array_equal(restored.covariance, report.covariance)
    text = report.render()
    assert "Std. error" in text
    assert "withheld" in text
    assert text.count(' *') >= 2
    with pytest.raises(InputDataError):
        InferenceReport.from_dict({'rows': []})


def test_withheld_rows_render_after_json_round_trip(tmp_path):
    report = build_report(['a', 'tc'], [2.0, 2.21], np.diag([0.25, -1.0]))
    path = ReportStore(tmp_path, config={}).save_report('inference', {'kind': 'inference', 'run_config': {},
                                                                     'inference': report.to_dict()})
    restored = InferenceReport.from_dict(load_report(path)['inference'])
    assert np.isnan(restored.row('tc').se)
    assert np.isnan(restored.row('tc').ci_upper)
    text = restored.render()
    assert 'n/a' in text
    assert 'withheld' in text
    with pytest.raises(InferenceError):
        crash_window(restored, date(1985, 7, 1))
