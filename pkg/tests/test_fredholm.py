import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dpplab.core import ContractViolation, Window
from dpplab.fredholm import (
    PlemeljPreconditionError,
    elementary_symmetric,
    exterior_traces,
    fredholm_det,
    power_sums,
    series_route,
    trace,
)
from dpplab.kernels import (
    FourierBasis,
    LegendreBasis,
    decompose,
    gaussian_kernel,
    projection_kernel,
    rank_one_kernel,
    sine_kernel,
    spectral_kernel,
    zero_kernel,
)


def test_trace_examples(unit):
    assert trace(zero_kernel(), unit) == 0.0
    assert trace(projection_kernel(FourierBasis(4, unit), unit), unit) == pytest.approx(4.0, abs=1e-10)
    assert trace(sine_kernel(), Window.interval(0, 5)) == pytest.approx(5.0, abs=1e-8)


def test_zero_kernel(unit):
    r = fredholm_det(decompose(zero_kernel(), unit, 8), -1.0)
    assert r.value_spectral == r.value_series == r.value_plemelj == 1.0


def test_rank_one_half(unit):
    d = decompose(rank_one_kernel(lambda x: np.sqrt(3.0) * x, 0.5), unit, 16)
    r = fredholm_det(d, -1.0)
    for v in (r.value_spectral, r.value_series, r.value_plemelj):
        assert v == pytest.approx(0.5, abs=1e-12)
    assert r.ok


def test_projection_gives_zero(unit):
    d = decompose(projection_kernel(LegendreBasis(3, unit), unit), unit, 12)
    r = fredholm_det(d, -1.0, "series")
    assert r.value_spectral == 0.0
    assert abs(r.value_series) < 1e-10
    assert r.ok


def test_plemelj_precondition(unit):
    d = decompose(projection_kernel(LegendreBasis(3, unit), unit), unit, 12)
    with pytest.raises(PlemeljPreconditionError, match="Plemelj precondition violated"):
        fredholm_det(d, -1.0, "plemelj")
    r = fredholm_det(d, -1.0, "all")
    assert r.value_plemelj is None and r.notes


def test_z_zero_exact(unit):
    d = decompose(sine_kernel(), Window.interval(0, 3), 32)
    r = fredholm_det(d, 0.0)
    assert r.value_spectral == r.value_series == r.value_plemelj == 1.0


def test_unknown_method(unit):
    with pytest.raises(ContractViolation):
        fredholm_det(decompose(zero_kernel(), unit, 8), -1, "magic")


@given(st.lists(st.floats(0, 0.9), min_size=1, max_size=6), st.floats(-1.0, 1.0))
@settings(max_examples=40, deadline=None)
def test_routes_agree_random(eig, z):
    w = Window.interval(0, 1)
    d = decompose(spectral_kernel(eig, LegendreBasis(len(eig), w)), w, 8)
    exact = np.prod(1 + z * np.array(eig))
    r = fredholm_det(d, z)
    assert r.value_spectral == pytest.approx(exact, abs=1e-10)
    assert abs(r.value_series - r.value_spectral) < 1e-6
    if abs(z) * sum(eig) < 1:
        assert abs(r.value_plemelj - r.value_spectral) < 1e-6


def test_series_enumeration_and_traces_agree(unit):
    # resolution 8 keeps subset enumeration in budget; 32 forces power traces
    k = spectral_kernel([0.6, 0.3, 0.1], LegendreBasis(3, unit))
    v8, _, mode8 = series_route(decompose(k, unit, 8), -1.0)
    v32, _, mode32 = series_route(decompose(k, unit, 32), -1.0)
    assert mode8 != mode32
    assert v8 == pytest.approx(0.4 * 0.7 * 0.9, abs=1e-12)
    assert v32 == pytest.approx(0.4 * 0.7 * 0.9, abs=1e-12)


def test_series_matches_integral_determinant(unit):
    # second series term equals (1/2) * double integral of det[K(x_i, x_j)]
    k = gaussian_kernel(0.5, 0.3)
    d = decompose(k, unit, 12)
    x, w = np.polynomial.legendre.leggauss(40)
    x, w = (x + 1) / 2, w / 2
    K = k.matrix(x)
    integral = 0.5 * (w @ np.diag(K)) ** 2 - 0.5 * w @ (np.abs(K) ** 2) @ w
    assert exterior_traces(d, 2)[2] == pytest.approx(integral, abs=1e-8)


def test_newton_identities():
    mu = np.array([0.5, 0.25, 0.1])
    e = elementary_symmetric(power_sums(mu, 3), 3)
    assert e[1] == pytest.approx(0.85)
    assert e[2] == pytest.approx(0.5 * 0.25 + 0.5 * 0.1 + 0.25 * 0.1)
    assert e[3] == pytest.approx(0.5 * 0.25 * 0.1)


def test_void_probability_monotone_and_bounded():
    k = sine_kernel()
    vals = [fredholm_det(decompose(k, Window.interval(0, L), 32), -1, "spectral").value for L in (0.5, 1, 2, 3)]
    assert all(0.0 <= v <= 1.0 for v in vals)
    assert all(a >= b for a, b in zip(vals, vals[1:]))


def test_report_to_dict(unit):
    r = fredholm_det(decompose(zero_kernel(), unit, 8)).to_dict()
    assert r["ok"] and set(r) >= {"value_spectral", "value_series", "value_plemelj", "series_terms_used", "max_pairwise_gap"}


def test_sine_series_terms_truncate():
    d = decompose(sine_kernel(), Window.interval(0, 2), 24)
    r = fredholm_det(d, -1.0, "series")
    assert r.ok
    assert 1 <= r.series_terms_used <= 20
    assert r.value_series == pytest.approx(math.prod(1 - d.eigenvalues), abs=1e-10)
