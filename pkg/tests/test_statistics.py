import math

import numpy as np
import pytest

from dpplab.core import ContractViolation, PointConfiguration, RandomStream, Window
from dpplab.kernels import (
    FourierBasis,
    LegendreBasis,
    decompose,
    projection_kernel,
    rank_one_kernel,
    sine_kernel,
    spectral_kernel,
    zero_kernel,
)
from dpplab.sampler import sample_batch
from dpplab.statistics import (
    InteractionUndefined,
    bin_average_diagonal,
    correlation,
    count_distribution,
    empirical_correlation,
    fidi,
    grid_boxes,
    interaction_kernel,
    janossy_density,
    janossy_from_moments,
    janossy_round_trip,
    janossy_total,
    moments_from_janossy,
    pair_correlation,
    partition_law,
)

PSI = lambda x: np.sqrt(3.0) * x  # unit norm on [0, 1]


def test_correlation_examples(rng):
    k = sine_kernel()
    assert correlation(k, [0.37]) == pytest.approx(1.0)
    assert abs(correlation(k, [0.2, 0.2])) < 1e-14
    assert correlation(k, [0.1, 0.6]) == pytest.approx(1 - (2 / np.pi) ** 2, abs=1e-12)


def test_negative_correlation(rng):
    k = sine_kernel()
    X = rng.uniform(-3, 3, (10**4, 2))
    K = k.matrix(X[:, 0], X[:, 1])
    rho2 = 1.0 - np.abs(np.diag(K)) ** 2
    assert np.all(rho2 <= 1.0 + 1e-15)
    pts = X[:5]
    assert all(correlation(k, p) <= 1.0 + 1e-12 for p in pts)


def test_correlation_permutation(rng):
    k = sine_kernel()
    pts = rng.random(4) * 3
    assert correlation(k, pts) == pytest.approx(correlation(k, pts[::-1]), abs=1e-10)


def test_interaction_kernel(unit):
    assert interaction_kernel(decompose(zero_kernel(), unit, 8)).rank == 0
    d = decompose(rank_one_kernel(PSI, 0.5), unit, 16)
    assert interaction_kernel(d).eigenvalues[0] == pytest.approx(1.0)
    d = decompose(rank_one_kernel(PSI, 0.9), unit, 16)
    assert interaction_kernel(d).eigenvalues[0] == pytest.approx(9.0)
    d = decompose(projection_kernel(FourierBasis(2, unit), unit), unit, 16)
    with pytest.raises(InteractionUndefined, match="projection"):
        interaction_kernel(d)


def test_janossy_examples(unit):
    assert janossy_density(decompose(zero_kernel(), unit, 8), []).density == 1.0
    d = decompose(rank_one_kernel(PSI, 0.5), unit, 16)
    ev = janossy_density(d, [0.4])
    assert ev.void_probability == pytest.approx(0.5)
    assert ev.density == pytest.approx(0.5 * PSI(0.4) ** 2, abs=1e-12)
    # p_1 = integral of j_1
    assert janossy_total(d, 1) == pytest.approx(0.5, abs=1e-12)


def test_janossy_symmetric(rank3):
    pts = np.array([0.1, 0.55, 0.8])
    a = janossy_density(rank3, pts).density
    b = janossy_density(rank3, pts[[2, 0, 1]]).density
    assert abs(a - b) < 1e-10


def test_janossy_outside_window(rank3):
    with pytest.raises(ContractViolation):
        janossy_density(rank3, [1.5])


def test_janossy_normalization(rank3):
    total = sum(janossy_total(rank3, n, 8) for n in range(4))
    assert total == pytest.approx(1.0, abs=1e-6)


def test_count_distribution_examples(unit):
    p = count_distribution(decompose(projection_kernel(LegendreBasis(3, unit), unit), unit, 12))
    assert np.allclose(p.probabilities, [0, 0, 0, 1])
    p = count_distribution(decompose(rank_one_kernel(PSI, 0.5), unit, 16))
    assert np.allclose(p.probabilities, [0.5, 0.5])
    d = decompose(spectral_kernel([0.5, 0.5], LegendreBasis(2, unit)), unit, 12)
    assert np.allclose(count_distribution(d).probabilities, [0.25, 0.5, 0.25])


def test_count_distribution_moments():
    w = Window.interval(0, 3)
    d = decompose(sine_kernel(), w, 40)
    law = count_distribution(d)
    assert law.probabilities.sum() == pytest.approx(1.0, abs=1e-9)
    assert law.mean == pytest.approx(d.trace(), abs=1e-8)
    assert law.variance == pytest.approx(np.sum(d.eigenvalues * (1 - d.eigenvalues)), abs=1e-8)


def test_fidi_full_window_matches_count_law(rank3, unit):
    law = count_distribution(rank3)
    for n in range(4):
        assert fidi(rank3, [unit], [n]) == pytest.approx(law[n], abs=1e-6)


def test_fidi_projection(unit):
    d = decompose(projection_kernel(LegendreBasis(3, unit), unit), unit, 12)
    assert fidi(d, [unit], [3]) == pytest.approx(1.0, abs=1e-10)


def test_fidi_void(rank3):
    boxes = [Window.interval(0, 0.3), Window.interval(0.3, 1.0)]
    assert fidi(rank3, boxes, [0, 0]) == pytest.approx(np.prod(1 - rank3.eigenvalues), abs=1e-10)


def test_fidi_sums_to_one(rank3):
    boxes = [Window.interval(0, 0.4), Window.interval(0.6, 0.9)]
    total = sum(fidi(rank3, boxes, [a, b]) for a in range(4) for b in range(4))
    assert total == pytest.approx(1.0, abs=1e-6)


def test_fidi_overlap_rejected(rank3):
    with pytest.raises(ContractViolation):
        fidi(rank3, [Window.interval(0, 0.5), Window.interval(0.4, 0.9)], [1, 1])


def test_first_moment_is_trace(rank3):
    A = Window.interval(0.1, 0.6)
    x, w = np.polynomial.legendre.leggauss(30)
    x, w = 0.35 + 0.25 * x, 0.25 * w
    expected = w @ np.real(rank3.kernel.diagonal(x))
    assert moments_from_janossy(rank3, [A], [1]) == pytest.approx(expected, abs=1e-10)


def test_second_moment_identity(unit):
    # M_[2](A x A) = E[N(A)^2] - E[N(A)] on a rank-2 kernel
    d = decompose(spectral_kernel([0.8, 0.3], LegendreBasis(2, unit)), unit, 12)
    A = Window.interval(0.0, 0.45)
    law = partition_law(d, [A])
    marg = law.pmf.sum(axis=1)
    n = np.arange(marg.size)
    m2 = n**2 @ marg - n @ marg
    assert moments_from_janossy(d, [A], [2]) == pytest.approx(m2, abs=1e-10)
    # and against the 2x2 determinant integral
    x, w = np.polynomial.legendre.leggauss(30)
    x, w = 0.225 + 0.225 * x, 0.225 * w
    K = d.kernel.matrix(x)
    direct = (w @ np.real(np.diag(K))) ** 2 - w @ np.abs(K) ** 2 @ w
    assert m2 == pytest.approx(direct, abs=1e-10)


def test_zero_kernel_moments(unit):
    d = decompose(zero_kernel(), unit, 8)
    A = Window.interval(0, 0.5)
    assert moments_from_janossy(d, [A], [1]) == 0.0
    assert janossy_from_moments(d, [A], [0]) == pytest.approx(1.0)


def test_round_trip(rank3):
    boxes = [Window.interval(0, 0.3), Window.interval(0.5, 0.8)]
    for counts in ([0, 0], [1, 0], [1, 1], [2, 1]):
        direct, back = janossy_round_trip(rank3, boxes, counts)
        assert back == pytest.approx(direct, abs=1e-10)


def test_janossy_measure_against_density(rank3):
    # J_1(A) from the partition law equals the integral of j_1 over A
    A = Window.interval(0.2, 0.7)
    law = partition_law(rank3, [A])
    x, w = np.polynomial.legendre.leggauss(30)
    x, w = 0.45 + 0.25 * x, 0.25 * w
    dens = np.array([janossy_density(rank3, [xi]).density for xi in x])
    # J_1(A) counts configurations with one point in A and none elsewhere
    assert law.janossy([1, 0]) == pytest.approx(w @ dens, abs=1e-10)


def test_empirical_rank3_intensity():
    w = Window.interval(0, 1)
    d = decompose(projection_kernel(FourierBasis(3, w), w), w, 16)
    batch = sample_batch(d, RandomStream(11), 300)
    est = empirical_correlation(batch.configurations, grid_boxes(w, 5), 1, density=False)
    total, err = est.estimate.sum(), np.sqrt(np.sum(est.stderr**2))
    assert total == pytest.approx(3.0, abs=1e-12)  # exactly three points per sample
    assert err >= 0


def test_empirical_point_mass():
    samples = [PointConfiguration([0.33])] * 100
    est = empirical_correlation(samples, grid_boxes(Window.interval(0, 1), 4), 1)
    assert np.argmax(est.estimate) == 1 and np.count_nonzero(est.estimate) == 1


def test_empirical_second_factorial_moment():
    w = Window.interval(0, 1)
    d = decompose(spectral_kernel([0.9, 0.6, 0.3], LegendreBasis(3, w)), w, 12)
    batch = sample_batch(d, RandomStream(5), 2000)
    est = empirical_correlation(batch.configurations, [w], 2, density=False)
    p = count_distribution(d).probabilities
    n = np.arange(p.size)
    analytic = (n * (n - 1)) @ p
    assert abs(est.estimate[0, 0] - analytic) < 3 * est.stderr[0, 0]


def test_empirical_min_samples():
    with pytest.raises(ContractViolation):
        empirical_correlation([PointConfiguration([0.1])] * 10, [Window.interval(0, 1)])


def test_estimate_csv_header():
    samples = [PointConfiguration([0.1, 0.7])] * 100
    boxes = grid_boxes(Window.interval(0, 1), 2)
    est = empirical_correlation(samples, boxes, 1)
    est.analytic = bin_average_diagonal(sine_kernel(), boxes)
    lines = est.to_csv().splitlines()
    assert lines[0] == "box_lo,box_hi,estimate,stderr,analytic"
    assert len(lines) == 3


def test_pair_correlation_repulsion():
    w = Window.interval(0, 5)
    d = decompose(sine_kernel(), w, 48)
    batch = sample_batch(d, RandomStream(3), 400)
    pc = pair_correlation(batch.configurations, w, 0.0, 0.2)
    assert pc.estimate + 3 * pc.stderr < 1.0
