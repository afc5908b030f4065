import numpy as np
import pytest

from dpplab.core import ContractViolation, Window
from dpplab.fredholm import trace
from dpplab.kernels import (
    BasisNotOrthonormal,
    DegenerateRemovalPoint,
    FourierBasis,
    FunctionBasis,
    KernelViolatesAs2,
    LegendreBasis,
    config_hash,
    decompose,
    gaussian_kernel,
    kernel_from_config,
    projection_kernel,
    rank_one_kernel,
    sine_kernel,
    spectral_kernel,
    thin,
    zero_kernel,
)


def test_sine_examples():
    k = sine_kernel()
    assert k(0.3, 0.3) == pytest.approx(1.0, abs=1e-15)
    assert abs(k(0.2, 1.2)) < 1e-15
    assert k(0.0, 0.5) == pytest.approx(2 / np.pi, abs=1e-12)


def test_constant_projection(unit):
    k = projection_kernel(FunctionBasis([lambda x: np.ones_like(x)]), unit)
    X = np.linspace(0, 1, 7)
    assert np.allclose(k.matrix(X), 1.0)


def test_fourier_projection_diagonal(unit):
    for n in (1, 3, 5):
        k = projection_kernel(FourierBasis(n, unit), unit)
        assert np.allclose(k.diagonal(np.linspace(0, 1, 11)), n, atol=1e-12)


def test_projection_spectrum(unit):
    d = decompose(projection_kernel(LegendreBasis(4, unit), unit), unit, 16)
    assert np.array_equal(d.eigenvalues, np.ones(4))
    assert d.is_projection()


def test_non_orthonormal_basis_rejected(unit):
    basis = FunctionBasis([lambda x: np.ones_like(x), lambda x: x])
    with pytest.raises(BasisNotOrthonormal, match="deviation"):
        projection_kernel(basis, unit)


def test_zero_and_rank_one(unit):
    assert decompose(zero_kernel(), unit, 8).rank == 0
    psi = lambda x: np.sqrt(3.0) * x  # unit norm on [0, 1]
    d = decompose(rank_one_kernel(psi, 0.5), unit, 16)
    assert d.rank == 1
    assert d.eigenvalues[0] == pytest.approx(0.5, abs=1e-12)


def test_sine_trace_on_five():
    w = Window.interval(0, 5)
    d = decompose(sine_kernel(), w, 64)
    assert d.trace() == pytest.approx(5.0, abs=1e-8)
    assert trace(sine_kernel(), w) == pytest.approx(5.0, abs=1e-8)
    # about five eigenvalues close to one
    assert 4 <= np.count_nonzero(d.eigenvalues > 0.5) <= 6


def test_decomposition_invariants():
    w = Window.interval(-1, 2)
    d = decompose(gaussian_kernel(0.5, 0.4), w, 48)
    assert np.all(d.eigenvalues >= 0) and np.all(d.eigenvalues <= 1 + 1e-8)
    assert np.allclose(d.gram(), np.eye(d.rank), atol=1e-8)
    nodes = d.quadrature.nodes
    assert np.max(np.abs(d.reconstruct(nodes) - d.kernel.matrix(nodes))) < 1e-6
    assert np.all(np.diff(d.eigenvalues) <= 0)


def test_reconstruction_improves_with_resolution():
    w = Window.interval(0, 3)
    k = gaussian_kernel(0.6, 0.3)
    X = np.linspace(0, 3, 37)
    errs = [np.max(np.abs(decompose(k, w, r).reconstruct(X) - k.matrix(X))) for r in (8, 16, 32)]
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 1e-6


def test_as2_violation():
    with pytest.raises(KernelViolatesAs2):
        decompose(gaussian_kernel(0.9, 5.0), Window.interval(0, 50), 32)


def test_resolution_floor(unit):
    with pytest.raises(ContractViolation):
        decompose(sine_kernel(), unit, 4)


def test_gaussian_params():
    with pytest.raises(ContractViolation):
        gaussian_kernel(1.0, 1.0)
    with pytest.raises(ContractViolation):
        gaussian_kernel(0.5, 0.0)


def test_hermiticity(rng, unit):
    kernels = [
        sine_kernel(),
        gaussian_kernel(0.5, 0.3),
        projection_kernel(FourierBasis(3, unit), unit),
        thin(projection_kernel(FourierBasis(3, unit), unit), 0.4),
        spectral_kernel([0.3, 0.2], FourierBasis(2, unit)),
    ]
    X, Y = rng.random(10**4), rng.random(10**4)
    for k in kernels:
        kxy = np.array([k(x, y) for x, y in zip(X[:200], Y[:200])])
        kyx = np.array([k(y, x) for x, y in zip(X[:200], Y[:200])])
        assert np.max(np.abs(kxy - np.conj(kyx))) < 1e-12
        M = k.matrix(X[:100], Y[:100])
        assert np.max(np.abs(M - k.matrix(Y[:100], X[:100]).conj().T)) < 1e-12
        diag = k.diagonal(X)
        assert np.all(np.real(diag) >= -1e-12)


def test_thin_rank_one_collapses(unit):
    psi = lambda x: np.sqrt(3.0) * x
    t = thin(rank_one_kernel(psi, 1.0), 0.6)
    X = np.linspace(0, 1, 9)
    assert np.max(np.abs(t.matrix(X))) < 1e-14


def test_thin_vanishes_at_z(rng):
    k = sine_kernel()
    t = thin(k, 0.7)
    ys = rng.uniform(-3, 3, 20)
    assert abs(t(0.7, 0.7)) < 1e-15
    assert np.max(np.abs(t.matrix([0.7], ys))) < 1e-15
    assert np.max(np.abs(t.matrix(ys, [0.7]))) < 1e-15


def test_thin_sine_formula():
    k = sine_kernel()
    t = thin(k, 0.0)
    assert t(0.3, 0.5) == pytest.approx(k(0.3, 0.5) - k(0.3, 0.0) * k(0.0, 0.5), abs=1e-15)


def test_thin_trace_drop_and_psd():
    w = Window.interval(0, 4)
    k = sine_kernel()
    z = 1.3
    before = trace(k, w)
    after = trace(thin(k, z), w)
    x, wts = np.polynomial.legendre.leggauss(64)
    x = 2 + 2 * x
    drop = 2 * wts @ (np.sinc(x - z) ** 2)
    assert before - after == pytest.approx(drop, abs=1e-10)
    d = decompose(thin(k, z), w, 48)
    assert np.all(d.raw_eigenvalues >= -1e-8)


def test_thin_degenerate(unit):
    psi = lambda x: np.sqrt(3.0) * x
    with pytest.raises(DegenerateRemovalPoint):
        thin(rank_one_kernel(psi), 0.0)


def test_trace_matches_eigenvalue_sum():
    w = Window.interval(-2, 1)
    k = gaussian_kernel(0.4, 0.5)
    d = decompose(k, w, 40)
    assert d.trace() == pytest.approx(trace(k, w, 40), abs=1e-8)


def test_projection_2d():
    w = Window([0, 0], [1, 1])
    basis = FunctionBasis([lambda X: np.ones(len(X))], dim=2)
    k = projection_kernel(basis, w, 8)
    d = decompose(k, w, 8)
    assert np.array_equal(d.eigenvalues, [1.0])


def test_kernel_from_config():
    cfg = {"kind": "projection-fourier", "params": {"n": 3}, "window": {"lo": [0], "hi": [1]}}
    k, w = kernel_from_config(cfg)
    assert w == Window.interval(0, 1)
    assert k.diagonal([0.4])[0] == pytest.approx(3.0)
    with pytest.raises(ContractViolation, match="unknown kernel kind"):
        kernel_from_config(dict(cfg, kind="nope"))
    assert config_hash(cfg) == config_hash(dict(reversed(list(cfg.items()))))
