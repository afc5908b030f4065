import numpy as np

from dpplab.core import Window
from dpplab.quadrature import gauss_legendre_1d, tensor_rule


def test_polynomial_exactness():
    x, w = gauss_legendre_1d(-1, 2, 5)
    for p in range(10):
        exact = (2 ** (p + 1) - (-1) ** (p + 1)) / (p + 1)
        assert abs(w @ x**p - exact) < 1e-12


def test_panels_handle_kinks():
    x, w = gauss_legendre_1d(-1, 1, 8, panels=2)
    assert abs(w @ np.abs(x) - 1.0) < 1e-14


def test_tensor_rule_volume():
    rule = tensor_rule(Window([0, 0, 0], [1, 2, 3]), 4)
    assert len(rule) == 64
    assert abs(rule.weights.sum() - 6.0) < 1e-12
    assert abs(rule.integrate(lambda X: X[:, 0] * X[:, 1]) - 0.5 * 2.0 * 3.0) < 1e-12
