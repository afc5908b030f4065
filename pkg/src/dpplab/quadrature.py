"""Tensor-product Gauss-Legendre rules on boxes."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial.legendre import leggauss

from .core import ContractViolation, Window


@lru_cache(maxsize=64)
def _reference_rule(order: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = leggauss(order)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def gauss_legendre_1d(a: float, b: float, order: int, panels: int = 1):
    """Composite Gauss-Legendre nodes and weights on [a, b]."""
    if order < 1 or panels < 1:
        raise ContractViolation("order and panels must be positive")
    x, w = _reference_rule(order)
    edges = np.linspace(a, b, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    nodes: np.ndarray  # (N, d)
    weights: np.ndarray  # (N,)

    def __len__(self):
        return self.weights.size

    def integrate(self, values) -> complex | float:
        """Weighted sum of node values, or of ``values(nodes)`` when callable."""
        if callable(values):
            values = values(self.nodes)
        return np.tensordot(self.weights, np.asarray(values), axes=(0, 0))


def tensor_rule(window: Window, order: int, panels: int = 1) -> QuadratureRule:
    """Tensor-product rule with ``order`` nodes per panel on every axis."""
    axes = [gauss_legendre_1d(window.lo[k], window.hi[k], order, panels) for k in range(window.dim)]
    grids = np.meshgrid(*[a[0] for a in axes], indexing="ij")
    wgrids = np.meshgrid(*[a[1] for a in axes], indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=1)
    weights = np.prod(np.stack([g.ravel() for g in wgrids], axis=1), axis=1)
    return QuadratureRule(nodes, weights)


def union_rule(windows, order: int, panels: int = 1) -> QuadratureRule:
    rules = [tensor_rule(w, order, panels) for w in windows]
    if not rules:
        raise ContractViolation("no cells to integrate over")
    return QuadratureRule(
        np.concatenate([r.nodes for r in rules]), np.concatenate([r.weights for r in rules])
    )
