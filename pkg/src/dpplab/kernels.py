"""Hermitian DPP kernels, window restriction and Nystrom spectral decomposition."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial import legendre as npleg

from .core import ContractViolation, Window, as_points
from .quadrature import QuadratureRule, tensor_rule

log = logging.getLogger(__name__)

EIGEN_CUTOFF = 1e-12
PROJECTION_CLAMP = 1e-8
SPECTRUM_TOL = 1e-6
DEGENERATE_TOL = 1e-12


class KernelViolatesAs2(ContractViolation):
    """Spectrum of the restricted operator leaves [0, 1]."""


class BasisNotOrthonormal(ContractViolation):
    pass


class DegenerateRemovalPoint(ContractViolation):
    pass


# --------------------------------------------------------------------------- bases


class Basis:
    """A finite family of functions evaluated jointly: ``basis(X) -> (n, r)``."""

    name = "basis"

    def __init__(self, size: int, dim: int = 1):
        self.size = int(size)
        self.dim = int(dim)

    def __call__(self, X) -> np.ndarray:
        raise NotImplementedError

    def __len__(self):
        return self.size


class FourierBasis(Basis):
    """exp(2 pi i k (x - a) / L) / sqrt(L), k = 0..n-1, on [a, b]."""

    name = "fourier"

    def __init__(self, n: int, window: Window):
        if window.dim != 1:
            raise ContractViolation("Fourier basis is one-dimensional")
        super().__init__(n, 1)
        self.a = float(window.lo[0])
        self.length = float(window.lengths[0])

    def __call__(self, X):
        x = as_points(X, 1)[:, 0]
        k = np.arange(self.size)
        phase = 2j * np.pi * np.outer(x - self.a, k) / self.length
        return np.exp(phase) / np.sqrt(self.length)


class LegendreBasis(Basis):
    """Orthonormal Legendre polynomials of degree 0..n-1 on [a, b]."""

    name = "legendre"

    def __init__(self, n: int, window: Window):
        if window.dim != 1:
            raise ContractViolation("Legendre basis is one-dimensional")
        super().__init__(n, 1)
        self.a = float(window.lo[0])
        self.length = float(window.lengths[0])

    def __call__(self, X):
        x = as_points(X, 1)[:, 0]
        u = 2.0 * (x - self.a) / self.length - 1.0
        vals = npleg.legvander(u, self.size - 1)
        norms = np.sqrt((2 * np.arange(self.size) + 1) / self.length)
        return vals * norms


class FunctionBasis(Basis):
    """Basis from a list of callables, each mapping (n, d) points to (n,) values."""

    name = "functions"

    def __init__(self, functions: Sequence[Callable], dim: int = 1):
        super().__init__(len(functions), dim)
        self.functions = list(functions)

    def __call__(self, X):
        pts = as_points(X, self.dim)
        if not self.functions:
            return np.zeros((pts.shape[0], 0))
        cols = [np.asarray(f(pts)).reshape(-1) for f in self.functions]
        return np.stack(cols, axis=1)


def _as_basis(basis, dim: int = 1) -> Basis:
    if isinstance(basis, Basis):
        return basis
    return FunctionBasis(list(basis), dim)


def gram_matrix(basis: Basis, window: Window, resolution: int = 64, panels: int = 1) -> np.ndarray:
    rule = tensor_rule(window, resolution, panels)
    B = basis(rule.nodes)
    return (B.conj().T * rule.weights) @ B


# --------------------------------------------------------------------------- kernels


class Kernel:
    """Hermitian kernel K(x, y) on R^d."""

    kind = "kernel"

    def __init__(self, dim: int = 1):
        self.dim = int(dim)

    def matrix(self, X, Y=None) -> np.ndarray:
        """Kernel matrix [K(x_i, y_j)] for point arrays X (n, d), Y (m, d)."""
        X = as_points(X, self.dim)
        Y = X if Y is None else as_points(Y, self.dim)
        return self._matrix(X, Y)

    def _matrix(self, X, Y):
        raise NotImplementedError

    def __call__(self, x, y):
        val = self.matrix(as_points(x, self.dim), as_points(y, self.dim))[0, 0]
        return val.real if np.isrealobj(val) else val

    def diagonal(self, X) -> np.ndarray:
        X = as_points(X, self.dim)
        return np.real(self._diagonal(X))

    def _diagonal(self, X):
        return np.array([self._matrix(x[None, :], x[None, :])[0, 0] for x in X])

    def spec(self) -> dict:
        return {"kind": self.kind}

    def __repr__(self):
        return f"{type(self).__name__}(dim={self.dim})"


class SineKernel(Kernel):
    """sin(pi (x - y)) / (pi (x - y)) on the real line."""

    kind = "sine"

    def __init__(self):
        super().__init__(1)

    def _matrix(self, X, Y):
        return np.sinc(X[:, 0][:, None] - Y[:, 0][None, :])

    def _diagonal(self, X):
        return np.ones(X.shape[0])


class GaussianKernel(Kernel):
    """alpha * exp(-|x - y|^2 / (2 length^2))."""

    kind = "gaussian"

    def __init__(self, alpha: float, length: float, dim: int = 1):
        if not 0.0 < alpha < 1.0:
            raise ContractViolation(f"gaussian kernel needs 0 < alpha < 1, got {alpha}")
        if length <= 0:
            raise ContractViolation(f"gaussian kernel needs length > 0, got {length}")
        super().__init__(dim)
        self.alpha = float(alpha)
        self.length = float(length)

    def _matrix(self, X, Y):
        d2 = np.sum((X[:, None, :] - Y[None, :, :]) ** 2, axis=-1)
        return self.alpha * np.exp(-d2 / (2 * self.length**2))

    def _diagonal(self, X):
        return np.full(X.shape[0], self.alpha)

    def spec(self):
        return {"kind": self.kind, "params": {"alpha": self.alpha, "length": self.length}}


class SpectralKernel(Kernel):
    """Finite sum  sum_i mu_i phi_i(x) conj(phi_i(y))."""

    kind = "explicit-spectral"

    def __init__(self, eigenvalues, basis, dim: int = 1, kind: str | None = None):
        basis = _as_basis(basis, dim)
        super().__init__(basis.dim)
        self.eigenvalues = np.asarray(eigenvalues, dtype=float).reshape(-1)
        if self.eigenvalues.size != basis.size:
            raise ContractViolation(
                f"{self.eigenvalues.size} eigenvalues for a basis of size {basis.size}"
            )
        self.basis = basis
        if kind is not None:
            self.kind = kind

    @property
    def rank(self) -> int:
        return int(np.count_nonzero(self.eigenvalues))

    def _matrix(self, X, Y):
        if self.basis.size == 0:
            return np.zeros((X.shape[0], Y.shape[0]))
        FX = self.basis(X)
        FY = FX if Y is X else self.basis(Y)
        return (FX * self.eigenvalues) @ FY.conj().T

    def _diagonal(self, X):
        if self.basis.size == 0:
            return np.zeros(X.shape[0])
        F = self.basis(X)
        return np.sum(np.abs(F) ** 2 * self.eigenvalues, axis=1)

    def spec(self):
        return {"kind": self.kind, "eigenvalues": self.eigenvalues.tolist(), "basis": self.basis.name}


class ThinnedKernel(Kernel):
    """K(x, y) - K(x, z) K(z, y) / K(z, z): the kernel left after removing z."""

    kind = "thinned"

    def __init__(self, parent: Kernel, z):
        super().__init__(parent.dim)
        self.parent = parent
        self.z = as_points(z, parent.dim)[:1]
        self.kzz = float(np.real(parent.matrix(self.z)[0, 0]))
        if not self.kzz > DEGENERATE_TOL:
            raise DegenerateRemovalPoint(
                f"degenerate removal point: K(z, z) = {self.kzz:.3e} <= {DEGENERATE_TOL}"
            )

    def _matrix(self, X, Y):
        kxz = self.parent.matrix(X, self.z)
        kzy = kxz.conj().T if Y is X else self.parent.matrix(self.z, Y)
        return self.parent.matrix(X, Y) - (kxz @ kzy) / self.kzz

    def _diagonal(self, X):
        kxz = self.parent.matrix(X, self.z)[:, 0]
        return self.parent._diagonal(X) - np.abs(kxz) ** 2 / self.kzz

    def spec(self):
        return {"kind": self.kind, "parent": self.parent.spec(), "z": self.z[0].tolist()}


def sine_kernel() -> SineKernel:
    return SineKernel()


def gaussian_kernel(alpha: float, length: float, dim: int = 1) -> GaussianKernel:
    return GaussianKernel(alpha, length, dim)


def zero_kernel(dim: int = 1) -> SpectralKernel:
    return SpectralKernel([], FunctionBasis([], dim), kind="zero")


def rank_one_kernel(psi, c: float = 1.0, dim: int = 1) -> SpectralKernel:
    """c * psi(x) conj(psi(y))."""
    basis = psi if isinstance(psi, Basis) else FunctionBasis([psi], dim)
    return SpectralKernel([c], basis, kind="rank-one")


def spectral_kernel(eigenvalues, basis, dim: int = 1) -> SpectralKernel:
    return SpectralKernel(eigenvalues, basis, dim)


def projection_kernel(
    basis, window: Window, resolution: int = 64, tol: float = PROJECTION_CLAMP
) -> SpectralKernel:
    """Rank-n orthogonal projection onto the span of an orthonormal basis."""
    basis = _as_basis(basis, window.dim)
    if basis.size:
        G = gram_matrix(basis, window, resolution)
        dev = float(np.max(np.abs(G - np.eye(basis.size))))
        if dev > tol:
            raise BasisNotOrthonormal(
                f"basis is not orthonormal on {window}: worst Gram deviation {dev:.3e}"
            )
    return SpectralKernel(np.ones(basis.size), basis, kind="projection")


def thin(kernel: Kernel, z) -> ThinnedKernel:
    """Kernel of the DPP conditioned on a point at z, with z removed."""
    return ThinnedKernel(kernel, z)


# ------------------------------------------------------------------- decomposition


class NystromBasis(Basis):
    """Eigenfunctions extended off the quadrature nodes by the Nystrom formula."""

    name = "nystrom"

    def __init__(self, kernel: Kernel, rule: QuadratureRule, node_values, eigenvalues):
        super().__init__(node_values.shape[1], kernel.dim)
        self.kernel = kernel
        self.rule = rule
        self._coef = (rule.weights[:, None] * node_values) / np.where(eigenvalues > 0, eigenvalues, 1.0)

    def __call__(self, X):
        X = as_points(X, self.dim)
        if self.size == 0:
            return np.zeros((X.shape[0], 0))
        return self.kernel.matrix(X, self.rule.nodes) @ self._coef


@dataclass(frozen=True, eq=False)
class SpectralDecomposition:
    """Eigenpairs of a kernel restricted to a window (Mercer expansion)."""

    window: Window
    kernel: Kernel
    eigenvalues: np.ndarray  # descending, > EIGEN_CUTOFF
    quadrature: QuadratureRule
    node_values: np.ndarray  # eigenfunctions at the nodes, (N, r)
    resolution: int
    raw_eigenvalues: np.ndarray

    @property
    def rank(self) -> int:
        return self.eigenvalues.size

    @property
    def eigenfunctions(self) -> NystromBasis:
        cached = self.__dict__.get("_basis")
        if cached is None:
            cached = NystromBasis(self.kernel, self.quadrature, self.node_values, self.eigenvalues)
            object.__setattr__(self, "_basis", cached)
        return cached

    def trace(self) -> float:
        return float(np.sum(self.eigenvalues))

    def gram(self) -> np.ndarray:
        V = self.node_values
        return (V.conj().T * self.quadrature.weights) @ V

    def reconstruct(self, X, Y=None) -> np.ndarray:
        FX = self.eigenfunctions(X)
        FY = FX if Y is None else self.eigenfunctions(Y)
        return (FX * self.eigenvalues) @ FY.conj().T

    def as_kernel(self) -> SpectralKernel:
        return SpectralKernel(self.eigenvalues, self.eigenfunctions, kind="explicit-spectral")

    def is_projection(self) -> bool:
        return bool(self.rank) and bool(np.all(self.eigenvalues == 1.0))


def decompose(
    kernel: Kernel, window: Window, resolution: int = 32, panels: int = 1
) -> SpectralDecomposition:
    """Nystrom decomposition on a tensor Gauss-Legendre grid.

    Eigenpairs of W^1/2 K W^1/2, sorted descending. Eigenvalues below 1e-12 are
    dropped and those within 1e-8 of 1 are set to exactly 1.
    """
    if window.dim != kernel.dim:
        raise ContractViolation(f"window dim {window.dim} != kernel dim {kernel.dim}")
    if resolution < 8:
        raise ContractViolation("resolution must be at least 8 nodes per axis")
    rule = tensor_rule(window, resolution, panels)
    sw = np.sqrt(rule.weights)
    K = kernel.matrix(rule.nodes)
    M = sw[:, None] * K * sw[None, :]
    M = 0.5 * (M + M.conj().T)
    lam, U = np.linalg.eigh(M)
    order = np.argsort(lam)[::-1]
    lam, U = lam[order], U[:, order]
    if lam.size and (lam[-1] < -SPECTRUM_TOL or lam[0] > 1 + SPECTRUM_TOL):
        raise KernelViolatesAs2(
            f"kernel violates As2 on {window}: spectrum spans [{lam[-1]:.6g}, {lam[0]:.6g}],"
            " outside [0, 1]"
        )
    keep = lam > EIGEN_CUTOFF
    mu = lam[keep].copy()
    mu[np.abs(mu - 1.0) <= PROJECTION_CLAMP] = 1.0
    mu = np.minimum(mu, 1.0)
    node_values = U[:, keep] / sw[:, None]
    return SpectralDecomposition(
        window=window,
        kernel=kernel,
        eigenvalues=mu,
        quadrature=rule,
        node_values=node_values,
        resolution=resolution,
        raw_eigenvalues=lam,
    )


# ---------------------------------------------------------------------- config


KERNEL_KINDS = ("sine", "gaussian", "projection-fourier", "projection-legendre", "spectral")


def kernel_from_config(cfg: dict) -> tuple[Kernel, Window]:
    """Build ``(kernel, window)`` from a JSON-style kernel specification."""
    if not isinstance(cfg, dict):
        raise ContractViolation("kernel config must be a JSON object")
    kind = cfg.get("kind")
    params = cfg.get("params", {}) or {}
    if "window" not in cfg:
        raise ContractViolation("kernel config needs a window")
    try:
        window = Window.from_dict(cfg["window"])
    except (KeyError, TypeError) as exc:
        raise ContractViolation(f"bad window in kernel config: {exc}") from exc
    if kind == "sine":
        return SineKernel(), window
    if kind == "gaussian":
        return GaussianKernel(params.get("alpha", 0.5), params.get("length", 1.0), window.dim), window
    if kind in ("projection-fourier", "projection-legendre"):
        n = int(params.get("n", 1))
        cls = FourierBasis if kind == "projection-fourier" else LegendreBasis
        return projection_kernel(cls(n, window), window), window
    if kind == "spectral":
        eig = np.asarray(params.get("eigenvalues", []), dtype=float)
        name = params.get("basis", "legendre")
        if name not in ("fourier", "legendre"):
            raise ContractViolation(f"unknown basis {name!r}")
        cls = FourierBasis if name == "fourier" else LegendreBasis
        return SpectralKernel(eig, cls(eig.size, window)), window
    raise ContractViolation(f"unknown kernel kind {kind!r}; expected one of {KERNEL_KINDS}")


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()
