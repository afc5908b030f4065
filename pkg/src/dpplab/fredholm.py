"""Traces and Fredholm determinants det(I + zK) on a window, by three routes."""

from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import ContractViolation, Window
from .kernels import Kernel, SpectralDecomposition
from .quadrature import tensor_rule

SERIES_TOL = 1e-12
SERIES_CAP = 20
PLEMELJ_TOL = 1e-17
PLEMELJ_CAP = 100_000
ROUTE_GAP_TOL = 1e-5
ENUMERATION_BUDGET = 250_000

METHODS = ("spectral", "series", "plemelj", "all")


class PlemeljPreconditionError(ContractViolation):
    pass


def trace(kernel: Kernel, window: Window, resolution: int = 64) -> float:
    """Quadrature value of the integral of K(x, x) over the window."""
    if kernel.dim != window.dim:
        raise ContractViolation(f"window dim {window.dim} != kernel dim {kernel.dim}")
    rule = tensor_rule(window, resolution)
    return float(rule.weights @ kernel.diagonal(rule.nodes))


def power_sums(eigenvalues, m_max: int) -> np.ndarray:
    """p_m = sum_i lambda_i^m for m = 1..m_max (index 0 holds the count)."""
    lam = np.asarray(eigenvalues, dtype=float)
    return np.array([float(lam.size)] + [float(np.sum(lam**m)) for m in range(1, m_max + 1)])


def elementary_symmetric(power: np.ndarray, m_max: int) -> np.ndarray:
    """e_0..e_m_max from power sums p_1..p_m_max by Newton's identities.

    e_m equals the trace of the m-th exterior power.
    """
    e = np.zeros(m_max + 1, dtype=np.result_type(power, float))
    e[0] = 1.0
    for m in range(1, m_max + 1):
        acc = 0.0
        for k in range(1, m + 1):
            acc += (-1) ** (k - 1) * e[m - k] * power[k]
        e[m] = acc / m
    return e


def exterior_traces(decomp: SpectralDecomposition, m_max: int) -> np.ndarray:
    return elementary_symmetric(power_sums(decomp.eigenvalues, m_max), m_max)


@dataclass
class DeterminantReport:
    value_spectral: float
    value_series: float | None
    value_plemelj: float | None
    series_terms_used: int
    max_pairwise_gap: float
    z: float = -1.0
    series_mode: str | None = None
    notes: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.max_pairwise_gap <= ROUTE_GAP_TOL

    @property
    def value(self) -> float:
        return self.value_spectral

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ok"] = self.ok
        return d


def spectral_route(decomp: SpectralDecomposition, z: float = -1.0) -> float:
    return float(np.prod(1.0 + z * decomp.eigenvalues))


def _series_matrix(decomp: SpectralDecomposition) -> np.ndarray:
    rule = decomp.quadrature
    sw = np.sqrt(rule.weights)
    K = decomp.kernel.matrix(rule.nodes)
    M = sw[:, None] * K * sw[None, :]
    return 0.5 * (M + M.conj().T)


def _subset_term(M: np.ndarray, m: int) -> float:
    """Sum of principal m x m minors: the quadrature value of (1/m!) int det[K]."""
    N = M.shape[0]
    total = 0.0
    chunk = []
    for S in itertools.combinations(range(N), m):
        chunk.append(S)
        if len(chunk) == 4096:
            idx = np.array(chunk)
            total += float(np.sum(np.real(np.linalg.det(M[idx[:, :, None], idx[:, None, :]]))))
            chunk = []
    if chunk:
        idx = np.array(chunk)
        total += float(np.sum(np.real(np.linalg.det(M[idx[:, :, None], idx[:, None, :]]))))
    return total


def series_route(decomp: SpectralDecomposition, z: float = -1.0) -> tuple[float, int, str]:
    """1 + sum_m z^m/m! int det[K(x_i, x_j)] on the decomposition's nodes.

    The m-fold integral is summed over the tensor quadrature. Repeated nodes
    contribute zero, so it equals the sum of principal minors of W^1/2 K W^1/2;
    those are enumerated directly (LU determinants) when the subset count is
    small, and otherwise recovered from matrix power traces.
    """
    M = _series_matrix(decomp)
    N = M.shape[0]
    cap = min(SERIES_CAP, N)
    n_subsets = sum(math.comb(N, m) for m in range(1, cap + 1))
    mode = "subsets" if n_subsets <= ENUMERATION_BUDGET else "power-traces"
    if mode == "power-traces":
        p = np.zeros(cap + 1)
        P = np.eye(N, dtype=M.dtype)
        for k in range(1, cap + 1):
            P = P @ M
            p[k] = float(np.real(np.trace(P)))
        e = elementary_symmetric(p, cap)
    value = 1.0
    used = 0
    for m in range(1, cap + 1):
        coef = _subset_term(M, m) if mode == "subsets" else e[m]
        term = z**m * coef
        value += term
        used = m
        if abs(term) < SERIES_TOL:
            break
    return float(value), used, mode


def plemelj_route(decomp: SpectralDecomposition, z: float = -1.0) -> float:
    """exp(sum_m (-1)^(m-1) z^m Tr(K^m) / m); needs Tr|zK| < 1."""
    lam = decomp.eigenvalues
    abs_trace = abs(z) * float(np.sum(np.abs(lam)))
    if abs_trace >= 1.0:
        raise PlemeljPreconditionError(
            f"Plemelj precondition violated: Tr|zK| = {abs_trace:.6g} >= 1"
        )
    if lam.size == 0 or z == 0:
        return 1.0
    zl = z * lam
    log_det = 0.0
    power = np.ones_like(zl)
    for m in range(1, PLEMELJ_CAP + 1):
        power = power * zl
        term = (-1) ** (m - 1) * float(np.sum(power)) / m
        log_det += term
        if abs(term) < PLEMELJ_TOL:
            break
    return float(np.exp(log_det))


def fredholm_det(
    decomp: SpectralDecomposition, z: float = -1.0, method: str = "all"
) -> DeterminantReport:
    """det(I + z K_window) by the requested route(s)."""
    if method not in METHODS:
        raise ContractViolation(f"unknown method {method!r}; expected one of {METHODS}")
    spectral = spectral_route(decomp, z)
    report = DeterminantReport(
        value_spectral=spectral,
        value_series=None,
        value_plemelj=None,
        series_terms_used=0,
        max_pairwise_gap=0.0,
        z=float(z),
    )
    if z == 0:
        report.value_spectral = 1.0
        if method in ("series", "all"):
            report.value_series = 1.0
        if method in ("plemelj", "all"):
            report.value_plemelj = 1.0
        return report
    if method in ("series", "all"):
        report.value_series, report.series_terms_used, report.series_mode = series_route(decomp, z)
    if method == "plemelj":
        report.value_plemelj = plemelj_route(decomp, z)
    elif method == "all":
        try:
            report.value_plemelj = plemelj_route(decomp, z)
        except PlemeljPreconditionError as exc:
            report.notes.append(str(exc))
    values = [v for v in (report.value_spectral, report.value_series, report.value_plemelj) if v is not None]
    report.max_pairwise_gap = float(max(values) - min(values))
    return report
