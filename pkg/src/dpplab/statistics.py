"""Correlation functions, Janossy densities, fidis and moment conversions."""

from __future__ import annotations

import csv
import io
import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core import (
    ContractViolation,
    NumericalContractError,
    PointConfiguration,
    Window,
    as_points,
    ensure_windows,
    factorial_power,
    partition_complement,
)
from .kernels import Kernel, SpectralDecomposition, SpectralKernel
from .quadrature import QuadratureRule, tensor_rule

log = logging.getLogger(__name__)

CLAMP_TOL = 1e-10
FIDI_TOL = 1e-10
SERIES_MAX_S = 25
INTERACTION_GAP = 1e-9


class InteractionUndefined(ContractViolation):
    pass


class SeriesNotConverging(NumericalContractError):
    pass


def correlation(kernel: Kernel, points) -> float:
    """rho_n(x_1..x_n) = det[K(x_i, x_j)]."""
    X = as_points(points, kernel.dim)
    if X.shape[0] == 0:
        raise ContractViolation("correlation needs at least one point")
    return float(np.real(np.linalg.det(kernel.matrix(X))))


def interaction_kernel(decomp: SpectralDecomposition) -> SpectralKernel:
    """Kernel of (I - K)^-1 K: eigenvalues mu / (1 - mu) on the same eigenfunctions."""
    mu = decomp.eigenvalues
    if mu.size and mu.max() >= 1.0 - INTERACTION_GAP:
        raise InteractionUndefined(
            f"interaction operator undefined for projection kernel (eigenvalue {mu.max():.12g})"
        )
    return SpectralKernel(mu / (1.0 - mu), decomp.eigenfunctions, kind="interaction")


@dataclass
class JanossyEvaluation:
    window: Window
    n: int
    points: np.ndarray
    density: float
    void_probability: float


def _check_inside(window: Window, X: np.ndarray) -> None:
    if X.shape[0] and not np.all(window.contains_closed(X)):
        raise ContractViolation("Janossy density points must lie in the decomposition window")


def _clamp(value: float, what: str) -> float:
    if value < 0.0:
        if value < -CLAMP_TOL:
            log.warning("%s is negative beyond tolerance: %.3e", what, value)
            return value
        log.debug("clamped %s %.3e to zero", what, value)
        return 0.0
    return value


def janossy_density(decomp: SpectralDecomposition, points) -> JanossyEvaluation:
    """j_n(x_1..x_n | window) = det(I - K) * det[J(x_i, x_j)]."""
    arr = np.asarray(points, dtype=float)
    d = decomp.window.dim
    X = np.empty((0, d)) if arr.size == 0 else as_points(arr, d)
    _check_inside(decomp.window, X)
    J = interaction_kernel(decomp)
    void = float(np.prod(1.0 - decomp.eigenvalues))
    if X.shape[0] == 0:
        density = void
    else:
        density = void * float(np.real(np.linalg.det(J.matrix(X))))
    return JanossyEvaluation(decomp.window, X.shape[0], X, _clamp(density, "Janossy density"), void)


def janossy_total(decomp: SpectralDecomposition, n: int, resolution: int | None = None) -> float:
    """(1/n!) times the integral of j_n over window^n, by brute-force tensor quadrature."""
    void = float(np.prod(1.0 - decomp.eigenvalues))
    if n == 0:
        return void
    J = interaction_kernel(decomp)
    rule = tensor_rule(decomp.window, resolution or decomp.resolution)
    Jm = J.matrix(rule.nodes)
    N = len(rule)
    total = 0.0
    for chunk in _tuple_chunks(N, n):
        mats = Jm[chunk[:, :, None], chunk[:, None, :]]
        w = np.prod(rule.weights[chunk], axis=1)
        total += float(np.sum(w * np.real(np.linalg.det(mats))))
    return void * total / math.factorial(n)


def _tuple_chunks(N: int, n: int, size: int = 65536):
    it = itertools.product(range(N), repeat=n)
    while True:
        block = list(itertools.islice(it, size))
        if not block:
            return
        yield np.array(block, dtype=int)


# ------------------------------------------------------------------ count laws


@dataclass
class CountDistribution:
    probabilities: np.ndarray

    @property
    def mean(self) -> float:
        return float(np.arange(self.probabilities.size) @ self.probabilities)

    @property
    def variance(self) -> float:
        n = np.arange(self.probabilities.size)
        return float(n**2 @ self.probabilities - self.mean**2)

    def __getitem__(self, n: int) -> float:
        return float(self.probabilities[n]) if 0 <= n < self.probabilities.size else 0.0


def count_distribution(decomp: SpectralDecomposition) -> CountDistribution:
    """Law of N(window): sum of independent Bernoulli(mu_i)."""
    p = np.array([1.0])
    for mu in decomp.eigenvalues:
        p = np.convolve(p, [1.0 - mu, mu])
    return CountDistribution(p)


@dataclass
class PartitionLaw:
    """Joint law of the counts in disjoint cells that cover the window.

    ``pmf[k_0, ..., k_{c-1}]`` is P[N(cell_j) = k_j for all j]. Cells 0..r-1
    are the caller's boxes, the last one is the complement C (a union of boxes).
    """

    cells: list
    pmf: np.ndarray

    def janossy(self, counts) -> float:
        """J_n(cell_0^(k_0) x ... x C^(k_c)) = prod(k_j!) * P[counts]."""
        counts = tuple(int(k) for k in counts)
        if any(k < 0 for k in counts):
            return 0.0
        if any(k >= s for k, s in zip(counts, self.pmf.shape)):
            return 0.0
        return float(np.prod([math.factorial(k) for k in counts]) * self.pmf[counts])

    def factorial_moment(self, counts) -> float:
        """E[prod_j N(cell_j)^[k_j]]."""
        grids = np.meshgrid(*[np.arange(s) for s in self.pmf.shape], indexing="ij")
        weight = np.ones_like(self.pmf)
        for g, k in zip(grids, counts):
            weight = weight * np.vectorize(factorial_power, otypes=[float])(g, int(k))
        return float(np.sum(weight * self.pmf))


def partition_law(
    decomp: SpectralDecomposition, boxes: Sequence[Window], resolution: int | None = None
) -> PartitionLaw:
    """Joint counts over the boxes and their complement, by quadrature.

    E[prod t_j^N(cell_j)] = det(I - Lambda^1/2 sum_j (1 - t_j) G_j Lambda^1/2), with
    G_j the eigenfunction Gram matrix over cell j; the pmf comes out of that
    polynomial by a discrete Fourier transform at roots of unity.
    """
    window = decomp.window
    boxes = ensure_windows(boxes)
    for b in boxes:
        if b.dim != window.dim or not b.is_subset_of(window):
            raise ContractViolation(f"box {b} is not a subset of the window {window}")
    for a, b in itertools.combinations(boxes, 2):
        if a.intersects(b):
            raise ContractViolation(f"boxes {a} and {b} overlap")
    rest = partition_complement(window, boxes)
    res = resolution or decomp.resolution
    groups = [[b] for b in boxes] + [rest]
    mu = decomp.eigenvalues
    r = mu.size
    sq = np.sqrt(mu)
    grams = []
    for cells in groups:
        G = np.zeros((r, r), dtype=complex)
        for cell in cells:
            rule = tensor_rule(cell, res)
            F = decomp.eigenfunctions(rule.nodes)
            G += (F.conj().T * rule.weights) @ F
        grams.append(sq[:, None] * G * sq[None, :])
    sizes = [r + 1] * len(groups)
    values = np.empty(sizes, dtype=complex)
    roots = [np.exp(2j * np.pi * np.arange(s) / s) for s in sizes]
    eye = np.eye(r)
    for idx in np.ndindex(*sizes):
        A = eye.astype(complex)
        for j, i in enumerate(idx):
            A -= (1.0 - roots[j][i]) * grams[j]
        values[idx] = np.linalg.det(A) if r else 1.0
    pmf = np.real(np.fft.fftn(values)) / np.prod(sizes)
    # fftn uses exp(-2 pi i ...), which picks out the positive-power coefficients
    pmf[np.abs(pmf) < 1e-15] = 0.0
    return PartitionLaw(boxes + [rest], pmf)


def fidi(decomp: SpectralDecomposition, boxes, counts, resolution: int | None = None) -> float:
    """P[N(A_1) = n_1, ..., N(A_r) = n_r], summing Janossy measures over the complement.

    mu = sum_s J_{n+s}(A_1^(n_1) x ... x C^(s)) / (n_1! ... n_r! s!), stopped once a
    term drops below 1e-10 (after the series has started contributing).
    """
    boxes = ensure_windows(boxes)
    counts = [int(c) for c in counts]
    if len(counts) != len(boxes):
        raise ContractViolation("one count per box is required")
    law = partition_law(decomp, boxes, resolution)
    denom = float(np.prod([math.factorial(n) for n in counts]))
    total = 0.0
    seen_mass = False
    for s in range(SERIES_MAX_S + 1):
        term = law.janossy(counts + [s]) / (denom * math.factorial(s))
        total += term
        if term > FIDI_TOL:
            seen_mass = True
        elif seen_mass or s >= law.pmf.shape[-1] - 1:
            break
    return total


# --------------------------------------------------------- moment <-> Janossy


def _expand_window_power(n_boxes: int, counts, s: int):
    """Split s window factors among boxes and the complement.

    Yields (cell counts, multinomial weight s!/prod s_j!) so that a symmetric
    measure on A^(counts) x window^(s) becomes a sum over disjoint cells.
    """
    cells = n_boxes + 1
    for split in _compositions(s, cells):
        weight = math.factorial(s) / np.prod([math.factorial(k) for k in split])
        full = [c + k for c, k in zip(list(counts) + [0], split)]
        yield full, float(weight)


def _compositions(total: int, parts: int):
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def janossy_measure(law: PartitionLaw, counts, s: int = 0) -> float:
    """J_{n+s}(A_1^(n_1) x ... x A_r^(n_r) x window^(s))."""
    return sum(w * law.janossy(full) for full, w in _expand_window_power(len(counts), counts, s))


def factorial_moment_measure(law: PartitionLaw, counts, s: int = 0) -> float:
    """M_[n+s](A_1^(n_1) x ... x A_r^(n_r) x window^(s))."""
    return sum(
        w * law.factorial_moment(full) for full, w in _expand_window_power(len(counts), counts, s)
    )


def _run_series(term: Callable[[int], float], what: str) -> float:
    total = 0.0
    t = 0.0
    for s in range(SERIES_MAX_S + 1):
        t = term(s)
        total += t
        if s > 0 and abs(t) < 1e-15:
            return total
    if abs(t) >= 1e-12:
        raise SeriesNotConverging(f"{what} series terms not decreasing by s = {SERIES_MAX_S}")
    return total


def moments_from_janossy(
    decomp: SpectralDecomposition,
    boxes,
    counts,
    janossy: Callable[[Sequence[int], int], float] | None = None,
    resolution: int | None = None,
) -> float:
    """M_[n](A_1^(n_1) x ...) = sum_s J_{n+s}(A^(n) x window^(s)) / s!.

    ``janossy(counts, s)`` supplies the Janossy measure values; by default they
    come from the quadrature partition law.
    """
    boxes = ensure_windows(boxes)
    if janossy is None:
        law = partition_law(decomp, boxes, resolution)
        janossy = lambda c, s: janossy_measure(law, c, s)  # noqa: E731
    return _run_series(lambda s: janossy(counts, s) / math.factorial(s), "moment")


def janossy_from_moments(
    decomp: SpectralDecomposition,
    boxes,
    counts,
    moments: Callable[[Sequence[int], int], float] | None = None,
    resolution: int | None = None,
) -> float:
    """J_n(A_1^(n_1) x ...) = sum_s (-1)^s M_[n+s](A^(n) x window^(s)) / s!.

    ``moments(counts, s)`` supplies factorial moment measures; by default they
    are expectations of factorial powers of the counts.
    """
    boxes = ensure_windows(boxes)
    if moments is None:
        law = partition_law(decomp, boxes, resolution)
        moments = lambda c, s: factorial_moment_measure(law, c, s)  # noqa: E731
    return _run_series(lambda s: (-1) ** s * moments(counts, s) / math.factorial(s), "Janossy")


def janossy_round_trip(decomp: SpectralDecomposition, boxes, counts, resolution: int | None = None):
    """(direct J_n, J_n recovered from moments that were themselves built from J).

    The moment measures M_[n+s](A^(n) x window^(s)) are assembled from Janossy
    measures with ``moments_from_janossy`` and fed back through
    ``janossy_from_moments``.
    """
    boxes = ensure_windows(boxes)
    law = partition_law(decomp, boxes, resolution)
    direct = janossy_measure(law, counts)

    def moments(c, s):
        return moments_from_janossy(
            decomp, boxes, c, janossy=lambda c2, s2: janossy_measure(law, c2, s + s2)
        )

    return direct, janossy_from_moments(decomp, boxes, counts, moments=moments)


# ------------------------------------------------------------------ empirical


@dataclass
class EmpiricalEstimate:
    boxes: list
    estimate: np.ndarray
    stderr: np.ndarray
    order: int
    analytic: np.ndarray | None = None
    n_samples: int = 0

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["box_lo", "box_hi", "estimate", "stderr", "analytic"])
        if self.order == 1:
            rows = [(b.lo, b.hi) for b in self.boxes]
            est, err = self.estimate, self.stderr
            ana = self.analytic if self.analytic is not None else [None] * len(rows)
        else:
            idx = list(itertools.product(range(len(self.boxes)), repeat=2))
            rows = [
                (np.concatenate([self.boxes[i].lo, self.boxes[j].lo]),
                 np.concatenate([self.boxes[i].hi, self.boxes[j].hi]))
                for i, j in idx
            ]
            est = [self.estimate[i, j] for i, j in idx]
            err = [self.stderr[i, j] for i, j in idx]
            ana = [self.analytic[i, j] for i, j in idx] if self.analytic is not None else [None] * len(idx)
        for (lo, hi), e, s, a in zip(rows, est, err, ana):
            w.writerow([
                " ".join(repr(float(v)) for v in lo),
                " ".join(repr(float(v)) for v in hi),
                repr(float(e)),
                repr(float(s)),
                "" if a is None else repr(float(a)),
            ])
        return buf.getvalue()


def count_matrix(samples: Sequence[PointConfiguration], boxes: Sequence[Window]) -> np.ndarray:
    """(n_samples, n_boxes) integer counts."""
    out = np.zeros((len(samples), len(boxes)), dtype=np.int64)
    for i, cfg in enumerate(samples):
        if len(cfg):
            for j, b in enumerate(boxes):
                out[i, j] = np.count_nonzero(b.contains(cfg.points))
    return out


def _pairwise_mean(x: np.ndarray) -> np.ndarray:
    """Mean over axis 0 with a pairwise (tree) reduction, independent of threading."""
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    while x.shape[0] > 1:
        if x.shape[0] % 2:
            x = np.concatenate([x, np.zeros((1,) + x.shape[1:])])
        x = x[0::2] + x[1::2]
    return x[0] / n


def empirical_correlation(
    samples: Sequence[PointConfiguration],
    boxes,
    order: int = 1,
    density: bool = True,
    min_samples: int = 100,
) -> EmpiricalEstimate:
    """Box estimates of the intensity (order 1) or 2nd factorial moment (order 2).

    Order 2 estimates E[N(A_i) N(A_j)] off the diagonal and E[N(A)(N(A) - 1)] on
    it. With ``density`` the estimates are divided by the box volumes.
    Standard errors are CLT errors over samples.
    """
    boxes = ensure_windows(boxes)
    n = len(samples)
    if n < min_samples:
        raise ContractViolation(f"need at least {min_samples} samples, got {n}")
    if order not in (1, 2):
        raise ContractViolation("order must be 1 or 2")
    C = count_matrix(samples, boxes).astype(float)
    vol = np.array([b.volume() for b in boxes]) if density else np.ones(len(boxes))
    if order == 1:
        est = _pairwise_mean(C)
        err = C.std(axis=0, ddof=1) / np.sqrt(n)
        return EmpiricalEstimate(boxes, est / vol, err / vol, 1, n_samples=n)
    prod = C[:, :, None] * C[:, None, :]
    idx = np.arange(len(boxes))
    prod[:, idx, idx] -= C
    est = _pairwise_mean(prod)
    err = prod.std(axis=0, ddof=1) / np.sqrt(n)
    scale = np.outer(vol, vol)
    return EmpiricalEstimate(boxes, est / scale, err / scale, 2, n_samples=n)


def grid_boxes(window: Window, bins: int) -> list[Window]:
    """Equal 1-D bins (or a bins^d grid) over the window."""
    edges = [np.linspace(window.lo[k], window.hi[k], bins + 1) for k in range(window.dim)]
    out = []
    for idx in np.ndindex(*([bins] * window.dim)):
        lo = [edges[k][i] for k, i in enumerate(idx)]
        hi = [edges[k][i + 1] for k, i in enumerate(idx)]
        out.append(Window(lo, hi))
    return out


def bin_average_diagonal(kernel: Kernel, boxes, resolution: int = 16) -> np.ndarray:
    """Box averages of K(x, x): the analytic intensity per box."""
    out = []
    for b in ensure_windows(boxes):
        rule = tensor_rule(b, resolution)
        out.append(float(rule.weights @ kernel.diagonal(rule.nodes)) / b.volume())
    return np.array(out)


@dataclass
class PairCorrelation:
    separation: tuple
    estimate: float
    stderr: float
    pair_count: int
    reference_area: float


def pair_correlation(
    samples: Sequence[PointConfiguration], window: Window, r_lo: float, r_hi: float
) -> PairCorrelation:
    """Ratio estimate of rho_2 / (rho_1 rho_1) for 1-D separations in [r_lo, r_hi).

    Ordered pairs of distinct points at that separation are counted per sample
    and compared with the same count for independent points at the sample
    intensity (ratio estimator, delta-method standard error).
    """
    if window.dim != 1:
        raise ContractViolation("pair_correlation is implemented for 1-D windows")
    L = float(window.lengths[0])
    # area of {(x, y) in window^2 : r_lo <= |x - y| < r_hi}
    area = 2.0 * ((L * r_hi - r_hi**2 / 2) - (L * r_lo - r_lo**2 / 2))
    pairs = np.zeros(len(samples))
    counts = np.zeros(len(samples))
    for i, cfg in enumerate(samples):
        x = cfg.points[:, 0]
        counts[i] = x.size
        if x.size > 1:
            d = np.abs(x[:, None] - x[None, :])
            pairs[i] = np.count_nonzero((d >= r_lo) & (d < r_hi)) - (
                x.size if r_lo <= 0.0 else 0
            )
    n = len(samples)
    lam = counts.mean() / L
    denom = lam**2 * area
    g = pairs.mean() / denom
    # delta method for mean(pairs) / (mean(counts)^2 * area / L^2)
    a, b = pairs.mean(), counts.mean()
    cov = np.cov(np.vstack([pairs, counts]), ddof=1) / n
    grad = np.array([1.0 / (b**2 * area / L**2), -2.0 * a / (b**3 * area / L**2)])
    err = float(np.sqrt(grad @ cov @ grad))
    return PairCorrelation((r_lo, r_hi), float(g), err, int(pairs.sum()), area)
