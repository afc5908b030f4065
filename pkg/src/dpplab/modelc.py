"""Particle layer: marked configurations, selected particles and their wavefunctions.

Wavefunctions live on a uniform periodic grid with hbar = 1. Momentum and the
free Hamiltonian act exactly in the discrete Fourier basis.
"""

from __future__ import annotations

import itertools
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import ContractViolation, PointConfiguration, Window, as_points
from .kernels import DEGENERATE_TOL, DegenerateRemovalPoint, Kernel
from .quadrature import gauss_legendre_1d

log = logging.getLogger(__name__)

BOUNDARY_AMPLITUDE = 1e-8
BOUNDARY_CELLS = 5
NORM_TOL = 1e-10
SMOOTH_TOL = 1e-10
PROBE_TOL = 1e-6
FACTOR_TOL = 1e-8


class MarkNotFound(ContractViolation):
    pass


class BoundaryViolation(ContractViolation):
    pass


class BoundaryWarning(UserWarning):
    pass


# ------------------------------------------------------------------ marking


@dataclass(frozen=True, eq=False)
class MarkedConfiguration:
    base: PointConfiguration
    marks: np.ndarray

    def __post_init__(self):
        marks = np.asarray(self.marks, dtype=np.int64).reshape(-1)
        n = len(self.base)
        if marks.size != n or not np.array_equal(np.sort(marks), np.arange(1, n + 1)):
            raise ContractViolation("marks must be a permutation of 1..n")
        marks.setflags(write=False)
        object.__setattr__(self, "marks", marks)

    def __len__(self):
        return len(self.base)

    def ground(self) -> PointConfiguration:
        """The configuration with marks forgotten."""
        return self.base

    def position(self, mark: int) -> np.ndarray:
        idx = np.flatnonzero(self.marks == mark)
        if idx.size == 0:
            raise MarkNotFound(f"mark {mark} not present (marks are 1..{len(self)})")
        return self.base.points[idx[0]].copy()

    def component(self, mark: int) -> PointConfiguration:
        """Single-point configuration carrying the given mark."""
        return PointConfiguration(self.position(mark)[None, :], dim=self.base.dim)

    def count(self, box: Window, marks=None) -> int:
        """Number of points in box whose mark lies in ``marks`` (all marks if None)."""
        inside = box.contains(self.base.points)
        if marks is not None:
            inside &= np.isin(self.marks, list(marks))
        return int(np.count_nonzero(inside))


def mark_by_distance(config: PointConfiguration, origin) -> MarkedConfiguration:
    """Label points 1..n by increasing distance from origin, ties broken by coordinates."""
    if not config.simple():
        raise ContractViolation("mark_by_distance needs a simple configuration")
    pts = config.points
    origin = as_points(origin, config.dim)[0]
    dist = np.linalg.norm(pts - origin, axis=1)
    keys = [pts[:, k] for k in range(config.dim - 1, -1, -1)] + [dist]
    order = np.lexsort(keys)
    marks = np.empty(len(config), dtype=np.int64)
    marks[order] = np.arange(1, len(config) + 1)
    return MarkedConfiguration(config, marks)


@dataclass(frozen=True)
class ParticleRecord:
    time: float
    mark: int
    position: np.ndarray
    window: Window | None = None

    def process(self) -> PointConfiguration:
        """The single-point process of the selected particle."""
        return PointConfiguration(np.asarray(self.position)[None, :])


def select_particle(marked: MarkedConfiguration, I: int, t: float, window: Window | None = None) -> ParticleRecord:
    return ParticleRecord(float(t), int(I), marked.position(I), window)


# ------------------------------------------------------------------ wavefunctions


@dataclass(frozen=True, eq=False)
class WaveFunction:
    """Complex amplitudes on the periodic grid lo + j h, j = 0..N-1, per axis."""

    window: Window
    amplitudes: np.ndarray
    mass: float = 1.0

    def __post_init__(self):
        psi = np.asarray(self.amplitudes, dtype=complex)
        if psi.ndim != self.window.dim or self.window.dim not in (1, 2, 3):
            raise ContractViolation("amplitude array rank must match the window dimension (1 to 3)")
        if not self.mass > 0:
            raise ContractViolation("mass must be positive")
        psi.setflags(write=False)
        object.__setattr__(self, "amplitudes", psi)

    @property
    def dim(self) -> int:
        return self.window.dim

    @property
    def shape(self) -> tuple:
        return self.amplitudes.shape

    @property
    def spacing(self) -> np.ndarray:
        return self.window.lengths / np.array(self.shape)

    @property
    def cell(self) -> float:
        return float(np.prod(self.spacing))

    def axes(self) -> list[np.ndarray]:
        return [lo + h * np.arange(n) for lo, h, n in zip(self.window.lo, self.spacing, self.shape)]

    def coordinates(self) -> list[np.ndarray]:
        return np.meshgrid(*self.axes(), indexing="ij")

    def wavenumbers(self) -> list[np.ndarray]:
        ks = [2 * np.pi * np.fft.fftfreq(n, d=h) for n, h in zip(self.shape, self.spacing)]
        return np.meshgrid(*ks, indexing="ij")

    def density(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def norm(self) -> float:
        return float(np.sqrt(self.cell * np.sum(self.density())))

    def normalized(self) -> "WaveFunction":
        nrm = self.norm()
        if not nrm > 0:
            raise ContractViolation("cannot normalize a zero wavefunction")
        return self.with_amplitudes(self.amplitudes / nrm)

    def with_amplitudes(self, psi) -> "WaveFunction":
        return WaveFunction(self.window, psi, self.mass)

    def boundary_amplitude(self) -> float:
        """Largest amplitude within BOUNDARY_CELLS nodes of any window face."""
        a = np.abs(self.amplitudes)
        worst = 0.0
        for axis, n in enumerate(self.shape):
            b = min(BOUNDARY_CELLS, n)
            lo = np.take(a, np.arange(b), axis=axis)
            hi = np.take(a, np.arange(n - b, n), axis=axis)
            worst = max(worst, float(lo.max()), float(hi.max()))
        return worst

    def admissible(self) -> bool:
        return self.boundary_amplitude() < BOUNDARY_AMPLITUDE

    def spectrum(self) -> np.ndarray:
        """Continuous Fourier transform samples (2 pi)^(-d/2) int psi e^{-ikx} dx at the grid wavenumbers."""
        phase = np.ones(self.shape, dtype=complex)
        for k, lo in zip(self.wavenumbers(), self.window.lo):
            phase = phase * np.exp(-1j * k * lo)
        return self.cell * (2 * np.pi) ** (-self.dim / 2) * phase * np.fft.fftn(self.amplitudes)

    def to_dict(self) -> dict:
        return {"window": self.window.to_dict(), "grid": list(self.shape), "mass": self.mass}


def wavefunction_on_grid(func, window: Window, n: int, mass: float = 1.0) -> WaveFunction:
    """Sample func (taking one coordinate array per axis) on an n^d periodic grid."""
    shape = (n,) * window.dim
    proto = WaveFunction(window, np.zeros(shape, dtype=complex), mass)
    return proto.with_amplitudes(func(*proto.coordinates()))


def gaussian_packet(window: Window, n: int, center=0.0, sigma=1.0, k=0.0, mass: float = 1.0) -> WaveFunction:
    """Normalized Gaussian with position standard deviation sigma and mean wavenumber k."""
    d = window.dim
    center = np.broadcast_to(np.asarray(center, dtype=float), (d,))
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), (d,))
    k = np.broadcast_to(np.asarray(k, dtype=float), (d,))

    def f(*xs):
        out = np.ones(xs[0].shape, dtype=complex)
        for x, c, s, kk in zip(xs, center, sigma, k):
            out = out * (2 * np.pi * s**2) ** -0.25 * np.exp(-((x - c) ** 2) / (4 * s**2) + 1j * kk * x)
        return out

    return wavefunction_on_grid(f, window, n, mass).normalized()


def conditional_wavefunction(raw: WaveFunction, weight: float) -> WaveFunction:
    """raw / sqrt(weight), renormalized on the grid."""
    if not weight > 0:
        raise ContractViolation(f"conditioning weight must be positive, got {weight}")
    psi = raw.with_amplitudes(raw.amplitudes / np.sqrt(weight))
    return psi.normalized()


def _boundary_check(psi: WaveFunction) -> list[str]:
    b = psi.boundary_amplitude()
    if b < BOUNDARY_AMPLITUDE:
        return []
    msg = f"amplitude {b:.2e} within {BOUNDARY_CELLS}h of the boundary exceeds {BOUNDARY_AMPLITUDE}"
    warnings.warn(msg, BoundaryWarning, stacklevel=3)
    return [msg]


@dataclass
class Expectation:
    value: np.ndarray
    warnings: list = field(default_factory=list)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.value, dtype=dtype)

    def __getitem__(self, i):
        return self.value[i]

    def __float__(self):
        return float(self.value[0])


def position_expectation(psi: WaveFunction) -> Expectation:
    notes = _boundary_check(psi)
    rho = psi.density()
    vals = [psi.cell * np.sum(x * rho) for x in psi.coordinates()]
    return Expectation(np.array(vals, dtype=float), notes)


def _derivative(psi: WaveFunction, axis: int, amplitudes=None) -> np.ndarray:
    """Spectral d/dx_axis with the Nyquist mode zeroed."""
    a = psi.amplitudes if amplitudes is None else amplitudes
    n = psi.shape[axis]
    k = 2 * np.pi * np.fft.fftfreq(n, d=psi.spacing[axis])
    if n % 2 == 0:
        k[n // 2] = 0.0
    shape = [1] * psi.dim
    shape[axis] = n
    return np.fft.ifft(1j * k.reshape(shape) * np.fft.fft(a, axis=axis), axis=axis)


def momentum_apply(psi: WaveFunction, axis: int = 0, amplitudes=None) -> np.ndarray:
    """(-i d/dx) applied spectrally."""
    return -1j * _derivative(psi, axis, amplitudes)


def momentum_expectation(psi: WaveFunction) -> Expectation:
    notes = _boundary_check(psi)
    vals = []
    for axis in range(psi.dim):
        v = psi.cell * np.sum(np.conj(psi.amplitudes) * momentum_apply(psi, axis))
        vals.append(v)
    vals = np.array(vals)
    if np.max(np.abs(vals.imag)) > 1e-10:
        notes.append(f"momentum expectation has imaginary part {np.max(np.abs(vals.imag)):.2e}")
    return Expectation(vals.real.astype(float), notes)


def width(psi: WaveFunction) -> np.ndarray:
    """Position standard deviation per axis."""
    rho = psi.density()
    out = []
    for x in psi.coordinates():
        m = psi.cell * np.sum(x * rho)
        out.append(np.sqrt(psi.cell * np.sum((x - m) ** 2 * rho)))
    return np.array(out)


def _evolve(psi: WaveFunction, t: float) -> WaveFunction:
    k2 = sum(k**2 for k in psi.wavenumbers())
    phase = np.exp(-1j * t * k2 / (2 * psi.mass))
    return psi.with_amplitudes(np.fft.ifftn(phase * np.fft.fftn(psi.amplitudes)))


def free_propagate(psi: WaveFunction, t: float) -> WaveFunction:
    """exp(-i t P^2 / 2m) psi, exact in the discrete Fourier basis."""
    if t == 0:
        return psi
    out = _evolve(psi, t)
    if out.admissible():
        return out
    # bisect for the largest safe time on the way to t
    lo, hi = 0.0, abs(t)
    sign = np.sign(t)
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if _evolve(psi, sign * mid).admissible():
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-6 * max(1.0, abs(t)):
            break
    raise BoundaryViolation(
        f"packet reaches the boundary before t={t}; earliest safe t is {sign * lo:.6g}"
    )


def ehrenfest_series(psi: WaveFunction, times) -> dict:
    """Position, momentum, width and norm along free evolution."""
    times = np.asarray(times, dtype=float)
    rows = {"t": times, "mean_x": [], "mean_p": [], "width": [], "norm": []}
    for t in times:
        pt = free_propagate(psi, t)
        rows["mean_x"].append(position_expectation(pt).value[0])
        rows["mean_p"].append(momentum_expectation(pt).value[0])
        rows["width"].append(width(pt)[0])
        rows["norm"].append(pt.norm())
    rows = {k: np.asarray(v, dtype=float) for k, v in rows.items()}
    slope, intercept = np.polyfit(times, rows["mean_x"], 1)
    fit = slope * times + intercept
    rows["slope"] = float(slope)
    rows["linear_residual"] = float(np.max(np.abs(rows["mean_x"] - fit)))
    rows["expected_slope"] = float(rows["mean_p"][0] / psi.mass)
    return rows


@dataclass
class VelocityReport:
    dts: np.ndarray
    velocities: np.ndarray
    limit: float
    deviations: np.ndarray
    order: float | None
    exact: bool

    def to_dict(self) -> dict:
        return {
            "dts": self.dts.tolist(),
            "velocities": self.velocities.tolist(),
            "limit": self.limit,
            "deviations": self.deviations.tolist(),
            "order": self.order,
            "exact": self.exact,
        }


def velocity_limit_check(psi: WaveFunction, dts, axis: int = 0) -> VelocityReport:
    """Finite-difference mean velocity against <P>/m for decreasing time steps."""
    dts = np.asarray(dts, dtype=float)
    if np.any(dts <= 0) or np.any(np.diff(dts) >= 0):
        raise ContractViolation("dts must be positive and strictly decreasing")
    x0 = position_expectation(psi).value[axis]
    limit = float(momentum_expectation(psi).value[axis] / psi.mass)
    v = np.array([(position_expectation(free_propagate(psi, dt)).value[axis] - x0) / dt for dt in dts])
    dev = np.abs(v - limit)
    # free evolution makes <X> exactly affine; only roundoff remains
    exact = bool(np.max(dev) < 1e-9)
    order = None
    if not exact and dts.size > 1:
        order = float(np.polyfit(np.log(dts), np.log(dev + 1e-300), 1)[0])
    return VelocityReport(dts, v, limit, dev, order, exact)


@dataclass
class CommutatorReport:
    residual: float
    per_axis: list
    cross_residual: float
    smooth: bool
    tail_coefficient: float
    grid: tuple

    def to_dict(self) -> dict:
        return dict(self.__dict__, grid=list(self.grid))


def spectral_tail(psi: WaveFunction) -> float:
    """Largest relative Fourier coefficient beyond 3/4 of the Nyquist index."""
    c = np.abs(np.fft.fftn(psi.amplitudes))
    c = c / c.max()
    mask = np.zeros(psi.shape, dtype=bool)
    for axis, n in enumerate(psi.shape):
        idx = np.abs(np.fft.fftfreq(n) * n)
        shape = [1] * psi.dim
        shape[axis] = n
        mask |= (idx >= 0.75 * (n // 2)).reshape(shape)
    return float(c[mask].max()) if mask.any() else 0.0


def commutator_check(psi: WaveFunction) -> CommutatorReport:
    """Relative residual of [X, P] psi - i psi, and the cross-axis [X^i, X^j] psi."""
    a = psi.amplitudes
    nrm = np.sqrt(np.sum(np.abs(a) ** 2))
    coords = psi.coordinates()
    per_axis = []
    for axis, x in enumerate(coords):
        xp = x * momentum_apply(psi, axis)
        px = momentum_apply(psi, axis, x * a)
        r = xp - px - 1j * a
        per_axis.append(float(np.sqrt(np.sum(np.abs(r) ** 2)) / nrm))
    # position components act by pointwise multiplication, which commutes exactly
    cross = 0.0
    for i, j in itertools.combinations_with_replacement(range(psi.dim), 2):
        r = (coords[i] * coords[j]) * a - (coords[j] * coords[i]) * a
        cross = max(cross, float(np.max(np.abs(r))))
    tail = spectral_tail(psi)
    return CommutatorReport(max(per_axis), per_axis, cross, tail < SMOOTH_TOL, tail, psi.shape)


def entropy_sum(psi: WaveFunction) -> tuple[float, float, float]:
    """Plug-in differential entropies of |psi(x)|^2 and |psi_hat(k)|^2 and their sum."""
    p = psi.density()
    hx = -psi.cell * np.sum(p[p > 0] * np.log(p[p > 0]))
    q = np.abs(psi.spectrum()) ** 2
    dk = float(np.prod(2 * np.pi / psi.window.lengths))
    hp = -dk * np.sum(q[q > 0] * np.log(q[q > 0]))
    return float(hx), float(hp), float(hx + hp)


# ------------------------------------------------------------------ two particles


@dataclass
class TwoParticleReport:
    zA: float
    zB: float
    mu_A: float
    mu_B: float
    mu_AB: float
    factorization_gap: float
    factorizes: bool
    determinantal_violation: float
    case: str
    probe_points: list

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _conditional_b(kernel: Kernel, xs, ys, zB) -> np.ndarray:
    """|T_x(y, zB)|^2 / T_x(zB, zB) with T_x the kernel thinned at x; rows with degenerate x are zero."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    z = np.array([zB], dtype=float)
    kxx = np.real(kernel.diagonal(xs))
    kxz = kernel.matrix(xs, z)[:, 0]
    kyz = kernel.matrix(ys, z)[:, 0]
    kyx = kernel.matrix(ys, xs)
    kzz = float(np.real(kernel.matrix(z)[0, 0]))
    ok = kxx > DEGENERATE_TOL
    safe = np.where(ok, kxx, 1.0)
    t_yz = kyz[None, :] - (kyx.T * (kxz / safe)[:, None])
    t_zz = kzz - np.abs(kxz) ** 2 / safe
    ok &= t_zz > DEGENERATE_TOL
    out = np.abs(t_yz) ** 2 / np.where(ok, t_zz, 1.0)[:, None]
    out[~ok] = 0.0
    return out


def two_particle_joint(
    kernel: Kernel, zA: float, zB: float, window: Window, order: int = 48, panels: int = 8, probes: int = 10
) -> TwoParticleReport:
    """Joint density of two sequentially selected particles and a determinantality probe.

    Particle A has density |K(x, zA)|^2 / K(zA, zA). Given A at x, particle B has
    the rank-one density at zB of the kernel thinned at x. The symmetrized pair
    density of a determinantal process satisfies rho1(x) rho1(y) - rho2(x, y) = |k(x, y)|^2,
    so the matrix [rho1 rho1 - rho2] over any probe set must be entrywise
    non-negative and positive semidefinite; a violation rules out a DPP.
    """
    if kernel.dim != 1 or window.dim != 1:
        raise ContractViolation("two_particle_joint works on 1-D windows")
    zA, zB = float(zA), float(zB)
    if zA == zB:
        raise ContractViolation("zA and zB must differ")
    kAA = float(np.real(kernel.matrix(np.array([zA]))[0, 0]))
    if not kAA > DEGENERATE_TOL:
        raise DegenerateRemovalPoint(f"degenerate diagonal at zA: {kAA:.3e}")
    thinned_bb = _conditional_b(kernel, [zA], [zB], zB)[0, 0]
    if not thinned_bb > DEGENERATE_TOL:
        raise DegenerateRemovalPoint(f"degenerate thinned diagonal at zB: {thinned_bb:.3e}")

    x, w = gauss_legendre_1d(window.lo[0], window.hi[0], order, panels)
    a_raw = np.abs(kernel.matrix(x, np.array([zA]))[:, 0]) ** 2 / kAA
    mu_A = float(w @ a_raw)
    cond = _conditional_b(kernel, x, x, zB)
    z_x = cond @ w
    mu_B = float(_conditional_b(kernel, [zA], x, zB)[0] @ w)
    mu_AB = float(w @ (a_raw * z_x))

    def rho_a(pts):
        return np.abs(kernel.matrix(pts, np.array([zA]))[:, 0]) ** 2 / kAA / mu_A

    def p_b(xs, ys):
        c = _conditional_b(kernel, xs, ys, zB)
        norm = _conditional_b(kernel, xs, x, zB) @ w
        return np.where(norm[:, None] > 0, c / np.where(norm > 0, norm, 1.0)[:, None], 0.0)

    def rho_joint(xs, ys):
        return rho_a(xs)[:, None] * p_b(xs, ys)

    def rho_b(ys):
        return w @ rho_joint(x, ys)

    joint_nodes = rho_joint(x, x)
    product = np.outer(rho_a(x), rho_b(x))
    gap = float(np.max(np.abs(joint_nodes - product)) / max(np.max(joint_nodes), 1e-300))

    a, b = window.lo[0], window.hi[0]
    pts = a + (b - a) * (np.arange(probes) + 0.5) / probes
    pts = pts + 0.37 * (b - a) / probes * np.sin(np.arange(probes))
    j = rho_joint(pts, pts)
    rho2 = j + j.T
    rho1 = rho_a(pts) + rho_b(pts)
    G = np.outer(rho1, rho1) - rho2
    np.fill_diagonal(G, rho1**2)
    scale = max(np.max(np.abs(G)), 1e-300)
    violation = 0.0
    for sub in itertools.combinations(range(probes), 4):
        g = G[np.ix_(sub, sub)] / scale
        violation = max(violation, -float(np.linalg.eigvalsh(g).min()), -float(g.min()))

    factorizes = gap < FACTOR_TOL
    if factorizes:
        case = "a"
    elif violation > PROBE_TOL:
        case = "b"
    else:
        case = "undetermined"
    log.debug("two-particle probe: gap %.3e violation %.3e", gap, violation)
    return TwoParticleReport(zA, zB, mu_A, mu_B, mu_AB, gap, factorizes, violation, case, pts.tolist())
