"""Non-colliding Dyson-type diffusion whose stationary law is determinantal.

Particles on the line follow

    dx_i = [-theta x_i + sum_{j != i} 1 / (x_i - x_j)] dt + dW_i,

whose invariant density is proportional to prod |x_i - x_j|^2 exp(-theta sum x_i^2):
the eigenvalue law of a GUE matrix with weight exp(-theta tr H^2).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special, stats

from .core import ContractViolation, NumericalContractError, RandomStream
from .kernels import SpectralDecomposition

MAX_HALVINGS = 20
BETA = 2.0


class CollisionUnresolved(NumericalContractError):
    pass


@dataclass(frozen=True, eq=False)
class DiffusionState:
    time: float
    positions: np.ndarray
    theta: float = 0.0
    beta: float = BETA

    def __post_init__(self):
        x = np.sort(np.asarray(self.positions, dtype=float).reshape(-1))
        if x.size > 1 and np.any(np.diff(x) <= 0):
            raise ContractViolation("particle positions must be distinct")
        if self.theta < 0:
            raise ContractViolation("confinement strength theta must be >= 0")
        if self.beta != BETA:
            raise ContractViolation("only beta = 2 is supported")
        x.setflags(write=False)
        object.__setattr__(self, "positions", x)

    @property
    def n(self) -> int:
        return self.positions.size

    def ordered(self) -> bool:
        return bool(np.all(np.diff(self.positions) > 0))


def drift(x: np.ndarray, theta: float) -> np.ndarray:
    if x.size == 1:
        return -theta * x
    diff = np.subtract.outer(x, x)
    diff.flat[:: x.size + 1] = np.inf
    return np.sum(1.0 / diff, axis=1) - theta * x


class _Noise:
    """Standard normal increments drawn in blocks from one stream, consumed in order."""

    def __init__(self, stream: RandomStream, n: int, block: int = 4096):
        self.stream = stream
        self.n = n
        self.block = block
        self.buf = np.empty((0, n))
        self.i = 0

    def next(self) -> np.ndarray:
        if self.i == self.buf.shape[0]:
            self.buf = self.stream.standard_normal((self.block, self.n))
            self.i = 0
        self.i += 1
        return self.buf[self.i - 1]


def _advance(x: np.ndarray, dt: float, theta: float, noise: _Noise) -> tuple[np.ndarray, int]:
    """Cover a time span dt with Euler-Maruyama sub-steps, halving on crossings."""
    y = x + drift(x, theta) * dt + np.sqrt(dt) * noise.next()
    if x.size == 1 or (y[1:] > y[:-1]).all():
        return y, 0
    remaining = dt
    h = 0.5 * dt
    halvings = 1
    while remaining > 0:
        if halvings > MAX_HALVINGS:
            gap = float(np.min(np.diff(x)))
            raise CollisionUnresolved(
                f"collision unresolved after {MAX_HALVINGS} halvings; smallest gap {gap:.3e}"
            )
        h = min(h, remaining)
        y = x + drift(x, theta) * h + np.sqrt(h) * noise.next()
        if not (y[1:] > y[:-1]).all():
            halvings += 1
            h *= 0.5
            continue
        x = y
        remaining -= h
        if remaining < 1e-15 * dt:
            break
    return x, halvings


def step(state: DiffusionState, dt: float, stream: RandomStream) -> DiffusionState:
    """Advance the state by dt; ordering is preserved by adaptive step halving."""
    if dt <= 0:
        raise ContractViolation("dt must be positive")
    x, _ = _advance(state.positions, dt, state.theta, _Noise(stream, state.n, block=1))
    return DiffusionState(state.time + dt, x, state.theta)


@dataclass
class Trajectory:
    times: np.ndarray
    positions: np.ndarray  # (n_states, n_particles)
    theta: float
    halvings: int = 0

    def __len__(self):
        return self.times.size

    def __getitem__(self, i) -> DiffusionState:
        return DiffusionState(float(self.times[i]), self.positions[i], self.theta)

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def ordering_violations(self) -> int:
        if self.positions.shape[1] < 2:
            return 0
        return int(np.count_nonzero(np.any(np.diff(self.positions, axis=1) <= 0, axis=1)))

    def tail(self, burn_in: int = 0, stride: int = 1) -> "Trajectory":
        return Trajectory(self.times[burn_in::stride], self.positions[burn_in::stride], self.theta, self.halvings)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        n = self.positions.shape[1]
        w.writerow(["time"] + [f"x{i + 1}" for i in range(n)])
        for t, row in zip(self.times, self.positions):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in row])
        return buf.getvalue()


def run(
    initial: DiffusionState, T: float, dt: float, stream: RandomStream, record_every: int = 1
) -> Trajectory:
    """States at every ``record_every``-th macro step of length dt over [0, T]."""
    if T < 0:
        raise ContractViolation("T must be >= 0")
    if dt <= 0:
        raise ContractViolation("dt must be positive")
    n_steps = int(round(T / dt))
    x = initial.positions.copy()
    times = [initial.time]
    rows = [x.copy()]
    halvings = 0
    noise = _Noise(stream, x.size)
    for k in range(1, n_steps + 1):
        x, h = _advance(x, dt, initial.theta, noise)
        halvings += h
        if k % record_every == 0:
            times.append(initial.time + k * dt)
            rows.append(x.copy())
    return Trajectory(np.array(times), np.array(rows), initial.theta, halvings)


def displacement_exponent(
    initial: DiffusionState, dts, n_steps: int, stream: RandomStream
) -> dict:
    """Fit log(displacement) against log(dt) for median and max single-step moves."""
    dts = np.asarray(dts, dtype=float)
    med, mx = [], []
    for dt, child in zip(dts, stream.split(dts.size)):
        traj = run(initial, n_steps * dt, dt, child)
        disp = np.abs(np.diff(traj.positions, axis=0)).ravel()
        med.append(np.median(disp))
        mx.append(np.max(disp))
    slope_med = float(np.polyfit(np.log(dts), np.log(med), 1)[0])
    slope_max = float(np.polyfit(np.log(dts), np.log(mx), 1)[0])
    return {
        "dts": dts.tolist(),
        "median_displacement": [float(v) for v in med],
        "max_displacement": [float(v) for v in mx],
        "median_exponent": slope_med,
        "max_exponent": slope_max,
    }


# ------------------------------------------------------------------ references


def gue_eigenvalues(n: int, theta: float, stream: RandomStream) -> np.ndarray:
    """Eigenvalues of a GUE matrix with density proportional to exp(-theta tr H^2)."""
    if theta <= 0:
        raise ContractViolation("GUE reference needs theta > 0")
    g = stream.generator
    diag = g.normal(0.0, np.sqrt(1.0 / (2 * theta)), n)
    off = g.normal(0.0, np.sqrt(1.0 / (4 * theta)), (n, n)) + 1j * g.normal(
        0.0, np.sqrt(1.0 / (4 * theta)), (n, n)
    )
    H = np.triu(off, 1)
    H = H + H.conj().T + np.diag(diag)
    return np.linalg.eigvalsh(H)


def hermite_functions(u: np.ndarray, n: int) -> np.ndarray:
    """Orthonormal Hermite functions h_0..h_{n-1} at u, shape (len(u), n)."""
    u = np.asarray(u, dtype=float)
    out = np.empty((u.size, n))
    out[:, 0] = np.pi**-0.25 * np.exp(-(u**2) / 2)
    if n > 1:
        out[:, 1] = np.sqrt(2.0) * u * out[:, 0]
    for k in range(2, n):
        out[:, k] = np.sqrt(2.0 / k) * u * out[:, k - 1] - np.sqrt((k - 1) / k) * out[:, k - 2]
    return out


def wigner_surmise_pdf(s):
    s = np.asarray(s, dtype=float)
    return 32.0 / np.pi**2 * s**2 * np.exp(-4.0 * s**2 / np.pi)


def wigner_surmise_cdf(s):
    s = np.asarray(s, dtype=float)
    a = 4.0 / np.pi
    return special.erf(np.sqrt(a) * s) - 2.0 * np.sqrt(a / np.pi) * s * np.exp(-a * s**2)


class _TabulatedReference:
    """One-point density tabulated on a grid with its counting function."""

    name = "reference"

    def __init__(self, grid: np.ndarray, density: np.ndarray):
        self.grid = grid
        self.rho = density
        self.counting = integrate.cumulative_trapezoid(density, grid, initial=0.0)
        self.n_mean = float(self.counting[-1])

    def density(self, x):
        return np.interp(x, self.grid, self.rho, left=0.0, right=0.0)

    def unfold(self, x):
        """Expected number of particles below x."""
        return np.interp(x, self.grid, self.counting)

    def cdf(self, x):
        return self.unfold(x) / self.n_mean

    def variance(self) -> float:
        p = self.rho / self.n_mean
        m = integrate.trapezoid(self.grid * p, self.grid)
        return float(integrate.trapezoid((self.grid - m) ** 2 * p, self.grid))


class GUEReference(_TabulatedReference):
    """Finite-n GUE one-point density (Hermite kernel diagonal)."""

    name = "gue"

    def __init__(self, n: int, theta: float, points: int = 40001):
        if theta <= 0:
            raise ContractViolation("GUE reference needs theta > 0")
        self.n = n
        self.theta = theta
        half = (np.sqrt(2 * n + 1) + 10.0) / np.sqrt(theta)
        grid = np.linspace(-half, half, points)
        h = hermite_functions(np.sqrt(theta) * grid, n)
        super().__init__(grid, np.sqrt(theta) * np.sum(h**2, axis=1))


class KernelReference(_TabulatedReference):
    """One-point density K(x, x) of a decomposition's window."""

    name = "kernel"

    def __init__(self, decomp: SpectralDecomposition, points: int = 8001):
        if decomp.window.dim != 1:
            raise ContractViolation("kernel reference needs a 1-D window")
        grid = np.linspace(decomp.window.lo[0], decomp.window.hi[0], points)
        super().__init__(grid, decomp.kernel.diagonal(grid))


@dataclass
class StationarityReport:
    n_states: int
    n_particles: int
    reference: str | None
    stationary_reference: bool
    density_sup: float | None = None
    position_ks: float | None = None
    spacing_ks: float | None = None
    mean_spacing: float | None = None
    variance: float | None = None
    reference_variance: float | None = None
    ordering_violations: int = 0
    flags: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def stationarity_report(
    trajectory: Trajectory,
    reference=None,
    burn_in: int = 0,
    stride: int = 1,
    bins: int = 60,
    min_states: int = 1000,
) -> StationarityReport:
    """Compare the trajectory tail with a stationary determinantal ensemble.

    ``reference`` is a ``GUEReference``, a ``SpectralDecomposition`` (its
    kernel diagonal is the one-point density) or None for a free diffusion.
    """
    tail = trajectory.tail(burn_in, stride)
    if len(tail) < min_states:
        raise ContractViolation(f"need at least {min_states} states past burn-in, got {len(tail)}")
    pos = tail.positions
    n = pos.shape[1]
    report = StationarityReport(
        n_states=len(tail),
        n_particles=n,
        reference=None,
        stationary_reference=reference is not None,
        variance=float(np.var(pos)),
        ordering_violations=tail.ordering_violations(),
    )
    if reference is None:
        report.flags.append("non-stationary reference")
        return report
    if isinstance(reference, SpectralDecomposition):
        reference = KernelReference(reference)
    report.reference = reference.name
    report.reference_variance = reference.variance()
    flat = pos.ravel()
    report.position_ks = float(stats.kstest(flat, reference.cdf).statistic)
    hist, edges = np.histogram(flat, bins=bins, range=(flat.min(), flat.max()))
    width = np.diff(edges)
    emp = hist / (width * len(tail))
    mid = 0.5 * (edges[1:] + edges[:-1])
    report.density_sup = float(np.max(np.abs(emp - reference.density(mid))))
    if n > 1:
        unfolded = reference.unfold(pos)
        spacings = np.diff(unfolded, axis=1).ravel()
        report.mean_spacing = float(spacings.mean())
        report.spacing_ks = float(stats.kstest(spacings, wigner_surmise_cdf).statistic)
    return report


def semicircle_wasserstein(positions, n: int, theta: float, quantiles: int = 20000) -> float:
    """W1 distance between pooled positions and the semicircle on [-R, R], R = sqrt(2n/theta)."""
    if theta <= 0:
        raise ContractViolation("semicircle reference needs theta > 0")
    R = np.sqrt(2 * n / theta)
    # semicircle quantiles by inverting its CDF on a fine grid
    u = np.linspace(-1, 1, 20001)
    F = 0.5 + (u * np.sqrt(1 - u**2) + np.arcsin(u)) / np.pi
    q = (np.arange(quantiles) + 0.5) / quantiles
    ref = R * np.interp(q, F, u)
    return float(stats.wasserstein_distance(np.ravel(positions), ref))
