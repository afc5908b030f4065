"""Exact spectral sampling of window-restricted DPPs."""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.linalg import null_space

from .core import NumericalContractError, PointConfiguration, RandomStream, Window
from .kernels import SpectralDecomposition, decompose, thin
from .statistics import count_distribution

log = logging.getLogger(__name__)

ENVELOPE_SAFETY = 1.1
MAX_PROPOSALS = 1_000_000
PROPOSAL_BATCH = 64
COUNT_LAW_ALPHA = 1e-3


class SamplerStuck(NumericalContractError):
    pass


def thread_budget(default: int = 1) -> int:
    """Worker cap from DPPLAB_THREADS."""
    try:
        return max(1, int(os.environ.get("DPPLAB_THREADS", default)))
    except ValueError:
        return default


def _envelope_grid(decomp: SpectralDecomposition) -> np.ndarray:
    """Eigenfunction values on a dense grid used to bound the sampling density."""
    cached = decomp.__dict__.get("_envelope_values")
    if cached is not None:
        return cached
    w = decomp.window
    per_axis = {1: 2048, 2: 96, 3: 24}.get(w.dim, 16)
    axes = [np.linspace(w.lo[k], w.hi[k], per_axis) for k in range(w.dim)]
    grid = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
    grid = np.concatenate([grid, decomp.quadrature.nodes])
    values = decomp.eigenfunctions(grid)
    object.__setattr__(decomp, "_envelope_values", values)
    return values


@dataclass
class _Draw:
    config: PointConfiguration
    proposals: int
    envelope_misses: int = 0


def _draw(decomp: SpectralDecomposition, stream: RandomStream) -> _Draw:
    window = decomp.window
    d = window.dim
    mu = decomp.eigenvalues
    selected = np.flatnonzero(stream.random(mu.size) < mu)
    k = selected.size
    if k == 0:
        return _Draw(PointConfiguration.empty(d), 0)
    grid_vals = _envelope_grid(decomp)[:, selected]
    basis = decomp.eigenfunctions
    C = np.eye(k, dtype=grid_vals.dtype if np.iscomplexobj(grid_vals) else float)
    points = np.empty((k, d))
    proposals = 0
    misses = 0
    for step in range(k):
        remaining = k - step
        B = grid_vals @ C
        envelope = ENVELOPE_SAFETY * float(np.max(np.sum(np.abs(B) ** 2, axis=1)))
        tried = 0
        while True:
            x = window.lo + window.lengths * stream.random((PROPOSAL_BATCH, d))
            u = stream.random(PROPOSAL_BATCH)
            vals = basis(x)[:, selected] @ C
            dens = np.sum(np.abs(vals) ** 2, axis=1)
            if np.any(dens > envelope):
                misses += int(np.count_nonzero(dens > envelope))
            hit = np.flatnonzero(u * envelope < dens)
            if hit.size:
                i = int(hit[0])
                tried += i + 1
                break
            tried += PROPOSAL_BATCH
            if tried > MAX_PROPOSALS:
                raise SamplerStuck(
                    f"sampler stuck: {tried} proposals for point {step + 1}/{k}; "
                    f"envelope {envelope:.3e}, remaining rank {remaining}"
                )
        proposals += tried
        points[step] = x[i]
        if remaining > 1:
            a = vals[i]
            # keep the directions that vanish at the accepted point, then
            # re-orthonormalize from scratch
            C = C @ null_space(a[None, :])
            C, _ = np.linalg.qr(C)
    return _Draw(PointConfiguration(points, dim=d), proposals, misses)


def sample(decomp: SpectralDecomposition, stream: RandomStream) -> PointConfiguration:
    """One exact draw from the DPP with kernel sum_i mu_i phi_i(x) conj(phi_i(y))."""
    return _draw(decomp, stream).config


@dataclass
class SampleBatch:
    decomposition: SpectralDecomposition
    seed: int
    configurations: list
    rejection_stats: float
    envelope_misses: int = 0

    def __len__(self):
        return len(self.configurations)

    def __iter__(self):
        return iter(self.configurations)

    def counts(self) -> np.ndarray:
        return np.array([len(c) for c in self.configurations])


def sample_batch(
    decomp: SpectralDecomposition, stream: RandomStream, n: int, threads: int | None = None
) -> SampleBatch:
    """n independent draws, one child stream each; results do not depend on threads."""
    children = stream.split(n)
    _envelope_grid(decomp)
    workers = threads or thread_budget()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            draws = list(pool.map(lambda s: _draw(decomp, s), children))
    else:
        draws = [_draw(decomp, s) for s in children]
    accepted = sum(len(d.config) for d in draws)
    proposals = sum(d.proposals for d in draws)
    misses = sum(d.envelope_misses for d in draws)
    if misses:
        log.warning("sampling envelope exceeded %d times; raise ENVELOPE_SAFETY", misses)
    return SampleBatch(
        decomposition=decomp,
        seed=stream.seed,
        configurations=[d.config for d in draws],
        rejection_stats=proposals / accepted if accepted else 0.0,
        envelope_misses=misses,
    )


def thinned_decomposition(decomp: SpectralDecomposition, z) -> SpectralDecomposition:
    cache = decomp.__dict__.setdefault("_thinned", {})
    key = tuple(np.atleast_1d(np.asarray(z, dtype=float)).tolist())
    if key not in cache:
        cache[key] = decompose(thin(decomp.kernel, z), decomp.window, decomp.resolution)
    return cache[key]


def sample_thinned(decomp: SpectralDecomposition, z, stream: RandomStream) -> PointConfiguration:
    """Draw from the DPP conditioned on a point at z, with z removed."""
    return sample(thinned_decomposition(decomp, z), stream)


@dataclass
class CountLawReport:
    n_samples: int
    histogram: list
    expected: list
    chi2: float
    dof: int
    p_value: float
    mean: float
    mean_stderr: float
    expected_mean: float
    flagged: bool = field(default=False)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def chi_square_counts(observed: np.ndarray, probabilities: np.ndarray) -> tuple[float, int, float]:
    """Pearson chi-square with adjacent categories merged until expected >= 5."""
    n = observed.sum()
    size = max(observed.size, probabilities.size)
    obs = np.zeros(size)
    obs[: observed.size] = observed
    prob = np.zeros(size)
    prob[: probabilities.size] = probabilities
    if np.any(obs[prob <= 0] > 0):
        return float("inf"), 0, 0.0
    exp = prob * n
    keep = exp > 0
    obs, exp = obs[keep], exp[keep]
    groups_o, groups_e = [], []
    acc_o = acc_e = 0.0
    for o, e in zip(obs, exp):
        acc_o += o
        acc_e += e
        if acc_e >= 5:
            groups_o.append(acc_o)
            groups_e.append(acc_e)
            acc_o = acc_e = 0.0
    if acc_e > 0:
        if groups_e:
            groups_o[-1] += acc_o
            groups_e[-1] += acc_e
        else:
            groups_o.append(acc_o)
            groups_e.append(acc_e)
    go, ge = np.array(groups_o), np.array(groups_e)
    dof = go.size - 1
    if dof < 1:
        return 0.0, 0, 1.0
    chi2 = float(np.sum((go - ge) ** 2 / ge))
    return chi2, dof, float(stats.chi2.sf(chi2, dof))


def verify_count_law(
    decomp: SpectralDecomposition, stream: RandomStream, n_samples: int = 1000, threads: int | None = None
) -> CountLawReport:
    """Chi-square test of sampled counts against the Bernoulli-sum law."""
    batch = sample_batch(decomp, stream, n_samples, threads)
    counts = batch.counts()
    law = count_distribution(decomp)
    hist = np.bincount(counts, minlength=law.probabilities.size)
    chi2, dof, p = chi_square_counts(hist, law.probabilities)
    return CountLawReport(
        n_samples=n_samples,
        histogram=hist.tolist(),
        expected=law.probabilities.tolist(),
        chi2=chi2,
        dof=dof,
        p_value=p,
        mean=float(counts.mean()),
        mean_stderr=float(counts.std(ddof=1) / np.sqrt(n_samples)) if n_samples > 1 else 0.0,
        expected_mean=law.mean,
        flagged=p < COUNT_LAW_ALPHA,
    )
