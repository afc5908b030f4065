"""Command-line experiment runner.

Every successful or numerically failed run writes ``manifest.json`` next to
its artifacts: the full configuration (kernel spec inlined), sha256 of every
artifact, wall time and any error. ``dpplab replay manifest.json`` reruns the
configuration and checks the hashes.

Exit codes: 0 success, 2 invalid input (nothing written), 3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import tempfile
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .core import ContractViolation, NumericalContractError, RandomStream, Window
from .kernels import config_hash, decompose, kernel_from_config

log = logging.getLogger("dpplab")

COMMANDS = ("sample", "correlations", "fredholm", "count-law", "thin", "diffuse", "modelc")
KERNEL_COMMANDS = ("sample", "correlations", "fredholm", "count-law", "thin")
EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3


@dataclass
class ExperimentConfig:
    command: str
    kernel: dict | None = None
    window: list | None = None
    seed: int = 0
    n: int | None = None
    out: str = "."
    method: str = "all"
    grid: int | None = None
    mass: float = 1.0
    theta: float = 1.0
    dt: float = 1e-3
    T: float = 1.0
    z: list | None = None
    bins: int = 10
    demo: str = "gaussian"

    def validate(self) -> None:
        if self.command not in COMMANDS:
            raise ContractViolation(f"unknown command {self.command!r}")
        if self.command in KERNEL_COMMANDS and self.kernel is None:
            raise ContractViolation(f"{self.command} needs --kernel")
        if not 0 <= self.seed < 2**64:
            raise ContractViolation("seed must be an unsigned 64-bit integer")
        if self.n is not None and self.n < 0:
            raise ContractViolation("--n must be non-negative")
        if self.grid is not None and self.grid < 8:
            raise ContractViolation("--grid must be at least 8")
        if self.window is not None and (len(self.window) < 2 or len(self.window) % 2):
            raise ContractViolation("--window takes lo,hi pairs per axis")
        if self.command == "diffuse" and (self.dt <= 0 or self.T < 0 or self.theta < 0):
            raise ContractViolation("diffuse needs dt > 0, T >= 0, theta >= 0")
        if self.command == "modelc" and self.demo != "gaussian":
            raise ContractViolation(f"unknown demo {self.demo!r}")
        if self.mass <= 0:
            raise ContractViolation("--mass must be positive")
        if self.bins < 1:
            raise ContractViolation("--bins must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


# ------------------------------------------------------------------ output


@dataclass
class Outputs:
    """Collects artifacts in memory and writes them atomically at the end."""

    directory: Path
    trajectory_name: str = "traj.csv"
    files: dict = field(default_factory=dict)

    def add(self, name: str, text: str) -> None:
        self.files[name] = text.encode()

    def add_json(self, name: str, obj) -> None:
        self.add(name, dumps(obj))

    def hashes(self) -> dict:
        return {k: hashlib.sha256(v).hexdigest() for k, v in sorted(self.files.items())}

    def flush(self) -> None:
        self.directory.mkdir(parents=True, exist_ok=True)
        for name, blob in sorted(self.files.items()):
            atomic_write(self.directory / name, blob)


def atomic_write(path: Path, blob: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps(obj) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n"


# ------------------------------------------------------------------ commands


def _kernel_setup(cfg: ExperimentConfig, default_resolution: int = 64):
    kcfg = dict(cfg.kernel)
    if cfg.window is not None:
        w = np.asarray(cfg.window, dtype=float).reshape(-1, 2)
        kcfg["window"] = {"lo": w[:, 0].tolist(), "hi": w[:, 1].tolist()}
    kernel, window = kernel_from_config(kcfg)
    decomp = decompose(kernel, window, cfg.grid or default_resolution)
    return kcfg, kernel, window, decomp


def _write_samples(outputs: Outputs, configs) -> np.ndarray:
    counts = []
    for i, c in enumerate(configs):
        outputs.add(f"sample_{i:05d}.csv", c.to_csv())
        counts.append(len(c))
    return np.bincount(np.array(counts, dtype=int)) if counts else np.zeros(0, dtype=int)


def cmd_sample(cfg: ExperimentConfig, outputs: Outputs) -> dict:
    from .sampler import sample_batch

    kcfg, _, _, decomp = _kernel_setup(cfg)
    batch = sample_batch(decomp, RandomStream(cfg.seed), cfg.n if cfg.n is not None else 100)
    hist = _write_samples(outputs, batch.configurations)
    summary = {
        "seed": cfg.seed,
        "kernel_hash": config_hash(kcfg),
        "count_histogram": hist,
        "rank": decomp.rank,
        "proposals_per_point": batch.rejection_stats,
    }
    outputs.add_json("summary.json", summary)
    return summary


def cmd_thin(cfg: ExperimentConfig, outputs: Outputs) -> dict:
    from .sampler import sample, thinned_decomposition

    kcfg, _, window, decomp = _kernel_setup(cfg)
    z = cfg.z if cfg.z is not None else ((window.lo + window.hi) / 2).tolist()
    thinned = thinned_decomposition(decomp, z)
    children = RandomStream(cfg.seed).split(cfg.n if cfg.n is not None else 100)
    configs = [sample(thinned, s) for s in children]
    hist = _write_samples(outputs, configs)
    summary = {
        "seed": cfg.seed,
        "kernel_hash": config_hash(kcfg),
        "z": z,
        "rank_before": decomp.rank,
        "rank_after": thinned.rank,
        "count_histogram": hist,
    }
    outputs.add_json("summary.json", summary)
    return summary


def cmd_fredholm(cfg: ExperimentConfig, outputs: Outputs) -> dict:
    from .fredholm import fredholm_det

    _, _, _, decomp = _kernel_setup(cfg)
    z = float(cfg.z[0]) if cfg.z else -1.0
    report = fredholm_det(decomp, z, cfg.method).to_dict()
    outputs.add_json("fredholm.json", report)
    print(dumps(report), end="")
    if not report["ok"]:
        raise NumericalContractError(f"determinant routes disagree by {report['max_pairwise_gap']:.3e}")
    return report


def cmd_count_law(cfg: ExperimentConfig, outputs: Outputs) -> dict:
    from .sampler import verify_count_law

    _, _, _, decomp = _kernel_setup(cfg)
    report = verify_count_law(decomp, RandomStream(cfg.seed), cfg.n if cfg.n is not None else 1000).to_dict()
    outputs.add_json("count_law.json", report)
    if report["flagged"]:
        raise NumericalContractError(f"sampled counts reject the count law (p = {report['p_value']:.2e})")
    return report


def cmd_correlations(cfg: ExperimentConfig, outputs: Outputs) -> dict:
    from .sampler import sample_batch
    from .statistics import bin_average_diagonal, empirical_correlation, grid_boxes, pair_correlation

    _, kernel, window, decomp = _kernel_setup(cfg)
    batch = sample_batch(decomp, RandomStream(cfg.seed), cfg.n if cfg.n is not None else 1000)
    boxes = grid_boxes(window, cfg.bins)
    rho1 = empirical_correlation(batch.configurations, boxes, 1, min_samples=1)
    rho1.analytic = bin_average_diagonal(kernel, boxes)
    rho2 = empirical_correlation(batch.configurations, boxes, 2, min_samples=1)
    outputs.add("rho1.csv", rho1.to_csv())
    outputs.add("rho2.csv", rho2.to_csv())
    z = (rho1.estimate - rho1.analytic) / np.where(rho1.stderr > 0, rho1.stderr, np.inf)
    summary = {"n_samples": len(batch), "bins": cfg.bins, "rho1_max_abs_z": float(np.max(np.abs(z)))}
    if window.dim == 1:
        width = float(window.lengths[0]) / cfg.bins
        pc = pair_correlation(batch.configurations, window, 0.0, width)
        summary["pair_correlation_first_bin"] = {"separation": pc.separation, "estimate": pc.estimate, "stderr": pc.stderr}
    outputs.add_json("summary.json", summary)
    return summary


def cmd_diffuse(cfg: ExperimentConfig, outputs: Outputs) -> dict:
    from .diffusion import DiffusionState, GUEReference, gue_eigenvalues, run, stationarity_report

    n = cfg.n if cfg.n is not None else 10
    if n < 1:
        raise ContractViolation("diffuse needs at least one particle")
    stream = RandomStream(cfg.seed)
    start_stream, path_stream = stream.split(2)
    if cfg.theta > 0:
        x0 = gue_eigenvalues(n, cfg.theta, start_stream)
    else:
        x0 = np.arange(n, dtype=float) - (n - 1) / 2
    traj = run(DiffusionState(0.0, x0, cfg.theta), cfg.T, cfg.dt, path_stream)
    outputs.add(outputs.trajectory_name, traj.to_csv())
    summary = {
        "n": n,
        "states": len(traj),
        "halvings": traj.halvings,
        "ordering_violations": traj.ordering_violations(),
    }
    burn = len(traj) // 10
    if len(traj) - burn >= 1000:
        ref = GUEReference(n, cfg.theta) if cfg.theta > 0 else None
        summary["stationarity"] = stationarity_report(traj, ref, burn_in=burn).to_dict()
    else:
        summary["stationarity"] = None
        summary["note"] = "fewer than 1000 states past burn-in; stationarity not assessed"
    outputs.add_json("report.json", summary)
    return summary


def cmd_modelc(cfg: ExperimentConfig, outputs: Outputs) -> dict:
    from . import modelc as mc

    n = cfg.grid or 256
    window = Window.interval(-40.0, 40.0)
    if cfg.window is not None:
        window = Window.interval(*cfg.window[:2])
    psi = mc.gaussian_packet(window, n, center=0.0, sigma=1.0, k=2.0, mass=cfg.mass)
    times = np.linspace(0.0, 5.0, 50)
    series = mc.ehrenfest_series(psi, times)
    lines = ["t,mean_x,mean_p,width,norm"]
    for row in zip(series["t"], series["mean_x"], series["mean_p"], series["width"], series["norm"]):
        lines.append(",".join(repr(float(v)) for v in row))
    outputs.add("series.csv", "\n".join(lines) + "\n")
    hx, hp, total = mc.entropy_sum(psi)
    report = {
        "grid": n,
        "mass": cfg.mass,
        "ehrenfest": {
            "slope": series["slope"],
            "expected_slope": series["expected_slope"],
            "linear_residual": series["linear_residual"],
        },
        "velocity": mc.velocity_limit_check(psi, [1e-1, 1e-2, 1e-3, 1e-4]).to_dict(),
        "commutator": mc.commutator_check(psi).to_dict(),
        "entropy": {"H_X": hx, "H_P": hp, "sum": total, "benchmark": 1 + float(np.log(np.pi))},
    }
    outputs.add_json("report.json", report)
    return report


HANDLERS = {
    "sample": cmd_sample,
    "correlations": cmd_correlations,
    "fredholm": cmd_fredholm,
    "count-law": cmd_count_law,
    "thin": cmd_thin,
    "diffuse": cmd_diffuse,
    "modelc": cmd_modelc,
}


def _output_location(cfg: ExperimentConfig) -> tuple[Path, str]:
    out = Path(cfg.out)
    if cfg.command == "diffuse" and out.suffix == ".csv":
        return out.parent, out.name
    return out, "traj.csv"


def run(cfg: ExperimentConfig) -> int:
    """Execute one experiment; returns the exit code."""
    try:
        cfg.validate()
    except ContractViolation as exc:
        print(f"dpplab: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_INVALID
    directory, traj_name = _output_location(cfg)
    outputs = Outputs(directory, traj_name)
    t0 = time.perf_counter()
    status, errors = EXIT_OK, []
    try:
        HANDLERS[cfg.command](cfg, outputs)
    except ContractViolation as exc:
        print(f"dpplab: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (NumericalContractError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"dpplab: numerical failure: {exc}", file=sys.stderr)
        status = EXIT_NUMERICAL
        errors.append({"type": type(exc).__name__, "message": str(exc)})
    manifest = {
        "version": __version__,
        "config": cfg.to_dict(),
        "artifacts": outputs.hashes(),
        "wall_time": time.perf_counter() - t0,
        "status": status,
        "errors": errors,
    }
    outputs.add_json("manifest.json", manifest)
    outputs.flush()
    return status


def replay(manifest_path: str, out: str | None = None) -> int:
    """Rerun a manifest's configuration and compare artifact hashes."""
    path = Path(manifest_path)
    try:
        manifest = json.loads(path.read_text())
        cfg = ExperimentConfig(**manifest["config"])
    except (OSError, ValueError, KeyError, TypeError) as exc:
        print(f"dpplab: cannot read manifest: {exc}", file=sys.stderr)
        return EXIT_INVALID
    if out is not None:
        if cfg.command == "diffuse" and Path(cfg.out).suffix == ".csv":
            cfg.out = str(Path(out) / Path(cfg.out).name)
        else:
            cfg.out = out
    code = run(cfg)
    if code == EXIT_INVALID:
        return code
    directory, _ = _output_location(cfg)
    fresh = json.loads((directory / "manifest.json").read_text())
    expected = manifest["artifacts"]
    mismatched = sorted(k for k in set(expected) | set(fresh["artifacts"]) if expected.get(k) != fresh["artifacts"].get(k))
    if mismatched:
        print(f"dpplab: replay mismatch in {len(mismatched)} artifact(s): {', '.join(mismatched[:5])}", file=sys.stderr)
        return EXIT_NUMERICAL
    print(f"replay ok: {len(expected)} artifact(s) reproduced")
    return code


# ------------------------------------------------------------------ argument parsing


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dpplab", description="Determinantal point process laboratory")
    parser.add_argument("--version", action="version", version=f"dpplab {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default=".")
        p.add_argument("--window", type=_floats, help="lo,hi[,lo,hi...] per axis")
        p.add_argument("--n", type=int)
        p.add_argument("--grid", type=int, help="quadrature resolution, or wavefunction grid for modelc")

    for name in KERNEL_COMMANDS:
        p = sub.add_parser(name)
        common(p)
        p.add_argument("--kernel", required=True, help="kernel JSON file")
        if name == "fredholm":
            p.add_argument("--method", default="all", choices=["spectral", "series", "plemelj", "all"])
            p.add_argument("--z", type=_floats, help="determinant parameter (default -1)")
        if name == "thin":
            p.add_argument("--z", type=_floats, help="removal point (default window centre)")
        if name == "correlations":
            p.add_argument("--bins", type=int, default=10)

    p = sub.add_parser("diffuse")
    common(p)
    p.add_argument("--theta", type=float, default=1.0)
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--T", type=float, default=1.0)

    p = sub.add_parser("modelc")
    common(p)
    p.add_argument("--demo", default="gaussian")
    p.add_argument("--mass", type=float, default=1.0)

    p = sub.add_parser("replay")
    p.add_argument("manifest")
    p.add_argument("--out")
    return parser


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    kernel = None
    if getattr(args, "kernel", None):
        try:
            kernel = json.loads(Path(args.kernel).read_text())
        except (OSError, ValueError) as exc:
            raise ContractViolation(f"cannot read kernel file {args.kernel}: {exc}") from exc
    fields = {k: v for k, v in vars(args).items() if k in ExperimentConfig.__dataclass_fields__ and v is not None}
    fields["kernel"] = kernel
    return ExperimentConfig(**fields)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    if args.command == "replay":
        return replay(args.manifest, args.out)
    try:
        cfg = config_from_args(args)
    except ContractViolation as exc:
        print(f"dpplab: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
