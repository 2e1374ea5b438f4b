"""
Experiment driver for the weighted ROM study.

Config files are flat KEY=value documents (dotenv syntax):

    CONFIG_VERSION=1
    METHOD=pod_mc
    ALPHA=10
    BETA=10
    TRAINING_SEED=1

Every run directory receives training.csv, error_curve.csv, basis.wrom,
manifest.json and, depending on the method, greedy_history.csv or spectrum.csv.
"""
import argparse
import csv
import json
import logging
import os
import time
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from . import settings
from .errors import ConfigRejectedError, ReducedSystemSingularError, TruthSolveError
from .fem_core import assemble_affine, build_truth_space, lame_constants, with_energy_norm
from .greedy_rb import estimate, greedy_build, history_rows
from .param_space import ParameterDistribution, weight_function
from .quadrature import (
    TrainingSet,
    gauss_legendre_1d,
    monte_carlo_rule,
    probability_weights,
    smolyak_rule,
    tensor_rule,
    write_training_csv,
)
from .reduced_basis import ReducedBasis, load_archive, save_archive
from .rom_online import iter_error_curve, reduced_solve
from .weighted_pod import pod_build, write_spectrum_csv

logger = logging.getLogger(__name__)

CONFIG_VERSION = 1
EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BREAKDOWN = 3

METHODS = (
    "greedy_standard",
    "greedy_weighted",
    "pod_standard",
    "pod_uniform_mc",
    "pod_mc",
    "pod_gauss_legendre",
    "pod_sparse_gauss_jacobi",
)
CURVE_COLUMNS = ["method", "alpha", "beta", "N", "mean_sq_error", "max_error", "estimator_mean_sq", "seed"]

DESK_MC_SIZE = 100
FULL_MC_SIZE = 500
TENSOR_POINTS = 3
SPARSE_LEVEL = 4

# sampling "tensor"/"sparse" are fixed by the quadrature rule and cannot be set in a config
DEFAULT_SAMPLING = {
    "greedy_standard": "uniform",
    "greedy_weighted": "rho",
    "pod_standard": "uniform",
    "pod_uniform_mc": "uniform",
    "pod_mc": "rho",
    "pod_gauss_legendre": "tensor",
    "pod_sparse_gauss_jacobi": "sparse",
}
DEFAULT_WEIGHT = {
    "greedy_standard": "one",
    "greedy_weighted": "sqrt_rho",
    "pod_standard": "one",
    "pod_uniform_mc": "rho",
    "pod_mc": "one",
    "pod_gauss_legendre": "rho",
    "pod_sparse_gauss_jacobi": "rho",
}


# ---------------- CONFIG ----------------
class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    config_version: int = CONFIG_VERSION
    method: Literal[METHODS]
    alpha: float = Field(10.0, gt=0)
    beta: float = Field(10.0, gt=0)
    n_sub: int = Field(16, ge=2)
    sampling: Optional[Literal["uniform", "rho"]] = None
    weight: Optional[Literal["one", "sqrt_rho", "rho"]] = None
    training_size: Optional[int] = Field(None, ge=1)
    training_level: int = Field(SPARSE_LEVEL, ge=1)
    training_seed: int = 0
    eps_tol: float = Field(1e-6, gt=0)
    n_max: int = Field(20, ge=1)
    first_pick: Literal["first_node", "density_mode"] = "first_node"
    test_size: int = Field(100, ge=1)
    test_seed: int = 12345
    full_scale: bool = False
    norm: Literal["h1", "energy"] = "h1"

    @property
    def is_greedy(self) -> bool:
        return self.method.startswith("greedy")

    @property
    def effective_sampling(self) -> str:
        return self.sampling or DEFAULT_SAMPLING[self.method]

    @property
    def effective_weight(self) -> str:
        return self.weight or DEFAULT_WEIGHT[self.method]

    @property
    def effective_training_size(self) -> int:
        if self.training_size is not None:
            return self.training_size
        if self.method in ("pod_gauss_legendre",):
            return TENSOR_POINTS
        return FULL_MC_SIZE if self.full_scale else DESK_MC_SIZE


def check_method_grid(config: ExperimentConfig) -> None:
    """Reject method/sampling/weight combinations outside the meaningful experiment grid."""
    method, weight = config.method, config.effective_weight
    if config.config_version != CONFIG_VERSION:
        raise ConfigRejectedError(f"Unsupported CONFIG_VERSION {config.config_version} (expected {CONFIG_VERSION})")
    if config.n_sub % 2:
        raise ConfigRejectedError(f"N_SUB must be even, got {config.n_sub}")
    if method == "greedy_standard" and weight != "one":
        raise ConfigRejectedError("greedy_standard uses w = 1; use greedy_weighted for a weighted greedy")
    if method == "greedy_weighted" and weight == "one":
        raise ConfigRejectedError("greedy_weighted needs WEIGHT=sqrt_rho or WEIGHT=rho")
    if config.is_greedy:
        return
    if config.sampling is not None and config.sampling != DEFAULT_SAMPLING[method]:
        raise ConfigRejectedError(f"{method} fixes its training nodes; SAMPLING={config.sampling} is not allowed")
    expected = "one" if method in ("pod_standard", "pod_mc") else "rho"
    if method == "pod_mc" and weight == "rho":
        raise ConfigRejectedError(
            "pod_mc with rho-weighting is rejected: nodes sampled from rho and weighted by rho do not "
            "admit an interpretation as a quadrature formula for the expected error"
        )
    if weight != expected:
        raise ConfigRejectedError(f"{method} prescribes WEIGHT={expected} through its quadrature rule, got {weight}")


def load_config(path: str, seed: Optional[int] = None, full_scale: bool = False) -> ExperimentConfig:
    """Parse a KEY=value config file, apply CLI overrides and check the method grid."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"Config file not found: {path}")
    raw = {k.lower(): v for k, v in dotenv_values(path).items() if v is not None and v != ""}
    if seed is not None:
        raw["training_seed"] = seed
    if full_scale:
        raw["full_scale"] = True
    config = ExperimentConfig(**raw)
    check_method_grid(config)
    return config


# ---------------- TRAINING ----------------
def build_training(config: ExperimentConfig, dist: ParameterDistribution) -> TrainingSet:
    n = config.effective_training_size
    seed = config.training_seed
    method = config.method
    if config.is_greedy:
        sampler = dist if config.effective_sampling == "rho" else dist.uniform()
        return monte_carlo_rule(sampler, n, seed, "plain")
    if method == "pod_standard":
        return monte_carlo_rule(dist.uniform(), n, seed, "plain")
    if method == "pod_uniform_mc":
        return monte_carlo_rule(dist, n, seed, "density_reweighted")
    if method == "pod_mc":
        return monte_carlo_rule(dist, n, seed, "plain")
    if method == "pod_gauss_legendre":
        rules = [gauss_legendre_1d(n)] * dist.dim
        return probability_weights(tensor_rule(rules, dist), dist)
    if method == "pod_sparse_gauss_jacobi":
        return smolyak_rule(config.training_level, "gauss_jacobi", dist.dim, dist)
    raise ConfigRejectedError(f"Unknown method '{method}'")


# ---------------- MANIFEST ----------------
class Breakdown(BaseModel):
    stage: Literal["offline", "online"]
    n: int
    y: List[float]
    condition: Optional[float]
    message: str


class RunManifest(BaseModel):
    config: Dict[str, Any]
    training_seed: int
    test_seed: int
    test_size: int
    n_sub: int
    n_dof: int
    training_size: int
    training_provenance: str
    n_built: int
    n_evaluated: int
    status: str
    breakdown: Optional[Breakdown] = None
    wall_times: Dict[str, float]
    artifacts: List[str]


def _finite(value: float) -> Optional[float]:
    return value if np.isfinite(value) else None


def _fmt(value: Optional[float]) -> str:
    return "" if value is None else repr(float(value))


def _write_rows(path: str, header: Sequence[str], rows: Sequence[Sequence[Any]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


# ---------------- RUN ----------------
def run(config: ExperimentConfig, out_dir: str) -> Tuple[RunManifest, int]:
    """Build the ROM described by ``config`` and write its artifacts to ``out_dir``.

    Returns:
        (manifest, exit code): EXIT_OK, or EXIT_BREAKDOWN when a singular reduced
        system or a failed truth solve stopped the run (partial curves are kept).
    """
    os.makedirs(out_dir, exist_ok=True)
    t_start = time.perf_counter()
    logger.info("Run %s (alpha=%g, beta=%g) -> %s", config.method, config.alpha, config.beta, out_dir)

    space = build_truth_space(config.n_sub)
    ops = assemble_affine(space, *lame_constants())
    if config.norm == "energy":
        space = with_energy_norm(space, ops)
    dist = ParameterDistribution.benchmark(config.alpha, config.beta)
    training = build_training(config, dist)
    logger.info("Training set %s with %d nodes", training.provenance, len(training))

    artifacts = ["training.csv"]
    write_training_csv(training, os.path.join(out_dir, "training.csv"))

    breakdown: Optional[Breakdown] = None
    rb: Optional[ReducedBasis] = None
    t_offline = time.perf_counter()
    try:
        if config.is_greedy:
            w = weight_function(config.effective_weight, dist)
            rb = greedy_build(
                ops, space, training, w, config.eps_tol, config.n_max, config.first_pick, dist, config.effective_weight
            )
        else:
            rb = pod_build(ops, space, training, config.eps_tol, config.n_max)
    except ReducedSystemSingularError as e:
        logger.error("Offline breakdown: %s", e)
        breakdown = Breakdown(stage="offline", n=e.n, y=e.y, condition=_finite(e.condition), message=str(e))
        rb = e.partial_basis
    except TruthSolveError as e:
        logger.error("Truth solve failed during the offline stage: %s", e)
        breakdown = Breakdown(stage="offline", n=0, y=e.y or [], condition=None, message=str(e))
    t_offline = time.perf_counter() - t_offline

    rows: List[List[str]] = []
    t_online = time.perf_counter()
    if rb is not None and rb.N > 0:
        try:
            for report in iter_error_curve(rb, ops, space, dist, config.test_size, config.test_seed):
                rows.append(
                    [
                        config.method,
                        repr(config.alpha),
                        repr(config.beta),
                        str(report.n),
                        _fmt(report.mean_sq_error),
                        _fmt(report.max_error),
                        _fmt(report.estimator_mean_sq),
                        str(config.test_seed),
                    ]
                )
        except ReducedSystemSingularError as e:
            logger.error("Online breakdown: %s", e)
            if breakdown is None:
                breakdown = Breakdown(stage="online", n=e.n, y=e.y, condition=_finite(e.condition), message=str(e))
    t_online = time.perf_counter() - t_online

    _write_rows(os.path.join(out_dir, "error_curve.csv"), CURVE_COLUMNS, rows)
    artifacts.append("error_curve.csv")
    if rb is not None:
        save_archive(rb, os.path.join(out_dir, "basis.wrom"))
        artifacts.append("basis.wrom")
        if config.is_greedy:
            header = ["iteration"] + [f"y_{i + 1}" for i in range(dist.dim)] + ["max_weighted_estimator"]
            _write_rows(os.path.join(out_dir, "greedy_history.csv"), header, history_rows(rb))
            artifacts.append("greedy_history.csv")
        elif rb.metadata.get("eigenvalues"):
            write_spectrum_csv(rb.metadata["eigenvalues"], rb.metadata["retained_energy"], os.path.join(out_dir, "spectrum.csv"))
            artifacts.append("spectrum.csv")

    status = "ok" if breakdown is None else "breakdown"
    manifest = RunManifest(
        config=config.model_dump(),
        training_seed=config.training_seed,
        test_seed=config.test_seed,
        test_size=config.test_size,
        n_sub=config.n_sub,
        n_dof=space.n_dof,
        training_size=len(training),
        training_provenance=training.provenance,
        n_built=0 if rb is None else rb.N,
        n_evaluated=len(rows),
        status=status,
        breakdown=breakdown,
        wall_times={
            "offline": t_offline,
            "online": t_online,
            "total": time.perf_counter() - t_start,
        },
        artifacts=artifacts + ["manifest.json"],
    )
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        fh.write(manifest.model_dump_json(indent=2))
    logger.info("Run finished: status=%s, N=%d, %.1fs", status, manifest.n_built, manifest.wall_times["total"])
    return manifest, EXIT_OK if breakdown is None else EXIT_BREAKDOWN


# ---------------- COMPARE ----------------
def _read_manifest(run_dir: str) -> RunManifest:
    with open(os.path.join(run_dir, "manifest.json")) as fh:
        return RunManifest.model_validate_json(fh.read())


def _read_curve(run_dir: str) -> Dict[int, float]:
    with open(os.path.join(run_dir, "error_curve.csv"), newline="") as fh:
        return {int(row["N"]): float(row["mean_sq_error"]) for row in csv.DictReader(fh)}


def compare(run_dirs: Sequence[str], out_dir: str) -> str:
    """Align error curves of several runs by N; ratios are taken against the first run.

    Returns:
        Path of the comparison CSV. A plot_data.json with one series per run
        is written next to it.
    """
    if len(run_dirs) < 2:
        raise ValueError("compare needs at least two run directories")
    manifests = [_read_manifest(d) for d in run_dirs]
    ref = manifests[0]
    for d, m in zip(run_dirs[1:], manifests[1:]):
        key = (m.n_sub, m.config["alpha"], m.config["beta"], m.test_seed, m.test_size, m.config["norm"])
        ref_key = (ref.n_sub, ref.config["alpha"], ref.config["beta"], ref.test_seed, ref.test_size, ref.config["norm"])
        if key != ref_key:
            raise ConfigRejectedError(f"{d} was evaluated on a different mesh/distribution/test set than {run_dirs[0]}")

    curves = [_read_curve(d) for d in run_dirs]
    labels = [f"{m.config['method']}@{os.path.basename(os.path.normpath(d))}" for d, m in zip(run_dirs, manifests)]
    all_n = sorted(set().union(*[c.keys() for c in curves]))

    header = ["N"] + [f"mean_sq_error[{l}]" for l in labels] + [f"ratio[{l}]" for l in labels[1:]]
    rows = []
    for n in all_n:
        row = [str(n)] + [_fmt(c.get(n)) for c in curves]
        base = curves[0].get(n)
        for c in curves[1:]:
            value = c.get(n)
            row.append(_fmt(value / base) if value is not None and base else "")
        rows.append(row)

    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "comparison.csv")
    _write_rows(path, header, rows)
    series = [
        {"label": l, "N": sorted(c), "mean_sq_error": [c[n] for n in sorted(c)]} for l, c in zip(labels, curves)
    ]
    with open(os.path.join(out_dir, "plot_data.json"), "w") as fh:
        json.dump({"ordinate": "E[||u - u_N||_V^2]", "series": series}, fh, indent=2, sort_keys=True)
    return path


# ---------------- EVALUATE / GRIDINFO ----------------
def read_params_csv(path: str) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader if row]
    if not rows:
        raise ValueError(f"{path}: no parameter rows")
    params = np.array(rows)
    if params.shape[1] != len(header):
        raise ValueError(f"{path}: rows have {params.shape[1]} columns, header has {len(header)}")
    return params


def evaluate(archive_path: str, params_path: str, out_path: str) -> str:
    """Reduced solutions and compliance outputs for a list of parameters."""
    rb = load_archive(archive_path)
    params = read_params_csv(params_path)
    header = [f"y_{i + 1}" for i in range(params.shape[1])] + ["output", "estimator"]
    header += [f"u_N_{k + 1}" for k in range(rb.N)]
    rows = []
    for y in params:
        uN = reduced_solve(rb, y)
        output = float(rb.reduced_rhs(y) @ uN)
        eta = estimate(rb.estimator, y, uN) if rb.estimator is not None else None
        rows.append([repr(float(v)) for v in y] + [repr(output), _fmt(eta)] + [repr(float(c)) for c in uN])
    _write_rows(out_path, header, rows)
    return out_path


def gridinfo(config: ExperimentConfig, out_path: str) -> TrainingSet:
    dist = ParameterDistribution.benchmark(config.alpha, config.beta)
    training = build_training(config, dist)
    write_training_csv(training, out_path)
    logger.info("%s: %d nodes, sum of weights %.12f", training.provenance, len(training), training.weights.sum())
    return training


# ---------------- CLI ----------------
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="weighted_rom", description="Weighted reduced order models for random-input PDEs")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build", help="config -> ROM archive + error curves")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None, help="override TRAINING_SEED")
    p.add_argument("--out", default=None)
    p.add_argument("--full-scale", action="store_true", help="500-node Monte-Carlo training sets")

    p = sub.add_parser("evaluate", help="archive + parameter list -> outputs CSV")
    p.add_argument("--archive", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("compare", help="run dirs -> comparison CSV")
    p.add_argument("run_dirs", nargs="+")
    p.add_argument("--out", required=True)

    p = sub.add_parser("gridinfo", help="config -> training node/weight CSV")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--full-scale", action="store_true")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(level=settings.LOG_LEVEL)
    args = build_parser().parse_args(argv)
    try:
        if args.command == "build":
            config = load_config(args.config, args.seed, args.full_scale)
            name = os.path.splitext(os.path.basename(args.config))[0]
            out = args.out or os.path.join(settings.OUTPUT_DIR, name)
            _, code = run(config, out)
            return code
        if args.command == "gridinfo":
            gridinfo(load_config(args.config, args.seed, args.full_scale), args.out)
            return EXIT_OK
        if args.command == "evaluate":
            evaluate(args.archive, args.params, args.out)
            return EXIT_OK
        if args.command == "compare":
            compare(args.run_dirs, args.out)
            return EXIT_OK
    except (ConfigRejectedError, ValidationError) as e:
        logger.error("Config rejected: %s", e)
        return EXIT_CONFIG
    except (ReducedSystemSingularError, TruthSolveError) as e:
        logger.error("Numerical breakdown: %s", e)
        return EXIT_BREAKDOWN
    return EXIT_OK


__all__ = [
    "ExperimentConfig",
    "RunManifest",
    "Breakdown",
    "METHODS",
    "check_method_grid",
    "load_config",
    "build_training",
    "run",
    "compare",
    "evaluate",
    "gridinfo",
    "build_parser",
    "main",
    "EXIT_OK",
    "EXIT_CONFIG",
    "EXIT_BREAKDOWN",
]
