"""Batch experiment runner with seeded determinism and machine-readable output.

Reproduces the study families at desk scale: convergence traces over an
uncertainty-radius grid, feasibility counts for robust and non-robust
designs, and blocklength / block-error-rate / transmit-power sweeps.  Each
experiment writes one CSV of per-run rows (fixed column order) and one JSON
summary holding per-grid-point means, per-run beamformers, and, for the
convergence experiment, the per-iteration objective traces.

Exit codes: 0 on full success, 1 on a configuration error, 2 if any
realization failed (partial results are still written).
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from rsbeam.core import ConfigError, SystemConfig, dbm_to_mw, effective_radius, validate_config
from rsbeam.channels import correlated_pair, derived_seed, sample_rayleigh
from rsbeam.algorithms import CccpSettings
from rsbeam.schemes import SchemeId, run_scheme
from rsbeam import schemes

EXPERIMENTS = (
    "convergence",
    "robustness",
    "sweep-blocklength",
    "sweep-bler",
    "sweep-snr",
    "single-solve",
)

CSV_COLUMNS = (
    "experiment", "scheme", "realization", "seed", "M", "K", "L", "epsilon",
    "P_max", "sigma2", "delta", "alpha", "grid_value", "iterations",
    "min_rate", "common_rate_sum", "feasible", "rank_one", "solve_ms",
)

DEFAULT_SCHEMES = {
    "convergence": ["RB-RS-FBL"],
    "robustness": ["RB-RS-FBL", "NoRB-RS-FBL"],
    "sweep-blocklength": ["RB-RS-FBL", "RB-NoRS-FBL", "RB-RS-IFBL"],
    "sweep-bler": ["RB-RS-FBL", "RB-NoRS-FBL"],
    "sweep-snr": ["RB-RS-FBL"],
    "single-solve": ["RB-RS-FBL"],
}

# sweeps walk their grid with each realization's previous design carried
# forward, so the swept axis sees nested feasible sets instead of start luck
CHAINED = {"sweep-blocklength", "sweep-bler", "sweep-snr"}


@dataclass
class ExperimentConfig:
    """Validated description of one batch experiment."""

    experiment: str
    system: SystemConfig
    grid: list[float]
    n_realizations: int = 20
    n_starts: int = 1
    seed: int = 0
    output_path: str = "."
    schemes: list[str] = field(default_factory=list)
    channel: dict = field(default_factory=dict)
    settings: CccpSettings = field(default_factory=CccpSettings)


def _system_from_dict(doc: dict) -> SystemConfig:
    fields = dict(doc)
    if "sigma2_dbm" in fields:
        fields["sigma2"] = dbm_to_mw(float(fields.pop("sigma2_dbm")))
    allowed = {"M", "K", "L", "epsilon", "P_max", "sigma2", "delta", "alpha", "d"}
    unknown = set(fields) - allowed
    if unknown:
        raise ConfigError(f"unknown system fields: {sorted(unknown)}")
    missing = {"M", "K", "L", "epsilon", "P_max", "sigma2"} - set(fields)
    if missing:
        raise ConfigError(f"missing system fields: {sorted(missing)}")
    fields.setdefault("delta", 0.0)
    return validate_config(SystemConfig(**fields))


def load_config(doc: dict, experiment: str | None = None) -> ExperimentConfig:
    """Build and validate an :class:`ExperimentConfig` from a JSON document."""
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    name = experiment or doc.get("experiment")
    if name not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {EXPERIMENTS}, got {name!r}")
    if "system" not in doc:
        raise ConfigError("missing field: system")
    system = _system_from_dict(doc["system"])
    grid = [float(g) for g in doc.get("grid", [])]
    if name.startswith("sweep") or name in ("convergence", "robustness"):
        if not grid:
            raise ConfigError(f"field grid must be nonempty for {name}")
    scheme_ids = doc.get("schemes", DEFAULT_SCHEMES[name])
    for s in scheme_ids:
        SchemeId(s)  # raises ValueError on unknown ids
    settings = CccpSettings(
        n_starts=int(doc.get("n_starts", 1)),
        max_iters=int(doc.get("max_iters", 100)),
        tol=float(doc.get("tol", 1e-6)),
        randomization_draws=int(doc.get("randomization_draws", 200)),
    )
    return ExperimentConfig(
        experiment=name,
        system=system,
        grid=grid if grid else [0.0],
        n_realizations=int(doc.get("n_realizations", 20)),
        n_starts=settings.n_starts,
        seed=int(doc.get("seed", 0)),
        output_path=str(doc.get("output_path", ".")),
        schemes=list(scheme_ids),
        channel=dict(doc.get("channel", {})),
        settings=settings,
    )


def _instance_for(config: ExperimentConfig, grid_value: float) -> SystemConfig:
    """System config at one grid point (the swept axis overrides its field)."""
    base = config.system
    if config.experiment == "convergence":
        return base.with_delta(grid_value)
    if config.experiment == "robustness":
        return base.with_delta(math.sqrt(grid_value))
    if config.experiment == "sweep-blocklength":
        return base.with_updates(L=int(grid_value))
    if config.experiment == "sweep-bler":
        return base.with_updates(epsilon=grid_value)
    if config.experiment == "sweep-snr":
        delta = effective_radius(base.d, grid_value, base.alpha[0])
        return base.with_updates(P_max=grid_value, delta=delta)
    return base


def _channels_for(config: ExperimentConfig, cfg: SystemConfig, realization: int):
    spec = dict(config.channel)
    kind = spec.get("type")
    if kind is None:
        kind = "correlated_pair" if config.experiment in ("sweep-blocklength", "sweep-bler") else "rayleigh"
    if kind == "correlated_pair":
        gamma = float(spec.get("gamma", 0.9))
        theta = float(spec.get("theta", 7.0 * math.pi / 36.0))
        if cfg.M != 4 or cfg.K != 2:
            raise ConfigError("correlated_pair channels require M=4, K=2")
        return correlated_pair(gamma, theta, delta=cfg.delta)
    if kind == "rayleigh":
        seed = derived_seed(config.seed, realization, 0xC4A).generate_state(1)[0]
        return sample_rayleigh(cfg.M, cfg.K, seed, delta=cfg.delta)
    raise ConfigError(f"unknown channel type {kind!r}")


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:.12g}"
    return str(value)


def _beamformers_doc(bset) -> dict:
    def cvec(v):
        return [[float(z.real), float(z.imag)] for z in np.atleast_1d(v)]

    return {
        "w_c": cvec(bset.w_c),
        "w_k": [cvec(row) for row in bset.w_k],
        "c": [float(x) for x in bset.c],
    }


def _run_realization(config: ExperimentConfig, realization: int):
    """All grid points and schemes for one realization (one work item)."""
    rows = []
    artifacts = {}
    traces = {}
    failed = False
    chained = config.experiment in CHAINED
    warm = {}
    for g_index, grid_value in enumerate(config.grid):
        cfg = _instance_for(config, grid_value)
        channels = _channels_for(config, cfg, realization)
        for scheme in config.schemes:
            run_seed = derived_seed(config.seed, g_index, realization).generate_state(1)[0]
            try:
                output = run_scheme(
                    scheme, cfg, channels, config.settings, seed=int(run_seed),
                    warm=warm.get(scheme) if chained else None,
                )
            except Exception:
                failed = True
                continue
            if chained:
                warm[scheme] = output.beamformers
            result = output.result
            row_key = (g_index, realization, scheme)
            rows.append((row_key, {
                "experiment": config.experiment,
                "scheme": scheme,
                "realization": realization,
                "seed": int(run_seed),
                "M": cfg.M, "K": cfg.K, "L": cfg.L,
                "epsilon": cfg.epsilon[0],
                "P_max": cfg.P_max,
                "sigma2": cfg.sigma2[0],
                "delta": cfg.delta[0],
                "alpha": cfg.alpha[0],
                "grid_value": grid_value,
                "iterations": result.iterations,
                "min_rate": result.min_rate,
                "common_rate_sum": result.common_rate_sum,
                "feasible": result.feasible,
                "rank_one": result.rank_one,
                "solve_ms": result.wall_time * 1e3,
            }))
            artifacts["/".join(map(str, row_key))] = _beamformers_doc(output.beamformers)
            if config.experiment == "convergence":
                traces["/".join(map(str, row_key))] = list(result.objective_trace)
    return rows, artifacts, traces, failed


def worker_count() -> int:
    """Worker processes for experiment runs, from ``RSBEAM_WORKERS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("RSBEAM_WORKERS", "1")))
    except ValueError:
        return 1


def run_experiment(config: ExperimentConfig, out_dir: str | None = None) -> int:
    """Execute all (realization, grid point, scheme) runs and write outputs.

    Work items are realizations, processed by ``RSBEAM_WORKERS`` processes;
    rows are assembled in deterministic index order afterward, so the CSV is
    byte-identical for a given (config, seed) regardless of worker count.
    Returns the process exit code (0 full success, 2 partial failure).
    """
    out_dir = out_dir or config.output_path
    os.makedirs(out_dir, exist_ok=True)
    rows = []
    artifacts = {}
    traces = {}
    any_failed = False

    schemes_list = config.schemes
    n_workers = worker_count()
    if n_workers > 1 and config.n_realizations > 1:
        import multiprocessing as mp

        with mp.get_context("spawn").Pool(min(n_workers, config.n_realizations)) as pool:
            parts = pool.starmap(
                _run_realization,
                [(config, r) for r in range(config.n_realizations)],
            )
    else:
        parts = [_run_realization(config, r) for r in range(config.n_realizations)]
    for part_rows, part_artifacts, part_traces, failed in parts:
        rows.extend(part_rows)
        artifacts.update(part_artifacts)
        traces.update(part_traces)
        any_failed = any_failed or failed

    rows.sort(key=lambda kv: (kv[0][0], kv[0][1], schemes_list.index(kv[0][2])))
    csv_path = os.path.join(out_dir, f"{config.experiment}.csv")
    with open(csv_path, "w") as fh:
        fh.write(",".join(CSV_COLUMNS) + "\n")
        for _, row in rows:
            fh.write(",".join(_format(row[c]) for c in CSV_COLUMNS) + "\n")

    summary: dict = {"experiment": config.experiment, "seed": config.seed, "grid": config.grid}
    means: dict = {}
    for scheme in schemes_list:
        per_grid = []
        for g_index, grid_value in enumerate(config.grid):
            vals = [row["min_rate"] for key, row in rows if key[0] == g_index and key[2] == scheme]
            feas = [row["feasible"] for key, row in rows if key[0] == g_index and key[2] == scheme]
            csum = [row["common_rate_sum"] for key, row in rows if key[0] == g_index and key[2] == scheme]
            per_grid.append({
                "grid_value": grid_value,
                "mean_min_rate": float(np.mean(vals)) if vals else float("nan"),
                "mean_common_rate_sum": float(np.mean(csum)) if csum else float("nan"),
                "feasible_count": int(sum(feas)),
                "total": len(feas),
            })
        means[scheme] = per_grid
    summary["means"] = means
    summary["beamformers"] = artifacts
    if traces:
        summary["objective_traces"] = traces
    with open(os.path.join(out_dir, f"{config.experiment}_summary.json"), "w") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)

    return 2 if any_failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rsbeam",
        description="Robust max-min beamforming and rate-splitting experiments",
    )
    sub = parser.add_subparsers(dest="experiment", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", required=True, help="path to the JSON config")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--realizations", type=int, default=None,
                       help="override the realization count")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with open(args.config) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    try:
        config = load_config(doc, experiment=args.experiment)
        if args.seed is not None:
            config.seed = args.seed
        if args.realizations is not None:
            config.n_realizations = args.realizations
        if args.out is not None:
            config.output_path = args.out
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    return run_experiment(config)


if __name__ == "__main__":
    sys.exit(main())
