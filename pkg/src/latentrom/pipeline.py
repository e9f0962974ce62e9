"""Operational layer: run configurations and the four pipeline commands.

Each command takes one flat config dict (documented defaults below, overridden
by caller-supplied keys), works inside a run directory, echoes the effective
config there, and returns a JSON-able summary. The service endpoints and the
CLI are thin wrappers around these functions.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime
from pathlib import Path

import numpy as np

from . import burgers
from .dataio import (
    DatasetArchive,
    bundle_from_result,
    load_bundle,
    load_dataset,
    sample_parameters,
    save_bundle,
    save_dataset,
)
from .errors import ConfigError, SolverError
from .idmodel import LibrarySpec
from .interp import KnnConfig
from .networks import burgers_architecture
from .online import PredictionRequest, evaluate_testset, predict
from .training import TrainingConfig, train, write_training_log

GENERATE_DEFAULTS = {
    "box": [[0.7, 0.9], [0.9, 1.1]],  # amplitude x width of the Gaussian IC
    "n_samples": 25,
    "sampling": "random",  # "random" | "uniform-grid"
    "segments": 50,  # int, or list of ints to split trajectories across grids
    "reynolds": 10000.0,
    "time_horizon": 1.0,
    "n_steps": 200,
    "picard_tol": 1e-10,
    "picard_max_sweeps": 50,
    "seed": 0,
    "workers": 1,
    "out": None,
}

TRAIN_DEFAULTS = {
    "dataset": None,  # required
    "n_latent": 5,
    "taylor_order": 2,
    "library_terms": ["constant", "linear"],
    "iterations": 6000,
    "check_every": 500,
    "tol_latent": 1.0,
    "tol_loss": 1e-4,
    "weight_id": 0.05,
    "weight_z0": 0.5,
    "weight_coef": 0.0,
    "learning_rate": 0.05,
    "lr_decay": 0.6,
    "lr_decay_every": 500,
    "spatial_subsample": 32,  # points per trajectory per iteration; null = all
    "l_range": 1.0,
    "seed": 0,
    "workers": 1,
    "out": None,
}

PREDICT_DEFAULTS = {
    "bundle": None,  # required
    "mu": None,  # required, e.g. [0.8, 1.0]
    "coords": "grid:50",  # "grid:<n>" | path to .npy/.csv | "dataset:<path>[:index]"
    "knn_k": 5,
    "knn_power": 2.0,
    "knn_space": "normalized",
    "match_tol": 1e-12,
    "seed": 0,
    "workers": 1,
    "out": None,
}

EVALUATE_DEFAULTS = {
    "bundle": None,  # required
    "truth": None,  # required: dataset archive with reference trajectories
    "knn_k": 5,
    "knn_power": 2.0,
    "knn_space": "normalized",
    "match_tol": 1e-12,
    "save_predictions": False,
    "seed": 0,
    "workers": 1,
    "out": None,
}

DEFAULTS = {
    "generate": GENERATE_DEFAULTS,
    "train": TRAIN_DEFAULTS,
    "predict": PREDICT_DEFAULTS,
    "evaluate": EVALUATE_DEFAULTS,
}


def effective_config(command: str, overrides: dict | None) -> dict:
    """Defaults for ``command`` updated with overrides; unknown keys rejected."""
    if command not in DEFAULTS:
        raise ConfigError(f"unknown command {command!r}")
    cfg = dict(DEFAULTS[command])
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in cfg:
            raise ConfigError(f"unknown config key {key!r} for command {command!r}")
        cfg[key] = value
    return cfg


def make_run_dir(cfg: dict, command: str) -> Path:
    """Create the run directory; timestamped and never reused unless given."""
    if cfg.get("out"):
        path = Path(cfg["out"])
        path.mkdir(parents=True, exist_ok=True)
        return path
    stamp = datetime.now().strftime("%Y%m%d-%H%M%S")
    base = Path("runs")
    path = base / f"{command}-{stamp}"
    i = 0
    while path.exists():
        i += 1
        path = base / f"{command}-{stamp}-{i}"
    path.mkdir(parents=True)
    return path


def _echo_config(cfg: dict, command: str, run_dir: Path):
    (run_dir / "effective_config.json").write_text(
        json.dumps({"command": command, **cfg}, indent=1, default=str)
    )


def _simulate_one(args):
    mu, segments, solver_cfg = args
    grid = burgers.make_grid(segments, tuple(solver_cfg["domain"]))
    cfg = burgers.BurgersConfig(
        reynolds=solver_cfg["reynolds"],
        domain=tuple(solver_cfg["domain"]),
        time_horizon=solver_cfg["time_horizon"],
        n_steps=solver_cfg["n_steps"],
        picard_tol=solver_cfg["picard_tol"],
        picard_max_sweeps=solver_cfg["picard_max_sweeps"],
    )
    return burgers.simulate(mu, cfg, grid)


def run_generate(overrides: dict | None = None) -> dict:
    """Simulate trajectories for sampled (or given) parameter points."""
    cfg = effective_config("generate", overrides)
    run_dir = make_run_dir(cfg, "generate")
    _echo_config(cfg, "generate", run_dir)

    box = np.asarray(cfg["box"], dtype=np.float64)
    mus = sample_parameters(box, cfg["n_samples"], cfg["sampling"], cfg["seed"])

    segments = cfg["segments"]
    seg_list = [int(segments)] if np.isscalar(segments) else [int(s) for s in segments]
    rng = np.random.default_rng(cfg["seed"])
    if len(seg_list) == 1:
        assignment = np.zeros(len(mus), dtype=int)
    else:
        # random split into near-equal parts, one per grid scale
        assignment = rng.permutation(np.arange(len(mus)) % len(seg_list))

    solver_cfg = {
        "domain": [-3.0, 3.0],
        "reynolds": cfg["reynolds"],
        "time_horizon": cfg["time_horizon"],
        "n_steps": cfg["n_steps"],
        "picard_tol": cfg["picard_tol"],
        "picard_max_sweeps": cfg["picard_max_sweeps"],
    }
    jobs = [(mus[i], seg_list[assignment[i]], solver_cfg) for i in range(len(mus))]

    archive = DatasetArchive(
        times=np.linspace(0.0, cfg["time_horizon"], cfg["n_steps"] + 1),
        domain_box=np.array([[-3.0, 3.0], [-3.0, 3.0]]),
        field_names=["u", "v"],
        generator={"solver": "burgers-implicit-upwind", **solver_cfg, "segments": seg_list},
    )
    failures = []
    workers = int(cfg["workers"])
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_simulate_one, job) for job in jobs]
            for job, fut in zip(jobs, futures):
                try:
                    archive.add(fut.result())
                except SolverError as err:
                    failures.append({"mu": list(map(float, job[0])), "error": str(err)})
    else:
        for job in jobs:
            try:
                archive.add(_simulate_one(job))
            except SolverError as err:
                failures.append({"mu": list(map(float, job[0])), "error": str(err)})

    dataset_dir = run_dir / "dataset"
    save_dataset(archive, dataset_dir)
    summary = {
        "run_dir": str(run_dir),
        "dataset": str(dataset_dir),
        "n_trajectories": len(archive.trajectories),
        "n_failures": len(failures),
        "failures": failures,
        "solver_seconds": archive.total_solver_seconds(),
        "grids": sorted({t.grid for t in archive.trajectories}),
    }
    (run_dir / "summary.json").write_text(json.dumps(summary, indent=1))
    return summary


def _parse_n_latent(value):
    if isinstance(value, str) and ".." in value:
        lo, hi = value.split("..")
        return list(range(int(lo), int(hi) + 1))
    if isinstance(value, (list, tuple)):
        return [int(v) for v in value]
    return [int(value)]


def run_train(overrides: dict | None = None) -> dict:
    """Train one bundle per requested latent dimension."""
    cfg = effective_config("train", overrides)
    if not cfg["dataset"]:
        raise ConfigError("train needs a 'dataset' path")
    dataset_path = Path(cfg["dataset"])
    if not dataset_path.exists():
        raise ConfigError(f"dataset path {dataset_path} does not exist")
    run_dir = make_run_dir(cfg, "train")
    _echo_config(cfg, "train", run_dir)

    archive = load_dataset(dataset_path)
    subsample = cfg["spatial_subsample"]
    tcfg = TrainingConfig(
        iterations=int(cfg["iterations"]),
        check_every=int(cfg["check_every"]),
        tol_latent=float(cfg["tol_latent"]),
        tol_loss=float(cfg["tol_loss"]),
        weight_id=float(cfg["weight_id"]),
        weight_z0=float(cfg["weight_z0"]),
        weight_coef=float(cfg["weight_coef"]),
        learning_rate=float(cfg["learning_rate"]),
        lr_decay=float(cfg["lr_decay"]),
        lr_decay_every=int(cfg["lr_decay_every"]),
        spatial_subsample=None if subsample in (None, "all") else int(subsample),
        l_range=float(cfg["l_range"]),
        seed=int(cfg["seed"]),
    ).validate()

    d = archive.domain_box.shape[0]
    nf = len(archive.field_names)
    n_param = archive.trajectories[0].mu.size
    bundles = []
    for ns in _parse_n_latent(cfg["n_latent"]):
        arch = burgers_architecture(
            ns, int(cfg["taylor_order"]), n_param=n_param, n_space=d, n_fields=nf
        )
        library = LibrarySpec(ns, tuple(cfg["library_terms"]))
        result = train(archive, arch, library, tcfg)
        bundle = bundle_from_result(
            result,
            archive.domain_box,
            meta={"dataset": str(dataset_path), "n_latent": ns},
        )
        suffix = f"_ns{ns}" if len(_parse_n_latent(cfg["n_latent"])) > 1 else ""
        bundle_dir = run_dir / f"bundle{suffix}"
        save_bundle(bundle, bundle_dir)
        write_training_log(result.log, bundle_dir / "training_log.csv")
        bundles.append(
            {
                "bundle": str(bundle_dir),
                "n_latent": ns,
                "stop_reason": result.stop_reason,
                "iterations_run": result.log[-1]["iteration"] + 1,
                "final_loss": result.log[-1]["loss_total"],
                "latent_rl2": result.final_check.aggregate,
                "train_seconds": result.wall_seconds,
            }
        )
    summary = {"run_dir": str(run_dir), "bundles": bundles}
    (run_dir / "summary.json").write_text(json.dumps(summary, indent=1))
    return summary


def _resolve_coords(spec, bundle) -> np.ndarray:
    if isinstance(spec, (list, tuple)):
        return np.asarray(spec, dtype=np.float64)
    text = str(spec)
    if text.startswith("grid:"):
        segments = int(text.split(":", 1)[1])
        return burgers.make_grid(segments, tuple(bundle.domain_box[0])).coords
    if text.startswith("dataset:"):
        parts = text.split(":")
        index = int(parts[2]) if len(parts) > 2 else 0
        return load_dataset(parts[1]).trajectories[index].coords
    path = Path(text)
    if not path.exists():
        raise ConfigError(f"coordinates source {text!r} not found")
    if path.suffix == ".npy":
        return np.load(path)
    return np.loadtxt(path, delimiter="," if path.suffix == ".csv" else None)


def _knn_from_cfg(cfg) -> KnnConfig:
    return KnnConfig(
        k=int(cfg["knn_k"]),
        power=float(cfg["knn_power"]),
        space=cfg["knn_space"],
        match_tol=float(cfg["match_tol"]),
    ).validate()


def run_predict(overrides: dict | None = None) -> dict:
    """Predict the field trajectory at one parameter point."""
    cfg = effective_config("predict", overrides)
    if not cfg["bundle"] or cfg["mu"] is None:
        raise ConfigError("predict needs 'bundle' and 'mu'")
    run_dir = make_run_dir(cfg, "predict")
    _echo_config(cfg, "predict", run_dir)

    bundle = load_bundle(cfg["bundle"])
    coords = _resolve_coords(cfg["coords"], bundle)
    traj = predict(bundle, PredictionRequest(mu=cfg["mu"], coords=coords), knn=_knn_from_cfg(cfg))

    out_archive = DatasetArchive(
        times=bundle.times,
        domain_box=bundle.domain_box.copy(),
        field_names=[f"f{i}" for i in range(bundle.arch.n_fields)],
        generator={"kind": "prediction", "bundle": str(cfg["bundle"])},
    )
    out_archive.add(traj)
    pred_dir = run_dir / "prediction"
    save_dataset(out_archive, pred_dir)
    summary = {
        "run_dir": str(run_dir),
        "prediction": str(pred_dir),
        "mu": list(map(float, np.asarray(cfg["mu"]).ravel())),
        "n_points": int(coords.shape[0]),
        "online_seconds": traj.wall_seconds,
    }
    (run_dir / "summary.json").write_text(json.dumps(summary, indent=1))
    return summary


def run_evaluate(overrides: dict | None = None) -> dict:
    """Evaluate a bundle against a truth archive; report errors and speed-up."""
    cfg = effective_config("evaluate", overrides)
    if not cfg["bundle"] or not cfg["truth"]:
        raise ConfigError("evaluate needs 'bundle' and 'truth'")
    run_dir = make_run_dir(cfg, "evaluate")
    _echo_config(cfg, "evaluate", run_dir)

    bundle = load_bundle(cfg["bundle"])
    truth = load_dataset(cfg["truth"])
    t0 = time.perf_counter()
    report = evaluate_testset(bundle, truth, knn=_knn_from_cfg(cfg))
    wall = time.perf_counter() - t0
    report_path = run_dir / "evaluation.csv"
    report.to_csv(report_path)

    summary = {
        "run_dir": str(run_dir),
        "report": str(report_path),
        "n_evaluated": len(report.rows),
        "aggregate_rl2_percent": report.aggregate_rl2,
        "online_seconds": report.online_seconds,
        "hf_seconds": report.hf_seconds,
        "speed_up": report.speed_up,
        "wall_seconds": wall,
        "partial": report.partial,
    }
    (run_dir / "summary.json").write_text(json.dumps(summary, indent=1))
    return summary


INGEST_DEFAULTS = {
    "coords_file": None,  # required
    "fields_file": None,  # required
    "mu": None,  # required
    "times": None,  # required unless extending an archive
    "archive": None,  # existing dataset to extend
    "out": None,
    "seed": 0,
    "workers": 1,
}

DEFAULTS["ingest"] = INGEST_DEFAULTS


def run_ingest(overrides: dict | None = None) -> dict:
    """Bring external snapshots (any mesh) into archive form on disk."""
    from .dataio import ingest_external

    cfg = effective_config("ingest", overrides)
    for key in ("coords_file", "fields_file", "mu"):
        if cfg[key] is None:
            raise ConfigError(f"ingest needs {key!r}")
    run_dir = make_run_dir(cfg, "ingest")
    _echo_config(cfg, "ingest", run_dir)

    if cfg["archive"]:
        archive = load_dataset(cfg["archive"])
        times = archive.times
    else:
        if cfg["times"] is None:
            raise ConfigError("ingest needs 'times' when not extending an archive")
        times = np.asarray(cfg["times"], dtype=np.float64)
        archive = None

    traj = ingest_external(cfg["coords_file"], cfg["fields_file"], times, cfg["mu"], archive=archive)
    if archive is None:
        lo = traj.coords.min(axis=0)
        hi = traj.coords.max(axis=0)
        archive = DatasetArchive(
            times=times,
            domain_box=np.column_stack([lo, hi]),
            field_names=[f"f{i}" for i in range(traj.fields.shape[2])],
            generator={"kind": "ingested"},
        )
        archive.trajectories.append(traj)

    out_dir = run_dir / "dataset"
    save_dataset(archive, out_dir)
    summary = {
        "run_dir": str(run_dir),
        "dataset": str(out_dir),
        "n_trajectories": len(archive.trajectories),
        "n_points": int(traj.n_points),
    }
    (run_dir / "summary.json").write_text(json.dumps(summary, indent=1))
    return summary


RUNNERS = {
    "generate": run_generate,
    "train": run_train,
    "predict": run_predict,
    "evaluate": run_evaluate,
    "ingest": run_ingest,
}
