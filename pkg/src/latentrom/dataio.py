"""Dataset and model persistence, external snapshot ingestion, parameter
sampling.

On-disk layout is a directory per artifact: a JSON manifest plus raw
little-endian float64 binary arrays in row-major order — language-neutral,
bit-exact and easy to inspect. Trajectories in one dataset may sit on
different grids (the manifest records per-trajectory point counts); times are
shared across the archive.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import ParamStore
from .errors import ConfigError, DataError, MigrationError
from .idmodel import IDModel, LibrarySpec
from .networks import ArchitectureSpec
from .training import LatentCheck, Normalizer, TrainingConfig, TrainingResult

FORMAT_VERSION = 1


@dataclass
class FieldTrajectory:
    """Snapshots of one PDE instance: (n_times, n_points, n_fields) plus its
    coordinates and parameter point."""

    mu: np.ndarray
    coords: np.ndarray  # (n_points, d)
    fields: np.ndarray  # (n_times, n_points, n_fields)
    grid: str | None = None
    wall_seconds: float | None = None

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64).reshape(-1)
        self.coords = np.asarray(self.coords, dtype=np.float64)
        self.fields = np.asarray(self.fields, dtype=np.float64)
        if self.coords.ndim != 2:
            raise DataError(f"coordinates must be (n_points, d), got {self.coords.shape}")
        if self.fields.ndim != 3:
            raise DataError(f"fields must be (n_times, n_points, n_fields), got {self.fields.shape}")
        if self.fields.shape[1] != self.coords.shape[0]:
            raise DataError(
                f"fields cover {self.fields.shape[1]} points but coordinates have {self.coords.shape[0]}"
            )

    @property
    def n_points(self):
        return self.coords.shape[0]


@dataclass
class DatasetArchive:
    times: np.ndarray
    domain_box: np.ndarray  # (d, 2) rows [min, max]
    field_names: list
    trajectories: list = field(default_factory=list)
    generator: dict | None = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.domain_box = np.asarray(self.domain_box, dtype=np.float64)

    def add(self, traj: FieldTrajectory):
        if traj.fields.shape[0] != self.times.size:
            raise DataError(
                f"trajectory has {traj.fields.shape[0]} time rows, archive has {self.times.size}"
            )
        if traj.fields.shape[2] != len(self.field_names):
            raise DataError(
                f"trajectory has {traj.fields.shape[2]} field components, archive declares {len(self.field_names)}"
            )
        lo = traj.coords.min(axis=0)
        hi = traj.coords.max(axis=0)
        if np.any(lo < self.domain_box[:, 0]) or np.any(hi > self.domain_box[:, 1]):
            warnings.warn("trajectory coordinates outside the declared box; expanding manifest box")
            self.domain_box[:, 0] = np.minimum(self.domain_box[:, 0], lo)
            self.domain_box[:, 1] = np.maximum(self.domain_box[:, 1], hi)
        self.trajectories.append(traj)
        return traj

    @property
    def mus(self) -> np.ndarray:
        return np.stack([t.mu for t in self.trajectories])

    def total_solver_seconds(self):
        walls = [t.wall_seconds for t in self.trajectories if t.wall_seconds is not None]
        return float(sum(walls)) if walls else None


def _write_array(path: Path, arr: np.ndarray):
    path.write_bytes(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_array(path: Path, shape, what: str) -> np.ndarray:
    expected = int(np.prod(shape)) * 8
    data = path.read_bytes()
    if len(data) != expected:
        raise DataError(
            f"{what}: file {path.name} holds {len(data)} bytes, manifest implies {expected}"
        )
    return np.frombuffer(data, dtype="<f8").reshape(shape).astype(np.float64)


def save_dataset(archive: DatasetArchive, path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, traj in enumerate(archive.trajectories):
        tid = f"t{i:04d}"
        coords_file = f"coords_{tid}.bin"
        fields_file = f"fields_{tid}.bin"
        _write_array(path / coords_file, traj.coords)
        _write_array(path / fields_file, traj.fields)
        entries.append(
            {
                "id": tid,
                "mu": traj.mu.tolist(),
                "coords_file": coords_file,
                "fields_file": fields_file,
                "n_points": int(traj.n_points),
                "grid": traj.grid,
                "wall_seconds": traj.wall_seconds,
            }
        )
    manifest = {
        "version": FORMAT_VERSION,
        "kind": "dataset",
        "domain_box": archive.domain_box.tolist(),
        "times": archive.times.tolist(),
        "fields": list(archive.field_names),
        "generator": archive.generator,
        "trajectories": entries,
    }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=1))
    return path


def _load_manifest(path: Path, kind: str) -> dict:
    mf = path / "manifest.json"
    if not mf.exists():
        raise DataError(f"no manifest.json under {path}")
    manifest = json.loads(mf.read_text())
    version = manifest.get("version")
    if version != FORMAT_VERSION:
        raise MigrationError(
            f"{path} was written with format version {version}; this build reads {FORMAT_VERSION}"
        )
    if manifest.get("kind") != kind:
        raise DataError(f"{path} is a {manifest.get('kind')!r} artifact, expected {kind!r}")
    return manifest


def load_dataset(path) -> DatasetArchive:
    path = Path(path)
    manifest = _load_manifest(path, "dataset")
    for key in ("times", "domain_box", "fields", "trajectories"):
        if key not in manifest:
            raise DataError(f"dataset manifest missing key {key!r}")
    times = np.asarray(manifest["times"], dtype=np.float64)
    archive = DatasetArchive(
        times=times,
        domain_box=np.asarray(manifest["domain_box"], dtype=np.float64),
        field_names=list(manifest["fields"]),
        generator=manifest.get("generator"),
    )
    d = archive.domain_box.shape[0]
    nf = len(archive.field_names)
    for entry in manifest["trajectories"]:
        n = int(entry["n_points"])
        coords = _read_array(path / entry["coords_file"], (n, d), "coordinates")
        fields = _read_array(path / entry["fields_file"], (times.size, n, nf), "fields")
        archive.trajectories.append(
            FieldTrajectory(
                mu=np.asarray(entry["mu"]),
                coords=coords,
                fields=fields,
                grid=entry.get("grid"),
                wall_seconds=entry.get("wall_seconds"),
            )
        )
    return archive


def _load_table(source, what: str) -> np.ndarray:
    if isinstance(source, (str, Path)):
        p = Path(source)
        if p.suffix == ".npy":
            return np.load(p)
        if p.suffix in (".csv", ".txt"):
            return np.loadtxt(p, delimiter="," if p.suffix == ".csv" else None)
        raise DataError(f"{what}: unsupported file type {p.suffix!r} (use .npy or .csv)")
    return np.asarray(source, dtype=np.float64)


def ingest_external(coords, fields, times, mu, archive: DatasetArchive | None = None) -> FieldTrajectory:
    """Bring externally produced snapshots (any mesh, no topology needed) into
    archive form.

    ``coords`` and ``fields`` may be arrays or paths to .npy/.csv files; a
    scalar field given as (n_times, n_points) gains a trailing component axis.
    NaNs are rejected with the offending indices listed.
    """
    coords = _load_table(coords, "coordinates")
    fields = _load_table(fields, "fields")
    times = np.asarray(times, dtype=np.float64)
    if fields.ndim == 2:
        fields = fields[:, :, None]
    if fields.shape[0] != times.size:
        raise DataError(f"fields have {fields.shape[0]} time rows, times has {times.size}")
    bad = np.argwhere(~np.isfinite(fields))
    if bad.size:
        head = ", ".join(str(tuple(ix)) for ix in bad[:8])
        raise DataError(f"fields contain {bad.shape[0]} non-finite entries at indices {head}")
    traj = FieldTrajectory(mu=np.asarray(mu), coords=coords, fields=fields)
    if archive is not None:
        if not np.array_equal(archive.times, times):
            raise DataError("ingested times differ from the archive's time grid")
        archive.add(traj)
    return traj


def sample_parameters(box, n: int, mode: str = "random", seed: int = 0) -> np.ndarray:
    """Sample parameter points from a box: i.i.d. uniform or a tensor grid.

    Uniform-grid mode (2-d boxes) lays ceil(sqrt(n)) points per axis including
    the corners; a non-square n is bumped to the nearest tensor grid with a
    warning.
    """
    box = np.atleast_2d(np.asarray(box, dtype=np.float64))
    if n < 1:
        raise ConfigError("need n >= 1 samples")
    if mode == "random":
        rng = np.random.default_rng(seed)
        return rng.uniform(box[:, 0], box[:, 1], size=(n, box.shape[0]))
    if mode == "uniform-grid":
        if box.shape[0] != 2:
            raise ConfigError("uniform-grid sampling is defined for 2-d parameter boxes")
        g = int(np.ceil(np.sqrt(n)))
        if g * g != n:
            warnings.warn(f"n={n} is not a tensor grid; using {g}x{g}={g * g} points")
        a = np.linspace(box[0, 0], box[0, 1], g)
        b = np.linspace(box[1, 0], box[1, 1], g)
        aa, bb = np.meshgrid(a, b)
        return np.column_stack([aa.ravel(), bb.ravel()])
    raise ConfigError(f"unknown sampling mode {mode!r}")


@dataclass
class ModelBundle:
    """Everything the online stage needs; training data not included."""

    arch: ArchitectureSpec
    library: LibrarySpec
    store: ParamStore
    id_models: list
    normalizers: dict
    times: np.ndarray
    domain_box: np.ndarray
    training_config: TrainingConfig
    stop_reason: str = "unknown"
    latent_check: dict | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.domain_box = np.asarray(self.domain_box, dtype=np.float64)

    @property
    def mu_table(self) -> np.ndarray:
        return np.stack([m.mu for m in self.id_models])

    @property
    def xi_table(self) -> np.ndarray:
        return np.stack([m.xi for m in self.id_models])


def bundle_from_result(result: TrainingResult, domain_box, meta: dict | None = None) -> ModelBundle:
    check = result.final_check
    return ModelBundle(
        arch=result.arch,
        library=result.library,
        store=result.store,
        id_models=result.id_models,
        normalizers=result.normalizers,
        times=result.times,
        domain_box=np.asarray(domain_box, dtype=np.float64),
        training_config=result.config,
        stop_reason=result.stop_reason,
        latent_check=None
        if check is None
        else {
            "iteration": check.iteration,
            "per_trajectory": [float(r) for r in check.per_trajectory],
            "aggregate": float(check.aggregate),
            "within_tolerance": bool(check.within(result.config.tol_latent)),
        },
        meta=meta or {},
    )


def save_bundle(bundle: ModelBundle, path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    names = sorted(bundle.store.names())
    blocks = []
    offset = 0
    chunks = []
    for name in names:
        arr = bundle.store[name]
        blocks.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        offset += arr.size * 8
    params = b"".join(chunks)
    (path / "params.bin").write_bytes(params)

    manifest = {
        "version": FORMAT_VERSION,
        "kind": "bundle",
        "arch": bundle.arch.to_dict(),
        "library": bundle.library.to_dict(),
        "training_config": bundle.training_config.to_dict(),
        "normalizers": {k: v.to_dict() for k, v in bundle.normalizers.items()},
        "mu_table": bundle.mu_table.tolist(),
        "times": bundle.times.tolist(),
        "domain_box": bundle.domain_box.tolist(),
        "stop_reason": bundle.stop_reason,
        "latent_check": bundle.latent_check,
        "meta": bundle.meta,
        "blocks": blocks,
        "checksums": {"params.bin": hashlib.sha256(params).hexdigest()},
    }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=1))
    return path


def load_bundle(path) -> ModelBundle:
    path = Path(path)
    manifest = _load_manifest(path, "bundle")
    params = (path / "params.bin").read_bytes()
    digest = hashlib.sha256(params).hexdigest()
    if digest != manifest["checksums"]["params.bin"]:
        raise DataError(f"checksum mismatch for params.bin under {path}")

    store = ParamStore()
    for entry in manifest["blocks"]:
        size = int(np.prod(entry["shape"]))
        start = entry["offset"]
        arr = np.frombuffer(params[start : start + size * 8], dtype="<f8").reshape(entry["shape"])
        store.add(entry["name"], arr)

    library = LibrarySpec.from_dict(manifest["library"])
    mu_table = np.asarray(manifest["mu_table"], dtype=np.float64)
    id_models = []
    for i, mu in enumerate(mu_table):
        name = f"xi/{i}"
        if name not in store:
            raise DataError(f"bundle lacks coefficient block {name}; prediction impossible")
        id_models.append(IDModel(library, store[name].copy(), mu))
    if not id_models:
        raise DataError("bundle has no identified models; prediction impossible")

    return ModelBundle(
        arch=ArchitectureSpec.from_dict(manifest["arch"]),
        library=library,
        store=store,
        id_models=id_models,
        normalizers={k: Normalizer.from_dict(v) for k, v in manifest["normalizers"].items()},
        times=np.asarray(manifest["times"], dtype=np.float64),
        domain_box=np.asarray(manifest["domain_box"], dtype=np.float64),
        training_config=TrainingConfig.from_dict(manifest["training_config"]),
        stop_reason=manifest.get("stop_reason", "unknown"),
        latent_check=manifest.get("latent_check"),
        meta=manifest.get("meta", {}),
    )
