"""Online stage: predictions at unseen parameters and arbitrary coordinates.

For a query point the coefficient matrix is interpolated from the trained set,
the identified ODE is integrated from the initial-state network's latent
state, and the reconstruction network is evaluated at the query coordinates
for every time step. Also houses the relative-error metric and test-set
evaluation with speed-up accounting.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import networks as nets
from .dataio import FieldTrajectory, ModelBundle
from .errors import ConfigError, DataError, DivergenceError
from .idmodel import IDModel, solve_latent_ode
from .interp import KnnConfig, interpolate_coefficients


@dataclass
class PredictionRequest:
    """One query: parameter point (raw units) and coordinates (any mesh).

    ``times`` must match the bundle's training grid when given; temporal
    resampling is out of scope.
    """

    mu: np.ndarray
    coords: np.ndarray
    times: np.ndarray | None = None

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64).reshape(-1)
        self.coords = np.atleast_2d(np.asarray(self.coords, dtype=np.float64))
        if self.times is not None:
            self.times = np.asarray(self.times, dtype=np.float64)


def predict(bundle: ModelBundle, request: PredictionRequest, knn: KnnConfig | None = None) -> FieldTrajectory:
    """Reconstructed fields at the request's coordinates over the training
    time grid; ``wall_seconds`` on the result is the online time."""
    knn = (knn or KnnConfig()).validate()
    times = bundle.times
    if request.times is not None and not np.allclose(request.times, times, rtol=1e-9, atol=0.0):
        raise ConfigError("request time grid differs from the bundle's training grid")
    if request.coords.shape[1] != bundle.arch.n_space:
        raise ConfigError(
            f"coordinates are {request.coords.shape[1]}-d, model expects {bundle.arch.n_space}-d"
        )

    t0 = time.perf_counter()
    result = interpolate_coefficients(
        request.mu, bundle.mu_table, bundle.xi_table, knn, normalizer=bundle.normalizers["mu"]
    )
    mu_n = bundle.normalizers["mu"].normalize(request.mu)

    import latentrom.autodiff as ad

    tape = ad.Tape(record=False)
    z0 = nets.initial_state(tape, bundle.store, bundle.arch, mu_n[None, :]).value[0]
    model = IDModel(bundle.library, result.xi, request.mu)
    try:
        z_traj = solve_latent_ode(model, z0, times)
    except DivergenceError as err:
        raise DivergenceError(
            f"latent ODE diverged for mu={request.mu.tolist()} at step {err.step}", step=err.step
        ) from err

    x_n = bundle.normalizers["x"].normalize(request.coords)
    n_t = times.size
    m = x_n.shape[0]
    const = np.concatenate([np.broadcast_to(mu_n, (m, mu_n.size)), x_n], axis=1)
    rows = np.concatenate([np.repeat(z_traj, m, axis=0), np.tile(const, (n_t, 1))], axis=1)
    pred_n = nets.reconstruct_rows(bundle.store, bundle.arch, rows)
    fields = bundle.normalizers["u"].denormalize(pred_n).reshape(n_t, m, bundle.arch.n_fields)
    wall = time.perf_counter() - t0

    return FieldTrajectory(
        mu=request.mu, coords=request.coords, fields=fields, grid=None, wall_seconds=wall
    )


def l2_rate(predicted, truth) -> float:
    """Relative Frobenius-norm error in percent."""
    predicted = np.asarray(predicted, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if predicted.shape != truth.shape:
        raise DataError(f"shape mismatch {predicted.shape} vs {truth.shape}")
    ref = np.linalg.norm(truth)
    if ref == 0.0:
        raise DataError("reference field has zero norm")
    return float(100.0 * np.linalg.norm(predicted - truth) / ref)


@dataclass
class EvaluationReport:
    """Per-parameter and aggregate errors plus wall-clock accounting.

    The aggregate is computed over the concatenated fields, not by averaging
    percentages; speed-up compares summed high-fidelity solver seconds with
    the online prediction seconds for the same set.
    """

    rows: list = field(default_factory=list)
    aggregate_rl2: float = float("nan")
    online_seconds: float = 0.0
    hf_seconds: float | None = None
    partial: bool = False

    @property
    def speed_up(self) -> float | None:
        if self.hf_seconds is None or self.online_seconds <= 0:
            return None
        return self.hf_seconds / self.online_seconds

    def to_csv(self, path):
        import csv

        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            mu_dim = len(self.rows[0]["mu"]) if self.rows else 2
            writer.writerow([f"mu_{j}" for j in range(mu_dim)] + ["r_l2_percent", "predict_seconds", "hf_seconds"])
            for row in self.rows:
                writer.writerow(
                    list(row["mu"]) + [row["r_l2_percent"], row["predict_seconds"], row["hf_seconds"]]
                )
            writer.writerow([""] * mu_dim + [self.aggregate_rl2, self.online_seconds, self.hf_seconds])


def evaluate_testset(bundle: ModelBundle, truth, mus=None, knn: KnnConfig | None = None) -> EvaluationReport:
    """Predict every requested parameter point and compare with truth.

    ``truth`` is a loaded dataset archive; ``mus`` defaults to all its
    trajectories. Requested points with no truth trajectory flag the report as
    partial. Online timing is isolated from archive loading (done by caller).
    """
    report = EvaluationReport()
    table = truth.mus
    if mus is None:
        wanted = list(range(len(truth.trajectories)))
    else:
        wanted = []
        for mu in np.atleast_2d(np.asarray(mus, dtype=np.float64)):
            hits = np.where(np.all(np.isclose(table, mu, rtol=1e-12, atol=1e-12), axis=1))[0]
            if hits.size == 0:
                report.partial = True
            else:
                wanted.append(int(hits[0]))

    num = den = 0.0
    hf_total = 0.0
    hf_known = True
    for idx in wanted:
        traj = truth.trajectories[idx]
        pred = predict(bundle, PredictionRequest(mu=traj.mu, coords=traj.coords), knn=knn)
        diff = np.linalg.norm(pred.fields - traj.fields)
        ref = np.linalg.norm(traj.fields)
        num += diff**2
        den += ref**2
        report.online_seconds += pred.wall_seconds
        if traj.wall_seconds is None:
            hf_known = False
        else:
            hf_total += traj.wall_seconds
        report.rows.append(
            {
                "mu": traj.mu.tolist(),
                "r_l2_percent": float(100.0 * diff / ref) if ref > 0 else float("nan"),
                "predict_seconds": pred.wall_seconds,
                "hf_seconds": traj.wall_seconds,
            }
        )
    if den > 0:
        report.aggregate_rl2 = float(100.0 * np.sqrt(num / den))
    report.hf_seconds = hf_total if (hf_known and wanted) else None
    return report
