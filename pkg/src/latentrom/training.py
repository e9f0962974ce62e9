"""Normalization, loss assembly and the joint optimization loop.

One training run fits the three networks and all per-trajectory ODE
coefficient matrices at once by minimizing

    loss = rec + w_z0 * z0 + w_id * deriv_match + w_coef * coef_penalty

with Adam under a step-decay learning-rate schedule. Every ``check_every``
iterations the identified ODEs are re-integrated and training stops early once
the latent reconstruction rate and the loss are both within tolerance.
"""

from __future__ import annotations

import dataclasses
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import networks as nets
from .errors import ConfigError, DivergenceError, ShapeError
from .idmodel import IDModel, LibrarySpec, library_op, solve_latent_ode


@dataclass
class Normalizer:
    """Componentwise shift/scale: normalized = (v - ref) / width.

    Built from per-component ranges; symmetric ranges get both reference and
    half-width scaled by the range multiplier. Normalize followed by
    denormalize is the identity to machine precision.
    """

    ref: np.ndarray
    width: np.ndarray

    def __post_init__(self):
        self.ref = np.atleast_1d(np.asarray(self.ref, dtype=np.float64))
        self.width = np.atleast_1d(np.asarray(self.width, dtype=np.float64))
        if self.ref.shape != self.width.shape:
            raise ShapeError("normalizer ref/width shapes differ")
        if np.any(self.width <= 0):
            raise ConfigError("normalizer widths must be positive")

    @classmethod
    def from_minmax(cls, lo, hi, l_range: float = 1.0) -> "Normalizer":
        lo = np.atleast_1d(np.asarray(lo, dtype=np.float64))
        hi = np.atleast_1d(np.asarray(hi, dtype=np.float64))
        if np.any(hi < lo):
            raise ConfigError("component max must be >= min")
        ref = 0.5 * (lo + hi)
        width = 0.5 * (hi - lo)
        degenerate = width == 0.0
        if np.any(degenerate):
            warnings.warn("degenerate component range widened by epsilon")
            width[degenerate] = 1e-8 * np.maximum(1.0, np.abs(ref[degenerate]))
        symmetric = np.abs(lo + hi) <= 1e-12 * np.maximum(np.abs(lo), np.abs(hi))
        ref[symmetric] *= l_range
        width[symmetric] *= l_range
        return cls(ref, width)

    def normalize(self, v):
        return (np.asarray(v, dtype=np.float64) - self.ref) / self.width

    def denormalize(self, v):
        return np.asarray(v, dtype=np.float64) * self.width + self.ref

    def to_dict(self):
        return {"ref": self.ref.tolist(), "width": self.width.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["ref"]), np.asarray(d["width"]))


def build_normalizer(lo, hi, l_range: float = 1.0) -> Normalizer:
    return Normalizer.from_minmax(lo, hi, l_range)


@dataclass
class TrainingConfig:
    iterations: int = 6000
    check_every: int = 500  # cadence of the ODE-resolve stopping check
    tol_latent: float = 1.0  # latent reconstruction rate, percent
    tol_loss: float = 1e-4
    weight_id: float = 0.05
    weight_z0: float = 0.5
    weight_coef: float = 0.0
    learning_rate: float = 0.05
    lr_decay: float = 0.6
    lr_decay_every: int = 500
    spatial_subsample: int | None = None  # None = all points every iteration
    l_range: float = 1.0
    seed: int = 0

    def validate(self):
        if self.iterations < 1 or self.check_every < 1:
            raise ConfigError("iterations and check_every must be >= 1")
        if min(self.weight_id, self.weight_z0, self.weight_coef) < 0:
            raise ConfigError("loss weights must be >= 0")
        if self.learning_rate <= 0:
            raise ConfigError("learning rate must be positive")
        return self

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d).validate()


def lr_schedule(iteration: int, lr0: float, factor: float, period: int) -> float:
    """Step decay: lr0 * factor ** floor(iteration / period), iteration 0-based."""
    return lr0 * factor ** (iteration // period)


@dataclass
class TrainingBatch:
    """Normalized inputs for one loss evaluation.

    ``coords``/``fields`` hold the (possibly subsampled) per-trajectory
    coordinate rows and their field targets; trajectories may have different
    point counts (mixed grids).
    """

    mu: np.ndarray  # (n_traj, n_param) normalized
    coords: list  # per trajectory (n_i, d) normalized
    fields: list  # per trajectory (n_steps+1, n_i, n_fields) normalized
    dt: float
    n_steps: int


def total_loss(tape, store, arch, library: LibrarySpec, batch: TrainingBatch, config: TrainingConfig):
    """Assemble the joint loss on the tape.

    Returns the scalar loss var plus the unweighted component values. The
    reconstruction term averages squared error over trajectories, time rows,
    points and field components; the t0 term does the same for the initial
    reconstruction from the initial-state network; the derivative term matches
    the dynamics-network derivatives against the library model, summed over
    time and averaged over trajectories and latent components.
    """
    n_traj = batch.mu.shape[0]
    n_rows_t = batch.n_steps + 1
    ns = arch.n_latent
    nf = arch.n_fields
    counts = [c.shape[0] for c in batch.coords]
    r1 = sum(counts)

    mu_var = tape.leaf(batch.mu)
    z0 = nets.network_forward(tape, store, arch, nets.Z0, mu_var)
    rollout = nets.taylor_rollout(tape, store, arch, z0, mu_var, batch.dt, batch.n_steps)

    z_all = ad.stack_rows(rollout.states)  # ((n_steps+1)*n_traj, ns), time-major
    d_all = ad.stack_rows(rollout.first_deriv)

    # reconstruction rows: [z(t_l) | mu_i | x_m] for every (l, i, m)
    rep_idx = np.concatenate(
        [np.repeat(l * n_traj + np.arange(n_traj), counts) for l in range(n_rows_t)]
    )
    z_rep = ad.gather_rows(z_all, rep_idx)
    const_block = np.concatenate(
        [
            np.concatenate([np.broadcast_to(batch.mu[i], (counts[i], batch.mu.shape[1])) for i in range(n_traj)]),
            np.concatenate(batch.coords),
        ],
        axis=1,
    )
    rows = ad.concat_cols([z_rep, tape.leaf(np.tile(const_block, (n_rows_t, 1)))])
    pred = nets.network_forward(tape, store, arch, nets.REC, rows)

    target = np.concatenate([np.concatenate(
        [batch.fields[i][l] for i in range(n_traj)]) for l in range(n_rows_t)])
    w_row = np.concatenate([np.full(counts[i], 1.0 / (n_traj * counts[i] * nf)) for i in range(n_traj)])
    loss_rec = ad.weighted_sse(pred, target, np.tile(w_row / n_rows_t, n_rows_t))

    # t0 reconstruction from the initial-state network: reuse the l=0 rows
    loss_z0 = ad.weighted_sse(ad.slice_rows(pred, 0, r1), target[:r1], w_row)

    # derivative matching per trajectory against its coefficient block
    id_terms = []
    coef_terms = []
    for i in range(n_traj):
        idx = i + n_traj * np.arange(n_rows_t)
        theta = library_op(ad.gather_rows(z_all, idx), library)
        xi = tape.param(store, f"xi/{i}")
        resid = ad.sub(ad.matmul(theta, xi), ad.gather_rows(d_all, idx))
        id_terms.append(ad.sum_squares(resid, 1.0 / (n_traj * ns)))
        coef_terms.append(ad.sum_squares(xi, 1.0 / n_traj))
    loss_id = ad.weighted_sum(id_terms, [1.0] * n_traj)
    loss_coef = ad.weighted_sum(coef_terms, [1.0] * n_traj)

    total = ad.weighted_sum(
        [loss_rec, loss_z0, loss_id, loss_coef],
        [1.0, config.weight_z0, config.weight_id, config.weight_coef],
    )
    components = {
        "rec": float(loss_rec.value),
        "z0": float(loss_z0.value),
        "id": float(loss_id.value),
        "coef": float(loss_coef.value),
        "total": float(total.value),
    }
    if not np.isfinite(components["total"]):
        raise DivergenceError(f"non-finite training loss: {components}")
    return total, components


class AdamState:
    """First/second moment estimates for every parameter block."""

    def __init__(self, store: ad.ParamStore, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {name: np.zeros_like(store[name]) for name in store.names()}
        self.v = {name: np.zeros_like(store[name]) for name in store.names()}


def adam_step(store: ad.ParamStore, state: AdamState, lr: float):
    """One Adam update from the store's accumulated gradients."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for name in state.m:
        g = store.grad(name)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        store[name] -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


@dataclass
class LatentCheck:
    """ODE-resolve accuracy of the identified systems at one checkpoint."""

    iteration: int
    per_trajectory: list
    aggregate: float

    def within(self, tol: float) -> bool:
        return self.aggregate <= tol


@dataclass
class TrainingResult:
    store: ad.ParamStore
    id_models: list
    normalizers: dict
    arch: "nets.ArchitectureSpec" = None
    library: LibrarySpec = None
    config: TrainingConfig = None
    times: np.ndarray = None
    log: list = field(default_factory=list)
    stop_reason: str = "max-iterations"
    final_check: LatentCheck = None
    wall_seconds: float = 0.0


def _latent_check(store, arch, library, mu_n, dt, n_steps, iteration) -> LatentCheck:
    """Re-integrate each identified ODE and compare with the network rollout."""
    tape = ad.Tape(record=False)
    z0 = nets.initial_state(tape, store, arch, mu_n)
    rollout = nets.taylor_rollout(tape, store, arch, z0, mu_n, dt, n_steps)
    times = np.arange(n_steps + 1) * dt
    rates = []
    num = den = 0.0
    for i in range(mu_n.shape[0]):
        z_net = rollout.state_matrix(i)
        model = IDModel(library, store[f"xi/{i}"], mu_n[i])
        try:
            z_ode = solve_latent_ode(model, z_net[0], times)
        except DivergenceError:
            rates.append(float("inf"))
            num = float("inf")
            continue
        diff = np.linalg.norm(z_ode - z_net)
        ref = np.linalg.norm(z_net)
        rates.append(100.0 * diff / ref if ref > 0 else float("inf"))
        num += diff**2
        den += ref**2
    aggregate = float(100.0 * np.sqrt(num / den)) if den > 0 and np.isfinite(num) else float("inf")
    return LatentCheck(iteration, rates, aggregate)


def train(dataset, arch, library: LibrarySpec, config: TrainingConfig, on_iteration=None) -> "TrainingResult":
    """Fit networks and coefficient matrices to a training dataset.

    ``dataset`` is a loaded archive (see dataio); one trajectory per training
    parameter point, all sharing the same time grid. Returns a TrainingResult;
    convert to a persistable bundle with ``dataio.bundle_from_result``.
    """
    config.validate()
    arch.validate()
    if library.n_latent != arch.n_latent:
        raise ConfigError("library and architecture disagree on n_latent")
    times = np.asarray(dataset.times, dtype=np.float64)
    steps = np.diff(times)
    if np.any(steps <= 0) or not np.allclose(steps, steps[0], rtol=1e-9, atol=0.0):
        raise ConfigError("training requires a uniform, increasing time grid")
    dt = float(steps[0])
    n_steps = times.size - 1
    trajs = dataset.trajectories
    if not trajs:
        raise ConfigError("dataset has no trajectories")

    mus = np.stack([t.mu for t in trajs])
    box = np.asarray(dataset.domain_box, dtype=np.float64)
    norm_mu = Normalizer.from_minmax(mus.min(axis=0), mus.max(axis=0), config.l_range)
    norm_x = Normalizer.from_minmax(box[:, 0], box[:, 1], config.l_range)
    u_all_lo = np.min([t.fields.min(axis=(0, 1)) for t in trajs], axis=0)
    u_all_hi = np.max([t.fields.max(axis=(0, 1)) for t in trajs], axis=0)
    norm_u = Normalizer.from_minmax(u_all_lo, u_all_hi, config.l_range)
    normalizers = {"mu": norm_mu, "x": norm_x, "u": norm_u}

    mu_n = norm_mu.normalize(mus)
    coords_n = [norm_x.normalize(t.coords) for t in trajs]
    fields_n = [norm_u.normalize(t.fields) for t in trajs]

    store = nets.build_networks(arch, config.seed)
    for i in range(len(trajs)):
        store.add(f"xi/{i}", np.zeros((library.n_columns, arch.n_latent)))
    adam = AdamState(store)
    rng = np.random.default_rng(config.seed)

    log = []
    stop_reason = "max-iterations"
    check = None
    t_start = time.perf_counter()
    last_components = None
    for it in range(config.iterations):
        if config.spatial_subsample is None:
            coords_b, fields_b = coords_n, fields_n
        else:
            coords_b, fields_b = [], []
            for c, f in zip(coords_n, fields_n):
                k = min(config.spatial_subsample, c.shape[0])
                sel = rng.choice(c.shape[0], size=k, replace=False)
                coords_b.append(c[sel])
                fields_b.append(f[:, sel])
        batch = TrainingBatch(mu_n, coords_b, fields_b, dt, n_steps)

        tape = ad.Tape()
        store.zero_grads()
        try:
            loss, components = total_loss(tape, store, arch, library, batch, config)
        except DivergenceError as err:
            err.checkpoint = TrainingResult(
                store, _collect_models(store, library, mus), normalizers,
                arch, library, config, times, log, "diverged", check,
                time.perf_counter() - t_start,
            )
            raise
        tape.backward(loss)
        adam_step(store, adam, lr_schedule(it, config.learning_rate, config.lr_decay, config.lr_decay_every))
        last_components = components

        row = {
            "iteration": it,
            "lr": lr_schedule(it, config.learning_rate, config.lr_decay, config.lr_decay_every),
            **{f"loss_{k}": v for k, v in components.items()},
            "latent_rl2": "",
        }
        if (it + 1) % config.check_every == 0:
            check = _latent_check(store, arch, library, mu_n, dt, n_steps, it + 1)
            row["latent_rl2"] = check.aggregate
            if check.within(config.tol_latent) and components["total"] <= config.tol_loss:
                log.append(row)
                stop_reason = "tolerance"
                break
        log.append(row)
        if on_iteration is not None:
            on_iteration(it, components)

    if check is None or check.iteration != log[-1]["iteration"] + 1:
        check = _latent_check(store, arch, library, mu_n, dt, n_steps, log[-1]["iteration"] + 1)

    return TrainingResult(
        store,
        _collect_models(store, library, mus),
        normalizers,
        arch,
        library,
        config,
        times,
        log,
        stop_reason,
        check,
        time.perf_counter() - t_start,
    )


def _collect_models(store, library, mus):
    return [IDModel(library, store[f"xi/{i}"].copy(), mus[i]) for i in range(mus.shape[0])]


def write_training_log(log, path):
    """Training log as CSV: iteration, lr, loss components, latent check."""
    import csv

    if not log:
        return
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(log[0]))
        writer.writeheader()
        writer.writerows(log)
