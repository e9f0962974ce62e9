"""The three coupled sub-networks and the Taylor-series latent rollout.

A model consists of a dynamics network (latent state + parameters -> latent
time derivatives), a reconstruction network (latent state + parameters +
coordinates -> field values at that point) and an initial-state network
(parameters -> latent state at t=0). All use tanh activations between layers
and optional residual blocks; the rollout advances the latent state with an
explicit Taylor update whose derivative terms come from the dynamics network.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import DivergenceError, SpecError

DYN, REC, Z0 = "dyn", "rec", "z0"


@dataclass
class LayerSpec:
    kind: str  # "affine" | "resnet"
    width: int

    def __post_init__(self):
        if self.kind not in ("affine", "resnet"):
            raise SpecError(f"unknown layer kind {self.kind!r}")
        if self.width < 1:
            raise SpecError("layer width must be >= 1")


@dataclass
class ArchitectureSpec:
    """Sizes and layer lists for the three networks.

    ``taylor_order`` selects whether the dynamics network emits first
    derivatives only (order 1) or first and second (order 2, output width
    2 * n_latent).
    """

    n_latent: int
    n_param: int = 2
    n_space: int = 2
    n_fields: int = 2
    taylor_order: int = 2
    dyn_layers: list[LayerSpec] = field(default_factory=list)
    rec_layers: list[LayerSpec] = field(default_factory=list)
    z0_layers: list[LayerSpec] = field(default_factory=list)

    def validate(self):
        if self.n_latent < 1:
            raise SpecError("n_latent must be >= 1")
        if self.taylor_order not in (1, 2):
            raise SpecError("taylor_order must be 1 or 2")
        for name, layers, out_width in (
            (DYN, self.dyn_layers, self.taylor_order * self.n_latent),
            (REC, self.rec_layers, self.n_fields),
            (Z0, self.z0_layers, self.n_latent),
        ):
            if not layers:
                raise SpecError(f"{name} network has no layers")
            if layers[-1].kind != "affine":
                raise SpecError(f"{name} network must end with an affine output layer")
            if layers[-1].width != out_width:
                raise SpecError(
                    f"{name} output width {layers[-1].width} != required {out_width}"
                )
        return self

    def input_width(self, which: str) -> int:
        if which == DYN:
            return self.n_latent + self.n_param
        if which == REC:
            return self.n_latent + self.n_param + self.n_space
        if which == Z0:
            return self.n_param
        raise SpecError(f"unknown network {which!r}")

    def layers(self, which: str) -> list[LayerSpec]:
        return {DYN: self.dyn_layers, REC: self.rec_layers, Z0: self.z0_layers}[which]

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ArchitectureSpec":
        kw = dict(d)
        for key in ("dyn_layers", "rec_layers", "z0_layers"):
            kw[key] = [LayerSpec(**ls) for ls in kw[key]]
        return cls(**kw).validate()


def burgers_architecture(
    n_latent: int,
    taylor_order: int = 2,
    n_param: int = 2,
    n_space: int = 2,
    n_fields: int = 2,
) -> ArchitectureSpec:
    """Network sizes used for the 2D Burgers experiments; the layer widths also
    serve as sensible defaults for other field data of similar scale."""
    return ArchitectureSpec(
        n_latent=n_latent,
        n_param=n_param,
        n_space=n_space,
        n_fields=n_fields,
        taylor_order=taylor_order,
        dyn_layers=[
            LayerSpec("affine", 6),
            LayerSpec("resnet", 6),
            LayerSpec("affine", 6),
            LayerSpec("resnet", 6),
            LayerSpec("affine", taylor_order * n_latent),
        ],
        rec_layers=[
            LayerSpec("affine", 11),
            LayerSpec("resnet", 15),
            LayerSpec("affine", 15),
            LayerSpec("resnet", 15),
            LayerSpec("affine", 15),
            LayerSpec("resnet", 11),
            LayerSpec("affine", n_fields),
        ],
        z0_layers=[
            LayerSpec("affine", 6),
            LayerSpec("affine", 6),
            LayerSpec("affine", 6),
            LayerSpec("affine", n_latent),
        ],
    ).validate()


def _init_affine(store, rng, name, n_in, n_out):
    bound = np.sqrt(1.0 / n_in)
    store.add(f"{name}/W", rng.uniform(-bound, bound, size=(n_out, n_in)))
    store.add(f"{name}/b", np.zeros(n_out))


def build_networks(spec: ArchitectureSpec, seed: int) -> ad.ParamStore:
    """Allocate and initialise parameter blocks for all three networks.

    Weights are uniform in +-sqrt(1/fan_in), biases zero; block names encode
    network, layer index and role, e.g. ``rec/3/fc1/W``.
    """
    spec.validate()
    rng = np.random.default_rng(seed)
    store = ad.ParamStore()
    for which in (DYN, REC, Z0):
        n_in = spec.input_width(which)
        for i, layer in enumerate(spec.layers(which)):
            base = f"{which}/{i}"
            if layer.kind == "affine":
                _init_affine(store, rng, base, n_in, layer.width)
            else:
                _init_affine(store, rng, f"{base}/fc1", n_in, layer.width)
                _init_affine(store, rng, f"{base}/fc2", layer.width, layer.width)
                if n_in != layer.width:
                    _init_affine(store, rng, f"{base}/proj", n_in, layer.width)
            n_in = layer.width
    return store


def resnet_block_forward(tape, store, base: str, x: ad.Var, has_proj: bool) -> ad.Var:
    """Residual block: two affine layers with an interior tanh, plus skip.

    When input and output widths differ the skip path goes through a learned
    affine projection instead of the identity.
    """
    h = ad.affine(x, tape.param(store, f"{base}/fc1/W"), tape.param(store, f"{base}/fc1/b"), f"{base}/fc1")
    h = ad.tanh(h)
    h = ad.affine(h, tape.param(store, f"{base}/fc2/W"), tape.param(store, f"{base}/fc2/b"), f"{base}/fc2")
    if has_proj:
        skip = ad.affine(
            x, tape.param(store, f"{base}/proj/W"), tape.param(store, f"{base}/proj/b"), f"{base}/proj"
        )
    else:
        skip = x
    return ad.add(h, skip)


def network_forward(tape, store, spec: ArchitectureSpec, which: str, x: ad.Var) -> ad.Var:
    """Run one of the three networks; tanh between layers, linear output."""
    layers = spec.layers(which)
    n_in = spec.input_width(which)
    h = x
    for i, layer in enumerate(layers):
        base = f"{which}/{i}"
        if layer.kind == "affine":
            h = ad.affine(h, tape.param(store, f"{base}/W"), tape.param(store, f"{base}/b"), base)
        else:
            h = resnet_block_forward(tape, store, base, h, has_proj=(n_in != layer.width))
        if i < len(layers) - 1:
            h = ad.tanh(h)
        n_in = layer.width
    return h


def initial_state(tape, store, spec: ArchitectureSpec, mu_normalized) -> ad.Var:
    """Latent state at t=0 from the (normalized) parameter vector(s)."""
    mu = mu_normalized if isinstance(mu_normalized, ad.Var) else tape.leaf(mu_normalized)
    return network_forward(tape, store, spec, Z0, mu)


@dataclass
class Rollout:
    """Tape vars for a batched latent rollout: one (n_traj, n_latent) var per step."""

    states: list  # length n_steps+1
    first_deriv: list  # length n_steps+1, from the dynamics network at each state
    second_deriv: list | None  # same length when taylor_order == 2

    def state_matrix(self, traj: int) -> np.ndarray:
        return np.stack([s.value[traj] for s in self.states])

    def deriv_matrix(self, traj: int) -> np.ndarray:
        return np.stack([d.value[traj] for d in self.first_deriv])


def taylor_rollout(tape, store, spec: ArchitectureSpec, z0: ad.Var, mu_normalized, dt: float, n_steps: int) -> Rollout:
    """Advance z by the explicit Taylor update, recording derivative histories.

    z_{m+1} = z_m + dz_m * dt (+ d2z_m * dt^2 for order 2), with the
    derivatives produced by the dynamics network at the current state. The
    derivative of the final state is evaluated too, so histories have
    n_steps + 1 rows like the states.
    """
    if dt <= 0:
        raise SpecError("dt must be positive")
    mu = mu_normalized if isinstance(mu_normalized, ad.Var) else tape.leaf(np.atleast_2d(mu_normalized))
    ns = spec.n_latent
    order = spec.taylor_order
    states, d1, d2 = [z0], [], ([] if order == 2 else None)
    z = z0
    for m in range(n_steps + 1):
        out = network_forward(tape, store, spec, DYN, ad.concat_cols([z, mu]))
        dz = ad.slice_cols(out, 0, ns)
        d1.append(dz)
        if order == 2:
            d2z = ad.slice_cols(out, ns, 2 * ns)
            d2.append(d2z)
        if m == n_steps:
            break
        z = ad.add(z, ad.scale(dz, dt))
        if order == 2:
            z = ad.add(z, ad.scale(d2z, dt * dt))
        if not np.all(np.isfinite(z.value)):
            raise DivergenceError(f"latent rollout diverged at step {m + 1}", step=m + 1)
        states.append(z)
    return Rollout(states, d1, d2)


def reconstruct_rows(store, spec: ArchitectureSpec, rows: np.ndarray, chunk: int = 16384) -> np.ndarray:
    """Inference-only reconstruction for a batch of [z, mu, x] input rows.

    Chunked plain-numpy forward pass (no tape); row order is preserved, so
    permuting inputs permutes outputs identically.
    """
    rows = np.asarray(rows, dtype=np.float64)
    out = np.empty((rows.shape[0], spec.n_fields))
    for i in range(0, rows.shape[0], chunk):
        tape = ad.Tape(record=False)
        h = network_forward(tape, store, spec, REC, tape.leaf(rows[i : i + chunk]))
        out[i : i + chunk] = h.value
    return out


def reconstruct(store, spec: ArchitectureSpec, z_t, mu_normalized, x_normalized) -> np.ndarray:
    """Field values at coordinates x for one latent state and parameter point.

    ``x_normalized`` may be a single coordinate (d,) or a batch (M, d);
    mesh-free: any coordinates inside the normalized box are accepted.
    """
    x = np.atleast_2d(np.asarray(x_normalized, dtype=np.float64))
    z_t = np.asarray(z_t, dtype=np.float64).reshape(-1)
    mu = np.asarray(mu_normalized, dtype=np.float64).reshape(-1)
    rows = np.concatenate(
        [np.broadcast_to(z_t, (x.shape[0], z_t.size)), np.broadcast_to(mu, (x.shape[0], mu.size)), x],
        axis=1,
    )
    return reconstruct_rows(store, spec, rows)
