"""Feed-forward networks, the diagonal Gaussian policy and its Fisher-vector product.

Flat parameter layout, for a network with layer sizes ``n0 -> n1 -> ... -> nk``:
for each layer ``i`` in order, the weight matrix ``W_i`` of shape
``(n_{i-1}, n_i)`` in row-major order followed by its bias ``b_i`` of shape
``(n_i,)``. A Gaussian policy appends one log standard deviation per action
dimension after the last bias.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad

LOG_2PI = math.log(2.0 * math.pi)
ACTIVATIONS = ("tanh", "relu")


class DimensionError(ValueError):
    def __init__(self, what: str, expected, actual):
        super().__init__(f"{what}: expected {expected}, got {actual}")
        self.expected = expected
        self.actual = actual


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden_dims: tuple[int, ...]
    output_dim: int
    activation: str = "tanh"

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if not self.hidden_dims:
            raise ValueError("hidden_dims must be non-empty")
        if min(self.input_dim, self.output_dim, *self.hidden_dims) < 1:
            raise ValueError(f"all layer sizes must be >= 1: {self}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")

    @property
    def sizes(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden_dims, self.output_dim)

    def layer_slices(self) -> list[tuple[slice, tuple[int, int], slice]]:
        """(weight slice, weight shape, bias slice) per layer in the flat vector."""
        out, offset = [], 0
        sizes = self.sizes
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            w = slice(offset, offset + fan_in * fan_out)
            offset += fan_in * fan_out
            b = slice(offset, offset + fan_out)
            offset += fan_out
            out.append((w, (fan_in, fan_out), b))
        return out

    @property
    def n_weights(self) -> int:
        sizes = self.sizes
        return sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))


@dataclass(frozen=True, eq=False)
class PolicyParams:
    """Immutable flat parameter vector."""

    flat: np.ndarray = field(repr=False)

    def __post_init__(self):
        flat = np.array(self.flat, dtype=float, copy=True).reshape(-1)
        if not np.all(np.isfinite(flat)):
            raise ValueError("parameters must be finite")
        flat.setflags(write=False)
        object.__setattr__(self, "flat", flat)

    def __len__(self):
        return self.flat.size

    def __eq__(self, other):
        return isinstance(other, PolicyParams) and np.array_equal(self.flat, other.flat)

    __hash__ = None


def init_params(spec: MlpSpec, rng: np.random.Generator, last_layer_scale: float = 1.0,
                log_std_dim: int = 0, log_std: float = 0.0) -> PolicyParams:
    """Uniform fan-in initialization, ``W ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in))``, zero biases."""
    flat = np.zeros(spec.n_weights + log_std_dim)
    layers = spec.layer_slices()
    for i, (w, shape, _) in enumerate(layers):
        bound = 1.0 / math.sqrt(shape[0])
        weights = rng.uniform(-bound, bound, size=shape[0] * shape[1])
        if i == len(layers) - 1:
            weights *= last_layer_scale
        flat[w] = weights
    flat[spec.n_weights:] = log_std
    return PolicyParams(flat)


def mlp_apply(spec: MlpSpec, flat, x):
    """Forward pass on either plain arrays or traced values."""
    layers = spec.layer_slices()
    if not isinstance(flat, ad.Var) and not isinstance(x, ad.Var):
        h = x
        for i, (w, shape, b) in enumerate(layers):
            h = h @ flat[w].reshape(shape) + flat[b]
            if i < len(layers) - 1:
                h = np.tanh(h) if spec.activation == "tanh" else np.maximum(h, 0.0)
        return h
    act = ad.tanh if spec.activation == "tanh" else ad.relu
    h = x
    for i, (w, shape, b) in enumerate(layers):
        h = h @ flat[w].reshape(shape) + flat[b]
        if i < len(layers) - 1:
            h = act(h)
    return h


def _check_obs(spec: MlpSpec, obs) -> np.ndarray:
    obs = np.asarray(obs, dtype=float)
    if obs.shape[-1:] != (spec.input_dim,) or obs.ndim > 2:
        raise DimensionError("observation", f"(..., {spec.input_dim})", obs.shape)
    if not np.all(np.isfinite(obs)):
        raise ValueError("observation contains non-finite entries")
    return obs


def forward(spec: MlpSpec, params: PolicyParams, obs) -> np.ndarray:
    """Network output for one observation or a batch (rows)."""
    obs = _check_obs(spec, obs)
    n = spec.n_weights
    if len(params) < n:
        raise DimensionError("parameter vector", f">= {n}", len(params))
    return mlp_apply(spec, params.flat[:n], obs)


@dataclass(frozen=True)
class GaussianPolicy:
    """Diagonal Gaussian with an MLP mean and state-independent log-std."""

    spec: MlpSpec
    params: PolicyParams

    def __post_init__(self):
        expected = self.spec.n_weights + self.spec.output_dim
        if len(self.params) != expected:
            raise DimensionError("policy parameter vector", expected, len(self.params))

    @classmethod
    def initial(cls, spec: MlpSpec, seed: int, log_std: float = 0.0) -> "GaussianPolicy":
        rng = np.random.default_rng(seed)
        return cls(spec, init_params(spec, rng, last_layer_scale=0.01,
                                     log_std_dim=spec.output_dim, log_std=log_std))

    @property
    def action_dim(self) -> int:
        return self.spec.output_dim

    @property
    def log_std(self) -> np.ndarray:
        return self.params.flat[self.spec.n_weights:]

    @property
    def std(self) -> np.ndarray:
        return np.exp(self.log_std)

    def with_params(self, flat) -> "GaussianPolicy":
        return GaussianPolicy(self.spec, flat if isinstance(flat, PolicyParams) else PolicyParams(flat))

    def mean(self, obs) -> np.ndarray:
        return forward(self.spec, self.params, obs)

    def sample(self, obs, rng: np.random.Generator) -> np.ndarray:
        mu = self.mean(obs)
        return mu + self.std * rng.standard_normal(mu.shape)


def gaussian_log_prob(spec: MlpSpec, flat, obs, actions):
    """Per-row log-density; ``flat`` may be traced. Returns shape ``(N,)``."""
    n = spec.n_weights
    mu = mlp_apply(spec, flat, obs)
    log_std = flat[n:n + spec.output_dim]
    z = (actions - mu) / ad.exp(log_std)
    return ad.vsum(-0.5 * z * z - log_std, axis=-1) - 0.5 * LOG_2PI * spec.output_dim


def log_prob(policy: GaussianPolicy, obs, action):
    """Log-density of ``action`` under the policy at ``obs`` (scalar or per row)."""
    obs = _check_obs(policy.spec, obs)
    action = np.asarray(action, dtype=float)
    if action.shape[-1:] != (policy.action_dim,):
        raise DimensionError("action", f"(..., {policy.action_dim})", action.shape)
    if not np.all(np.isfinite(action)):
        raise ValueError("action contains non-finite entries")
    out = gaussian_log_prob(policy.spec, policy.params.flat, obs, action)
    return float(out) if np.ndim(out) == 0 else out


def grad(loss_fn, params) -> np.ndarray:
    """Gradient of a scalar ``loss_fn(flat)`` built from the supported primitives."""
    flat = params.flat if isinstance(params, PolicyParams) else np.asarray(params, dtype=float)
    return ad.grad(loss_fn, flat)


def mean_kl(spec: MlpSpec, old_flat, new_flat, obs):
    """Mean over ``obs`` rows of KL(old || new) for diagonal Gaussians; ``new_flat`` may be traced."""
    n = spec.n_weights
    mu_old = mlp_apply(spec, np.asarray(old_flat)[:n], obs)
    ls_old = np.asarray(old_flat)[n:n + spec.output_dim]
    mu = mlp_apply(spec, new_flat, obs)
    ls = new_flat[n:n + spec.output_dim]
    var = ad.exp(2.0 * ls)
    per = ls - ls_old + (np.exp(2.0 * ls_old) + (mu_old - mu) ** 2) / (2.0 * var) - 0.5
    return ad.vmean(ad.vsum(per, axis=-1))


class FisherOperator:
    """Hessian of the mean KL at the current policy, applied to vectors.

    At ``new == old`` the KL Hessian equals ``J^T M J`` with ``J`` the Jacobian of
    the stacked means and ``M = diag(1/(N sigma^2))``, plus ``2 I`` on the
    log-std block. One trace of the mean network is reused for every product.
    """

    def __init__(self, policy: GaussianPolicy, obs_batch, damping: float = 0.0):
        if damping < 0:
            raise ValueError("damping must be >= 0")
        obs = _check_obs(policy.spec, obs_batch)
        if obs.ndim == 1:
            obs = obs[None]
        spec = policy.spec
        self.n = spec.n_weights
        self.size = len(policy.params)
        self.damping = damping
        self._trace = ad.Trace(lambda w: mlp_apply(spec, w, obs), policy.params.flat[: self.n])
        self._inv_var = np.exp(-2.0 * policy.log_std) / obs.shape[0]
        self.calls = 0

    def __call__(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.shape != (self.size,):
            raise DimensionError("FVP vector", (self.size,), v.shape)
        self.calls += 1
        jv = self._trace.jvp(v[: self.n])
        out = np.empty_like(v)
        out[: self.n] = self._trace.vjp(jv * self._inv_var)
        out[self.n:] = 2.0 * v[self.n:]
        out += self.damping * v
        if not np.all(np.isfinite(out)):
            raise FloatingPointError(
                f"non-finite Fisher-vector product (|v|={np.linalg.norm(v):.3e}, "
                f"|Jv|={np.linalg.norm(jv):.3e})"
            )
        return out


def fisher_vector_product(policy: GaussianPolicy, obs_batch, v, damping: float = 0.0) -> np.ndarray:
    return FisherOperator(policy, obs_batch, damping)(v)


class Adam:
    """Adam on a flat parameter vector (returns new arrays, never mutates input)."""

    def __init__(self, size: int, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, flat: np.ndarray, gradient: np.ndarray) -> np.ndarray:
        """One descent step on ``gradient``."""
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * gradient
        self.v = self.b2 * self.v + (1 - self.b2) * gradient * gradient
        m_hat = self.m / (1 - self.b1 ** self.t)
        v_hat = self.v / (1 - self.b2 ** self.t)
        return flat - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


# --- checkpoints ---------------------------------------------------------

_MAGIC = "cpo_reloc-checkpoint v1"


def save_checkpoint(path, spec: MlpSpec, params: PolicyParams, log_std_dim: int = 0) -> None:
    """Text format: header lines then one float per line at 17 significant digits."""
    lines = [
        _MAGIC,
        f"input_dim {spec.input_dim}",
        "hidden_dims " + " ".join(str(h) for h in spec.hidden_dims),
        f"output_dim {spec.output_dim}",
        f"activation {spec.activation}",
        f"log_std_dim {log_std_dim}",
        f"n_params {len(params)}",
    ]
    if len(params) != spec.n_weights + log_std_dim:
        raise DimensionError("checkpoint parameters", spec.n_weights + log_std_dim, len(params))
    lines += [f"{x:.17g}" for x in params.flat]
    Path(path).write_text("\n".join(lines) + "\n")


def load_checkpoint(path) -> tuple[MlpSpec, PolicyParams, int]:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != _MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    header = dict(line.split(" ", 1) for line in lines[1:7])
    spec = MlpSpec(
        int(header["input_dim"]),
        tuple(int(h) for h in header["hidden_dims"].split()),
        int(header["output_dim"]),
        header["activation"],
    )
    n = int(header["n_params"])
    values = [float(x) for x in lines[7:7 + n]]
    if len(values) != n:
        raise ValueError(f"{path}: expected {n} parameters, found {len(values)}")
    return spec, PolicyParams(np.array(values)), int(header["log_std_dim"])


def save_policy(path, policy: GaussianPolicy) -> None:
    save_checkpoint(path, policy.spec, policy.params, log_std_dim=policy.action_dim)


def load_policy(path) -> GaussianPolicy:
    spec, params, log_std_dim = load_checkpoint(path)
    if log_std_dim != spec.output_dim:
        raise ValueError(f"{path}: not a Gaussian policy checkpoint")
    return GaussianPolicy(spec, params)
