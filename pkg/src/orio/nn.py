"""Minimal feed-forward network machinery.

Plain-numpy MLPs with per-layer activations, exact reverse-mode gradients,
diagonal-Gaussian output heads, bias-corrected Adam, a finite-difference
gradient checker, and a versioned text serialization. Everything is float64
and deterministic: identical parameters and inputs give bit-identical
outputs. Parameter containers are immutable; updates return new containers.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence, TextIO

import numpy as np

from .errors import DimensionError, FormatError, NonFiniteError

ACTIVATIONS = ("identity", "tanh", "relu", "softplus")

# Log-variance outputs are clipped to this band before exponentiation so a
# degenerate fit (e.g. a constant-zero target) cannot overflow downstream
# estimators. The band is far wider than anything a trained model emits.
LOGVAR_MIN = -16.0
LOGVAR_MAX = 16.0


def _apply_activation(name: str, z: np.ndarray) -> np.ndarray:
    if name == "identity":
        return z
    if name == "tanh":
        return np.tanh(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "softplus":
        # log(1 + e^z), stable for large |z|
        return np.logaddexp(0.0, z)
    raise ValueError(f"unknown activation {name!r}")


def _activation_deriv(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    """d(activation)/dz given pre-activation z and activation value a."""
    if name == "identity":
        return np.ones_like(z)
    if name == "tanh":
        return 1.0 - a * a
    if name == "relu":
        return (z > 0.0).astype(z.dtype)
    if name == "softplus":
        return 1.0 / (1.0 + np.exp(-z))
    raise ValueError(f"unknown activation {name!r}")


@dataclass(frozen=True)
class MlpParams:
    """Weights/biases of an MLP; layer i maps weights[i] @ x + biases[i].

    weights[i] has shape (out_i, in_i) with in_{i+1} == out_i; activations
    holds one tag per layer (applied after the affine map of that layer).
    """

    weights: tuple
    biases: tuple
    activations: tuple

    def __post_init__(self):
        ws = tuple(np.asarray(w, dtype=np.float64) for w in self.weights)
        bs = tuple(np.asarray(b, dtype=np.float64) for b in self.biases)
        acts = tuple(self.activations)
        if not (len(ws) == len(bs) == len(acts)) or not ws:
            raise DimensionError("need equal, nonzero counts of weights, biases, activations")
        for i, (w, b, act) in enumerate(zip(ws, bs, acts)):
            if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
                raise DimensionError(f"layer {i}: weight {w.shape} and bias {b.shape} do not agree")
            if act not in ACTIVATIONS:
                raise ValueError(f"layer {i}: unknown activation {act!r}")
            if i > 0 and w.shape[1] != ws[i - 1].shape[0]:
                raise DimensionError(
                    f"layer {i} expects input of size {w.shape[1]}, "
                    f"but layer {i - 1} outputs {ws[i - 1].shape[0]}"
                )
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise NonFiniteError(f"layer {i}: non-finite parameter entries")
        object.__setattr__(self, "weights", ws)
        object.__setattr__(self, "biases", bs)
        object.__setattr__(self, "activations", acts)

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def n_layers(self) -> int:
        return len(self.weights)


def make_mlp(
    sizes: Sequence[int],
    rng: np.random.Generator,
    hidden: str = "tanh",
    output: str = "identity",
) -> MlpParams:
    """Fresh MLP with layer widths `sizes` and U(-1/sqrt(fan_in), ..) init."""
    if len(sizes) < 2:
        raise DimensionError("need at least input and output sizes")
    ws, bs, acts = [], [], []
    for i in range(len(sizes) - 1):
        fan_in, fan_out = sizes[i], sizes[i + 1]
        scale = 1.0 / np.sqrt(fan_in)
        ws.append(rng.uniform(-scale, scale, size=(fan_out, fan_in)))
        bs.append(rng.uniform(-scale, scale, size=fan_out))
        acts.append(hidden if i < len(sizes) - 2 else output)
    return MlpParams(tuple(ws), tuple(bs), tuple(acts))


def _as_batch(x: np.ndarray, in_dim: int, what: str) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != in_dim:
        raise DimensionError(f"{what}: layer 0 expects input of size {in_dim}, got shape {x.shape}")
    return x, single


def mlp_forward(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """Evaluate the network; accepts a single input (in,) or a batch (B, in)."""
    xb, single = _as_batch(x, params.in_dim, "mlp_forward")
    a = xb
    for w, b, act in zip(params.weights, params.biases, params.activations):
        a = _apply_activation(act, a @ w.T + b)
    return a[0] if single else a


def _forward_trace(params: MlpParams, xb: np.ndarray):
    """Forward pass keeping (pre-activation, activation) per layer for backprop."""
    pres, acts = [], [xb]
    a = xb
    for w, b, act in zip(params.weights, params.biases, params.activations):
        z = a @ w.T + b
        a = _apply_activation(act, z)
        pres.append(z)
        acts.append(a)
    return pres, acts


def mlp_backprop(params: MlpParams, x: np.ndarray, upstream: np.ndarray):
    """Reverse-mode gradients of sum_batch <output, upstream>.

    Returns (grads, dx) where grads is the flat list
    [dW0, db0, dW1, db1, ...] summed over the batch and dx matches x's shape.
    """
    xb, single = _as_batch(x, params.in_dim, "mlp_backprop")
    ub = np.asarray(upstream, dtype=np.float64)
    if single:
        ub = ub[None, :]
    if ub.shape != (xb.shape[0], params.out_dim):
        raise DimensionError(
            f"upstream shape {np.asarray(upstream).shape} does not match output dim {params.out_dim}"
        )
    pres, acts = _forward_trace(params, xb)
    grads: list[np.ndarray] = [np.empty(0)] * (2 * params.n_layers)
    delta = ub
    for i in range(params.n_layers - 1, -1, -1):
        delta = delta * _activation_deriv(params.activations[i], pres[i], acts[i + 1])
        grads[2 * i] = delta.T @ acts[i]
        grads[2 * i + 1] = delta.sum(axis=0)
        delta = delta @ params.weights[i]
    return grads, (delta[0] if single else delta)


def mlp_gradient(params: MlpParams, x: np.ndarray, upstream: np.ndarray) -> list:
    """Gradients of <output, upstream> w.r.t. every weight and bias."""
    grads, _ = mlp_backprop(params, x, upstream)
    return grads


def params_to_arrays(params: MlpParams) -> list:
    out: list[np.ndarray] = []
    for w, b in zip(params.weights, params.biases):
        out.append(w)
        out.append(b)
    return out


def arrays_to_params(arrays: Sequence[np.ndarray], activations: Sequence[str]) -> MlpParams:
    ws = tuple(arrays[0::2])
    bs = tuple(arrays[1::2])
    return MlpParams(ws, bs, tuple(activations))


def zero_grads_like(arrays: Iterable[np.ndarray]) -> list:
    return [np.zeros_like(a) for a in arrays]


def add_grads(acc: list, extra: Sequence[np.ndarray], scale: float = 1.0) -> None:
    for a, e in zip(acc, extra):
        a += scale * e


# ---------------------------------------------------------------------------
# Gaussian output heads
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GaussianParams:
    """Mean and covariance of a Gaussian over the residual (or latent) space."""

    mean: np.ndarray
    cov: np.ndarray
    diagonal: bool = False

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        cov = np.asarray(self.cov, dtype=np.float64)
        n = mean.shape[0]
        if mean.ndim != 1 or cov.shape != (n, n):
            raise DimensionError(f"mean {mean.shape} and cov {cov.shape} do not agree")
        if not np.allclose(cov, cov.T, atol=1e-10):
            raise ValueError("covariance is not symmetric")
        if self.diagonal:
            if not (np.diag(cov) > 0.0).all():
                raise ValueError("diagonal covariance requires strictly positive variances")
        elif np.linalg.eigvalsh(cov).min() < -1e-10:
            raise ValueError("covariance has a negative eigenvalue")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def variances(self) -> np.ndarray:
        return np.diag(self.cov).copy()


def split_gaussian_output(out: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split a 2n-wide head output into (means, variances = exp(clipped logvar))."""
    width = out.shape[-1]
    if width % 2 != 0:
        raise DimensionError(f"Gaussian head needs an even output width, got {width}")
    n = width // 2
    mean = out[..., :n]
    var = np.exp(np.clip(out[..., n:], LOGVAR_MIN, LOGVAR_MAX))
    return mean, var


def gaussian_head(params: MlpParams, x: np.ndarray) -> GaussianParams:
    """Evaluate the net and read its output as an n-dim diagonal Gaussian.

    The first n outputs are the mean, the last n are log-variances
    (exponentiated, hence strictly positive for any finite input).
    """
    out = mlp_forward(params, x)
    if out.ndim != 1:
        raise DimensionError("gaussian_head takes a single input vector")
    mean, var = split_gaussian_output(out)
    return GaussianParams(mean=mean, cov=np.diag(var), diagonal=True)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    """First/second-moment accumulators; shapes mirror the parameter list."""

    m: list
    v: list
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(arrays: Sequence[np.ndarray], lr: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    return AdamState(
        m=[np.zeros_like(a) for a in arrays],
        v=[np.zeros_like(a) for a in arrays],
        step=0, lr=lr, beta1=beta1, beta2=beta2, eps=eps,
    )


def adam_step_arrays(state: AdamState, arrays: Sequence[np.ndarray],
                     grads: Sequence[np.ndarray]) -> tuple[AdamState, list]:
    """One bias-corrected Adam update; returns (new state, new arrays)."""
    if len(arrays) != len(state.m) or len(grads) != len(arrays):
        raise DimensionError("adam_step: parameter/gradient/accumulator counts differ")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    new_m, new_v, new_arrays = [], [], []
    for a, g, m, v in zip(arrays, grads, state.m, state.v):
        if a.shape != g.shape:
            raise DimensionError(f"adam_step: gradient shape {g.shape} != parameter shape {a.shape}")
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        new_arrays.append(a - state.lr * m_hat / (np.sqrt(v_hat) + state.eps))
        new_m.append(m)
        new_v.append(v)
    new_state = AdamState(m=new_m, v=new_v, step=t, lr=state.lr,
                          beta1=state.beta1, beta2=state.beta2, eps=state.eps)
    return new_state, new_arrays


def adam_step(state: AdamState, params: MlpParams, grads: Sequence[np.ndarray]):
    """Adam update on an MlpParams container; returns (new state, new params)."""
    new_state, arrays = adam_step_arrays(state, params_to_arrays(params), grads)
    return new_state, arrays_to_params(arrays, params.activations)


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------


def grad_check(loss_fn: Callable[[MlpParams], tuple], params: MlpParams,
               step: float = 1e-5) -> float:
    """Max relative error between analytic gradients and central differences.

    loss_fn(params) must return (scalar loss, grads as [dW0, db0, ...]).
    Relative error per entry is |analytic - numeric| / max(1, |numeric|).
    """
    loss0, analytic = loss_fn(params)
    if not np.isfinite(loss0):
        raise NonFiniteError("grad_check: loss is non-finite at the base point")
    arrays = [a.copy() for a in params_to_arrays(params)]
    worst = 0.0
    for k, arr in enumerate(arrays):
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = arr[idx]
            arr[idx] = orig + step
            lp, _ = loss_fn(arrays_to_params(arrays, params.activations))
            arr[idx] = orig - step
            lm, _ = loss_fn(arrays_to_params(arrays, params.activations))
            arr[idx] = orig
            if not (np.isfinite(lp) and np.isfinite(lm)):
                raise NonFiniteError("grad_check: loss is non-finite at a perturbed point")
            numeric = (lp - lm) / (2.0 * step)
            err = abs(analytic[k][idx] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# Text serialization (versioned, exact decimal round-trip)
# ---------------------------------------------------------------------------

MLP_MAGIC = "orio-mlp 1"


def _fmt(values: np.ndarray) -> str:
    return " ".join(repr(float(v)) for v in values)


def write_mlp(params: MlpParams, fh: TextIO) -> None:
    fh.write(MLP_MAGIC + "\n")
    fh.write(f"layers {params.n_layers}\n")
    for w, b, act in zip(params.weights, params.biases, params.activations):
        fh.write(f"layer {w.shape[0]} {w.shape[1]} {act}\n")
        for row in w:
            fh.write(_fmt(row) + "\n")
        fh.write(_fmt(b) + "\n")


def _read_line(fh: TextIO, what: str) -> str:
    line = fh.readline()
    if not line:
        raise FormatError(f"truncated model file: expected {what}")
    return line.strip()


def _parse_floats(line: str, n: int, what: str) -> np.ndarray:
    parts = line.split()
    if len(parts) != n:
        raise FormatError(f"{what}: expected {n} values, got {len(parts)}")
    try:
        return np.array([float(p) for p in parts], dtype=np.float64)
    except ValueError as exc:
        raise FormatError(f"{what}: {exc}") from exc


def read_mlp(fh: TextIO) -> MlpParams:
    magic = _read_line(fh, "magic line")
    if magic != MLP_MAGIC:
        raise FormatError(f"bad magic {magic!r}: expected {MLP_MAGIC!r}")
    head = _read_line(fh, "layer count").split()
    if len(head) != 2 or head[0] != "layers":
        raise FormatError(f"bad layer-count line {head!r}")
    n_layers = int(head[1])
    ws, bs, acts = [], [], []
    for i in range(n_layers):
        spec = _read_line(fh, f"layer {i} header").split()
        if len(spec) != 4 or spec[0] != "layer":
            raise FormatError(f"bad layer header {spec!r}")
        out_dim, in_dim, act = int(spec[1]), int(spec[2]), spec[3]
        rows = [_parse_floats(_read_line(fh, f"layer {i} weight row"), in_dim,
                              f"layer {i} weights") for _ in range(out_dim)]
        bias = _parse_floats(_read_line(fh, f"layer {i} bias"), out_dim, f"layer {i} bias")
        ws.append(np.vstack(rows))
        bs.append(bias)
        acts.append(act)
    return MlpParams(tuple(ws), tuple(bs), tuple(acts))


def save_mlp(params: MlpParams, path) -> None:
    with open(path, "w") as fh:
        write_mlp(params, fh)


def load_mlp(path) -> MlpParams:
    with open(path) as fh:
        return read_mlp(fh)
