"""Conditional VAE over dynamics residuals, with closed-form moment estimation.

The model has three diagonal-Gaussian nets: an encoder q(z | x, d), a decoder
p(d | x, z), and a state-conditioned latent prior p(z | x). Training maximizes
the evidence lower bound

    log p(d | x) >= E_q[log p(d | x, z)] - KL(q(z | x, d) || p(z | x))

via the reparameterization z = mu_q + sigma_q * eps with caller-supplied (or
per-batch drawn) standard-normal eps, all gradients hand-derived and exact.

Once trained, S latent draws from the prior turn the decoder into an
S-component Gaussian mixture over d. Its mean and covariance follow in closed
form (the mixture estimator), which this module provides alongside the plain
two-step scheme that also samples the decoder and takes population statistics.
The mixture route integrates the decoder noise out analytically, so it carries
strictly less Monte Carlo variance at equal S.

Conditioning inputs are standardized internally using dataset statistics
stored on the model; residual outputs stay in raw units so moment estimates
compare directly against true distributions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TextIO

import numpy as np

from .errors import DimensionError, FormatError, NonFiniteError
from . import nn

LOG_2PI = math.log(2.0 * math.pi)


# ---------------------------------------------------------------------------
# Data containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ResidualDataset:
    """Rows of (state x, observed residual d = x_next - F(x, u))."""

    states: np.ndarray     # (N, state_dim)
    residuals: np.ndarray  # (N, residual_dim)
    dt: float
    system: str = ""

    def __post_init__(self):
        x = np.asarray(self.states, dtype=np.float64)
        d = np.asarray(self.residuals, dtype=np.float64)
        if x.ndim != 2 or d.ndim != 2 or x.shape[0] != d.shape[0]:
            raise DimensionError(f"dataset shapes {x.shape} / {d.shape} do not agree")
        if not (np.isfinite(x).all() and np.isfinite(d).all()):
            raise NonFiniteError("dataset contains non-finite rows")
        object.__setattr__(self, "states", x)
        object.__setattr__(self, "residuals", d)

    @property
    def n_rows(self) -> int:
        return self.states.shape[0]

    @property
    def state_dim(self) -> int:
        return self.states.shape[1]

    @property
    def residual_dim(self) -> int:
        return self.residuals.shape[1]

    def save(self, path) -> None:
        """Delimited text with a header row; metadata in a `<path>.meta` sidecar."""
        cols = [f"x_{i}" for i in range(self.state_dim)]
        cols += [f"d_{i}" for i in range(self.residual_dim)]
        with open(path, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for xs, ds in zip(self.states, self.residuals):
                fh.write(",".join(repr(float(v)) for v in xs) + ","
                         + ",".join(repr(float(v)) for v in ds) + "\n")
        with open(str(path) + ".meta", "w") as fh:
            fh.write(f"dt = {self.dt!r}\n")
            fh.write(f"system = {self.system}\n")
            fh.write(f"rows = {self.n_rows}\n")

    @staticmethod
    def load(path) -> "ResidualDataset":
        with open(path) as fh:
            header = fh.readline().strip().split(",")
            n_x = sum(1 for c in header if c.startswith("x_"))
            n_d = sum(1 for c in header if c.startswith("d_"))
            if n_x == 0 or n_d == 0 or n_x + n_d != len(header):
                raise FormatError(f"bad dataset header {header!r}")
            rows = []
            for line_no, line in enumerate(fh, start=2):
                parts = line.strip().split(",")
                if len(parts) != n_x + n_d:
                    raise FormatError(f"line {line_no}: expected {n_x + n_d} values")
                rows.append([float(p) for p in parts])
        data = np.array(rows, dtype=np.float64)
        dt, system = 0.0, ""
        try:
            with open(str(path) + ".meta") as fh:
                for line in fh:
                    if "=" not in line:
                        continue
                    key, value = (s.strip() for s in line.split("=", 1))
                    if key == "dt":
                        dt = float(value)
                    elif key == "system":
                        system = value
        except FileNotFoundError:
            pass
        return ResidualDataset(states=data[:, :n_x], residuals=data[:, n_x:],
                               dt=dt, system=system)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 128
    lr: float = 1e-3
    lr_final: float = None    # when set, exponential per-epoch decay lr -> lr_final
    kl_warmup: float = 0.1    # fraction of total steps spent ramping KL weight 0 -> 1
    hidden: tuple = (64, 64)
    latent_dim: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if not 0.0 <= self.kl_warmup < 1.0:
            raise ValueError("kl_warmup must lie in [0, 1)")
        if self.lr_final is not None and not 0.0 < self.lr_final <= self.lr:
            raise ValueError("lr_final must lie in (0, lr]")

    def lr_at(self, epoch: int) -> float:
        """Constant lr for the first 70% of epochs, then exponential decay
        to lr_final (anneals the Adam oscillation floor without starving
        early progress)."""
        if self.lr_final is None or self.epochs == 1:
            return self.lr
        hold = int(0.7 * self.epochs)
        if epoch < hold or hold >= self.epochs - 1:
            return self.lr
        frac = (epoch - hold) / (self.epochs - 1 - hold)
        return float(self.lr * (self.lr_final / self.lr) ** frac)


@dataclass(frozen=True)
class MomentEstimate:
    """Estimated conditional mean/covariance of the residual at one state."""

    mean: np.ndarray
    cov: np.ndarray
    samples: int

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        cov = np.asarray(self.cov, dtype=np.float64)
        if cov.shape != (mean.shape[0], mean.shape[0]):
            raise DimensionError(f"moment shapes {mean.shape} / {cov.shape}")
        if not np.allclose(cov, cov.T, atol=1e-10):
            raise ValueError("moment covariance not symmetric within 1e-10")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", 0.5 * (cov + cov.T))


@dataclass(frozen=True)
class CvaeModel:
    """Encoder/decoder/prior parameter triple plus input-standardization stats."""

    encoder: nn.MlpParams
    decoder: nn.MlpParams
    prior: nn.MlpParams
    state_dim: int
    residual_dim: int
    latent_dim: int
    x_mean: np.ndarray = None
    x_std: np.ndarray = None
    d_mean: np.ndarray = None
    d_std: np.ndarray = None

    def __post_init__(self):
        n, l, L = self.state_dim, self.residual_dim, self.latent_dim
        checks = [
            ("encoder", self.encoder, n + l, 2 * L),
            ("decoder", self.decoder, n + L, 2 * l),
            ("prior", self.prior, n, 2 * L),
        ]
        for name, net, want_in, want_out in checks:
            if net.in_dim != want_in or net.out_dim != want_out:
                raise DimensionError(
                    f"{name} net is {net.in_dim}->{net.out_dim}, expected {want_in}->{want_out}")
        for attr, dim in (("x_mean", n), ("x_std", n), ("d_mean", l), ("d_std", l)):
            value = getattr(self, attr)
            if value is None:
                value = np.ones(dim) if attr.endswith("std") else np.zeros(dim)
            value = np.asarray(value, dtype=np.float64)
            if value.shape != (dim,):
                raise DimensionError(f"{attr} must have shape ({dim},)")
            object.__setattr__(self, attr, value)

    def norm_x(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.x_mean) / self.x_std

    def norm_d(self, d: np.ndarray) -> np.ndarray:
        return (np.asarray(d, dtype=np.float64) - self.d_mean) / self.d_std


@dataclass
class ElboGrads:
    """Gradients for the three nets, each as a flat [dW0, db0, ...] list."""

    encoder: list
    decoder: list
    prior: list


# ---------------------------------------------------------------------------
# ELBO and its exact gradients
# ---------------------------------------------------------------------------


def _clip_mask(raw: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Clip log-variances to the head band; mask zeroes gradients outside it."""
    clipped = np.clip(raw, nn.LOGVAR_MIN, nn.LOGVAR_MAX)
    mask = ((raw > nn.LOGVAR_MIN) & (raw < nn.LOGVAR_MAX)).astype(np.float64)
    return clipped, mask


def elbo_batch(model: CvaeModel, X: np.ndarray, D: np.ndarray, noise: np.ndarray,
               kl_weight: float = 1.0) -> tuple[float, ElboGrads, float, float]:
    """Mean negative ELBO over a batch, with gradients for all three nets.

    noise has shape (B, latent_dim) and is the frozen standard-normal draw for
    the reparameterized latent sample. Returns (loss, grads, recon_nll, kl)
    where the last two are batch means of the loss components.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    D = np.atleast_2d(np.asarray(D, dtype=np.float64))
    noise = np.atleast_2d(np.asarray(noise, dtype=np.float64))
    B = X.shape[0]
    n, l, L = model.state_dim, model.residual_dim, model.latent_dim
    if X.shape != (B, n) or D.shape != (B, l) or noise.shape != (B, L):
        raise DimensionError(
            f"elbo shapes X{X.shape} D{D.shape} noise{noise.shape} "
            f"vs dims ({n}, {l}, {L})")

    Xn, Dn = model.norm_x(X), model.norm_d(D)

    enc_in = np.hstack([Xn, Dn])
    enc_out = nn.mlp_forward(model.encoder, enc_in)
    mu_q, aq_raw = enc_out[:, :L], enc_out[:, L:]
    aq, mask_q = _clip_mask(aq_raw)
    sigma_q = np.exp(0.5 * aq)

    prior_out = nn.mlp_forward(model.prior, Xn)
    mu_p, ap_raw = prior_out[:, :L], prior_out[:, L:]
    ap, mask_p = _clip_mask(ap_raw)

    z = mu_q + sigma_q * noise
    dec_in = np.hstack([Xn, z])
    dec_out = nn.mlp_forward(model.decoder, dec_in)
    mu_t, at_raw = dec_out[:, :l], dec_out[:, l:]
    at, mask_t = _clip_mask(at_raw)

    resid = D - mu_t
    inv_var_t = np.exp(-at)
    recon_nll = 0.5 * np.sum(LOG_2PI + at + resid * resid * inv_var_t, axis=1)

    inv_var_p = np.exp(-ap)
    dmu = mu_q - mu_p
    kl = 0.5 * np.sum(ap - aq + (np.exp(aq) + dmu * dmu) * inv_var_p - 1.0, axis=1)

    recon_mean = float(np.mean(recon_nll))
    kl_mean = float(np.mean(kl))
    if not np.isfinite(recon_mean):
        raise NonFiniteError("elbo: reconstruction log-likelihood is non-finite")
    if not np.isfinite(kl_mean):
        raise NonFiniteError("elbo: KL term is non-finite")
    loss = recon_mean + kl_weight * kl_mean

    # Decoder head gradients (of the batch-mean loss).
    d_mu_t = (mu_t - D) * inv_var_t / B
    d_at = 0.5 * (1.0 - resid * resid * inv_var_t) * mask_t / B
    dec_upstream = np.hstack([d_mu_t, d_at])
    dec_grads, dec_in_grad = nn.mlp_backprop(model.decoder, dec_in, dec_upstream)
    gz = dec_in_grad[:, n:]

    # KL head gradients.
    w = kl_weight / B
    d_mu_q = w * dmu * inv_var_p
    d_aq = w * 0.5 * (np.exp(aq - ap) - 1.0)
    d_mu_p = -d_mu_q
    d_ap = w * 0.5 * (1.0 - (np.exp(aq) + dmu * dmu) * inv_var_p)

    # Reparameterization path: z = mu_q + exp(aq/2) * eps.
    d_mu_q = d_mu_q + gz
    d_aq = d_aq + gz * noise * 0.5 * sigma_q

    enc_upstream = np.hstack([d_mu_q, d_aq * mask_q])
    enc_grads, _ = nn.mlp_backprop(model.encoder, enc_in, enc_upstream)
    prior_upstream = np.hstack([d_mu_p, d_ap * mask_p])
    prior_grads, _ = nn.mlp_backprop(model.prior, Xn, prior_upstream)

    return loss, ElboGrads(enc_grads, dec_grads, prior_grads), recon_mean, kl_mean


def elbo(model: CvaeModel, x: np.ndarray, d: np.ndarray, noise: np.ndarray,
         kl_weight: float = 1.0) -> tuple[float, ElboGrads]:
    """Single-sample negative ELBO and gradients (see elbo_batch)."""
    loss, grads, _, _ = elbo_batch(model, x, d, noise, kl_weight)
    return loss, grads


def elbo_parts(model: CvaeModel, x: np.ndarray, d: np.ndarray,
               noise: np.ndarray) -> tuple[float, float]:
    """(reconstruction negative log-likelihood, KL) for one sample or batch."""
    _, _, recon, kl = elbo_batch(model, x, d, noise)
    return recon, kl


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def _standardization(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = values.mean(axis=0)
    std = values.std(axis=0)
    std = np.where(std < 1e-12, 1.0, std)
    return mean, std


def train(dataset: ResidualDataset, config: TrainConfig,
          seed: int | None = None) -> tuple[CvaeModel, list]:
    """Fit the CVAE by Adam on minibatch negative ELBO.

    Deterministic given (dataset, config, seed); seed defaults to config.seed.
    Returns (model, per-epoch mean training loss). Raises NonFiniteError with
    the epoch index if the loss diverges.
    """
    if dataset.n_rows < config.batch_size:
        raise ValueError(f"dataset has {dataset.n_rows} rows < batch size {config.batch_size}")
    rng = np.random.default_rng(config.seed if seed is None else seed)
    n, l, L = dataset.state_dim, dataset.residual_dim, config.latent_dim
    hidden = list(config.hidden)

    x_mean, x_std = _standardization(dataset.states)
    d_mean, d_std = _standardization(dataset.residuals)
    model = CvaeModel(
        encoder=nn.make_mlp([n + l] + hidden + [2 * L], rng),
        decoder=nn.make_mlp([n + L] + hidden + [2 * l], rng),
        prior=nn.make_mlp([n] + hidden + [2 * L], rng),
        state_dim=n, residual_dim=l, latent_dim=L,
        x_mean=x_mean, x_std=x_std, d_mean=d_mean, d_std=d_std,
    )

    arrays = (nn.params_to_arrays(model.encoder)
              + nn.params_to_arrays(model.decoder)
              + nn.params_to_arrays(model.prior))
    n_enc = len(nn.params_to_arrays(model.encoder))
    n_dec = len(nn.params_to_arrays(model.decoder))
    opt = nn.adam_init(arrays, lr=config.lr)

    X, D = dataset.states, dataset.residuals
    n_batches = math.ceil(dataset.n_rows / config.batch_size)
    total_steps = config.epochs * n_batches
    warmup_steps = int(config.kl_warmup * total_steps)
    step = 0
    trace: list[float] = []
    for epoch in range(config.epochs):
        perm = rng.permutation(dataset.n_rows)
        epoch_loss = 0.0
        opt.lr = config.lr_at(epoch)
        for b in range(n_batches):
            idx = perm[b * config.batch_size:(b + 1) * config.batch_size]
            noise = rng.standard_normal((idx.shape[0], L))
            beta = 1.0 if warmup_steps == 0 else min(1.0, step / warmup_steps)
            try:
                loss, grads, _, _ = elbo_batch(model, X[idx], D[idx], noise, kl_weight=beta)
            except NonFiniteError as exc:
                raise NonFiniteError(f"training diverged at epoch {epoch}: {exc}") from exc
            flat = grads.encoder + grads.decoder + grads.prior
            opt, arrays = nn.adam_step_arrays(opt, arrays, flat)
            model = CvaeModel(
                encoder=nn.arrays_to_params(arrays[:n_enc], model.encoder.activations),
                decoder=nn.arrays_to_params(arrays[n_enc:n_enc + n_dec],
                                            model.decoder.activations),
                prior=nn.arrays_to_params(arrays[n_enc + n_dec:], model.prior.activations),
                state_dim=n, residual_dim=l, latent_dim=L,
                x_mean=x_mean, x_std=x_std, d_mean=d_mean, d_std=d_std,
            )
            epoch_loss += loss * idx.shape[0]
            step += 1
        trace.append(epoch_loss / dataset.n_rows)
    return model, trace


# ---------------------------------------------------------------------------
# Moment and density estimation
# ---------------------------------------------------------------------------


def _prior_latents(model: CvaeModel, x: np.ndarray, S: int,
                   rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """S latent draws from the prior net at state x; returns (Z, normalized x)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.state_dim,):
        raise DimensionError(f"state shape {x.shape}, expected ({model.state_dim},)")
    xn = model.norm_x(x)
    out = nn.mlp_forward(model.prior, xn)
    mu_p, var_p = nn.split_gaussian_output(out)
    Z = mu_p + np.sqrt(var_p) * rng.standard_normal((S, model.latent_dim))
    return Z, xn


def _decoder_heads(model: CvaeModel, xn: np.ndarray, Z: np.ndarray):
    dec_in = np.hstack([np.broadcast_to(xn, (Z.shape[0], xn.shape[0])), Z])
    out = nn.mlp_forward(model.decoder, dec_in)
    return nn.split_gaussian_output(out)  # (S, l) means, (S, l) variances


def estimate_moments_gmm(model: CvaeModel, x: np.ndarray, S: int,
                         seed: int) -> MomentEstimate:
    """Closed-form mean/covariance of the S-component decoder mixture.

    mean = avg_s mu(x, z_s); cov = avg_s [Sigma(x, z_s) + mu mu^T] - mean mean^T,
    with z_s drawn from the prior net. Result is symmetrized.
    """
    if S < 1:
        raise ValueError("estimate_moments_gmm needs S >= 1")
    rng = np.random.default_rng(seed)
    Z, xn = _prior_latents(model, x, S, rng)
    mu, var = _decoder_heads(model, xn, Z)
    mean = mu.mean(axis=0)
    second = np.diag(var.mean(axis=0)) + (mu.T @ mu) / S
    cov = second - np.outer(mean, mean)
    return MomentEstimate(mean=mean, cov=0.5 * (cov + cov.T), samples=S)


def estimate_moments_sampling(model: CvaeModel, x: np.ndarray, S: int,
                              seed: int) -> MomentEstimate:
    """Two-step scheme: draw z from the prior, then d from the decoder,
    and return the population mean/covariance of the d draws."""
    if S < 2:
        raise ValueError("estimate_moments_sampling needs S >= 2 for a covariance")
    rng = np.random.default_rng(seed)
    Z, xn = _prior_latents(model, x, S, rng)
    mu, var = _decoder_heads(model, xn, Z)
    draws = mu + np.sqrt(var) * rng.standard_normal(mu.shape)
    mean = draws.mean(axis=0)
    centered = draws - mean
    cov = (centered.T @ centered) / S
    return MomentEstimate(mean=mean, cov=0.5 * (cov + cov.T), samples=S)


def estimate_density(model: CvaeModel, x: np.ndarray, d: np.ndarray, S: int,
                     seed: int) -> float:
    """Mixture density (1/S) sum_s N(d; mu(x, z_s), Sigma(x, z_s))."""
    if S < 1:
        raise ValueError("estimate_density needs S >= 1")
    d = np.asarray(d, dtype=np.float64)
    if d.shape != (model.residual_dim,):
        raise DimensionError(f"residual shape {d.shape}, expected ({model.residual_dim},)")
    rng = np.random.default_rng(seed)
    Z, xn = _prior_latents(model, x, S, rng)
    mu, var = _decoder_heads(model, xn, Z)
    resid = d - mu
    log_pdf = -0.5 * np.sum(LOG_2PI + np.log(var) + resid * resid / var, axis=1)
    peak = log_pdf.max()
    return float(np.exp(peak) * np.mean(np.exp(log_pdf - peak)))


# ---------------------------------------------------------------------------
# Deterministic MLP baseline
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MlpRegressor:
    """Point-prediction x -> d̂ baseline; covariance identically zero."""

    net: nn.MlpParams
    x_mean: np.ndarray
    x_std: np.ndarray

    def predict(self, x: np.ndarray) -> np.ndarray:
        xn = (np.asarray(x, dtype=np.float64) - self.x_mean) / self.x_std
        return nn.mlp_forward(self.net, xn)


def train_mlp_baseline(dataset: ResidualDataset, config: TrainConfig,
                       seed: int | None = None) -> tuple[MlpRegressor, list]:
    """Least-squares regression of d on x with the same Adam/minibatch setup."""
    if dataset.n_rows < config.batch_size:
        raise ValueError(f"dataset has {dataset.n_rows} rows < batch size {config.batch_size}")
    rng = np.random.default_rng(config.seed if seed is None else seed)
    n, l = dataset.state_dim, dataset.residual_dim
    x_mean, x_std = _standardization(dataset.states)
    net = nn.make_mlp([n] + list(config.hidden) + [l], rng)
    arrays = nn.params_to_arrays(net)
    opt = nn.adam_init(arrays, lr=config.lr)
    Xn = (dataset.states - x_mean) / x_std
    D = dataset.residuals
    n_batches = math.ceil(dataset.n_rows / config.batch_size)
    trace: list[float] = []
    for epoch in range(config.epochs):
        perm = rng.permutation(dataset.n_rows)
        epoch_loss = 0.0
        opt.lr = config.lr_at(epoch)
        for b in range(n_batches):
            idx = perm[b * config.batch_size:(b + 1) * config.batch_size]
            pred = nn.mlp_forward(net, Xn[idx])
            err = pred - D[idx]
            loss = 0.5 * float(np.mean(np.sum(err * err, axis=1)))
            if not np.isfinite(loss):
                raise NonFiniteError(f"baseline training diverged at epoch {epoch}")
            grads, _ = nn.mlp_backprop(net, Xn[idx], err / idx.shape[0])
            opt, arrays = nn.adam_step_arrays(opt, arrays, grads)
            net = nn.arrays_to_params(arrays, net.activations)
            epoch_loss += loss * idx.shape[0]
        trace.append(epoch_loss / dataset.n_rows)
    return MlpRegressor(net=net, x_mean=x_mean, x_std=x_std), trace


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

CVAE_MAGIC = "orio-cvae 1"
REGRESSOR_MAGIC = "orio-mlpreg 1"


def _write_vector(fh: TextIO, name: str, values: np.ndarray) -> None:
    fh.write(f"norm {name} " + " ".join(repr(float(v)) for v in values) + "\n")


def _read_vector(fh: TextIO, name: str, dim: int) -> np.ndarray:
    line = fh.readline()
    if not line:
        raise FormatError(f"truncated file: expected norm {name}")
    parts = line.split()
    if len(parts) != dim + 2 or parts[0] != "norm" or parts[1] != name:
        raise FormatError(f"bad norm line for {name}: {line!r}")
    return np.array([float(p) for p in parts[2:]], dtype=np.float64)


def _expect_net(fh: TextIO, name: str) -> nn.MlpParams:
    line = fh.readline()
    if line.strip() != f"net {name}":
        raise FormatError(f"expected 'net {name}', got {line!r}")
    return nn.read_mlp(fh)


def save_cvae(model: CvaeModel, path) -> None:
    with open(path, "w") as fh:
        fh.write(CVAE_MAGIC + "\n")
        fh.write(f"dims {model.state_dim} {model.residual_dim} {model.latent_dim}\n")
        _write_vector(fh, "x_mean", model.x_mean)
        _write_vector(fh, "x_std", model.x_std)
        _write_vector(fh, "d_mean", model.d_mean)
        _write_vector(fh, "d_std", model.d_std)
        for name in ("encoder", "decoder", "prior"):
            fh.write(f"net {name}\n")
            nn.write_mlp(getattr(model, name), fh)


def load_cvae(path) -> CvaeModel:
    with open(path) as fh:
        magic = fh.readline().strip()
        if magic != CVAE_MAGIC:
            raise FormatError(f"bad magic {magic!r}: expected {CVAE_MAGIC!r}")
        dims = fh.readline().split()
        if len(dims) != 4 or dims[0] != "dims":
            raise FormatError(f"bad dims line {dims!r}")
        n, l, L = int(dims[1]), int(dims[2]), int(dims[3])
        x_mean = _read_vector(fh, "x_mean", n)
        x_std = _read_vector(fh, "x_std", n)
        d_mean = _read_vector(fh, "d_mean", l)
        d_std = _read_vector(fh, "d_std", l)
        encoder = _expect_net(fh, "encoder")
        decoder = _expect_net(fh, "decoder")
        prior = _expect_net(fh, "prior")
    return CvaeModel(encoder=encoder, decoder=decoder, prior=prior,
                     state_dim=n, residual_dim=l, latent_dim=L,
                     x_mean=x_mean, x_std=x_std, d_mean=d_mean, d_std=d_std)


def save_regressor(reg: MlpRegressor, path) -> None:
    with open(path, "w") as fh:
        fh.write(REGRESSOR_MAGIC + "\n")
        fh.write("kind deterministic\n")
        fh.write(f"dims {reg.net.in_dim} {reg.net.out_dim}\n")
        _write_vector(fh, "x_mean", reg.x_mean)
        _write_vector(fh, "x_std", reg.x_std)
        fh.write("net regressor\n")
        nn.write_mlp(reg.net, fh)


def load_regressor(path) -> MlpRegressor:
    with open(path) as fh:
        magic = fh.readline().strip()
        if magic != REGRESSOR_MAGIC:
            raise FormatError(f"bad magic {magic!r}: expected {REGRESSOR_MAGIC!r}")
        kind = fh.readline().strip()
        if kind != "kind deterministic":
            raise FormatError(f"bad kind line {kind!r}")
        dims = fh.readline().split()
        if len(dims) != 3 or dims[0] != "dims":
            raise FormatError(f"bad dims line {dims!r}")
        n = int(dims[1])
        x_mean = _read_vector(fh, "x_mean", n)
        x_std = _read_vector(fh, "x_std", n)
        net = _expect_net(fh, "regressor")
    return MlpRegressor(net=net, x_mean=x_mean, x_std=x_std)
