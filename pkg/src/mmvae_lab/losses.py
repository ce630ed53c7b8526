"""Training loss: dimensionality-weighted Gaussian reconstruction + beta-weighted KL.

The objective minimized per sample is

    total = recon + beta * kl
    recon = sum_M 1/(2*d_M) sum_{i in M} -log N(x_i | mean_i, var_i)
    kl    = 0.5 * sum_i (mu_i^2 + sigma_i^2 - 1 - log sigma_i^2)

i.e. the negated evidence bound with the latent term weighted by beta and each
modality's coordinates averaged so wide modalities cannot dominate narrow ones.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, TrainingError
from .layout import ModalityLayout
from .model import DiagonalGaussian, MultimodalVae
from .nn import RngState

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class LossBreakdown:
    reconstruction_loss: float
    latent_loss: float
    beta: float
    total: float

    def __post_init__(self):
        if self.latent_loss < 0:
            raise ConfigError(f"latent loss must be >= 0, got {self.latent_loss}")
        expected = self.reconstruction_loss + self.beta * self.latent_loss
        if abs(self.total - expected) > 1e-12 * max(1.0, abs(expected)):
            raise ConfigError("total inconsistent with components")

    @classmethod
    def make(cls, reconstruction_loss: float, latent_loss: float, beta: float) -> "LossBreakdown":
        return cls(reconstruction_loss, latent_loss, beta,
                   reconstruction_loss + beta * latent_loss)


def gaussian_log_density(g: DiagonalGaussian, x) -> float | np.ndarray:
    """log density of x under a diagonal Gaussian; batched inputs give a batch of logs."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != g.n:
        raise ConfigError(f"x width {x.shape[-1]} != gaussian width {g.n}")
    diff = x - g.mean
    per_dim = -0.5 * (LOG_2PI + np.log(g.variance) + diff * diff / g.variance)
    total = per_dim.sum(axis=-1)
    return float(total) if total.ndim == 0 else total


def reconstruction_loss(g: DiagonalGaussian, x_target, layout: ModalityLayout) -> float | np.ndarray:
    """Negative log-likelihood with each coordinate weighted by 1/(2*d_M)."""
    x = np.asarray(x_target, dtype=np.float64)
    if x.shape[-1] != layout.n or g.n != layout.n:
        raise ConfigError("target/gaussian width does not match layout")
    w = layout.reconstruction_weights
    diff = x - g.mean
    per_dim = 0.5 * (LOG_2PI + np.log(g.variance) + diff * diff / g.variance)
    total = (w * per_dim).sum(axis=-1)
    return float(total) if total.ndim == 0 else total


def latent_kl_to_prior(latent_mean, latent_logvar) -> float | np.ndarray:
    """KL(N(mu, diag exp(lv)) || N(0, I)) = 0.5 sum(mu^2 + e^lv - 1 - lv), >= 0."""
    mu = np.asarray(latent_mean, dtype=np.float64)
    lv = np.asarray(latent_logvar, dtype=np.float64)
    if mu.shape != lv.shape:
        raise ConfigError(f"mean shape {mu.shape} != log-variance shape {lv.shape}")
    kl = 0.5 * (mu * mu + np.exp(lv) - 1.0 - lv).sum(axis=-1)
    kl = np.maximum(kl, 0.0)  # shield the >= 0 contract from last-ulp rounding
    return float(kl) if kl.ndim == 0 else kl


def elbo_loss(model: MultimodalVae, x_augmented, x_target, beta: float,
              rng: RngState | None, with_grads: bool = True, latent_mode: str = "sample",
              epoch: int | None = None, batch: int | None = None) -> LossBreakdown:
    """Per-sample mean loss over a batch; accumulates gradients into the model.

    x_augmented is the (possibly muted) input, x_target the full vector. The
    reported values are means over the batch so curves stay comparable across
    batch sizes. Raises TrainingError (tagged with epoch/batch) on blow-up.
    """
    if beta < 0:
        raise ConfigError(f"beta must be >= 0, got {beta}")
    target = np.asarray(x_target, dtype=np.float64)
    state = model.forward_pass(x_augmented, rng=rng, latent_mode=latent_mode)
    if target.ndim == 1:
        target = target[None, :]
    if target.shape != state.out_mean.shape:
        raise ConfigError(
            f"target shape {target.shape} != reconstruction shape {state.out_mean.shape}"
        )
    n_batch = state.x.shape[0]
    w = model.layout.reconstruction_weights

    # recon = 0.5 * mean_b sum_i w_i (log 2pi + lv_i + diff_i^2 / var_i)
    diff = state.out_mean - target
    inv_var = np.exp(-state.out_logvar)
    sq = diff * diff
    sq *= inv_var
    recon = 0.5 * (LOG_2PI * w.sum()
                   + float(((state.out_logvar + sq) @ w).mean()))

    mu, lv = state.latent_mean, state.latent_logvar
    if state.latent_scale is not None:
        exp_lv = state.latent_scale * state.latent_scale
    else:
        exp_lv = np.exp(lv)
    kl_core = mu * mu
    kl_core += exp_lv
    kl_core -= lv
    kl = float(np.maximum(0.5 * (kl_core.sum(axis=1) - lv.shape[1]), 0.0).mean())

    if not (np.isfinite(recon) and np.isfinite(kl)):
        raise TrainingError(
            f"non-finite loss (recon={recon}, kl={kl})", epoch=epoch, batch=batch
        )

    if with_grads:
        scale = 1.0 / n_batch
        # d recon / d mean = w * diff / var, d recon / d lv = w/2 * (1 - diff^2/var)
        d_out_logvar = np.subtract(1.0, sq, out=sq)
        d_out_logvar *= 0.5 * scale * w
        d_out_mean = diff
        d_out_mean *= inv_var
        d_out_mean *= scale * w
        if beta > 0.0:
            d_latent_mean = (beta * scale) * mu
            d_latent_logvar = exp_lv - 1.0
            d_latent_logvar *= 0.5 * beta * scale
        else:
            d_latent_mean = 0.0
            d_latent_logvar = 0.0
        model.backward_pass(state, d_out_mean, d_out_logvar, d_latent_mean, d_latent_logvar)

    return LossBreakdown.make(recon, kl, float(beta))
