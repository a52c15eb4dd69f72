"""Diagonal-Gaussian posteriors: reparameterized sampling, densities and closed-form KLs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ndmath import ShapeError, as_matrix

LOGVAR_MIN, LOGVAR_MAX = -10.0, 10.0
LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class DiagGaussian:
    mean: np.ndarray
    logvar: np.ndarray

    def __post_init__(self):
        self.mean = as_matrix(self.mean)
        self.logvar = as_matrix(self.logvar)
        if self.mean.shape != self.logvar.shape:
            raise ShapeError(f"mean {self.mean.shape} and logvar {self.logvar.shape} differ")

    @property
    def shape(self):
        return self.mean.shape

    @property
    def var(self) -> np.ndarray:
        return np.exp(self.logvar)


@dataclass(frozen=True)
class StandardPrior:
    dim: int

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("prior dimension must be >= 1")

    def as_gaussian(self, batch: int) -> DiagGaussian:
        return DiagGaussian(np.zeros((batch, self.dim)), np.zeros((batch, self.dim)))


def clamp_logvar(raw: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Clip to the numerically safe range; also return the pass-through mask for backward."""
    mask = (raw > LOGVAR_MIN) & (raw < LOGVAR_MAX)
    return np.clip(raw, LOGVAR_MIN, LOGVAR_MAX), mask


def _check(post: DiagGaussian, other: np.ndarray, what: str) -> np.ndarray:
    other = as_matrix(other)
    if other.shape != post.shape:
        raise ShapeError(f"{what} shape {other.shape} does not match posterior {post.shape}")
    return other


def reparam_sample(post: DiagGaussian, noise) -> np.ndarray:
    noise = _check(post, noise, "noise")
    return post.mean + np.exp(0.5 * post.logvar) * noise


def reparam_backward(post: DiagGaussian, noise, grad_z) -> tuple[np.ndarray, np.ndarray]:
    """Pull d/dz back to (d/dmean, d/dlogvar)."""
    noise = _check(post, noise, "noise")
    grad_z = _check(post, grad_z, "grad_z")
    return grad_z, grad_z * 0.5 * np.exp(0.5 * post.logvar) * noise


def log_density(post: DiagGaussian, z) -> np.ndarray:
    z = _check(post, z, "z")
    sq = (z - post.mean) ** 2 * np.exp(-post.logvar)
    return -0.5 * (LOG_2PI + post.logvar + sq).sum(axis=1)


def kl_to_standard(post: DiagGaussian) -> np.ndarray:
    """Per-row KL[N(mean, exp(logvar)) || N(0, I)]."""
    kl = 0.5 * (np.exp(post.logvar) + post.mean**2 - 1.0 - post.logvar).sum(axis=1)
    # cancellation can leave tiny negatives near the optimum
    return np.maximum(kl, 0.0)


def kl_to_standard_backward(post: DiagGaussian, grad_kl) -> tuple[np.ndarray, np.ndarray]:
    g = np.asarray(grad_kl, dtype=np.float64).reshape(-1, 1)
    return g * post.mean, g * 0.5 * (np.exp(post.logvar) - 1.0)


def kl_between(a: DiagGaussian, b: DiagGaussian) -> np.ndarray:
    """Per-row KL[a || b] for diagonal Gaussians."""
    if a.shape != b.shape:
        raise ShapeError(f"posteriors have different shapes {a.shape} and {b.shape}")
    ratio = np.exp(a.logvar - b.logvar)
    sq = (a.mean - b.mean) ** 2 * np.exp(-b.logvar)
    kl = 0.5 * (ratio + sq - 1.0 - (a.logvar - b.logvar)).sum(axis=1)
    return np.maximum(kl, 0.0)


def kl_between_backward(a: DiagGaussian, b: DiagGaussian, grad_kl):
    """Gradients of the per-row KL[a || b] w.r.t. (a.mean, a.logvar, b.mean, b.logvar)."""
    g = np.asarray(grad_kl, dtype=np.float64).reshape(-1, 1)
    inv_vb = np.exp(-b.logvar)
    diff = a.mean - b.mean
    ratio = np.exp(a.logvar - b.logvar)
    d_amean = g * diff * inv_vb
    d_alogvar = g * 0.5 * (ratio - 1.0)
    d_blogvar = g * 0.5 * (1.0 - ratio - diff**2 * inv_vb)
    return d_amean, d_alogvar, -d_amean, d_blogvar
