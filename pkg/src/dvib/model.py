"""DVIB network (four Gaussian encoders, four decoders, one critic) and the VAE/VIB baselines."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import bounds, gauss
from .bounds import JsCritic, LossBreakdown
from .gauss import DiagGaussian
from .ndmath import LinearLayer, Mlp, ShapeError, activate, activate_grad, as_matrix

ENCODERS = ("enc_x_s", "enc_x_p", "enc_y_s", "enc_y_p")
DECODERS = ("dec_x_s", "dec_x_p", "dec_y_s", "dec_y_p")
LATENTS = ("z_x_s", "z_x_p", "z_y_s", "z_y_p")


class NonFiniteLossError(FloatingPointError):
    def __init__(self, term: str, step: int | None = None):
        self.term = term
        self.step = step
        where = f" at step {step}" if step is not None else ""
        super().__init__(f"non-finite value in loss term {term!r}{where}")


@dataclass
class EncoderCache:
    trunk_tape: object
    hidden: np.ndarray
    logvar_mask: np.ndarray


class GaussianEncoder:
    """MLP trunk followed by linear mean and log-variance heads."""

    def __init__(self, trunk: Mlp, head_mean: LinearLayer, head_logvar: LinearLayer):
        if head_mean.in_dim != trunk.out_dim or head_logvar.in_dim != trunk.out_dim:
            raise ShapeError("encoder heads must read the trunk output")
        if head_mean.out_dim != head_logvar.out_dim:
            raise ShapeError("mean and log-variance heads must agree on latent width")
        self.trunk = trunk
        self.head_mean = head_mean
        self.head_logvar = head_logvar

    @classmethod
    def init(cls, in_dim: int, hidden: list[int], latent_dim: int, rng, activation: str = "tanh"):
        if not hidden:
            raise ValueError("encoder needs at least one hidden layer")
        trunk = Mlp.init([in_dim, *hidden], rng, activation)
        width = hidden[-1]
        return cls(trunk, LinearLayer.init(width, latent_dim, rng), LinearLayer.init(width, latent_dim, rng))

    @property
    def in_dim(self) -> int:
        return self.trunk.in_dim

    @property
    def latent_dim(self) -> int:
        return self.head_mean.out_dim

    def forward(self, x) -> tuple[DiagGaussian, EncoderCache]:
        pre, tape = self.trunk.forward(x)
        h = activate(self.trunk.activation, pre)
        logvar, mask = gauss.clamp_logvar(self.head_logvar.forward(h))
        return DiagGaussian(self.head_mean.forward(h), logvar), EncoderCache(tape, h, mask)

    def posterior(self, x) -> DiagGaussian:
        return self.forward(x)[0]

    def backward(self, cache: EncoderCache, grad_mean, grad_logvar) -> np.ndarray:
        h = cache.hidden
        g_h = self.head_mean.backward(h, grad_mean)
        g_h = g_h + self.head_logvar.backward(h, grad_logvar * cache.logvar_mask)
        g_pre = g_h * activate_grad(self.trunk.activation, cache.trunk_tape.output, h)
        return self.trunk.backward(cache.trunk_tape, g_pre)

    def params(self):
        out = [(f"trunk.{n}", p, g) for n, p, g in self.trunk.params()]
        out += [(f"head_mean.{n}", p, g) for n, p, g in self.head_mean.params()]
        out += [(f"head_logvar.{n}", p, g) for n, p, g in self.head_logvar.params()]
        return out

    def zero_grad(self):
        self.trunk.zero_grad()
        self.head_mean.zero_grad()
        self.head_logvar.zero_grad()


@dataclass(frozen=True)
class ModelDims:
    d_x: int
    d_y: int
    d_s: int = 32
    d_p: int = 16
    hidden: tuple = (256, 256)
    activation: str = "tanh"


class _Net:
    """Shared plumbing: ordered named parameters, gradient zeroing, counting."""

    components: tuple = ()

    def named_params(self):
        out = []
        for comp in self.components:
            obj = getattr(self, comp)
            for n, p, g in obj.params():
                out.append((f"{comp}.{n}", p, g))
        return out

    def params(self):
        return self.named_params()

    def zero_grad(self):
        for comp in self.components:
            getattr(self, comp).zero_grad()

    def num_params(self) -> int:
        return sum(p.size for _, p, _ in self.named_params())

    def declared_param_count(self) -> int:
        """Parameter count recomputed from layer shapes alone."""
        total = 0
        for comp in self.components:
            obj = getattr(self, comp)
            net = getattr(obj, "net", obj)
            if isinstance(net, GaussianEncoder):
                layers = [*net.trunk.layers, net.head_mean, net.head_logvar]
            else:
                layers = net.layers
            total += sum(layer.in_dim * layer.out_dim + layer.out_dim for layer in layers)
        return total


class DvibModel(_Net):
    components = (*ENCODERS, *DECODERS, "critic")
    kind = "dvib"

    def __init__(self, dims: ModelDims, rng: np.random.Generator):
        self.dims = dims
        h = list(dims.hidden)
        act = dims.activation
        self.enc_x_s = GaussianEncoder.init(dims.d_x, h, dims.d_s, rng, act)
        self.enc_x_p = GaussianEncoder.init(dims.d_x, h, dims.d_p, rng, act)
        self.enc_y_s = GaussianEncoder.init(dims.d_y, h, dims.d_s, rng, act)
        self.enc_y_p = GaussianEncoder.init(dims.d_y, h, dims.d_p, rng, act)
        self.dec_x_s = Mlp.init([dims.d_s, *h[::-1], dims.d_x], rng, act)
        self.dec_x_p = Mlp.init([dims.d_p, *h[::-1], dims.d_x], rng, act)
        self.dec_y_s = Mlp.init([dims.d_s, *h[::-1], dims.d_y], rng, act)
        self.dec_y_p = Mlp.init([dims.d_p, *h[::-1], dims.d_y], rng, act)
        self.critic = JsCritic.init(dims.d_s, h, rng, act)

    def latent_dims(self) -> dict:
        d = self.dims
        return {"z_x_s": d.d_s, "z_x_p": d.d_p, "z_y_s": d.d_s, "z_y_p": d.d_p}

    def encode_means(self, x, y) -> dict:
        """Posterior means of all four latents (the deterministic evaluation encoding)."""
        x, y = as_matrix(x), as_matrix(y)
        return {
            "z_x_s": self.enc_x_s.posterior(x).mean,
            "z_x_p": self.enc_x_p.posterior(x).mean,
            "z_y_s": self.enc_y_s.posterior(y).mean,
            "z_y_p": self.enc_y_p.posterior(y).mean,
        }


@dataclass
class LatentBundle:
    z_x_s: np.ndarray
    z_x_p: np.ndarray
    z_y_s: np.ndarray
    z_y_p: np.ndarray
    posteriors: dict
    noise: dict = field(repr=False, default_factory=dict)
    caches: dict = field(repr=False, default_factory=dict)

    def latent(self, name: str) -> np.ndarray:
        return getattr(self, name)


def _noise_dict(noise) -> dict:
    if isinstance(noise, dict):
        return {k: as_matrix(noise[k]) for k in LATENTS}
    if len(noise) != 4:
        raise ValueError("expected four noise matrices ordered z_x_s, z_x_p, z_y_s, z_y_p")
    return {k: as_matrix(n) for k, n in zip(LATENTS, noise)}


def sample_noise(model, batch: int, rng: np.random.Generator) -> dict:
    return {k: rng.standard_normal((batch, d)) for k, d in model.latent_dims().items()}


def encode_all(model: DvibModel, x, y, noise) -> LatentBundle:
    x, y = as_matrix(x), as_matrix(y)
    if x.shape[1] != model.dims.d_x:
        raise ShapeError(f"x has {x.shape[1]} columns, model expects {model.dims.d_x}")
    if y.shape[1] != model.dims.d_y:
        raise ShapeError(f"y has {y.shape[1]} columns, model expects {model.dims.d_y}")
    if x.shape[0] != y.shape[0]:
        raise ShapeError(f"view batch sizes differ: {x.shape[0]} vs {y.shape[0]}")
    noise = _noise_dict(noise)
    posts, caches, zs = {}, {}, {}
    for name, enc, view in (
        ("z_x_s", model.enc_x_s, x),
        ("z_x_p", model.enc_x_p, x),
        ("z_y_s", model.enc_y_s, y),
        ("z_y_p", model.enc_y_p, y),
    ):
        post, cache = enc.forward(view)
        posts[name], caches[name] = post, cache
        zs[name] = gauss.reparam_sample(post, noise[name])
    return LatentBundle(**zs, posteriors=posts, noise=noise, caches=caches)


def _check_finite(parts: LossBreakdown):
    for name, value in parts.terms().items():
        if not math.isfinite(value):
            raise NonFiniteLossError(name)


def dvib_loss(model: DvibModel, x, y, noise, shuffle, lam: float, beta: float, likelihood: str = "gaussian"):
    """Forward and backward for the DVIB objective on one batch.

    Gradients of the loss ``-total`` accumulate into every parameter's buffer
    (critic included); the caller zeroes them beforehand. Returns the breakdown and
    a ``{name: grad}`` view of the buffers.
    """
    if lam < 0 or beta < 0:
        raise ValueError("lambda and beta must be non-negative")
    x, y = as_matrix(x), as_matrix(y)
    bundle = encode_all(model, x, y, noise)
    recon, dec_fwd = {}, {}
    for key, target in (("x_s", x), ("x_p", x), ("y_s", y), ("y_p", y)):
        dec = getattr(model, f"dec_{key}")
        out, tape = dec.forward(bundle.latent(f"z_{key}"))
        recon[key], g_out = bounds.loglik(out, target, likelihood)
        dec_fwd[key] = (tape, g_out)
    js = bounds.js_mi_forward(model.critic, bundle.z_x_s, bundle.z_y_s, shuffle)
    rate_x = bounds.private_rate(bundle.posteriors["z_x_p"])
    rate_y = bounds.private_rate(bundle.posteriors["z_y_p"])
    parts = bounds.total_objective(
        recon["x_s"], recon["x_p"], recon["y_s"], recon["y_p"], js.value, rate_x, rate_y, lam, beta
    )
    _check_finite(parts)

    # backward of the loss -total
    g_z = {}
    for key, (tape, g_out) in dec_fwd.items():
        g_z[f"z_{key}"] = getattr(model, f"dec_{key}").backward(tape, -g_out)
    if lam > 0:
        g_a, g_b = bounds.js_mi_backward_from(model.critic, js, -lam)
        g_z["z_x_s"] = g_z["z_x_s"] + g_a
        g_z["z_y_s"] = g_z["z_y_s"] + g_b
    for name, enc in zip(LATENTS, (model.enc_x_s, model.enc_x_p, model.enc_y_s, model.enc_y_p)):
        post = bundle.posteriors[name]
        g_mean, g_logvar = gauss.reparam_backward(post, bundle.noise[name], g_z[name])
        if name.endswith("_p") and beta > 0:
            r_mean, r_logvar = bounds.private_rate_backward(post, beta)
            g_mean, g_logvar = g_mean + r_mean, g_logvar + r_logvar
        enc.backward(bundle.caches[name], g_mean, g_logvar)
    return parts, {n: g for n, _, g in model.named_params()}


# ---------------------------------------------------------------------------
# baselines: one encoder/decoder pair on the concatenated views


class BaselineModel(_Net):
    """Single stochastic encoder over ``[x || y]`` and one decoder back to ``[x || y]``."""

    components = ("encoder", "decoder")

    def __init__(self, dims: ModelDims, rng: np.random.Generator, kind: str = "vib"):
        if kind not in ("vib", "vae"):
            raise ValueError(f"unknown baseline {kind!r}")
        self.dims = dims
        self.kind = kind
        h = list(dims.hidden)
        d_in = dims.d_x + dims.d_y
        self.encoder = GaussianEncoder.init(d_in, h, dims.d_s, rng, dims.activation)
        self.decoder = Mlp.init([dims.d_s, *h[::-1], d_in], rng, dims.activation)

    def latent_dims(self) -> dict:
        return {"z": self.dims.d_s}

    def encode_means(self, x, y) -> dict:
        return {"z": self.encoder.posterior(np.hstack([as_matrix(x), as_matrix(y)])).mean}


def vib_baseline_loss(model: BaselineModel, x, y, noise, beta: float, likelihood: str = "gaussian"):
    """recon - beta * rate on the concatenated views; gradients of ``-total`` accumulate.

    The reconstruction log-likelihood factorizes over columns, so it is reported
    split into its x part (``recon_x_s``) and y part (``recon_y_s``); the single rate
    goes in ``rate_x``.
    """
    if beta < 0:
        raise ValueError("beta must be non-negative")
    x, y = as_matrix(x), as_matrix(y)
    if x.shape[1] != model.dims.d_x or y.shape[1] != model.dims.d_y:
        raise ShapeError(f"views {x.shape}, {y.shape} do not match model dims ({model.dims.d_x}, {model.dims.d_y})")
    xy = np.hstack([x, y])
    noise = noise["z"] if isinstance(noise, dict) else noise
    post, cache = model.encoder.forward(xy)
    z = gauss.reparam_sample(post, noise)
    out, tape = model.decoder.forward(z)
    dx = model.dims.d_x
    rx, gx = bounds.loglik(out[:, :dx], x, likelihood)
    ry, gy = bounds.loglik(out[:, dx:], y, likelihood)
    rate = bounds.private_rate(post)
    parts = bounds.total_objective(rx, 0.0, ry, 0.0, 0.0, rate, 0.0, 0.0, beta)
    _check_finite(parts)
    g_z = model.decoder.backward(tape, -np.hstack([gx, gy]))
    g_mean, g_logvar = gauss.reparam_backward(post, noise, g_z)
    if beta > 0:
        r_mean, r_logvar = bounds.private_rate_backward(post, beta)
        g_mean, g_logvar = g_mean + r_mean, g_logvar + r_logvar
    model.encoder.backward(cache, g_mean, g_logvar)
    return parts, {n: g for n, _, g in model.named_params()}


def vae_baseline_loss(model: BaselineModel, x, y, noise, likelihood: str = "gaussian"):
    """The VAE evidence lower bound: the VIB baseline at beta = 1."""
    return vib_baseline_loss(model, x, y, noise, 1.0, likelihood)


def build_model(kind: str, dims: ModelDims, rng: np.random.Generator):
    if kind == "dvib":
        return DvibModel(dims, rng)
    if kind in ("vib", "vae"):
        return BaselineModel(dims, rng, kind)
    raise ValueError(f"unknown model {kind!r}; expected dvib, vib or vae")
