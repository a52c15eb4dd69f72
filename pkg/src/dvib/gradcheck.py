"""Central finite-difference checks for every differentiable term, on tiny dimensions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import bounds, gauss
from .bounds import JsCritic
from .gauss import DiagGaussian
from .model import BaselineModel, DvibModel, GaussianEncoder, ModelDims, dvib_loss, vae_baseline_loss, vib_baseline_loss
from .ndmath import Mlp

STEP = 1e-5
TOLERANCE = 1e-4


@dataclass
class CheckResult:
    term: str
    max_rel_error: float
    tolerance: float = TOLERANCE

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_error <= self.tolerance)


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """||a - n|| / max(||a||, ||n||), per array; 0 when both vanish."""
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if scale < 1e-12:
        return float(np.linalg.norm(analytic - numeric))
    return float(np.linalg.norm(analytic - numeric) / scale)


def numeric_grad(f, array: np.ndarray, h: float = STEP) -> np.ndarray:
    """d f() / d array by central differences, perturbing ``array`` in place."""
    g = np.zeros_like(array)
    flat, gflat = array.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = f()
        flat[i] = old - h
        down = f()
        flat[i] = old
        gflat[i] = (up - down) / (2.0 * h)
    return g


def compare(f, pairs) -> float:
    """Worst relative error over ``(array, analytic_grad)`` pairs."""
    return max(rel_error(analytic, numeric_grad(f, array)) for array, analytic in pairs)


def _mlp(rng, sizes, activation="tanh") -> Mlp:
    net = Mlp.init(sizes, rng, activation)
    for layer in net.layers:
        layer.bias[:] = rng.uniform(-0.5, 0.5, layer.bias.shape)
    return net


def _posterior(rng, n, d) -> DiagGaussian:
    return DiagGaussian(rng.uniform(-1, 1, (n, d)), rng.uniform(-1, 1, (n, d)))


# Each check returns a list of (array, analytic gradient) pairs and the scalar function.


def _check_mlp(rng, activation):
    net = _mlp(rng, [3, 5, 4, 2], activation)
    x = rng.uniform(-1, 1, (4, 3))
    w = rng.uniform(-1, 1, (4, 2))

    def f():
        return float((net(x) * w).sum())

    net.zero_grad()
    out, tape = net.forward(x)
    gx = net.backward(tape, w)
    pairs = [(x, gx)] + [(p, g.copy()) for _, p, g in net.params()]
    return f, pairs


def _check_reparam(rng):
    post = _posterior(rng, 4, 3)
    eps = rng.standard_normal((4, 3))
    w = rng.uniform(-1, 1, (4, 3))

    def f():
        return float((gauss.reparam_sample(post, eps) * w).sum())

    gm, gl = gauss.reparam_backward(post, eps, w)
    return f, [(post.mean, gm), (post.logvar, gl)]


def _check_kl_standard(rng):
    post = _posterior(rng, 4, 3)
    w = rng.uniform(0.5, 1.5, 4)

    def f():
        return float((gauss.kl_to_standard(post) * w).sum())

    gm, gl = gauss.kl_to_standard_backward(post, w)
    return f, [(post.mean, gm), (post.logvar, gl)]


def _check_kl_between(rng):
    a, b = _posterior(rng, 4, 3), _posterior(rng, 4, 3)
    w = rng.uniform(0.5, 1.5, 4)

    def f():
        return float((gauss.kl_between(a, b) * w).sum())

    grads = gauss.kl_between_backward(a, b, w)
    return f, list(zip((a.mean, a.logvar, b.mean, b.logvar), grads))


def _check_recon(rng, likelihood):
    dec = _mlp(rng, [3, 6, 4])
    z = rng.uniform(-1, 1, (5, 3))
    target = rng.uniform(0, 1, (5, 4))

    def f():
        return bounds.recon_loglik(dec, z, target, likelihood)

    dec.zero_grad()
    _, gz = bounds.recon_loglik_backward(dec, z, target, 1.0, likelihood)
    return f, [(z, gz)] + [(p, g.copy()) for _, p, g in dec.params()]


def _check_js(rng):
    critic = JsCritic(_mlp(rng, [4, 6, 1]))
    za, zb = rng.uniform(-1, 1, (5, 2)), rng.uniform(-1, 1, (5, 2))
    shuffle = rng.permutation(5)

    def f():
        return bounds.js_mi_lower_bound(critic, za, zb, shuffle)

    critic.zero_grad()
    _, ga, gb = bounds.js_mi_backward(critic, za, zb, shuffle, 1.0)
    return f, [(za, ga), (zb, gb)] + [(p, g.copy()) for _, p, g in critic.params()]


def _check_rate(rng):
    post = _posterior(rng, 5, 3)

    def f():
        return bounds.private_rate(post)

    gm, gl = bounds.private_rate_backward(post, 1.0)
    return f, [(post.mean, gm), (post.logvar, gl)]


def _check_encoder(rng):
    enc = GaussianEncoder.init(3, [5], 2, rng)
    x = rng.uniform(-1, 1, (4, 3))
    wm, wl = rng.uniform(-1, 1, (4, 2)), rng.uniform(-1, 1, (4, 2))

    def f():
        post = enc.posterior(x)
        return float((post.mean * wm).sum() + (post.logvar * wl).sum())

    enc.zero_grad()
    _, cache = enc.forward(x)
    gx = enc.backward(cache, wm, wl)
    return f, [(x, gx)] + [(p, g.copy()) for _, p, g in enc.params()]


def _tiny_dims(d_x=4, d_y=3):
    return ModelDims(d_x=d_x, d_y=d_y, d_s=2, d_p=2, hidden=(5,))


def _randomize_biases(model, rng):
    for _, p, _ in model.named_params():
        if p.ndim == 1:
            p[:] = rng.uniform(-0.3, 0.3, p.shape)


def _check_dvib(rng, lam=0.7, beta=0.3, likelihood="gaussian"):
    model = DvibModel(_tiny_dims(), rng)
    _randomize_biases(model, rng)
    n = 5
    x, y = rng.uniform(0, 1, (n, 4)), rng.uniform(0, 1, (n, 3))
    noise = {k: rng.standard_normal((n, d)) for k, d in model.latent_dims().items()}
    shuffle = rng.permutation(n)

    def f():
        model.zero_grad()
        return -dvib_loss(model, x, y, noise, shuffle, lam, beta, likelihood)[0].total

    model.zero_grad()
    dvib_loss(model, x, y, noise, shuffle, lam, beta, likelihood)
    return f, [(p, g.copy()) for _, p, g in model.named_params()]


def _check_baseline(rng, kind):
    model = BaselineModel(_tiny_dims(), rng, kind)
    _randomize_biases(model, rng)
    n = 5
    x, y = rng.uniform(0, 1, (n, 4)), rng.uniform(0, 1, (n, 3))
    noise = rng.standard_normal((n, 2))

    def loss():
        if kind == "vae":
            return vae_baseline_loss(model, x, y, noise)[0]
        return vib_baseline_loss(model, x, y, noise, 0.4)[0]

    def f():
        model.zero_grad()
        return -loss().total

    model.zero_grad()
    loss()
    return f, [(p, g.copy()) for _, p, g in model.named_params()]


CHECKS = {
    "ndmath.mlp_tanh": lambda r: _check_mlp(r, "tanh"),
    "ndmath.mlp_relu": lambda r: _check_mlp(r, "relu"),
    "ndmath.mlp_identity": lambda r: _check_mlp(r, "identity"),
    "gauss.reparam_sample": _check_reparam,
    "gauss.kl_to_standard": _check_kl_standard,
    "gauss.kl_between": _check_kl_between,
    "bounds.recon_loglik_gaussian": lambda r: _check_recon(r, "gaussian"),
    "bounds.recon_loglik_bernoulli": lambda r: _check_recon(r, "bernoulli"),
    "bounds.js_mi_lower_bound": _check_js,
    "bounds.private_rate": _check_rate,
    "model.gaussian_encoder": _check_encoder,
    "model.dvib_loss": _check_dvib,
    "model.dvib_loss_bernoulli": lambda r: _check_dvib(r, likelihood="bernoulli"),
    "model.dvib_loss_recon_only": lambda r: _check_dvib(r, lam=0.0, beta=0.0),
    "model.vib_baseline_loss": lambda r: _check_baseline(r, "vib"),
    "model.vae_baseline_loss": lambda r: _check_baseline(r, "vae"),
}


def run_gradcheck(seed: int = 0, perturb: str | None = None, tolerance: float = TOLERANCE) -> list[CheckResult]:
    """Runs every check. ``perturb`` names a term whose analytic gradient is nudged
    before comparison (harness self-test)."""
    if perturb is not None and perturb not in CHECKS:
        raise KeyError(f"unknown term {perturb!r}")
    results = []
    for k, (name, build) in enumerate(CHECKS.items()):
        rng = np.random.default_rng([seed, k])
        f, pairs = build(rng)
        if name == perturb:
            pairs = [(a, g + 1e-2 * (np.abs(g) + 1.0)) for a, g in pairs]
        results.append(CheckResult(name, compare(f, pairs), tolerance))
    return results
