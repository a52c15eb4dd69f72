"""Variational bound terms of the DVIB objective and the Jensen-Shannon MI estimator.

Every term here is a quantity to be *maximized*. The ``*_backward`` helpers take a
``scale`` (the derivative of the caller's scalar loss w.r.t. the term), accumulate
``scale * d term / d params`` into the parameter gradient buffers and return the
gradient with respect to the term's inputs.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import gauss
from .gauss import DiagGaussian
from .ndmath import Mlp, ShapeError, as_matrix

LIKELIHOODS = ("gaussian", "bernoulli")


def softplus(t: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, t)


def sigmoid(t: np.ndarray) -> np.ndarray:
    return np.exp(-np.logaddexp(0.0, -t))


# ---------------------------------------------------------------------------
# reconstruction terms


def loglik(out: np.ndarray, target: np.ndarray, likelihood: str = "gaussian") -> tuple[float, np.ndarray]:
    """Batch-mean log q(target | decoder output) and its gradient w.r.t. ``out``.

    ``gaussian`` is unit variance with ``out`` as the mean; ``bernoulli`` reads ``out``
    as logits. The data entropy constant is never included.
    """
    if out.shape != target.shape:
        raise ShapeError(f"decoder output {out.shape} does not match target {target.shape}")
    n, d = out.shape
    if likelihood == "gaussian":
        diff = out - target
        value = -0.5 * float((diff * diff).sum()) / n - 0.5 * d * gauss.LOG_2PI
        return value, -diff / n
    if likelihood == "bernoulli":
        value = float((target * out - softplus(out)).sum()) / n
        return value, (target - sigmoid(out)) / n
    raise ValueError(f"unknown likelihood {likelihood!r}; expected one of {LIKELIHOODS}")


def recon_loglik(decoder: Mlp, z, target, likelihood: str = "gaussian") -> float:
    target = as_matrix(target)
    if decoder.out_dim != target.shape[1]:
        raise ShapeError(f"decoder emits {decoder.out_dim} columns, target has {target.shape[1]}")
    out, _ = decoder.forward(z)
    return loglik(out, target, likelihood)[0]


def recon_loglik_backward(decoder: Mlp, z, target, scale: float = 1.0, likelihood: str = "gaussian"):
    """Returns ``(value, d(scale * value)/dz)``; decoder grads accumulate."""
    target = as_matrix(target)
    out, tape = decoder.forward(z)
    value, g_out = loglik(out, target, likelihood)
    return value, decoder.backward(tape, scale * g_out)


# ---------------------------------------------------------------------------
# Jensen-Shannon estimator for I(z_x^s; z_y^s)


class JsCritic:
    """Scores a latent pair ``(z_a || z_b)`` with a scalar."""

    def __init__(self, net: Mlp):
        if net.out_dim != 1:
            raise ShapeError(f"critic must emit a single column, got {net.out_dim}")
        if net.in_dim % 2:
            raise ShapeError("critic input width must be even (two concatenated latents)")
        self.net = net

    @classmethod
    def init(cls, latent_dim: int, hidden: list[int], rng, activation: str = "tanh") -> "JsCritic":
        return cls(Mlp.init([2 * latent_dim, *hidden, 1], rng, activation))

    @property
    def latent_dim(self) -> int:
        return self.net.in_dim // 2

    def score(self, z_a, z_b) -> np.ndarray:
        return self.net(np.hstack([as_matrix(z_a), as_matrix(z_b)]))[:, 0]

    def params(self):
        return self.net.params()

    def zero_grad(self):
        self.net.zero_grad()


def _js_inputs(critic: JsCritic, z_a, z_b, shuffle):
    z_a, z_b = as_matrix(z_a), as_matrix(z_b)
    if z_a.shape != z_b.shape:
        raise ShapeError(f"latent batches differ: {z_a.shape} vs {z_b.shape}")
    if z_a.shape[1] != critic.latent_dim:
        raise ShapeError(f"critic expects latents of width {critic.latent_dim}, got {z_a.shape[1]}")
    shuffle = np.asarray(shuffle)
    if shuffle.shape != (z_a.shape[0],):
        raise ValueError(f"shuffle has length {shuffle.size}, batch has {z_a.shape[0]} rows")
    joint = np.hstack([z_a, z_b])
    product = np.hstack([z_a, z_b[shuffle]])
    return z_a, z_b, shuffle, np.vstack([joint, product])


def js_mi_lower_bound(critic: JsCritic, z_a, z_b, shuffle) -> float:
    """E_joint[-sp(-T)] - E_product[sp(T)], product pairs formed as ``z_b[shuffle]``."""
    z_a, _, _, pairs = _js_inputs(critic, z_a, z_b, shuffle)
    n = z_a.shape[0]
    t = critic.net(pairs)[:, 0]
    return float(-softplus(-t[:n]).mean() - softplus(t[n:]).mean())


@dataclass
class JsForward:
    value: float
    scores: np.ndarray
    tape: object
    shuffle: np.ndarray
    n: int
    d: int


def js_mi_forward(critic: JsCritic, z_a, z_b, shuffle) -> JsForward:
    z_a, _, shuffle, pairs = _js_inputs(critic, z_a, z_b, shuffle)
    n, d = z_a.shape
    t, tape = critic.net.forward(pairs)
    t = t[:, 0]
    value = float(-softplus(-t[:n]).mean() - softplus(t[n:]).mean())
    return JsForward(value, t, tape, shuffle, n, d)


def js_mi_backward_from(critic: JsCritic, fwd: JsForward, scale: float = 1.0):
    """Backward pass for a recorded :func:`js_mi_forward`; returns ``(grad_z_a, grad_z_b)``."""
    n, d, t = fwd.n, fwd.d, fwd.scores
    g_t = np.concatenate([sigmoid(-t[:n]), -sigmoid(t[n:])]) * (scale / n)
    g_pairs = critic.net.backward(fwd.tape, g_t[:, None])
    g_a = g_pairs[:n, :d] + g_pairs[n:, :d]
    g_b = g_pairs[:n, d:].copy()
    np.add.at(g_b, fwd.shuffle, g_pairs[n:, d:])
    return g_a, g_b


def js_mi_backward(critic: JsCritic, z_a, z_b, shuffle, scale: float = 1.0):
    """Returns ``(value, grad_z_a, grad_z_b)``; critic grads accumulate."""
    fwd = js_mi_forward(critic, z_a, z_b, shuffle)
    return (fwd.value, *js_mi_backward_from(critic, fwd, scale))


def critic_scores(critic: JsCritic, z_a, z_b, shuffle) -> tuple[float, float]:
    """Mean critic score on paired rows and on shuffled rows."""
    z_a, z_b, shuffle, pairs = _js_inputs(critic, z_a, z_b, shuffle)
    n = z_a.shape[0]
    t = critic.net(pairs)[:, 0]
    return float(t[:n].mean()), float(t[n:].mean())


# ---------------------------------------------------------------------------
# private-latent rate


def private_rate(post_own: DiagGaussian) -> float:
    """Batch-mean KL of a private posterior to the N(0, I) prior, in nats."""
    return float(gauss.kl_to_standard(post_own).mean())


def private_rate_backward(post_own: DiagGaussian, scale: float = 1.0):
    n = post_own.shape[0]
    return gauss.kl_to_standard_backward(post_own, np.full(n, scale / n))


@dataclass
class Diagnostic:
    value: float
    skipped_reason: str | None = None


def encoder_disagreement_diagnostic(enc_x_p, enc_y_p, y) -> Diagnostic:
    """Mean KL[p_x(z | y) || p_y(z | y)]: both private encoders fed the *y* view.

    Only meaningful when the views share a dimensionality; otherwise the result is
    NaN with the reason recorded. Never part of the training objective.
    """
    y = as_matrix(y)
    if enc_x_p.in_dim != y.shape[1]:
        return Diagnostic(float("nan"), f"x-private encoder takes {enc_x_p.in_dim} inputs, y view has {y.shape[1]}")
    if enc_y_p.in_dim != y.shape[1]:
        return Diagnostic(float("nan"), f"y-private encoder takes {enc_y_p.in_dim} inputs, y view has {y.shape[1]}")
    if enc_x_p.latent_dim != enc_y_p.latent_dim:
        return Diagnostic(float("nan"), "private encoders have different latent widths")
    a = enc_x_p.posterior(y)
    b = enc_y_p.posterior(y)
    return Diagnostic(float(gauss.kl_between(a, b).mean()))


# ---------------------------------------------------------------------------
# objective assembly


@dataclass
class LossBreakdown:
    recon_x_s: float
    recon_x_p: float
    recon_y_s: float
    recon_y_p: float
    mi_shared: float
    rate_x: float
    rate_y: float
    total: float
    lam: float = 0.0
    beta: float = 0.0

    def as_dict(self) -> dict:
        return asdict(self)

    def resum(self) -> float:
        return (
            self.recon_x_s
            + self.recon_x_p
            + self.recon_y_s
            + self.recon_y_p
            + self.lam * self.mi_shared
            - self.beta * (self.rate_x + self.rate_y)
        )

    def terms(self) -> dict:
        d = self.as_dict()
        d.pop("lam")
        d.pop("beta")
        return d


def total_objective(
    recon_x_s: float,
    recon_x_p: float,
    recon_y_s: float,
    recon_y_p: float,
    mi_shared: float,
    rate_x: float,
    rate_y: float,
    lam: float,
    beta: float,
) -> LossBreakdown:
    """Lower bound on I_x + I_y: reconstructions + lam * shared MI - beta * private rates."""
    if lam < 0 or beta < 0:
        raise ValueError("lambda and beta must be non-negative")
    parts = LossBreakdown(
        recon_x_s, recon_x_p, recon_y_s, recon_y_p, mi_shared, rate_x, rate_y, 0.0, float(lam), float(beta)
    )
    parts.total = parts.resum()
    return parts
