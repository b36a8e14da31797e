"""Gradient estimators for ``d/dtheta E_{z ~ p(z | sum z = k)}[loss(z)]``.

Every estimator takes ``(params, loss, rng, **hyperparameters)`` and returns
a :class:`GradientEstimate` built from a single forward sample.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .inference import (
    KSubsetParams,
    enumerate_distribution,
    jacobian_vector_product,
    score,
)
from .sampling import gumbel_noise, pam_topk, sample_exact, topk_mask

LOG_FLOOR = -1e9


@dataclass(frozen=True)
class LossOracle:
    """A downstream loss and its gradient with ``z`` treated as a real vector."""

    value: Callable[[np.ndarray], float]
    grad: Callable[[np.ndarray], np.ndarray]


def squared_distance_loss(target) -> LossOracle:
    """``loss(z) = ||z - target||^2``."""
    target = np.asarray(target, dtype=np.float64)
    return LossOracle(
        value=lambda z: float(np.sum((z - target) ** 2)),
        grad=lambda z: 2.0 * (z - target),
    )


def linear_loss(weights) -> LossOracle:
    weights = np.asarray(weights, dtype=np.float64)
    return LossOracle(value=lambda z: float(weights @ z), grad=lambda z: weights.copy())


@dataclass
class GradientEstimate:
    g: np.ndarray
    samples_used: int = 1
    # discrete forward sample, when the estimator draws one
    sample: np.ndarray | None = None


def exact_gradient(params: KSubsetParams, loss: LossOracle) -> GradientEstimate:
    """Exact gradient by enumerating every k-subset.

    Uses the score-function identity ``sum_z p(z) loss(z) (z - mu)`` with
    ``mu`` also taken from the enumeration.
    """
    masks, probs = enumerate_distribution(params)
    mu = probs @ masks
    values = np.array([loss.value(z) for z in masks])
    g = (probs * values) @ (masks - mu)
    return GradientEstimate(g, samples_used=len(probs))


def estimate_simple(
    params: KSubsetParams,
    loss: LossOracle,
    rng: np.random.Generator,
    forward: str = "exact",
    backward: str = "jacobian",
    lam: float = 30.0,
    noise_scale: float = 1.0,
) -> GradientEstimate:
    """SIMPLE and its ablations.

    ``forward`` picks the sample: ``"exact"`` draws from the k-subset
    distribution, ``"pam"`` takes the Gumbel-perturbed top-k.  ``backward``
    picks the gradient: ``"jacobian"`` returns ``d mu/d theta @ grad loss(z)``;
    ``"pam_fd"`` returns the finite difference ``(z - z') / lam`` where
    ``z'`` is a fresh exact sample at ``theta - lam * grad loss(z)``.

    SIMPLE is exact/jacobian, SIMPLE-b is pam/jacobian and SIMPLE-f is
    exact/pam_fd.
    """
    if forward == "exact":
        z = sample_exact(params, rng)
    elif forward == "pam":
        z = pam_topk(params, gumbel_noise(params.n, rng), noise_scale)
    else:
        raise ValueError(f"unknown forward mode {forward!r}")
    dz = loss.grad(z)
    if backward == "jacobian":
        g = jacobian_vector_product(params, dz)
    elif backward == "pam_fd":
        if lam <= 0:
            raise ValueError("lam must be positive")
        target = params.with_theta(params.theta - lam * dz)
        g = (z - sample_exact(target, rng)) / lam
    else:
        raise ValueError(f"unknown backward mode {backward!r}")
    return GradientEstimate(g, sample=z)


def estimate_sfe(
    params: KSubsetParams,
    loss: LossOracle,
    rng: np.random.Generator,
    baseline: float = 0.0,
) -> GradientEstimate:
    """Score-function (REINFORCE) estimate ``(loss(z) - baseline) * (z - mu)``."""
    z = sample_exact(params, rng)
    return GradientEstimate((loss.value(z) - baseline) * score(params, z), sample=z)


def estimate_imle(
    params: KSubsetParams,
    loss: LossOracle,
    rng: np.random.Generator,
    lam: float = 30.0,
    noise_scale: float = 1.0,
) -> GradientEstimate:
    """Implicit MLE: difference of two perturb-and-MAP states sharing one noise draw."""
    if lam <= 0:
        raise ValueError("lam must be positive")
    eps = noise_scale * gumbel_noise(params.n, rng)
    z = topk_mask(params.theta + eps, params.k)
    dz = loss.grad(z)
    z_target = topk_mask(params.theta - lam * dz + eps, params.k)
    return GradientEstimate((z - z_target) / lam, sample=z)


def softsub_relax(kappa, k: int, t: float, tangent=None):
    """Relaxed top-k by ``k`` rounds of tempered softmax on ``kappa``.

    After each round ``kappa += log(1 - s)`` (floored at ``LOG_FLOOR``).
    The relaxed sample sums to ``k``; a dominant entry can exceed one.
    If ``tangent`` (shape ``(n, d)``, the derivative of ``kappa`` along
    ``d`` directions) is given, it is pushed through the same recurrence and
    the derivative of the relaxed sample is returned too.
    """
    kappa = np.array(kappa, dtype=np.float64)
    y = np.zeros_like(kappa)
    dy = None if tangent is None else np.zeros_like(tangent)
    dk = None if tangent is None else np.array(tangent, dtype=np.float64)
    for _ in range(k):
        logits = kappa / t
        s = np.exp(logits - logits.max())
        s /= s.sum()
        y += s
        with np.errstate(divide="ignore"):
            step = np.log1p(-s)
        floored = step < LOG_FLOOR
        if dk is not None:
            ds = (s[:, None] * dk - np.outer(s, s @ dk)) / t
            dy += ds
            with np.errstate(divide="ignore", invalid="ignore"):
                dstep = -ds / (1.0 - s)[:, None]
            dstep[floored] = 0.0
            dk = dk + dstep
        kappa = kappa + np.where(floored, LOG_FLOOR, step)
    return y if dy is None else (y, dy)


def estimate_softsub(
    params: KSubsetParams,
    loss: LossOracle,
    rng: np.random.Generator,
    t: float = 0.5,
) -> GradientEstimate:
    """Relaxed-subset estimate ``(dy/dtheta)^T grad loss(y)`` with the noise fixed.

    The Jacobian of the relaxed sample is carried forward along all ``n``
    coordinate directions at once.
    """
    if t <= 0:
        raise ValueError("t must be positive")
    kappa = params.theta + gumbel_noise(params.n, rng)
    y, dy = softsub_relax(kappa, params.k, t, tangent=np.eye(params.n))
    return GradientEstimate(dy.T @ loss.grad(y), sample=y)


def estimate_st_gumbel(
    params: KSubsetParams,
    loss: LossOracle,
    rng: np.random.Generator,
    t: float = 1.0,
    noise=None,
) -> GradientEstimate:
    """Straight-through Gumbel-softmax for ``k = 1``.

    Forward is the one-hot argmax of the perturbed logits; backward uses the
    softmax Jacobian at those perturbed logits.
    """
    if params.k != 1:
        raise ValueError(f"straight-through Gumbel-softmax needs k=1, got k={params.k}")
    if t <= 0:
        raise ValueError("t must be positive")
    if noise is None:
        noise = gumbel_noise(params.n, rng)
    perturbed = params.theta + np.asarray(noise, dtype=np.float64)
    z = topk_mask(perturbed, 1)
    logits = perturbed / t
    y = np.exp(logits - logits.max())
    y /= y.sum()
    jac = (np.diag(y) - np.outer(y, y)) / t
    return GradientEstimate(jac.T @ loss.grad(z), sample=z)


def _simple_f(params, loss, rng, lam=30.0):
    return estimate_simple(params, loss, rng, forward="exact", backward="pam_fd", lam=lam)


def _simple_b(params, loss, rng, noise_scale=1.0):
    return estimate_simple(params, loss, rng, forward="pam", noise_scale=noise_scale)


def _exact(params, loss, rng):
    return exact_gradient(params, loss)


ESTIMATORS: dict[str, Callable[..., GradientEstimate]] = {
    "simple": estimate_simple,
    "simple-f": _simple_f,
    "simple-b": _simple_b,
    "sfe": estimate_sfe,
    "imle": estimate_imle,
    "softsub": estimate_softsub,
    "st-gumbel": estimate_st_gumbel,
    "exact": _exact,
}
