"""Samplers over k-subsets.

Random streams are :class:`numpy.random.Generator` instances backed by
PCG64.  ``make_rng`` and ``trial_rng`` are the only ways the package creates
them, so a seed fully determines every draw.
"""

from __future__ import annotations

import numpy as np
from scipy.special import logsumexp

from .inference import KSubsetParams, log_convolve

UNIFORM_EPS = 1e-12


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))


def trial_rng(master_seed: int, trial: int) -> np.random.Generator:
    """Independent stream for one trial, derived from ``(master_seed, trial)``."""
    seq = np.random.SeedSequence(int(master_seed), spawn_key=(int(trial),))
    return np.random.Generator(np.random.PCG64(seq))


def sample_exact(params: KSubsetParams, rng: np.random.Generator, size=None) -> np.ndarray:
    """Exact ancestral sampling from the k-subset distribution.

    Walks the variables from last to first with the remaining budget ``j``,
    turning variable ``i`` on with probability
    ``Pr(prefix_{i-1} = j-1) p_i / Pr(prefix_i = j)``.  Returns one mask of
    shape ``(n,)``, or ``(size, n)`` masks when ``size`` is given.
    """
    count = 1 if size is None else int(size)
    on = params.on_given_prefix
    u = rng.random((count, params.n))
    budget = np.full(count, params.k)
    z = np.zeros((count, params.n))
    for i in range(params.n - 1, -1, -1):
        picked = u[:, i] < on[i, budget]
        z[picked, i] = 1.0
        budget = budget - picked
    return z[0] if size is None else z


def _dc_tree(log_p, log_q, lo, hi, k, tree):
    # sum distribution of z_lo..z_hi truncated at k, memoised per node
    if lo == hi:
        dist = np.array([log_q[lo], log_p[lo]])[: k + 1]
    else:
        mid = (lo + hi) // 2
        left = _dc_tree(log_p, log_q, lo, mid, k, tree)
        right = _dc_tree(log_p, log_q, mid + 1, hi, k, tree)
        dist = log_convolve(left, right, k)
    tree[lo, hi] = dist
    return dist


def _dc_draw(tree, lo, hi, budget, rng, z):
    if lo == hi:
        z[:, lo] = budget
        return
    mid = (lo + hi) // 2
    left, right = tree[lo, mid], tree[mid + 1, hi]
    m = np.arange(len(left))
    rest = budget[:, None] - m[None, :]
    valid = (rest >= 0) & (rest < len(right))
    logits = np.where(valid, left[None, :] + right[np.clip(rest, 0, len(right) - 1)], -np.inf)
    probs = np.exp(logits - logsumexp(logits, axis=1, keepdims=True))
    u = rng.random(len(budget))[:, None]
    # inverse CDF; the min guards against rounding in the last cumulative entry
    last = valid.shape[1] - 1 - np.argmax(valid[:, ::-1], axis=1)
    split = np.minimum((np.cumsum(probs, axis=1) < u).sum(axis=1), last)
    split = np.where(valid[np.arange(len(budget)), split], split, np.argmax(valid, axis=1))
    _dc_draw(tree, lo, mid, split, rng, z)
    _dc_draw(tree, mid + 1, hi, budget - split, rng, z)


def sample_exact_dc(params: KSubsetParams, rng: np.random.Generator, size=None) -> np.ndarray:
    """Divide-and-conquer exact sampling.

    Draws how many ones fall in the left half from
    ``Pr(left = m) Pr(right = k - m)`` and recurses into both halves.  Same
    distribution as :func:`sample_exact`, different draw sequence.
    """
    count = 1 if size is None else int(size)
    tree: dict = {}
    _dc_tree(params.log_p, params.log_q, 0, params.n - 1, params.k, tree)
    z = np.zeros((count, params.n))
    _dc_draw(tree, 0, params.n - 1, np.full(count, params.k), rng, z)
    return z[0] if size is None else z


def gumbel_noise(n: int, rng: np.random.Generator, size=None) -> np.ndarray:
    """Standard Gumbel draws ``-log(-log U)`` with ``U`` kept inside ``(0, 1)``."""
    if n < 1:
        raise ValueError("n must be positive")
    shape = n if size is None else (int(size), n)
    u = np.clip(rng.random(shape), UNIFORM_EPS, 1.0 - UNIFORM_EPS)
    return -np.log(-np.log(u))


def topk_mask(scores, k: int) -> np.ndarray:
    """Mask of the ``k`` largest entries along the last axis, ties to the lowest index."""
    scores = np.asarray(scores, dtype=np.float64)
    order = np.argsort(-scores, axis=-1, kind="stable")[..., :k]
    mask = np.zeros(scores.shape)
    np.put_along_axis(mask, order, 1.0, axis=-1)
    return mask


def pam_topk(params: KSubsetParams, noise, scale: float = 1.0) -> np.ndarray:
    """Perturb-and-MAP: top-k of ``theta + scale * noise``."""
    noise = np.asarray(noise, dtype=np.float64)
    if not np.all(np.isfinite(noise)):
        raise ValueError("noise must be finite")
    return topk_mask(params.theta + scale * noise, params.k)
