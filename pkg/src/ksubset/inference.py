"""Exact inference for the k-subset distribution.

The k-subset distribution is a product of independent Bernoullis with
success probabilities ``sigmoid(theta)`` conditioned on the event that
exactly ``k`` of them are on.  Everything here works in the log domain and
costs O(nk) per call unless noted otherwise.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.special import gammaln, logsumexp

ENUMERATION_LIMIT = 10**6


class EnumerationTooLarge(ValueError):
    """Raised when brute-force enumeration would exceed ``ENUMERATION_LIMIT``."""


@dataclass(frozen=True, eq=False)
class KSubsetParams:
    """Logits ``theta`` and subset size ``k``.

    Logits beyond about +-30 saturate the Bernoulli probabilities; they are
    accepted, and the log-domain arithmetic keeps them well defined.
    """

    theta: np.ndarray
    k: int

    def __post_init__(self):
        theta = np.array(self.theta, dtype=np.float64).reshape(-1)
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        if theta.size < 1:
            raise ValueError("theta must contain at least one logit")
        if not np.all(np.isfinite(theta)):
            raise ValueError("theta must be finite")
        if isinstance(self.k, bool) or int(self.k) != self.k:
            raise ValueError(f"k must be an integer, got {self.k!r}")
        object.__setattr__(self, "k", int(self.k))
        if not 0 <= self.k <= theta.size:
            raise ValueError(f"k must satisfy 0 <= k <= n={theta.size}, got {self.k}")

    @property
    def n(self) -> int:
        return self.theta.size

    def with_theta(self, theta) -> KSubsetParams:
        return KSubsetParams(theta, self.k)

    @cached_property
    def log_p(self) -> np.ndarray:
        """log sigmoid(theta), evaluated without underflow."""
        return -np.logaddexp(0.0, -self.theta)

    @cached_property
    def log_q(self) -> np.ndarray:
        """log(1 - sigmoid(theta))."""
        return -np.logaddexp(0.0, self.theta)

    @cached_property
    def prefix(self) -> np.ndarray:
        return _prefix_table(self.log_p, self.log_q, self.k)

    @cached_property
    def suffix(self) -> np.ndarray:
        return _suffix_table(self.log_p, self.log_q, self.k)

    @cached_property
    def on_given_prefix(self) -> np.ndarray:
        # [i-1, j] = Pr(z_i = 1 | z_1 + ... + z_i = j); 0 where the sum is impossible
        return _on_given_sum(self.prefix, self.log_p)

    @cached_property
    def on_given_suffix(self) -> np.ndarray:
        # [i-1, j] = Pr(z_i = 1 | z_i + ... + z_n = j)
        return _on_given_sum(self.suffix[::-1], self.log_p[::-1])[::-1]

    @cached_property
    def split_given_on(self) -> np.ndarray:
        # [i-1, j] = Pr(z_1 + ... + z_{i-1} = j | z_i = 1, sum z = k)
        k = self.k
        terms = self.prefix[:-1, :k] + self.suffix[1:, k - 1 :: -1]
        return np.exp(terms - logsumexp(terms, axis=1, keepdims=True))

    @cached_property
    def marginals(self) -> np.ndarray:
        log_z = self.prefix[self.n, self.k]
        mu = np.clip(np.exp(_log_joint_on(self) - log_z), 0.0, 1.0)
        mu.setflags(write=False)
        return mu


def _prefix_table(log_p, log_q, k):
    # a[i, j] = log Pr(z_1 + ... + z_i = j), j = 0..k
    n = len(log_p)
    a = np.full((n + 1, k + 1), -np.inf)
    a[0, 0] = 0.0
    for i in range(1, n + 1):
        a[i] = a[i - 1] + log_q[i - 1]
        a[i, 1:] = np.logaddexp(a[i, 1:], a[i - 1, :-1] + log_p[i - 1])
    return a


def _on_given_sum(table, log_p):
    n, width = table.shape[0] - 1, table.shape[1]
    on = np.zeros((n, width))
    live = np.isfinite(table[1:, 1:])
    with np.errstate(invalid="ignore"):
        ratio = np.exp(table[:-1, :-1] + log_p[:, None] - table[1:, 1:])
    on[:, 1:] = np.where(live, np.clip(ratio, 0.0, 1.0), 0.0)
    return on


def _suffix_table(log_p, log_q, k):
    # b[i, j] = log Pr(z_{i+1} + ... + z_n = j)
    return _prefix_table(log_p[::-1], log_q[::-1], k)[::-1]


def pr_exactly_k(params: KSubsetParams) -> tuple[float, np.ndarray]:
    """Return ``log Pr(sum z = k)`` together with the prefix table.

    ``table[i, j]`` is ``log Pr(z_1 + ... + z_i = j)`` for ``j <= k``.
    """
    table = params.prefix
    return float(table[params.n, params.k]), table


def _sum_distribution(log_p, log_q, lo, hi, k):
    """log Pr(z_lo + ... + z_hi = s) for s = 0..min(k, hi - lo + 1), 0-indexed inclusive."""
    if lo == hi:
        return np.array([log_q[lo], log_p[lo]])[: k + 1]
    mid = (lo + hi) // 2
    left = _sum_distribution(log_p, log_q, lo, mid, k)
    right = _sum_distribution(log_p, log_q, mid + 1, hi, k)
    return log_convolve(left, right, k)


def log_convolve(left, right, k):
    """Log-domain convolution of two sum distributions, truncated at ``k``."""
    size = min(len(left) + len(right) - 1, k + 1)
    pairs = left[:, None] + right[None, :]
    sums = np.add.outer(np.arange(len(left)), np.arange(len(right)))
    out = np.full(size, -np.inf)
    for s in range(size):
        out[s] = logsumexp(pairs[sums == s])
    return out


def pr_exactly_k_dc(params: KSubsetParams) -> float:
    """Divide-and-conquer evaluation of ``log Pr(sum z = k)``.

    Splits the variables at the midpoint, computes the sum distribution of
    each half and combines them by a convolution truncated at ``k``.
    """
    dist = _sum_distribution(params.log_p, params.log_q, 0, params.n - 1, params.k)
    if params.k >= len(dist):
        return -np.inf
    return float(dist[params.k])


def _log_joint_on(params):
    # log Pr(z_i = 1, sum z = k) for every i
    n, k = params.n, params.k
    if k == 0:
        return np.full(n, -np.inf)
    a, b = params.prefix, params.suffix
    # prefix over first i-1 vars sums to j, suffix after i sums to k-1-j
    terms = a[:-1, :k] + b[1:, k - 1 :: -1]
    return params.log_p + logsumexp(terms, axis=1)


def conditional_marginals(params: KSubsetParams) -> np.ndarray:
    """Conditional marginals ``mu_i = Pr(z_i = 1 | sum z = k)`` by forward-backward."""
    return params.marginals.copy()


def _drop(params, i):
    keep = np.arange(params.n) != i
    return KSubsetParams(params.theta[keep], params.k - 1)


def pairwise_marginals(params: KSubsetParams) -> np.ndarray:
    """``P[p, q] = Pr(z_p = 1, z_q = 1 | sum z = k)``; the diagonal holds ``mu``.

    Built by clamping each variable to one in turn and running
    :func:`conditional_marginals` on the remaining variables with ``k - 1``.
    Costs O(n^2 k).
    """
    n, k = params.n, params.k
    mu = conditional_marginals(params)
    pair = np.zeros((n, n))
    if k >= 2:
        for p in range(n):
            rest = conditional_marginals(_drop(params, p))
            pair[p, np.arange(n) != p] = mu[p] * rest
        pair = 0.5 * (pair + pair.T)
    np.fill_diagonal(pair, mu)
    return pair


def marginal_jacobian(params: KSubsetParams) -> np.ndarray:
    """Jacobian ``d mu / d theta``, i.e. the conditional covariance of ``z``."""
    mu = conditional_marginals(params)
    jac = pairwise_marginals(params) - np.outer(mu, mu)
    np.fill_diagonal(jac, mu * (1.0 - mu))
    return jac


def _accumulate(on, v):
    # w[i, j] = E[v_1 z_1 + ... + v_i z_i | prefix sum j], given on[i-1, j] = Pr(z_i = 1 | sum j)
    n, width = on.shape
    w = np.zeros((n + 1, width))
    for i in range(n):
        shifted = np.empty(width)
        shifted[0] = 0.0
        shifted[1:] = w[i, :-1] + v[i]
        w[i + 1] = w[i] + on[i] * (shifted - w[i])
    return w


def jacobian_vector_product(params: KSubsetParams, v) -> np.ndarray:
    """``marginal_jacobian(params) @ v`` in O(nk) without building the matrix.

    Uses ``(J v)_p = mu_p * (E[v.z | z_p = 1, k] - E[v.z | k])``.  The
    conditional expectations come from forward and backward passes that
    carry the expected accumulated weight alongside each log-probability.
    """
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if v.shape != (params.n,):
        raise ValueError(f"v must have length {params.n}")
    if not np.all(np.isfinite(v)):
        raise ValueError("v must be finite")
    n, k = params.n, params.k
    if k == 0 or k == n:
        return np.zeros(n)
    wa = _accumulate(params.on_given_prefix, v)
    wb = _accumulate(params.on_given_suffix[::-1], v[::-1])[::-1]
    resp = params.split_given_on
    given_on = np.sum(resp * (wa[:-1, :k] + wb[1:, k - 1 :: -1]), axis=1) + v
    return params.marginals * (given_on - wa[n, k])


def _binary_entropy(q):
    q = np.clip(q, 0.0, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -(q * np.log(q) + (1.0 - q) * np.log1p(-q))
    return np.nan_to_num(h, nan=0.0)


def entropy(params: KSubsetParams) -> float:
    """Entropy in nats.

    ``h[i, j]`` is the entropy of the first ``i`` variables given that they
    sum to ``j``.  Conditioning on ``z_i`` splits it into the binary entropy
    of ``z_i`` plus the expected entropy of the remaining prefix.
    """
    live = np.isfinite(params.prefix)
    on = params.on_given_prefix
    h = np.zeros(params.k + 1)
    for i in range(params.n):
        nxt = _binary_entropy(on[i]) + (1.0 - on[i]) * h
        nxt[1:] += on[i, 1:] * h[:-1]
        h = np.where(live[i + 1], nxt, 0.0)
    return float(h[params.k])


def log_binomial(n: int, k: int) -> float:
    return float(gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1))


def kl_to_uniform(params: KSubsetParams) -> float:
    """KL divergence to the uniform distribution over k-subsets."""
    return max(log_binomial(params.n, params.k) - entropy(params), 0.0)


def _check_mask(params, z):
    z = np.asarray(z)
    if z.shape != (params.n,):
        raise ValueError(f"mask must have length {params.n}, got shape {z.shape}")
    if not np.all((z == 0) | (z == 1)):
        raise ValueError("mask entries must be 0 or 1")
    if int(z.sum()) != params.k:
        raise ValueError(f"mask has weight {int(z.sum())}, expected k={params.k}")
    return z.astype(np.float64)


def log_prob(params: KSubsetParams, z) -> float:
    """``log p(z | sum z = k)`` for a mask of weight ``k``."""
    z = _check_mask(params, z)
    log_z, _ = pr_exactly_k(params)
    return float(np.sum(z * params.log_p + (1.0 - z) * params.log_q) - log_z)


def score(params: KSubsetParams, z) -> np.ndarray:
    """Gradient of :func:`log_prob` with respect to ``theta``: ``z - mu``."""
    z = _check_mask(params, z)
    return z - conditional_marginals(params)


def enumerate_distribution(params: KSubsetParams) -> tuple[np.ndarray, np.ndarray]:
    """All weight-k masks (rows) and their exact probabilities.

    Brute force over ``C(n, k)`` subsets using ``p(z) ∝ exp(theta . z)``;
    independent of the dynamic programs above, so it serves as their oracle.
    """
    n, k = params.n, params.k
    count = math.comb(n, k)
    if count > ENUMERATION_LIMIT:
        raise EnumerationTooLarge(
            f"C({n}, {k}) = {count} subsets exceeds the limit of {ENUMERATION_LIMIT}"
        )
    masks = np.zeros((count, n))
    for row, subset in enumerate(itertools.combinations(range(n), k)):
        masks[row, list(subset)] = 1.0
    scores = masks @ params.theta
    probs = np.exp(scores - logsumexp(scores))
    return masks, probs
