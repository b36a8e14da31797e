"""Brute-force consistency checks on small random instances."""

from __future__ import annotations

import numpy as np

from . import inference as inf
from .sampling import make_rng

TOL = 1e-9


def _check_instance(params):
    masks, probs = inf.enumerate_distribution(params)
    failures = []

    def expect(name, got, want):
        err = float(np.max(np.abs(np.asarray(got) - np.asarray(want))))
        if not err <= TOL:
            failures.append(f"{name}: n={params.n} k={params.k} error {err:.3g}")

    unnormalised = np.exp(masks @ params.log_p + (1.0 - masks) @ params.log_q)
    expect("pr_exactly_k", inf.pr_exactly_k(params)[0], np.log(unnormalised.sum()))
    expect("pr_exactly_k_dc", inf.pr_exactly_k_dc(params), np.log(unnormalised.sum()))
    mu = probs @ masks
    expect("conditional_marginals", inf.conditional_marginals(params), mu)
    expect("marginal_sum", inf.conditional_marginals(params).sum(), params.k)
    if params.n >= 2:
        expect("pairwise_marginals", inf.pairwise_marginals(params), (masks * probs[:, None]).T @ masks)
    ent = -np.sum(probs * np.log(probs))
    expect("entropy", inf.entropy(params), ent)
    expect("kl_to_uniform", inf.kl_to_uniform(params), inf.log_binomial(params.n, params.k) - ent)
    expect("log_prob", [inf.log_prob(params, z) for z in masks], np.log(probs))
    jac = inf.marginal_jacobian(params)
    expect("jacobian_symmetry", jac, jac.T)
    expect("jacobian_rows", jac.sum(axis=1), 0.0)
    v = np.linspace(-1.0, 1.0, params.n)
    expect("jacobian_vector_product", inf.jacobian_vector_product(params, v), jac @ v)
    return failures


def run_selfcheck(instances: int = 50, max_n: int = 10, seed: int = 0) -> list[str]:
    """Compare every inference routine with enumeration; returns failure messages."""
    rng = make_rng(seed)
    failures = []
    for _ in range(instances):
        n = int(rng.integers(1, max_n + 1))
        k = int(rng.integers(0, n + 1))
        params = inf.KSubsetParams(rng.standard_normal(n), k)
        failures.extend(_check_instance(params))
    return failures
