"""Exact RAG distances on finite deterministic MDPs, and checks of their guarantees.

The RAG operator maps a state-pair distance table ``D`` to::

    D'(i, j) = |E_pi r(i) - E_pi r(j)|
               + gamma * sum_{a, b} pi(a|i) pi(b|j) D(next(i, a), next(j, b))

It is a gamma-contraction in the sup norm, its fixed point bounds value
differences, and the squared-reward relaxation used by the learned loss
rests on a variance identity; the ``check_*`` functions verify each one.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from fedrag import kernels
from fedrag.envs import PolicyTable, TabularMDP, random_policy, tabular_random


# |D_{k+1} - D_k| <= gamma |D_k - D_{k-1}| holds up to a few ulps of the table scale
DECAY_ROUNDING = 64 * np.finfo(float).eps


class UnsupportedMDPError(ValueError):
    pass


class NonConvergenceError(RuntimeError):
    pass


class UndefinedRatioError(ValueError):
    pass


def as_deterministic(mdp) -> TabularMDP:
    if not isinstance(mdp, TabularMDP):
        raise UnsupportedMDPError("only deterministic-transition TabularMDP instances are supported")
    return mdp


def expected_rewards(mdp: TabularMDP, pi: PolicyTable) -> np.ndarray:
    return np.sum(pi.probs * mdp.reward, axis=1)


def rag_operator(mdp: TabularMDP, pi: PolicyTable, D: np.ndarray) -> np.ndarray:
    mdp = as_deterministic(mdp)
    D = np.ascontiguousarray(D, dtype=np.float64)
    if D.shape != (mdp.n_states, mdp.n_states):
        raise ValueError(f"distance matrix must be {mdp.n_states}x{mdp.n_states}")
    return kernels.rag_sweep(mdp.next_state, expected_rewards(mdp, pi), pi.probs, D, float(mdp.gamma))


def rag_fixed_point(mdp: TabularMDP, pi: PolicyTable, tol: float = 1e-10, max_iter: int = 100_000,
                    D0: np.ndarray | None = None, history: list | None = None) -> np.ndarray:
    """Iterate the RAG operator from ``D0`` (zeros by default) until the sup-norm change is below ``tol``.

    If ``history`` is a list, the successive sup-norm changes are appended to it.
    """
    n = mdp.n_states
    D = np.zeros((n, n)) if D0 is None else np.array(D0, dtype=np.float64)
    er = expected_rewards(mdp, pi)
    gamma = float(mdp.gamma)
    for _ in range(max_iter):
        D_new = kernels.rag_sweep(mdp.next_state, er, pi.probs, D, gamma)
        delta = float(np.max(np.abs(D_new - D)))
        if history is not None:
            history.append(delta)
        D = D_new
        if delta < tol:
            return D
    raise NonConvergenceError(f"RAG iteration did not converge in {max_iter} iterations")


def policy_value(mdp: TabularMDP, pi: PolicyTable, tol: float = 1e-12, max_iter: int = 1_000_000) -> np.ndarray:
    mdp = as_deterministic(mdp)
    V = np.zeros(mdp.n_states)
    gamma = float(mdp.gamma)
    for _ in range(max_iter):
        V_new = kernels.value_sweep(mdp.next_state, mdp.reward, pi.probs, V, gamma)
        delta = float(np.max(np.abs(V_new - V)))
        V = V_new
        if delta < tol:
            return V
    raise NonConvergenceError(f"policy evaluation did not converge in {max_iter} iterations")


def check_value_bound(mdp: TabularMDP, pi: PolicyTable, slack: float = 1e-8) -> tuple[bool, float]:
    """Whether |V(i) - V(j)| <= D(i, j) + slack for all pairs; also the worst violation."""
    # stopping at change < tol leaves up to tol * gamma / (1 - gamma) error; keep it far below slack
    D = rag_fixed_point(mdp, pi, tol=1e-12)
    V = policy_value(mdp, pi)
    gap = np.abs(V[:, None] - V[None, :]) - D
    worst = float(np.max(gap))
    return worst <= slack, max(worst, 0.0)


def check_contraction(mdp: TabularMDP, pi: PolicyTable, D: np.ndarray, D_other: np.ndarray) -> float:
    """sup|T(D) - T(D')| / sup|D - D'|."""
    denom = float(np.max(np.abs(np.asarray(D) - np.asarray(D_other))))
    if denom == 0.0:
        raise UndefinedRatioError("D and D' are identical")
    num = float(np.max(np.abs(rag_operator(mdp, pi, D) - rag_operator(mdp, pi, D_other))))
    return num / denom


def variance_identity_check(r_i, r_j, pi_i, pi_j, tol: float = 1e-12) -> tuple[float, float, bool]:
    """E[(r_i - r_j)^2] - Var[r_i] - Var[r_j] versus (E r_i - E r_j)^2 with independent action draws."""
    r_i, r_j = np.asarray(r_i, float), np.asarray(r_j, float)
    pi_i, pi_j = np.asarray(pi_i, float), np.asarray(pi_j, float)
    second = 0.0
    for a, pa in enumerate(pi_i):
        for b, pb in enumerate(pi_j):
            second += pa * pb * (r_i[a] - r_j[b]) ** 2
    mean_i, mean_j = float(pi_i @ r_i), float(pi_j @ r_j)
    var_i = float(pi_i @ (r_i - mean_i) ** 2)
    var_j = float(pi_j @ (r_j - mean_j) ** 2)
    lhs = second - var_i - var_j
    rhs = (mean_i - mean_j) ** 2
    return lhs, rhs, abs(lhs - rhs) <= tol


def random_distance(rng: np.random.Generator, n: int, scale: float = 10.0) -> np.ndarray:
    """Random symmetric nonnegative distance table."""
    M = rng.uniform(0.0, scale, size=(n, n))
    return 0.5 * (M + M.T)


@dataclass
class SuiteResult:
    name: str
    instances: int
    max_violation: float
    passed: bool

    def line(self) -> str:
        return f"{self.name},{self.instances},{self.max_violation:.6e},{'pass' if self.passed else 'FAIL'}"


def suite_instances(seed: int, n_mdps: int = 100):
    """Seeded random deterministic MDPs with n <= 8 states, m <= 3 actions, gamma in {0.9, 0.99}."""
    root = np.random.SeedSequence(seed)
    for k, child in enumerate(root.spawn(n_mdps)):
        rng = np.random.default_rng(child)
        n = int(rng.integers(2, 9))
        m = int(rng.integers(1, 4))
        gamma = (0.9, 0.99)[k % 2]
        yield rng, tabular_random(rng, n, m, gamma)


def contraction_suite(seed: int, n_mdps: int = 100, pairs: int = 10) -> SuiteResult:
    worst = -math.inf
    count = 0
    for rng, mdp in suite_instances(seed, n_mdps):
        pi = random_policy(rng, mdp.n_states, mdp.n_actions)
        for _ in range(pairs):
            D = random_distance(rng, mdp.n_states)
            D2 = random_distance(rng, mdp.n_states)
            worst = max(worst, check_contraction(mdp, pi, D, D2) - mdp.gamma)
            count += 1
    return SuiteResult("contraction", count, max(worst, 0.0), worst <= 1e-12)


def fixed_point_suite(seed: int, n_mdps: int = 100, tol: float = 1e-12) -> tuple[SuiteResult, SuiteResult]:
    """Uniqueness (zero vs random start agree) and per-step decay of iterate differences."""
    worst_gap, worst_excess, ok = 0.0, 0.0, True
    for rng, mdp in suite_instances(seed, n_mdps):
        pi = random_policy(rng, mdp.n_states, mdp.n_actions)
        hist: list[float] = []
        D_zero = rag_fixed_point(mdp, pi, tol=tol, history=hist)
        D_rand = rag_fixed_point(mdp, pi, tol=tol, D0=random_distance(rng, mdp.n_states))
        worst_gap = max(worst_gap, float(np.max(np.abs(D_zero - D_rand))))
        allowance = DECAY_ROUNDING * max(1.0, float(np.max(D_zero)))
        for prev, cur in zip(hist, hist[1:]):
            excess = cur - mdp.gamma * prev
            worst_excess = max(worst_excess, excess)
            ok &= excess <= allowance
    uniq = SuiteResult("fixed_point_uniqueness", n_mdps, worst_gap, worst_gap <= 1e-9)
    decay = SuiteResult("iterate_decay", n_mdps, worst_excess, ok)
    return uniq, decay


def value_bound_suite(seed: int, n_mdps: int = 100, policies: int = 3) -> SuiteResult:
    worst = 0.0
    ok = True
    for rng, mdp in suite_instances(seed, n_mdps):
        for _ in range(policies):
            pi = random_policy(rng, mdp.n_states, mdp.n_actions)
            holds, viol = check_value_bound(mdp, pi)
            ok &= holds
            worst = max(worst, viol)
    return SuiteResult("value_bound", n_mdps * policies, worst, ok)


def variance_identity_suite(seed: int, n_pairs: int = 1000) -> SuiteResult:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 10]))
    worst, ok = 0.0, True
    for _ in range(n_pairs):
        m = int(rng.integers(1, 6))
        r_i, r_j = rng.uniform(0, 1, m), rng.uniform(0, 1, m)
        pi_i, pi_j = rng.dirichlet(np.ones(m)), rng.dirichlet(np.ones(m))
        lhs, rhs, equal = variance_identity_check(r_i, r_j, pi_i, pi_j)
        ok &= equal
        worst = max(worst, abs(lhs - rhs))
    return SuiteResult("variance_identity", n_pairs, worst, ok)


def run_all_suites(seed: int = 0, n_mdps: int = 100) -> list[SuiteResult]:
    uniq, decay = fixed_point_suite(seed, n_mdps)
    return [contraction_suite(seed, n_mdps), uniq, decay, value_bound_suite(seed, n_mdps),
            variance_identity_suite(seed)]
