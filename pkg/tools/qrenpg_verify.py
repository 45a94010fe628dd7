#!/usr/bin/env python3
"""
qrenpg: Verification
Seeded property suites over the game model, the dynamics, the gradient oracle,
the generators and the Markov extension.

Each suite draws one instance per seed from its own Philox stream and tallies
checks of the form lhs <= rhs + slack. cmd_verify reports, per suite, the
number of checks, the number of violations and the largest excess over the
allowed slack.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Sequence

import numpy as np

import qrenpg_dynamics as dynamics
import qrenpg_game as game_model
import qrenpg_gradient as gradient
import qrenpg_markov as markov
from qrenpg_errors import QrenpgError
from qrenpg_generators import GameSpec, build_game, random_profile, random_state_profile, stream

logger = logging.getLogger(__name__)

DEFAULT_SEED_COUNT = 100
TAG_VERIFY = 100


class Tally:
    """Counts checks and violations for one suite."""

    def __init__(self, name: str):
        self.name = name
        self.checks = 0
        self.violations = 0
        self.max_excess = 0.0
        self.first_failure = None

    def check(self, lhs: float, rhs: float, slack: float = 0.0, what: str = "") -> bool:
        self.checks += 1
        excess = float(lhs) - float(rhs) - slack
        if excess <= 0:
            return True
        self.violations += 1
        self.max_excess = max(self.max_excess, excess if math.isfinite(excess) else math.inf)
        if self.first_failure is None:
            self.first_failure = f"{what}: {lhs!r} > {rhs!r} + {slack!r}"
            logger.warning("%s violated: %s", self.name, self.first_failure)
        return False

    def as_dict(self) -> dict:
        out = {"checks": self.checks, "violations": self.violations, "max_excess": self.max_excess}
        if self.first_failure is not None:
            out["first_failure"] = self.first_failure
        return out


# -----------------------------------------------------------------------------
# Instance builders
# -----------------------------------------------------------------------------

def _rng(seed: int, suite_index: int) -> np.random.Generator:
    return stream(seed, TAG_VERIFY, suite_index)


def _sizes(rng, max_agents=3, max_actions=4) -> tuple[int, ...]:
    n = int(rng.integers(2, max_agents + 1))
    return tuple(int(m) for m in rng.integers(2, max_actions + 1, size=n))


def _game(rng, sizes) -> game_model.StaticGame:
    return game_model.StaticGame(tuple(rng.random(sizes) for _ in sizes), (0.0, 1.0))


def _profile(rng, sizes, floor=0.0) -> game_model.PolicyProfile:
    return game_model.PolicyProfile(tuple(floor + 1.0 - rng.random(m) for m in sizes))


def _separable_game(rng, sizes) -> game_model.StaticGame:
    """r_i depends on a_i only."""
    rewards = []
    for i, m in enumerate(sizes):
        shape = [1] * len(sizes)
        shape[i] = m
        rewards.append(np.broadcast_to(rng.random(m).reshape(shape), sizes).copy())
    return game_model.StaticGame(tuple(rewards), (0.0, 1.0))


def _sup(first: Sequence[np.ndarray], second: Sequence[np.ndarray]) -> float:
    return max(float(np.abs(np.asarray(a) - np.asarray(b)).max()) for a, b in zip(first, second))


# -----------------------------------------------------------------------------
# Game model
# -----------------------------------------------------------------------------

def suite_gap_nonnegative(seeds, tally):
    for seed in seeds:
        rng = _rng(seed, 1)
        sizes = _sizes(rng)
        g, p = _game(rng, sizes), _profile(rng, sizes)
        tau = 2.0 * (1.0 - rng.random())
        for agent in range(len(sizes)):
            marginal = game_model.marginalized_reward(g, p, agent)
            log_star = game_model.log_soft_best_response(marginal, tau)
            raw_qre = tau * float(p.policies[agent] @ (p.log_policies[agent] - log_star))
            raw_ne = float(marginal.max() - p.policies[agent] @ marginal)
            tally.check(-raw_qre, 0.0, game_model.GAP_ROUNDOFF, f"seed {seed} agent {agent} qre")
            tally.check(-raw_ne, 0.0, game_model.GAP_ROUNDOFF, f"seed {seed} agent {agent} ne")


def suite_shift_invariance(seeds, tally):
    for seed in seeds:
        rng = _rng(seed, 2)
        sizes = _sizes(rng)
        g, p = _game(rng, sizes), _profile(rng, sizes)
        tau = 2.0 * (1.0 - rng.random())
        agent = int(rng.integers(len(sizes)))
        shift = 10.0 * rng.random() - 5.0
        before = game_model.qre_gap(g, p, tau).per_agent_gaps
        after = game_model.qre_gap(g.shifted(agent, shift), p, tau).per_agent_gaps
        tally.check(max(abs(a - b) for a, b in zip(before, after)) / tau, 0.0, 1e-10, f"seed {seed}")


def suite_marginal_linearity(seeds, tally):
    for seed in seeds:
        rng = _rng(seed, 3)
        sizes = _sizes(rng)
        g = _game(rng, sizes)
        p, q = _profile(rng, sizes), _profile(rng, sizes)
        agent = int(rng.integers(len(sizes)))
        other = (agent + 1) % len(sizes)
        lam = float(rng.random())
        mixed = p.replace(other, lam * p.policies[other] + (1 - lam) * q.policies[other])
        swapped = p.replace(other, q.policies[other])
        expected = (lam * game_model.marginalized_reward(g, p, agent)
                    + (1 - lam) * game_model.marginalized_reward(g, swapped, agent))
        actual = game_model.marginalized_reward(g, mixed, agent)
        tally.check(float(np.abs(actual - expected).max()), 0.0, 1e-12, f"seed {seed}")


def suite_expected_reward(seeds, tally):
    for seed in seeds:
        rng = _rng(seed, 4)
        sizes = _sizes(rng)
        g, p = _game(rng, sizes), _profile(rng, sizes)
        joint = p.joint()
        for agent in range(len(sizes)):
            direct = float(np.sum(joint * g.reward_tensor(agent)))
            tally.check(abs(direct - game_model.expected_reward(g, p, agent)), 0.0, 1e-12,
                        f"seed {seed} agent {agent}")


def suite_product_l1(seeds, tally):
    for seed in seeds:
        rng = _rng(seed, 5)
        sizes = _sizes(rng, max_agents=4, max_actions=3)
        joint, local = game_model.product_l1_distance(_profile(rng, sizes), _profile(rng, sizes))
        tally.check(joint, local, 1e-12, f"seed {seed}")


# -----------------------------------------------------------------------------
# Dynamics
# -----------------------------------------------------------------------------

def _step_params(rng, tau_max=5.0):
    tau = tau_max * rng.random()
    eta_max = 1.0 if tau <= 1.0 else 1.0 / tau
    return dynamics.DynamicsParams(tau, eta_max * (1.0 - rng.random()))


def suite_support_preservation(seeds, tally):
    for seed in seeds:
        rng = _rng(seed, 6)
        sizes = _sizes(rng)
        g, p = _game(rng, sizes), _profile(rng, sizes)
        out = dynamics.npg_step(g, p, _step_params(rng))
        tally.check(-min(float(pi.min()) for pi in out.policies), 0.0, 0.0, f"seed {seed}")


def suite_relabel_invariance(seeds, tally):
    for seed in seeds:
        rng = _rng(seed, 7)
        sizes = _sizes(rng)
        g, p = _game(rng, sizes), _profile(rng, sizes)
        params = _step_params(rng)
        order = [int(o) for o in rng.permutation(len(sizes))]
        direct = dynamics.npg_step(g, p, params).permuted(order)
        relabeled = dynamics.npg_step(g.permuted(order), p.permuted(order), params)
        tally.check(_sup(direct.policies, relabeled.policies), 0.0, 1e-12, f"seed {seed}")


def suite_shift_covariance(seeds, tally):
    for seed in seeds:
        rng = _rng(seed, 8)
        sizes = _sizes(rng)
        g, p = _game(rng, sizes), _profile(rng, sizes)
        params = _step_params(rng)
        agent = int(rng.integers(len(sizes)))
        shifted = g.shifted(agent, 10.0 * rng.random() - 5.0)
        tally.check(_sup(dynamics.npg_step(g, p, params).policies,
                         dynamics.npg_step(shifted, p, params).policies), 0.0, 1e-12, f"seed {seed}")


def suite_fixed_point(seeds, tally):
    for seed in seeds:
        rng = _rng(seed, 9)
        sizes = _sizes(rng)
        g = _separable_game(rng, sizes)
        tau = 0.1 + 4.9 * rng.random()
        uniform = game_model.PolicyProfile.uniform(sizes)
        qre = game_model.PolicyProfile(tuple(
            game_model.soft_best_response(game_model.marginalized_reward(g, uniform, i), tau)
            for i in range(len(sizes))
        ))
        params = dynamics.DynamicsParams(tau, (1.0 / tau if tau > 1 else 1.0) * (1.0 - rng.random()))
        tally.check(_sup(dynamics.npg_step(g, qre, params).policies, qre.policies), 0.0, 1e-12,
                    f"seed {seed}")


def _contraction_instance(seed):
    spec = GameSpec("random_static", (3, 4, 5), seed=seed)
    return build_game(spec), random_profile(spec.action_sizes, seed)


def suite_convergence_envelope(seeds, tally):
    """tau=48, eta=1/48 on 3x4x5 random games: factor 0.5, gap below 1e-10 by iteration 60."""
    for seed in seeds:
        g, initial = _contraction_instance(seed)
        params = dynamics.DynamicsParams(48.0, 1.0 / 48.0, max_iters=60, stop_gap=0.0)
        trajectory = dynamics.run(g, initial, params)
        for record in trajectory.records:
            tally.check(record.qre_gap, record.bound, 1e-10, f"seed {seed} iter {record.iter}")
        tally.check(trajectory.records[-1].qre_gap, 1e-10, 0.0, f"seed {seed} final gap")


def suite_aux_contraction(seeds, tally):
    """Residual contracts by the factor at every step and dominates the gap."""
    for seed in seeds:
        g, initial = _contraction_instance(seed)
        rng = _rng(seed, 10)
        tau = 30.0 + 30.0 * rng.random()
        params = dynamics.DynamicsParams(tau, 1.0 / tau, max_iters=40, stop_gap=0.0)
        rho = dynamics.contraction_factor(g, params)
        records = dynamics.run(g, initial, params).records
        for before, after in zip(records, records[1:]):
            tally.check(after.aux_residual, rho * before.aux_residual, 1e-12, f"seed {seed} iter {after.iter}")
        for record in records:
            tally.check(record.qre_gap, 2.0 * tau * record.aux_residual, 1e-10, f"seed {seed} gap {record.iter}")


# -----------------------------------------------------------------------------
# Gradient oracle
# -----------------------------------------------------------------------------

def suite_gradient(seeds, tally):
    """Finite differences, tangency and vanishing at soft best responses."""
    for seed in seeds:
        rng = _rng(seed, 11)
        sizes = _sizes(rng)
        g, p = _game(rng, sizes), _profile(rng, sizes, floor=0.05)
        tau = 2.0 * rng.random()
        agent = int(rng.integers(len(sizes)))
        analytic = gradient.policy_gradient(g, p, agent, tau)
        numeric = gradient.finite_difference_gradient(g, gradient.LogitProfile.from_profile(p), agent, tau)
        for a, n in zip(analytic, numeric):
            tally.check(abs(a - n), 1e-6 * (1.0 + abs(a)), 0.0, f"seed {seed} fd")
        tally.check(abs(float(analytic.sum())), 0.0, 1e-12, f"seed {seed} tangency")

        tau = 0.1 + 4.9 * rng.random()
        best = game_model.soft_best_response(game_model.marginalized_reward(g, p, agent), tau)
        at_best = gradient.policy_gradient(g, p.replace(agent, best), agent, tau)
        tally.check(float(np.abs(at_best).max()), 0.0, 1e-12, f"seed {seed} stationary")


def suite_fisher(seeds, tally):
    for seed in seeds:
        rng = _rng(seed, 12)
        m = int(rng.integers(2, 8))
        policy = 1.0 - rng.random(m)
        policy = policy / policy.sum()
        fisher = gradient.fisher_matrix(policy)
        tally.check(0.0 if np.array_equal(fisher, fisher.T) else 1.0, 0.0, 0.0, f"seed {seed} symmetric")
        tally.check(float(np.abs(fisher @ np.ones(m)).max()), 0.0, 1e-14, f"seed {seed} null space")
        explicit = sum(policy[a] * np.outer(np.eye(m)[a] - policy, np.eye(m)[a] - policy) for a in range(m))
        tally.check(float(np.abs(explicit - fisher).max()), 0.0, 1e-14, f"seed {seed} closed form")
        tally.check(-float(np.linalg.eigvalsh(fisher).min()), 0.0, 1e-12, f"seed {seed} semidefinite")


def suite_fisher_bridge(seeds, tally):
    """softmax of the Fisher-preconditioned step equals the closed-form update."""
    for seed in seeds:
        rng = _rng(seed, 13)
        sizes = _sizes(rng)
        g, p = _game(rng, sizes), _profile(rng, sizes, floor=0.05)
        tau = 0.5 + 49.5 * rng.random()
        params = dynamics.DynamicsParams(tau, (1.0 - 0.9 * rng.random()) / max(1.0, tau))
        closed = dynamics.npg_step(g, p, params)
        natural = gradient.npg_step_via_fisher(g, gradient.LogitProfile.from_profile(p), params).to_profile()
        tally.check(_sup(closed.policies, natural.policies), 0.0, 1e-8, f"seed {seed}")


def suite_log_softmax_lipschitz(seeds, tally):
    for seed in seeds:
        rng = _rng(seed, 14)
        m = int(rng.integers(2, 11))
        lhs, rhs = gradient.log_softmax_distance(3.0 * rng.standard_normal(m), 3.0 * rng.standard_normal(m))
        tally.check(lhs, rhs, 1e-12, f"seed {seed}")


# -----------------------------------------------------------------------------
# Generators
# -----------------------------------------------------------------------------

def suite_polymatrix(seeds, tally):
    """Zero-sum identity (exhaustive on small games) and structural vs dense marginals."""
    for seed in seeds:
        rng = _rng(seed, 15)
        sizes = _sizes(rng, max_agents=5, max_actions=4)
        g = build_game(GameSpec("polymatrix_zero_sum", sizes, seed=seed))
        joint = np.indices(sizes).reshape(len(sizes), -1).T
        tally.check(float(np.abs(g.rewards_at(joint).sum(axis=1)).max()), 0.0, 1e-12, f"seed {seed} zero-sum")
        p = _profile(rng, sizes)
        dense = g.materialize()
        for agent in range(len(sizes)):
            tally.check(float(np.abs(g.marginal(p.policies, agent) - dense.marginal(p.policies, agent)).max()),
                        0.0, 1e-12, f"seed {seed} agent {agent} marginal")

        ring = build_game(GameSpec("polymatrix_zero_sum", (10,) * 5, seed=seed))
        sample = np.stack([rng.integers(0, 10, size=10_000) for _ in range(5)], axis=1)
        tally.check(float(np.abs(ring.rewards_at(sample).sum(axis=1)).max()), 0.0, 1e-12, f"seed {seed} ring")


def suite_markov_kernel(seeds, tally):
    for seed in seeds:
        rng = _rng(seed, 16)
        sizes = _sizes(rng, max_agents=3, max_actions=3)
        mgame = build_game(GameSpec("random_markov", sizes, seed=seed, num_states=int(rng.integers(1, 5))))
        rows = mgame.kernel.sum(axis=-1)
        tally.check(float(np.abs(rows - 1.0).max()), 0.0, 1e-12, f"seed {seed} stochastic")
        tally.check(-float(mgame.kernel.min()), 0.0, 0.0, f"seed {seed} positive")
        tally.check(0.0 if mgame.kernel.min() > 0 else 1.0, 0.0, 0.0, f"seed {seed} strictly positive")


# -----------------------------------------------------------------------------
# Markov
# -----------------------------------------------------------------------------

def _markov_instance(rng, seed):
    sizes = _sizes(rng, max_agents=2, max_actions=3)
    num_states = int(rng.integers(2, 5))
    gamma = 0.5 + 0.45 * rng.random()
    mgame = build_game(GameSpec("random_markov", sizes, seed=seed, num_states=num_states, gamma=gamma))
    return mgame, random_state_profile(sizes, num_states, seed)


def suite_markov_reduction(seeds, tally):
    """Single state, gamma = 0: Markov steps and gaps track the static ones."""
    for seed in seeds:
        rng = _rng(seed, 17)
        sizes = _sizes(rng)
        g = _game(rng, sizes)
        static = _profile(rng, sizes)
        embedded = markov.MarkovGame.from_static(g, gamma=0.0)
        state = markov.StatePolicyProfile.from_static(static)
        tau = 0.5 + 1.5 * rng.random()
        params = dynamics.DynamicsParams(tau, 0.5 / tau)
        for k in range(20):
            static_gap = game_model.qre_gap(g, static, tau).max_gap
            markov_gap = markov.markov_qre_gap(embedded, state, tau).max_gap
            tally.check(abs(static_gap - markov_gap), 0.0, 1e-10, f"seed {seed} gap {k}")
            static = dynamics.npg_step(g, static, params)
            state = markov.markov_npg_step(embedded, state, params)
            tally.check(_sup(static.policies, (p[0] for p in state.policies)), 0.0, 1e-10, f"seed {seed} step {k}")


def suite_soft_value_iteration(seeds, tally):
    for seed in seeds:
        rng = _rng(seed, 18)
        mgame, profile = _markov_instance(rng, seed)
        tau = rng.random()
        rewards, kernel = markov.induced_mdp(mgame, profile, 0)
        _, changes = markov.soft_value_iteration(rewards, kernel, mgame.gamma, tau)
        for k, (before, after) in enumerate(zip(changes, changes[1:])):
            tally.check(after, (mgame.gamma + 1e-12) * before, 1e-12, f"seed {seed} sweep {k}")


def suite_evaluation_linearity(seeds, tally):
    for seed in seeds:
        rng = _rng(seed, 19)
        mgame, profile = _markov_instance(rng, seed)
        extra = tuple(rng.random(r.shape) for r in mgame.rewards)
        first = markov.MarkovGame(extra, mgame.kernel, mgame.gamma)
        total = markov.MarkovGame(tuple(a + b for a, b in zip(mgame.rewards, extra)), mgame.kernel, mgame.gamma)
        parts = [markov.evaluate_policy(x, profile, 0.0) for x in (mgame, first)]
        combined = markov.evaluate_policy(total, profile, 0.0)
        tally.check(_sup(combined, [a + b for a, b in zip(*parts)]), 0.0, 1e-10, f"seed {seed}")


def suite_advantage_centering(seeds, tally):
    for seed in seeds:
        rng = _rng(seed, 20)
        mgame, profile = _markov_instance(rng, seed)
        tau = rng.random()
        for agent in range(mgame.num_agents):
            advantage = markov.marginalized_advantage(mgame, profile, agent, tau)
            centered = (profile.policies[agent] * advantage).sum(axis=1)
            tally.check(float(np.abs(centered).max()), 0.0, 1e-10, f"seed {seed} agent {agent}")


SUITES: dict[str, Callable] = {
    "gap_nonnegative": suite_gap_nonnegative,
    "shift_invariance": suite_shift_invariance,
    "marginal_linearity": suite_marginal_linearity,
    "expected_reward": suite_expected_reward,
    "product_l1": suite_product_l1,
    "support_preservation": suite_support_preservation,
    "relabel_invariance": suite_relabel_invariance,
    "shift_covariance": suite_shift_covariance,
    "fixed_point": suite_fixed_point,
    "convergence_envelope": suite_convergence_envelope,
    "aux_contraction": suite_aux_contraction,
    "gradient": suite_gradient,
    "fisher": suite_fisher,
    "fisher_bridge": suite_fisher_bridge,
    "log_softmax_lipschitz": suite_log_softmax_lipschitz,
    "polymatrix": suite_polymatrix,
    "markov_kernel": suite_markov_kernel,
    "markov_reduction": suite_markov_reduction,
    "soft_value_iteration": suite_soft_value_iteration,
    "evaluation_linearity": suite_evaluation_linearity,
    "advantage_centering": suite_advantage_centering,
}


def run_suite(name: str, seed_count: int, base_seed: int = 0) -> Tally:
    if name not in SUITES:
        raise KeyError(name)
    tally = Tally(name)
    seeds = range(base_seed, base_seed + seed_count)
    try:
        SUITES[name](seeds, tally)
    except QrenpgError as e:
        tally.checks += 1
        tally.violations += 1
        tally.max_excess = math.inf
        tally.first_failure = f"raised {type(e).__name__}: {e}"
        logger.warning("%s raised %s", name, e)
    logger.info("suite %s: %d checks, %d violations", name, tally.checks, tally.violations)
    return tally


def cmd_verify(seed_count: int = DEFAULT_SEED_COUNT, suites: Sequence[str] | None = None,
               base_seed: int = 0, workers: int | None = None) -> dict:
    """
    Run the property suites, in parallel worker processes when more than one
    suite is requested and workers is not 1 (default: one per CPU).

    Returns:
        {"success": bool, "seed_count": N, "suites": {name: {checks, violations, max_excess}}}
        with error_type "verification" when any check fails.
    """
    names = list(suites) if suites else list(SUITES)
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        return {"success": False, "error": f"unknown suites: {', '.join(unknown)}",
                "error_type": "config", "available": list(SUITES)}
    if seed_count < 1:
        return {"success": False, "error": f"seed count must be >= 1, got {seed_count}", "error_type": "config"}

    if workers is not None and workers < 1:
        return {"success": False, "error": f"workers must be >= 1, got {workers}", "error_type": "config"}

    workers = min(len(names), workers or os.cpu_count() or 1)
    if workers == 1:
        tallies = [run_suite(name, seed_count, base_seed) for name in names]
    else:
        logger.info("running %d suites on %d workers", len(names), workers)
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(run_suite, name, seed_count, base_seed) for name in names]
            tallies = [future.result() for future in futures]
    report = {name: tally.as_dict() for name, tally in zip(names, tallies)}
    failed = [name for name, result in report.items() if result["violations"]]
    result = {"success": not failed, "seed_count": seed_count, "base_seed": base_seed, "suites": report}
    if failed:
        result.update(error=f"{len(failed)} suite(s) failed: {', '.join(failed)}", error_type="verification")
    return result
