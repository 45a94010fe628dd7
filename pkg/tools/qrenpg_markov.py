#!/usr/bin/env python3
"""
qrenpg: Markov Games
Tabular Markov games with exact policy evaluation, the entropy-regularized
independent NPG update driven by marginalized advantages, and a Markov QRE-gap
defined through soft value iteration on each agent's induced MDP.

Conventions:
- V_i includes tau times the entropy of agent i's own per-state policy (soft value).
- The advantage used by the update is centered with pi_i and does not contain
  a -tau log pi term; tau enters through the exponent 1 - eta*tau.
- The gap is weighted by the game's initial distribution (uniform by default).
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy.linalg import LinAlgError, solve
from scipy.special import logsumexp

from qrenpg_dynamics import DynamicsParams, LOG_EVERY
from qrenpg_errors import DimensionError, NumericError, ParameterError
from qrenpg_game import (
    PROB_FLOOR,
    RANGE_SLACK,
    GapReport,
    NormalFormGame,
    PolicyProfile,
    StaticGame,
)

logger = logging.getLogger(__name__)

DEFAULT_GAMMA = 0.95
DEFAULT_MARKOV_MAX_ITERS = 2000
STOCHASTIC_TOL = 1e-12
VI_TOL = 1e-12
VI_MAX_SWEEPS = 200_000
VI_ROUNDOFF = 64 * np.finfo(float).eps


def _frozen(values) -> np.ndarray:
    array = np.array(values, dtype=float)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class MarkovGame:
    """
    rewards[i] has shape (|S|, |A_1|, ..., |A_n|); kernel has shape
    (|S|, |A_1|, ..., |A_n|, |S|) with rows summing to one.
    When reward_range is omitted it is taken from the stored entries.
    """

    rewards: tuple[np.ndarray, ...]
    kernel: np.ndarray
    gamma: float = DEFAULT_GAMMA
    initial_dist: np.ndarray | None = None
    reward_range: tuple[float, float] | None = None
    action_sizes: tuple[int, ...] = field(init=False)
    num_states: int = field(init=False)

    def __post_init__(self):
        if len(self.rewards) == 0:
            raise DimensionError("a Markov game needs at least one agent")
        rewards = tuple(_frozen(r) for r in self.rewards)
        shape = rewards[0].shape
        if len(shape) != len(rewards) + 1:
            raise DimensionError(f"reward tensors need a state axis plus one axis per agent, got {shape}")
        for i, tensor in enumerate(rewards):
            if tensor.shape != shape:
                raise DimensionError(f"rewards[{i}] has shape {tensor.shape}, expected {shape}")
            if not np.all(np.isfinite(tensor)):
                raise ParameterError(f"rewards[{i}] contains non-finite entries")
        num_states = shape[0]
        if self.reward_range is None:
            low = min(float(r.min()) for r in rewards)
            high = max(float(r.max()) for r in rewards)
        else:
            low, high = (float(v) for v in self.reward_range)
        if low > high:
            raise ParameterError(f"reward range [{low}, {high}] is empty")
        for i, tensor in enumerate(rewards):
            if tensor.min() < low - RANGE_SLACK or tensor.max() > high + RANGE_SLACK:
                raise ParameterError(f"rewards[{i}] leaves the declared range [{low}, {high}]")
        kernel = _frozen(self.kernel)
        if kernel.shape != shape + (num_states,):
            raise DimensionError(f"kernel has shape {kernel.shape}, expected {shape + (num_states,)}")
        if np.any(kernel < 0) or np.any(np.abs(kernel.sum(axis=-1) - 1.0) > STOCHASTIC_TOL):
            raise ParameterError("transition kernel rows must be nonnegative and sum to 1")
        gamma = float(self.gamma)
        if not 0.0 <= gamma < 1.0:
            raise ParameterError(f"discount gamma must lie in [0, 1), got {gamma}")
        if self.initial_dist is None:
            initial = np.full(num_states, 1.0 / num_states)
        else:
            initial = np.asarray(self.initial_dist, dtype=float)
            if initial.shape != (num_states,) or np.any(initial < 0) or abs(initial.sum() - 1.0) > STOCHASTIC_TOL:
                raise ParameterError("initial distribution must be a probability vector over states")
        object.__setattr__(self, "rewards", rewards)
        object.__setattr__(self, "kernel", kernel)
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "initial_dist", _frozen(initial))
        object.__setattr__(self, "reward_range", (low, high))
        object.__setattr__(self, "action_sizes", tuple(int(s) for s in shape[1:]))
        object.__setattr__(self, "num_states", int(num_states))

    @property
    def num_agents(self) -> int:
        return len(self.action_sizes)

    def sum_of_action_sizes(self) -> int:
        return int(sum(self.action_sizes))

    def state_game(self, state: int) -> StaticGame:
        """The one-shot game played in `state`, ignoring transitions."""
        return StaticGame(tuple(r[state] for r in self.rewards), self.reward_range)

    @classmethod
    def from_static(cls, game: NormalFormGame, gamma: float = 0.0) -> "MarkovGame":
        """Embed a static game as a single-state Markov game."""
        rewards = tuple(np.asarray(game.reward_tensor(i))[np.newaxis] for i in range(game.num_agents))
        kernel = np.ones((1,) + tuple(game.action_sizes) + (1,))
        return cls(rewards, kernel, gamma, reward_range=game.reward_range)


@dataclass(frozen=True, eq=False)
class StatePolicyProfile:
    """policies[i] has shape (|S|, |A_i|); every row is an interior probability vector."""

    policies: tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.policies) == 0:
            raise DimensionError("a profile needs at least one policy")
        normalized = []
        num_states = None
        for i, policy in enumerate(self.policies):
            table = np.asarray(policy, dtype=float)
            if table.ndim != 2 or table.shape[1] == 0:
                raise DimensionError(f"policy {i} must be a (states, actions) table, got {table.shape}")
            if num_states is None:
                num_states = table.shape[0]
            elif table.shape[0] != num_states:
                raise DimensionError(f"policy {i} covers {table.shape[0]} states, expected {num_states}")
            if not np.all(np.isfinite(table)) or np.any(table <= 0):
                raise ParameterError(f"policy {i} must be finite and strictly positive")
            normalized.append(_frozen(table / table.sum(axis=1, keepdims=True)))
        object.__setattr__(self, "policies", tuple(normalized))

    @classmethod
    def uniform(cls, num_states: int, action_sizes: Sequence[int]) -> "StatePolicyProfile":
        return cls(tuple(np.full((num_states, m), 1.0 / m) for m in action_sizes))

    @classmethod
    def from_static(cls, profile: PolicyProfile) -> "StatePolicyProfile":
        return cls(tuple(p[np.newaxis] for p in profile.policies))

    @classmethod
    def from_log_policies(cls, logs: Sequence[np.ndarray]) -> "StatePolicyProfile":
        tables = []
        for log_table in logs:
            log_table = np.asarray(log_table, dtype=float)
            table = np.exp(log_table - logsumexp(log_table, axis=1, keepdims=True))
            tables.append(np.maximum(table, PROB_FLOOR))
        return cls(tuple(tables))

    @property
    def num_states(self) -> int:
        return self.policies[0].shape[0]

    @property
    def action_sizes(self) -> tuple[int, ...]:
        return tuple(p.shape[1] for p in self.policies)

    @cached_property
    def log_policies(self) -> tuple[np.ndarray, ...]:
        return tuple(_frozen(np.log(np.maximum(p, PROB_FLOOR))) for p in self.policies)

    def state_profile(self, state: int) -> PolicyProfile:
        return PolicyProfile(tuple(p[state] for p in self.policies))


@dataclass(frozen=True)
class MarkovRecord:
    iter: int
    markov_qre_gap: float
    wall_time_ms: float


@dataclass(frozen=True, eq=False)
class MarkovTrajectory:
    records: tuple[MarkovRecord, ...]
    final: StatePolicyProfile

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=float)


def _check(mgame: MarkovGame, profile: StatePolicyProfile) -> None:
    if profile.action_sizes != mgame.action_sizes or profile.num_states != mgame.num_states:
        raise DimensionError(
            f"profile ({profile.num_states} states, sizes {profile.action_sizes}) does not match "
            f"game ({mgame.num_states} states, sizes {mgame.action_sizes})"
        )


def _contract_others(tensor: np.ndarray, policies, agent: int) -> np.ndarray:
    """
    Average a (|S|, |A_1|, ..., |A_n|, ...) tensor over every agent but `agent`
    with its per-state policy; trailing axes are kept.
    """
    out = tensor
    for j in reversed(range(len(policies))):
        if j == agent:
            continue
        shape = [1] * out.ndim
        shape[0] = policies[j].shape[0]
        shape[j + 1] = policies[j].shape[1]
        out = (out * policies[j].reshape(shape)).sum(axis=j + 1)
    return out


def joint_policy(profile: StatePolicyProfile) -> np.ndarray:
    """Per-state product policy, shape (|S|, |A_1|, ..., |A_n|)."""
    joint = profile.policies[0]
    for j, policy in enumerate(profile.policies[1:], start=1):
        shape = (policy.shape[0],) + (1,) * j + (policy.shape[1],)
        joint = joint[..., np.newaxis] * policy.reshape(shape)
    return joint


def state_entropy(table: np.ndarray) -> np.ndarray:
    return -np.sum(table * np.log(np.maximum(table, PROB_FLOOR)), axis=1)


def induced_chain(mgame: MarkovGame, profile: StatePolicyProfile) -> np.ndarray:
    """P_pi(s' | s) under the joint policy."""
    num_states = mgame.num_states
    joint = joint_policy(profile).reshape(num_states, -1)
    return np.einsum("sa,sat->st", joint, mgame.kernel.reshape(num_states, -1, num_states))


def evaluate_policy(mgame: MarkovGame, profile: StatePolicyProfile, tau: float) -> tuple[np.ndarray, ...]:
    """
    Solve V_i = r_i^{pi,tau} + gamma P_pi V_i for every agent, where
    r_i^{pi,tau}(s) = E_{a~pi(.|s)} r_i(s, a) + tau H(pi_i(.|s)).
    """
    if not tau >= 0:
        raise ParameterError(f"tau must be >= 0, got {tau}")
    _check(mgame, profile)
    num_states = mgame.num_states
    joint = joint_policy(profile).reshape(num_states, -1)
    system = np.eye(num_states) - mgame.gamma * induced_chain(mgame, profile)
    values = []
    for agent, rewards in enumerate(mgame.rewards):
        reward = (joint * rewards.reshape(num_states, -1)).sum(axis=1)
        reward = reward + tau * state_entropy(profile.policies[agent])
        try:
            value = solve(system, reward)
        except LinAlgError as e:
            raise NumericError(f"policy evaluation failed: {e}", tau=tau, agent=agent) from e
        if not np.all(np.isfinite(value)):
            raise NumericError("policy evaluation produced non-finite values", tau=tau, agent=agent)
        values.append(value)
    return tuple(values)


def marginalized_q(mgame: MarkovGame, profile: StatePolicyProfile, agent: int,
                   value: np.ndarray) -> np.ndarray:
    """Qbar_i(s, a_i) = E_{a_-i}[r_i(s, a) + gamma E_{s'} V_i(s')]."""
    q_joint = mgame.rewards[agent] + mgame.gamma * (mgame.kernel @ value)
    return _contract_others(q_joint, profile.policies, agent)


def marginalized_advantage(mgame: MarkovGame, profile: StatePolicyProfile, agent: int, tau: float,
                           values: Sequence[np.ndarray] | None = None) -> np.ndarray:
    """Abar_i(s, a_i) = Qbar_i(s, a_i) - <pi_i(.|s), Qbar_i(s, .)>."""
    _check(mgame, profile)
    if values is None:
        values = evaluate_policy(mgame, profile, tau)
    q_bar = marginalized_q(mgame, profile, agent, values[agent])
    baseline = (profile.policies[agent] * q_bar).sum(axis=1, keepdims=True)
    return q_bar - baseline


def markov_npg_step(mgame: MarkovGame, profile: StatePolicyProfile, params: DynamicsParams,
                    soft_advantage: bool = False, iteration: int | None = None) -> StatePolicyProfile:
    """
    pi_i^{k+1}(.|s) proportional to pi_i^k(.|s)^{1-eta*tau} exp(eta/(1-gamma) Abar_i^k(s, .)),
    synchronously for every agent and state.

    With soft_advantage the exponent carries Abar - tau log pi and pi^k keeps power one,
    i.e. pi^k(.|s)^{1 - eta*tau/(1-gamma)} exp(eta/(1-gamma) Qbar); this needs
    eta*tau/(1-gamma) <= 1.
    """
    _check(mgame, profile)
    scale = params.eta / (1.0 - mgame.gamma)
    if soft_advantage and scale * params.tau > 1.0 + RANGE_SLACK:
        raise ParameterError(
            f"soft-advantage update needs eta*tau/(1-gamma) <= 1, got {scale * params.tau}"
        )
    values = evaluate_policy(mgame, profile, params.tau)
    logs = []
    for agent in range(mgame.num_agents):
        advantage = marginalized_advantage(mgame, profile, agent, params.tau, values)
        log_policy = profile.log_policies[agent]
        if soft_advantage:
            new_log = log_policy + scale * (advantage - params.tau * log_policy)
        else:
            new_log = params.retention * log_policy + scale * advantage
        bad = ~np.all(np.isfinite(new_log), axis=1)
        if np.any(bad):
            raise NumericError("non-finite log-policy in Markov NPG step", iteration=iteration,
                               tau=params.tau, agent=agent, state=int(np.argmax(bad)))
        logs.append(new_log)
    return StatePolicyProfile.from_log_policies(logs)


def soft_value_iteration(rewards: np.ndarray, kernel: np.ndarray, gamma: float, tau: float,
                         tol: float = VI_TOL, max_sweeps: int = VI_MAX_SWEEPS,
                         initial: np.ndarray | None = None) -> tuple[np.ndarray, list[float]]:
    """
    Optimal regularized value of a single-agent MDP with rewards (|S|, |A|) and
    kernel (|S|, |A|, |S|):  V(s) <- tau log sum_a exp(Q(s, a)/tau), hard max when tau = 0.

    Stops once the error bound gamma/(1-gamma) * change is at most tol, or at
    round-off level relative to ||V||_inf. Returns the value and the sequence of
    sup-norm changes.
    """
    value = np.zeros(rewards.shape[0]) if initial is None else np.array(initial, dtype=float)
    changes = []
    for _ in range(max_sweeps):
        q = rewards + gamma * (kernel @ value)
        if tau > 0:
            updated = tau * logsumexp(q / tau, axis=1)
        else:
            updated = q.max(axis=1)
        change = float(np.abs(updated - value).max())
        changes.append(change)
        value = updated
        bound = change * gamma / (1.0 - gamma)
        if bound <= max(tol, VI_ROUNDOFF * max(1.0, float(np.abs(value).max()))):
            return value, changes
    raise NumericError(f"soft value iteration did not converge in {max_sweeps} sweeps", tau=tau)


def greedy_policy_value(rewards: np.ndarray, kernel: np.ndarray, gamma: float, tau: float,
                        value: np.ndarray) -> np.ndarray:
    """
    Exact regularized value of the policy that is soft-greedy with respect to `value`
    (argmax when tau = 0). It never exceeds the optimum and its error is quadratic
    in the error of `value`.
    """
    q = rewards + gamma * (kernel @ value)
    num_states = q.shape[0]
    if tau > 0:
        log_policy = q / tau - logsumexp(q / tau, axis=1, keepdims=True)
        policy = np.exp(log_policy)
        reward = (policy * rewards).sum(axis=1) - tau * (policy * log_policy).sum(axis=1)
    else:
        policy = np.zeros_like(q)
        policy[np.arange(num_states), q.argmax(axis=1)] = 1.0
        reward = (policy * rewards).sum(axis=1)
    system = np.eye(num_states) - gamma * np.einsum("sa,sat->st", policy, kernel)
    try:
        exact = solve(system, reward)
    except LinAlgError as e:
        raise NumericError(f"greedy policy evaluation failed: {e}", tau=tau) from e
    if not np.all(np.isfinite(exact)):
        raise NumericError("greedy policy evaluation produced non-finite values", tau=tau)
    return exact


def induced_mdp(mgame: MarkovGame, profile: StatePolicyProfile, agent: int) -> tuple[np.ndarray, np.ndarray]:
    """(rewards (|S|, |A_i|), kernel (|S|, |A_i|, |S|)) of agent i with pi_-i frozen."""
    _check(mgame, profile)
    return (_contract_others(mgame.rewards[agent], profile.policies, agent),
            _contract_others(mgame.kernel, profile.policies, agent))


def best_response_values(mgame: MarkovGame, profile: StatePolicyProfile, tau: float,
                         warm_start: Sequence[np.ndarray] | None = None) -> tuple[np.ndarray, ...]:
    """
    Optimal regularized value of each agent against the frozen policies of the others:
    soft value iteration, then exact evaluation of its soft-greedy policy.
    """
    _check(mgame, profile)
    out = []
    for agent in range(mgame.num_agents):
        rewards, kernel = induced_mdp(mgame, profile, agent)
        initial = None if warm_start is None else warm_start[agent]
        try:
            value, _ = soft_value_iteration(rewards, kernel, mgame.gamma, tau, initial=initial)
            value = greedy_policy_value(rewards, kernel, mgame.gamma, tau, value)
        except NumericError as e:
            raise e.with_context(agent=agent) from e
        out.append(value)
    return tuple(out)


def markov_qre_gap(mgame: MarkovGame, profile: StatePolicyProfile, tau: float,
                   warm_start: Sequence[np.ndarray] | None = None) -> GapReport:
    """
    Per agent rho . (V_i^br - V_i^pi), V_i^br from soft value iteration on the
    MDP induced by freezing pi_-i. tau = 0 measures the unregularized (NE) gap.
    """
    report, _ = _markov_gap_with_values(mgame, profile, tau, warm_start)
    return report


def _markov_gap_with_values(mgame, profile, tau, warm_start=None):
    if not tau >= 0:
        raise ParameterError(f"tau must be >= 0, got {tau}")
    values = evaluate_policy(mgame, profile, tau)
    best = best_response_values(mgame, profile, tau, warm_start)
    gaps = [float(mgame.initial_dist @ (b - v)) for b, v in zip(best, values)]
    return GapReport.from_gaps(gaps), best


def run_markov(mgame: MarkovGame, initial: StatePolicyProfile, params: DynamicsParams,
               soft_advantage: bool = False) -> MarkovTrajectory:
    """Iterate markov_npg_step with the same recording and stopping rules as dynamics.run."""
    _check(mgame, initial)
    start = time.perf_counter()
    records = []
    profile = initial
    warm = None
    for k in range(params.max_iters + 1):
        report, warm = _markov_gap_with_values(mgame, profile, params.tau, warm)
        gap = report.max_gap
        if not math.isfinite(gap):
            raise NumericError("non-finite Markov gap", iteration=k, tau=params.tau)
        records.append(MarkovRecord(k, gap, (time.perf_counter() - start) * 1000.0))
        if k % LOG_EVERY == 0:
            logger.debug("markov tau=%g iter=%d gap=%.3e", params.tau, k, gap)
        if gap < params.stop_gap or k == params.max_iters:
            break
        profile = markov_npg_step(mgame, profile, params, soft_advantage, iteration=k)
    return MarkovTrajectory(tuple(records), profile)
