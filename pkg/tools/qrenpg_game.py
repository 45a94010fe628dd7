#!/usr/bin/env python3
"""
qrenpg: Game Model
Static games, decentralized policy profiles and the equilibrium metrics
(expected / marginalized / regularized reward, soft best response, QRE-gap, NE-gap).

Games come in two representations sharing one interface:
- StaticGame: one dense reward tensor per agent over joint actions.
- PolymatrixGame: edge matrices of a network game, evaluated without
  materializing the joint tensors.
"""

from __future__ import annotations

import functools
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from qrenpg_errors import DimensionError, ParameterError

logger = logging.getLogger(__name__)

# Floor applied before any log and after exponentiating log-policies.
PROB_FLOOR = 1e-300
# Slack on the declared reward range and on eta*tau <= 1.
RANGE_SLACK = 1e-12
# Negative gaps above this are treated as round-off and clamped to zero.
GAP_ROUNDOFF = 1e-10


def _frozen(values, dtype=float) -> np.ndarray:
    array = np.array(values, dtype=dtype)
    array.setflags(write=False)
    return array


def _check_tau(tau, strict: bool) -> float:
    tau = float(tau)
    if not np.isfinite(tau) or tau < 0 or (strict and tau == 0):
        bound = "> 0" if strict else ">= 0"
        raise ParameterError(f"tau must be finite and {bound}, got {tau}")
    return tau


class NormalFormGame(ABC):
    """Interface shared by dense and polymatrix games."""

    action_sizes: tuple[int, ...]
    reward_range: tuple[float, float]

    @property
    def num_agents(self) -> int:
        return len(self.action_sizes)

    def sum_of_action_sizes(self) -> int:
        return int(sum(self.action_sizes))

    def reward_bound(self) -> float:
        """max(|r_min|, |r_max|) of the declared range."""
        low, high = self.reward_range
        return max(abs(low), abs(high))

    def is_unit_bounded(self) -> bool:
        """Whether marginalized rewards are bounded by 1, as the convergence theory assumes."""
        return self.reward_bound() <= 1.0 + RANGE_SLACK

    @abstractmethod
    def marginal(self, policies: Sequence[np.ndarray], agent: int) -> np.ndarray:
        """Marginalized reward of `agent` given every agent's policy vector."""

    @abstractmethod
    def reward_tensor(self, agent: int) -> np.ndarray:
        """Dense reward tensor of `agent` over joint actions."""

    @abstractmethod
    def rewards_at(self, joint_actions) -> np.ndarray:
        """Rewards of every agent at each row of an (N, n) array of joint actions."""


@dataclass(frozen=True, eq=False)
class StaticGame(NormalFormGame):
    """
    A tabular strategic game with dense reward tensors.

    rewards[i] has shape action_sizes for every agent i. When reward_range is
    omitted it is taken from the stored entries.
    """

    rewards: tuple[np.ndarray, ...]
    reward_range: tuple[float, float] | None = None
    action_sizes: tuple[int, ...] = field(init=False)

    def __post_init__(self):
        if len(self.rewards) == 0:
            raise DimensionError("a game needs at least one agent")
        tensors = tuple(_frozen(r) for r in self.rewards)
        shape = tensors[0].shape
        if len(shape) != len(tensors):
            raise DimensionError(
                f"reward tensors must have one axis per agent: {len(tensors)} agents, shape {shape}"
            )
        for i, tensor in enumerate(tensors):
            if tensor.shape != shape:
                raise DimensionError(f"rewards[{i}] has shape {tensor.shape}, expected {shape}")
            if not np.all(np.isfinite(tensor)):
                raise ParameterError(f"rewards[{i}] contains non-finite entries")
        if any(size < 1 for size in shape):
            raise DimensionError(f"action sizes must be positive, got {shape}")

        if self.reward_range is None:
            low = min(float(t.min()) for t in tensors)
            high = max(float(t.max()) for t in tensors)
        else:
            low, high = (float(v) for v in self.reward_range)
        if low > high:
            raise ParameterError(f"reward range [{low}, {high}] is empty")
        for i, tensor in enumerate(tensors):
            if tensor.min() < low - RANGE_SLACK or tensor.max() > high + RANGE_SLACK:
                raise ParameterError(f"rewards[{i}] leaves the declared range [{low}, {high}]")

        object.__setattr__(self, "rewards", tensors)
        object.__setattr__(self, "reward_range", (low, high))
        object.__setattr__(self, "action_sizes", tuple(int(s) for s in shape))

    def marginal(self, policies, agent):
        # Contract the last axes first so earlier axis indices stay valid.
        out = self.rewards[agent]
        for j in reversed(range(self.num_agents)):
            if j == agent:
                continue
            out = np.tensordot(out, policies[j], axes=([j], [0]))
        return np.asarray(out, dtype=float)

    def reward_tensor(self, agent):
        return self.rewards[agent]

    def rewards_at(self, joint_actions):
        joint = np.asarray(joint_actions, dtype=int)
        index = tuple(joint.T)
        return np.stack([r[index] for r in self.rewards], axis=1)

    def permuted(self, order: Sequence[int]) -> "StaticGame":
        """Relabel agents: new agent k is old agent order[k]."""
        order = [int(o) for o in order]
        if sorted(order) != list(range(self.num_agents)):
            raise DimensionError(f"{order} is not a permutation of the agents")
        rewards = tuple(np.transpose(self.rewards[o], axes=order) for o in order)
        return StaticGame(rewards, self.reward_range)

    def shifted(self, agent: int, constant: float) -> "StaticGame":
        """Add a constant to every reward of one agent, widening the declared range."""
        rewards = list(self.rewards)
        rewards[agent] = rewards[agent] + constant
        low, high = self.reward_range
        return StaticGame(tuple(rewards), (min(low, low + constant), max(high, high + constant)))


@dataclass(frozen=True, eq=False)
class PolymatrixGame(NormalFormGame):
    """
    Network game with pairwise matrix payoffs.

    For every undirected edge (i, j) the payoff matrix M_ij has shape
    (|A_i|, |A_j|) and M_ji = -M_ij^T. Agent i receives
    (1/deg_max) * sum_{j in N(i)} M_ij[a_i, a_j].
    """

    action_sizes: tuple[int, ...]
    edges: tuple[tuple[int, int], ...]
    matrices: tuple[np.ndarray, ...]
    reward_range: tuple[float, float] = (-1.0, 1.0)

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.action_sizes)
        if not sizes or any(s < 1 for s in sizes):
            raise DimensionError(f"action sizes must be positive, got {sizes}")
        edges = tuple((int(i), int(j)) for i, j in self.edges)
        if len(edges) != len(self.matrices):
            raise DimensionError(f"{len(edges)} edges but {len(self.matrices)} matrices")
        seen = set()
        for i, j in edges:
            if not (0 <= i < len(sizes) and 0 <= j < len(sizes)):
                raise ParameterError(f"edge ({i}, {j}) references an agent outside 0..{len(sizes) - 1}")
            if i == j:
                raise ParameterError(f"self-loop on agent {i}")
            if frozenset((i, j)) in seen:
                raise ParameterError(f"duplicate edge ({i}, {j})")
            seen.add(frozenset((i, j)))
        matrices = []
        for (i, j), matrix in zip(edges, self.matrices):
            matrix = _frozen(matrix)
            if matrix.shape != (sizes[i], sizes[j]):
                raise DimensionError(
                    f"edge ({i}, {j}) matrix has shape {matrix.shape}, expected {(sizes[i], sizes[j])}"
                )
            matrices.append(matrix)
        object.__setattr__(self, "action_sizes", sizes)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "matrices", tuple(matrices))
        object.__setattr__(self, "reward_range", tuple(float(v) for v in self.reward_range))

    @cached_property
    def degrees(self) -> tuple[int, ...]:
        degree = [0] * len(self.action_sizes)
        for i, j in self.edges:
            degree[i] += 1
            degree[j] += 1
        return tuple(degree)

    @cached_property
    def scale(self) -> float:
        deg_max = max(self.degrees)
        return 1.0 / deg_max if deg_max else 0.0

    def _incident(self, agent):
        """(neighbor, payoff matrix of agent against neighbor) in edge order."""
        for (i, j), matrix in zip(self.edges, self.matrices):
            if i == agent:
                yield j, matrix
            elif j == agent:
                yield i, -matrix.T

    def marginal(self, policies, agent):
        out = np.zeros(self.action_sizes[agent])
        for neighbor, matrix in self._incident(agent):
            out += matrix @ policies[neighbor]
        return out * self.scale

    def reward_tensor(self, agent):
        n = self.num_agents
        tensor = np.zeros(self.action_sizes)
        for neighbor, matrix in self._incident(agent):
            shape = [1] * n
            shape[agent] = self.action_sizes[agent]
            shape[neighbor] = self.action_sizes[neighbor]
            if agent < neighbor:
                tensor = tensor + matrix.reshape(shape)
            else:
                tensor = tensor + matrix.T.reshape(shape)
        return tensor * self.scale

    def rewards_at(self, joint_actions):
        joint = np.asarray(joint_actions, dtype=int)
        out = np.zeros((joint.shape[0], self.num_agents))
        for (i, j), matrix in zip(self.edges, self.matrices):
            value = matrix[joint[:, i], joint[:, j]] * self.scale
            out[:, i] += value
            out[:, j] -= value
        return out

    def materialize(self) -> StaticGame:
        """Dense equivalent, for cross-checks on small games."""
        return StaticGame(tuple(self.reward_tensor(i) for i in range(self.num_agents)), self.reward_range)


@dataclass(frozen=True, eq=False)
class PolicyProfile:
    """One strictly positive probability vector per agent; the joint policy is their product."""

    policies: tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.policies) == 0:
            raise DimensionError("a profile needs at least one policy")
        normalized = []
        for i, policy in enumerate(self.policies):
            vec = np.asarray(policy, dtype=float)
            if vec.ndim != 1 or vec.size == 0:
                raise DimensionError(f"policy {i} must be a nonempty vector, got shape {vec.shape}")
            if not np.all(np.isfinite(vec)):
                raise ParameterError(f"policy {i} contains non-finite entries")
            if np.any(vec <= 0):
                raise ParameterError(f"policy {i} must be strictly positive (interior of the simplex)")
            normalized.append(_frozen(vec / vec.sum()))
        object.__setattr__(self, "policies", tuple(normalized))

    @classmethod
    def uniform(cls, action_sizes: Sequence[int]) -> "PolicyProfile":
        return cls(tuple(np.full(int(m), 1.0 / int(m)) for m in action_sizes))

    @classmethod
    def from_logits(cls, thetas: Sequence[np.ndarray]) -> "PolicyProfile":
        return cls.from_log_policies(thetas)

    @classmethod
    def from_log_policies(cls, logs: Sequence[np.ndarray]) -> "PolicyProfile":
        """
        Build a profile from unnormalized log-probabilities.

        Entries that underflow are floored at PROB_FLOOR so the profile stays interior.
        """
        policies = []
        for log_policy in logs:
            log_policy = np.asarray(log_policy, dtype=float)
            policy = np.exp(log_policy - logsumexp(log_policy))
            if np.any(policy < PROB_FLOOR):
                logger.debug("flooring %d underflowed probabilities", int(np.sum(policy < PROB_FLOOR)))
                policy = np.maximum(policy, PROB_FLOOR)
            policies.append(policy)
        return cls(tuple(policies))

    @property
    def num_agents(self) -> int:
        return len(self.policies)

    @property
    def action_sizes(self) -> tuple[int, ...]:
        return tuple(p.size for p in self.policies)

    @cached_property
    def log_policies(self) -> tuple[np.ndarray, ...]:
        return tuple(_frozen(np.log(np.maximum(p, PROB_FLOOR))) for p in self.policies)

    def replace(self, agent: int, policy) -> "PolicyProfile":
        policies = list(self.policies)
        policies[agent] = policy
        return PolicyProfile(tuple(policies))

    def permuted(self, order: Sequence[int]) -> "PolicyProfile":
        return PolicyProfile(tuple(self.policies[int(o)] for o in order))

    def joint(self) -> np.ndarray:
        """Explicit joint policy tensor (product of the local policies)."""
        return functools.reduce(np.multiply.outer, self.policies)


@dataclass(frozen=True)
class GapReport:
    per_agent_gaps: tuple[float, ...]
    max_gap: float
    arg_agent: int

    @classmethod
    def from_gaps(cls, gaps) -> "GapReport":
        gaps = np.asarray(gaps, dtype=float)
        if np.any(gaps < -GAP_ROUNDOFF):
            logger.warning("negative gap beyond round-off clamped to 0: %s", gaps.min())
        gaps = np.maximum(gaps, 0.0)
        arg = int(np.argmax(gaps))
        return cls(tuple(float(g) for g in gaps), float(gaps[arg]), arg)


def check_profile(game: NormalFormGame, profile: PolicyProfile) -> None:
    if tuple(profile.action_sizes) != tuple(game.action_sizes):
        raise DimensionError(
            f"profile action sizes {profile.action_sizes} do not match game {game.action_sizes}"
        )


def _check_agent(game: NormalFormGame, agent: int) -> int:
    agent = int(agent)
    if not 0 <= agent < game.num_agents:
        raise DimensionError(f"agent {agent} out of range for a {game.num_agents}-agent game")
    return agent


def marginalized_reward(game: NormalFormGame, profile: PolicyProfile, agent: int) -> np.ndarray:
    """E_{a_-i ~ pi_-i}[r_i(a_i, a_-i)] for every own action a_i."""
    check_profile(game, profile)
    agent = _check_agent(game, agent)
    return game.marginal(profile.policies, agent)


def expected_reward(game: NormalFormGame, profile: PolicyProfile, agent: int) -> float:
    """r_i(pi): expected reward of `agent` under the product policy."""
    marginal = marginalized_reward(game, profile, agent)
    return float(profile.policies[agent] @ marginal)


def entropy(policy) -> float:
    """Shannon entropy (natural log)."""
    policy = np.asarray(policy, dtype=float)
    return float(-np.sum(policy * np.log(np.maximum(policy, PROB_FLOOR))))


def regularized_reward(game: NormalFormGame, profile: PolicyProfile, agent: int, tau: float) -> float:
    """Expected reward plus tau times the entropy of the agent's own policy."""
    tau = _check_tau(tau, strict=False)
    value = expected_reward(game, profile, agent)
    return value + tau * entropy(profile.policies[agent])


def log_soft_best_response(marginal, tau: float) -> np.ndarray:
    """log softmax(marginal / tau), computed without exponentiating."""
    tau = _check_tau(tau, strict=True)
    marginal = np.asarray(marginal, dtype=float)
    if not np.all(np.isfinite(marginal)):
        raise ParameterError("marginal reward contains non-finite entries")
    scaled = marginal / tau
    return scaled - logsumexp(scaled)


def soft_best_response(marginal, tau: float) -> np.ndarray:
    """softmax(marginal / tau): the entropy-regularized best response."""
    policy = np.exp(log_soft_best_response(marginal, tau))
    policy = np.maximum(policy, PROB_FLOOR)
    return policy / policy.sum()


def qre_gap(game: NormalFormGame, profile: PolicyProfile, tau: float) -> GapReport:
    """
    Per agent tau * KL(pi_i || pi_i*), pi_i* the soft best response to the agent's
    marginal; this equals the regularized-reward improvement of the best deviation.
    """
    tau = _check_tau(tau, strict=True)
    check_profile(game, profile)
    gaps = []
    for agent in range(game.num_agents):
        log_star = log_soft_best_response(game.marginal(profile.policies, agent), tau)
        policy = profile.policies[agent]
        gaps.append(tau * float(policy @ (profile.log_policies[agent] - log_star)))
    return GapReport.from_gaps(gaps)


def ne_gap(game: NormalFormGame, profile: PolicyProfile) -> GapReport:
    """Per agent best pure-action improvement of unregularized reward."""
    check_profile(game, profile)
    gaps = []
    for agent in range(game.num_agents):
        marginal = game.marginal(profile.policies, agent)
        gaps.append(float(marginal.max() - profile.policies[agent] @ marginal))
    return GapReport.from_gaps(gaps)


def product_l1_distance(first: PolicyProfile, second: PolicyProfile) -> tuple[float, float]:
    """
    (||pi^1 - pi^2||_1 over joint actions, sum_i ||pi_i^1 - pi_i^2||_1).

    The joint distributions are built explicitly; keep action spaces small.
    """
    if first.action_sizes != second.action_sizes:
        raise DimensionError(f"profiles differ in shape: {first.action_sizes} vs {second.action_sizes}")
    joint = float(np.abs(first.joint() - second.joint()).sum())
    local = float(sum(np.abs(p - q).sum() for p, q in zip(first.policies, second.policies)))
    return joint, local
