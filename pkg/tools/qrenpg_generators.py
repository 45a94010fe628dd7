#!/usr/bin/env python3
"""
qrenpg: Generators
Seeded construction of random static games, zero-sum polymatrix networks and
random Markov games.

Random streams:
    Every draw comes from numpy's Philox 4x64 counter-based generator keyed by
    SeedSequence([seed, tag, index]), where tag names the purpose (rewards, edge
    matrices, kernel, initial profile) and index is the agent, edge or state.
    Uniform doubles are produced by Generator.random() in C order of the output
    shape, so a spec maps to the same bits on every platform.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from qrenpg_errors import ParameterError
from qrenpg_game import PolicyProfile, PolymatrixGame, StaticGame
from qrenpg_markov import DEFAULT_GAMMA, MarkovGame, StatePolicyProfile

logger = logging.getLogger(__name__)

KINDS = ("random_static", "polymatrix_zero_sum", "random_markov")

# Stream purpose tags.
TAG_REWARD = 1
TAG_EDGE = 2
TAG_KERNEL = 3
TAG_MARKOV_REWARD = 4
TAG_PROFILE = 5

DEFAULT_EDGE_RANGE = 0.5


def stream(seed: int, tag: int, index: int = 0) -> np.random.Generator:
    """Independent Philox stream for (seed, purpose tag, index)."""
    seed = int(seed)
    if seed < 0 or seed >= 2**64:
        raise ParameterError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, tag, index])))


def ring_edges(num_agents: int) -> tuple[tuple[int, int], ...]:
    """(0,1), (1,2), ..., (n-1,0); a single edge for two agents."""
    if num_agents < 2:
        return ()
    if num_agents == 2:
        return ((0, 1),)
    return tuple((i, (i + 1) % num_agents) for i in range(num_agents))


@dataclass(frozen=True)
class GameSpec:
    """Everything needed to regenerate a game bit-for-bit."""

    kind: str
    action_sizes: tuple[int, ...]
    seed: int = 0
    num_states: int | None = None
    edges: tuple[tuple[int, int], ...] | None = None
    edge_range: float = DEFAULT_EDGE_RANGE
    gamma: float = DEFAULT_GAMMA

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterError(f"unknown game kind {self.kind!r}; expected one of {', '.join(KINDS)}")
        sizes = tuple(int(s) for s in self.action_sizes)
        if not sizes:
            raise ParameterError("action_sizes must list at least one agent")
        if any(s < 2 for s in sizes):
            raise ParameterError(f"every agent needs at least 2 actions, got {sizes}")
        object.__setattr__(self, "action_sizes", sizes)
        seed = int(self.seed)
        if seed < 0 or seed >= 2**64:
            raise ParameterError(f"seed must be an unsigned 64-bit integer, got {seed}")
        object.__setattr__(self, "seed", seed)

        if self.kind == "random_markov":
            if self.num_states is None or int(self.num_states) < 1:
                raise ParameterError("random_markov needs num_states >= 1")
            object.__setattr__(self, "num_states", int(self.num_states))
            if not 0.0 <= float(self.gamma) < 1.0:
                raise ParameterError(f"gamma must lie in [0, 1), got {self.gamma}")
            object.__setattr__(self, "gamma", float(self.gamma))
        elif self.num_states is not None:
            raise ParameterError(f"num_states only applies to random_markov, not {self.kind}")

        if self.kind == "polymatrix_zero_sum":
            edges = ring_edges(len(sizes)) if self.edges is None else self.edges
            object.__setattr__(self, "edges", self._validated_edges(edges, len(sizes)))
            if not float(self.edge_range) > 0:
                raise ParameterError(f"edge_range must be > 0, got {self.edge_range}")
            object.__setattr__(self, "edge_range", float(self.edge_range))
        elif self.edges is not None:
            raise ParameterError(f"edges only apply to polymatrix_zero_sum, not {self.kind}")

    @staticmethod
    def _validated_edges(edges, num_agents):
        seen = set()
        out = []
        for edge in edges:
            if len(edge) != 2:
                raise ParameterError(f"edge {edge!r} must be a pair of agents")
            i, j = (int(v) for v in edge)
            if not (0 <= i < num_agents and 0 <= j < num_agents):
                raise ParameterError(f"edge ({i}, {j}) references an agent outside 0..{num_agents - 1}")
            if i == j:
                raise ParameterError(f"self-loop on agent {i}")
            key = frozenset((i, j))
            if key in seen:
                raise ParameterError(f"duplicate edge ({i}, {j})")
            seen.add(key)
            out.append((i, j))
        return tuple(out)

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "action_sizes": list(self.action_sizes), "seed": self.seed}
        if self.kind == "random_markov":
            out["num_states"] = self.num_states
            out["gamma"] = self.gamma
        if self.kind == "polymatrix_zero_sum":
            out["edges"] = [list(e) for e in self.edges]
            out["edge_range"] = self.edge_range
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "GameSpec":
        data = dict(data)
        known = {"kind", "action_sizes", "seed", "num_states", "edges", "edge_range", "gamma"}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ParameterError(f"unknown game spec keys: {', '.join(unknown)}")
        if "kind" not in data or "action_sizes" not in data:
            raise ParameterError("game spec needs 'kind' and 'action_sizes'")
        if data.get("edges") is not None:
            data["edges"] = tuple(tuple(e) for e in data["edges"])
        data["action_sizes"] = tuple(data["action_sizes"])
        return cls(**data)


def _expect(spec: GameSpec, kind: str) -> None:
    if spec.kind != kind:
        raise ParameterError(f"expected a {kind} spec, got {spec.kind}")


def random_game(spec: GameSpec) -> StaticGame:
    """Rewards i.i.d. Uniform[0, 1), one stream per agent; declared range [0, 1]."""
    _expect(spec, "random_static")
    rewards = tuple(stream(spec.seed, TAG_REWARD, i).random(spec.action_sizes)
                    for i in range(len(spec.action_sizes)))
    logger.debug("random game sizes=%s seed=%d", spec.action_sizes, spec.seed)
    return StaticGame(rewards, (0.0, 1.0))


def polymatrix_network(spec: GameSpec) -> PolymatrixGame:
    """
    Zero-sum network game: M_ij entries i.i.d. Uniform[-edge_range, edge_range),
    one stream per edge, scaled by 1/deg_max inside PolymatrixGame.
    """
    _expect(spec, "polymatrix_zero_sum")
    sizes = spec.action_sizes
    matrices = []
    for index, (i, j) in enumerate(spec.edges):
        draw = stream(spec.seed, TAG_EDGE, index).random((sizes[i], sizes[j]))
        matrices.append(spec.edge_range * (2.0 * draw - 1.0))
    bound = max(1.0, spec.edge_range)
    if bound > 1.0:
        logger.warning("edge_range %g pushes marginalized rewards outside [-1, 1]", spec.edge_range)
    return PolymatrixGame(sizes, spec.edges, tuple(matrices), (-bound, bound))


def random_markov_game(spec: GameSpec) -> MarkovGame:
    """
    Per-state rewards i.i.d. Uniform[0, 1); each kernel row is a normalized
    Uniform(0, 1] vector over next states; uniform initial distribution.
    """
    _expect(spec, "random_markov")
    sizes = spec.action_sizes
    num_states = spec.num_states
    rewards = tuple(stream(spec.seed, TAG_MARKOV_REWARD, i).random((num_states,) + sizes)
                    for i in range(len(sizes)))
    kernel = np.empty((num_states,) + sizes + (num_states,))
    for s in range(num_states):
        rows = 1.0 - stream(spec.seed, TAG_KERNEL, s).random(sizes + (num_states,))
        kernel[s] = rows / rows.sum(axis=-1, keepdims=True)
    return MarkovGame(rewards, kernel, spec.gamma, reward_range=(0.0, 1.0))


def build_game(spec: GameSpec):
    """Dispatch on spec.kind."""
    if spec.kind == "random_static":
        return random_game(spec)
    if spec.kind == "polymatrix_zero_sum":
        return polymatrix_network(spec)
    return random_markov_game(spec)


def matching_pennies() -> StaticGame:
    """Two agents, two actions; agent 1 wins on a match, agent 2 on a mismatch."""
    match = np.array([[1.0, 0.0], [0.0, 1.0]])
    return StaticGame((match, 1.0 - match), (0.0, 1.0))


def random_profile(action_sizes: Sequence[int], seed: int) -> PolicyProfile:
    """Interior profile from normalized Uniform(0, 1] vectors."""
    return PolicyProfile(tuple(1.0 - stream(seed, TAG_PROFILE, i).random(int(m))
                               for i, m in enumerate(action_sizes)))


def random_state_profile(action_sizes: Sequence[int], num_states: int, seed: int) -> StatePolicyProfile:
    return StatePolicyProfile(tuple(1.0 - stream(seed, TAG_PROFILE, i).random((int(num_states), int(m)))
                                    for i, m in enumerate(action_sizes)))
