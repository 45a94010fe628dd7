#!/usr/bin/env python3
"""
qrenpg: Gradient Oracle
Softmax parameterization, the exact regularized policy gradient, the Fisher
information matrix and the Fisher-preconditioned step

    theta_i^{k+1} = theta_i^k + eta * F(theta_i)^+ d r_hat_i / d theta_i

whose softmax coincides with the closed-form update in qrenpg_dynamics.npg_step.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import eigh
from scipy.special import logsumexp
from scipy.special import softmax as _softmax

from qrenpg_dynamics import DynamicsParams
from qrenpg_errors import DimensionError, NumericError, ParameterError
from qrenpg_game import (
    NormalFormGame,
    PolicyProfile,
    check_profile,
    marginalized_reward,
    regularized_reward,
)

logger = logging.getLogger(__name__)

# Eigenvalues below this fraction of the largest are treated as zero.
PINV_CUTOFF = 1e-10


def softmax(theta) -> np.ndarray:
    """exp(theta) / sum exp(theta), with max subtraction."""
    theta = np.asarray(theta, dtype=float)
    if not np.all(np.isfinite(theta)):
        raise ParameterError("logits must be finite")
    return _softmax(theta)


@dataclass(frozen=True, eq=False)
class LogitProfile:
    """Unconstrained softmax parameters theta_i, one vector per agent."""

    theta: tuple[np.ndarray, ...]

    def __post_init__(self):
        thetas = tuple(np.array(t, dtype=float) for t in self.theta)
        for i, theta in enumerate(thetas):
            if theta.ndim != 1 or theta.size == 0:
                raise DimensionError(f"theta[{i}] must be a nonempty vector")
            if not np.all(np.isfinite(theta)):
                raise ParameterError(f"theta[{i}] has non-finite entries")
            theta.setflags(write=False)
        object.__setattr__(self, "theta", thetas)

    @classmethod
    def from_profile(cls, profile: PolicyProfile) -> "LogitProfile":
        return cls(tuple(profile.log_policies))

    def canonical(self) -> "LogitProfile":
        """Mean-subtracted representative (softmax is shift-invariant)."""
        return LogitProfile(tuple(t - t.mean() for t in self.theta))

    def to_profile(self) -> PolicyProfile:
        return PolicyProfile.from_log_policies(self.theta)


def policy_gradient(game: NormalFormGame, profile: PolicyProfile, agent: int, tau: float) -> np.ndarray:
    """
    d r_hat_i / d theta_i(a_k) = pi_i(a_k) (rbar_i(a_k) - tau log pi_i(a_k) - r_hat_i(pi)).
    """
    if not tau >= 0:
        raise ParameterError(f"tau must be >= 0, got {tau}")
    marginal = marginalized_reward(game, profile, agent)
    policy = profile.policies[agent]
    soft = marginal - tau * profile.log_policies[agent]
    return policy * (soft - policy @ soft)


def fisher_matrix(policy) -> np.ndarray:
    """diag(pi) - pi pi^T: E[grad log pi grad log pi^T] under softmax."""
    policy = np.asarray(policy, dtype=float)
    return np.diag(policy) - np.outer(policy, policy)


def fisher_pinv(fisher: np.ndarray) -> np.ndarray:
    """
    Moore-Penrose pseudo-inverse through a symmetric eigendecomposition.
    A matrix with no positive eigenvalue (a single-action agent) inverts to zero.
    """
    values, vectors = eigh(fisher)
    if not np.all(np.isfinite(values)):
        raise NumericError("Fisher eigendecomposition produced non-finite eigenvalues")
    top = values.max()
    if top <= 0:
        return np.zeros_like(fisher)
    keep = values > PINV_CUTOFF * top
    inverted = np.zeros_like(values)
    inverted[keep] = 1.0 / values[keep]
    return (vectors * inverted) @ vectors.T


def npg_step_via_fisher(game: NormalFormGame, logits: LogitProfile, params: DynamicsParams) -> LogitProfile:
    """One simultaneous Fisher-preconditioned gradient step on every agent's logits."""
    profile = logits.to_profile()
    check_profile(game, profile)
    updated = []
    for agent, theta in enumerate(logits.theta):
        gradient = policy_gradient(game, profile, agent, params.tau)
        direction = fisher_pinv(fisher_matrix(profile.policies[agent])) @ gradient
        step = theta + params.eta * direction
        if not np.all(np.isfinite(step)):
            raise NumericError("non-finite logits in Fisher step", tau=params.tau, agent=agent)
        updated.append(step)
    return LogitProfile(tuple(updated))


def finite_difference_gradient(game: NormalFormGame, logits: LogitProfile, agent: int, tau: float,
                               h: float = 1e-6) -> np.ndarray:
    """Central differences of r_hat_i with respect to theta_i."""
    theta = logits.theta[agent]
    grad = np.zeros(theta.size)
    for k in range(theta.size):
        values = []
        for sign in (1.0, -1.0):
            shifted = theta.copy()
            shifted[k] += sign * h
            thetas = list(logits.theta)
            thetas[agent] = shifted
            profile = PolicyProfile(tuple(softmax(t) for t in thetas))
            values.append(regularized_reward(game, profile, agent, tau))
        grad[k] = (values[0] - values[1]) / (2 * h)
    return grad


def log_softmax_distance(theta_a: Sequence[float], theta_b: Sequence[float]) -> tuple[float, float]:
    """(||log softmax a - log softmax b||_inf, 2 ||a - b||_inf)."""
    theta_a = np.asarray(theta_a, dtype=float)
    theta_b = np.asarray(theta_b, dtype=float)
    log_a = theta_a - logsumexp(theta_a)
    log_b = theta_b - logsumexp(theta_b)
    return float(np.abs(log_a - log_b).max()), 2.0 * float(np.abs(theta_a - theta_b).max())
