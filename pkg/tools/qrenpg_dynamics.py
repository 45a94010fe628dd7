#!/usr/bin/env python3
"""
qrenpg: Dynamics
Entropy-regularized independent natural policy gradient on static games.

All agents update simultaneously from the same iterate:

    log pi_i^{k+1} = (1 - eta*tau) log pi_i^k + eta * rbar_i^k   (then normalized)

Besides the iteration itself this module provides the step-size rule used for the
random-game experiments, the contraction factor 1 - eta*tau + 2*eta*sum|A_i| and its
QRE-gap envelope, and the auxiliary sequence log xi whose residual
max_i ||log xi_i^k - rbar_i^k / tau||_inf contracts by that factor.

The convergence theory asks for eta < 1/(tau - 2 sum|A_i|), which allows eta*tau > 1
for some pairs; DynamicsParams additionally requires eta*tau <= 1 so that the
exponent 1 - eta*tau stays nonnegative.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from qrenpg_errors import NumericError, ParameterError
from qrenpg_game import (
    RANGE_SLACK,
    NormalFormGame,
    PolicyProfile,
    check_profile,
    log_soft_best_response,
    ne_gap,
    qre_gap,
)

logger = logging.getLogger(__name__)

DEFAULT_MAX_ITERS = 10_000
DEFAULT_STOP_GAP = 1e-12
LOG_EVERY = 1000


@dataclass(frozen=True)
class DynamicsParams:
    tau: float
    eta: float
    max_iters: int = DEFAULT_MAX_ITERS
    stop_gap: float = DEFAULT_STOP_GAP

    def __post_init__(self):
        tau, eta = float(self.tau), float(self.eta)
        if not math.isfinite(tau) or tau < 0:
            raise ParameterError(f"tau must be finite and >= 0, got {tau}")
        if not math.isfinite(eta) or eta <= 0:
            raise ParameterError(f"eta must be finite and > 0, got {eta}")
        if eta * tau > 1.0 + RANGE_SLACK:
            raise ParameterError(f"eta*tau must be <= 1, got eta={eta}, tau={tau} (eta*tau={eta * tau})")
        if int(self.max_iters) < 1:
            raise ParameterError(f"max_iters must be >= 1, got {self.max_iters}")
        if not self.stop_gap >= 0:
            raise ParameterError(f"stop_gap must be >= 0, got {self.stop_gap}")
        object.__setattr__(self, "tau", tau)
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "max_iters", int(self.max_iters))
        object.__setattr__(self, "stop_gap", float(self.stop_gap))

    @property
    def retention(self) -> float:
        """Exponent 1 - eta*tau on the previous policy."""
        return max(0.0, 1.0 - self.eta * self.tau)


@dataclass(frozen=True, eq=False)
class AuxSequence:
    """log xi_i per agent (unnormalized log-policies)."""

    xi: tuple[np.ndarray, ...]

    def __post_init__(self):
        logs = tuple(np.array(x, dtype=float) for x in self.xi)
        for i, log_xi in enumerate(logs):
            if not np.all(np.isfinite(log_xi)):
                raise NumericError("auxiliary sequence has non-finite entries", agent=i)
            log_xi.setflags(write=False)
        object.__setattr__(self, "xi", logs)

    def policies(self) -> tuple[np.ndarray, ...]:
        """softmax(log xi_i) per agent."""
        return tuple(np.exp(x - logsumexp(x)) for x in self.xi)


@dataclass(frozen=True)
class IterateRecord:
    iter: int
    qre_gap: float
    ne_gap: float
    bound: float
    aux_residual: float
    wall_time_ms: float


@dataclass(frozen=True, eq=False)
class Trajectory:
    records: tuple[IterateRecord, ...]
    final: PolicyProfile

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=float)


def all_marginals(game: NormalFormGame, profile: PolicyProfile) -> tuple[np.ndarray, ...]:
    """Marginalized rewards of every agent, all computed from the same profile."""
    check_profile(game, profile)
    return tuple(game.marginal(profile.policies, i) for i in range(game.num_agents))


def npg_step(game: NormalFormGame, profile: PolicyProfile, params: DynamicsParams,
             iteration: int | None = None, marginals=None) -> PolicyProfile:
    """
    One synchronous entropy-regularized NPG step for every agent.

    `marginals` may carry rbar^k already computed from `profile`.
    """
    if marginals is None:
        marginals = all_marginals(game, profile)
    logs = []
    for agent, (log_policy, marginal) in enumerate(zip(profile.log_policies, marginals)):
        new_log = params.retention * log_policy + params.eta * marginal
        if not np.all(np.isfinite(new_log)):
            raise NumericError("non-finite log-policy in NPG step", iteration=iteration,
                               tau=params.tau, agent=agent)
        logs.append(new_log)
    return PolicyProfile.from_log_policies(logs)


def default_learning_rate(game: NormalFormGame, tau: float) -> float:
    """eta_tau = 1 / (2 (tau - 2 sum|A_i|)), defined only for tau > 2 sum|A_i|."""
    total = game.sum_of_action_sizes()
    if not tau > 2 * total:
        raise ParameterError(
            f"no default learning rate for tau={tau}: requires tau > 2*sum|A_i| = {2 * total}; "
            "pass an explicit eta"
        )
    return 1.0 / (2.0 * (tau - 2 * total))


def contraction_factor(game: NormalFormGame, params: DynamicsParams) -> float:
    """1 - eta*tau + 2*eta*sum|A_i|; below 1 the QRE-gap envelope decays geometrically."""
    return 1.0 - params.eta * params.tau + 2.0 * params.eta * game.sum_of_action_sizes()


def contraction_applies(game: NormalFormGame, params: DynamicsParams) -> bool:
    """tau > 2 sum|A_i| and eta < 1/(tau - 2 sum|A_i|)."""
    total = game.sum_of_action_sizes()
    return params.tau > 2 * total and params.eta < 1.0 / (params.tau - 2 * total)


def initial_log_distance(game: NormalFormGame, profile: PolicyProfile, tau: float) -> float:
    """max_i ||log pi_i^0 - log pi_i^{0*}||_inf."""
    distance = 0.0
    for agent, marginal in enumerate(all_marginals(game, profile)):
        gap = np.abs(profile.log_policies[agent] - log_soft_best_response(marginal, tau))
        distance = max(distance, float(gap.max()))
    return distance


def theoretical_bound(game: NormalFormGame, initial: PolicyProfile, params: DynamicsParams,
                      k: int) -> float:
    """
    2 tau rho^k max_i ||log pi_i^0 - log pi_i^{0*}||_inf, or NaN outside the
    contraction regime tau > 2 sum|A_i|, eta < 1/(tau - 2 sum|A_i|).
    """
    if not contraction_applies(game, params):
        return math.nan
    if not game.is_unit_bounded():
        logger.warning("reward range %s exceeds [-1, 1]; envelope may not hold", game.reward_range)
    rho = contraction_factor(game, params)
    return 2.0 * params.tau * rho ** int(k) * initial_log_distance(game, initial, params.tau)


def aux_init(game: NormalFormGame, initial: PolicyProfile, tau: float) -> AuxSequence:
    """log xi_i^0 = log pi_i^0 + log sum_a exp(rbar_i^0(a) / tau)."""
    if not tau > 0:
        raise ParameterError(f"auxiliary sequence needs tau > 0, got {tau}")
    marginals = all_marginals(game, initial)
    return AuxSequence(tuple(
        log_policy + logsumexp(marginal / tau)
        for log_policy, marginal in zip(initial.log_policies, marginals)
    ))


def aux_step(aux: AuxSequence, marginals, params: DynamicsParams) -> AuxSequence:
    """log xi^{k+1} = (1 - eta*tau) log xi^k + eta * rbar^k."""
    return AuxSequence(tuple(
        params.retention * log_xi + params.eta * np.asarray(marginal, dtype=float)
        for log_xi, marginal in zip(aux.xi, marginals)
    ))


def aux_residual(aux: AuxSequence, marginals, tau: float) -> float:
    """max_i ||log xi_i^k - rbar_i^k / tau||_inf."""
    return max(
        float(np.abs(log_xi - np.asarray(marginal, dtype=float) / tau).max())
        for log_xi, marginal in zip(aux.xi, marginals)
    )


def run(game: NormalFormGame, initial: PolicyProfile, params: DynamicsParams) -> Trajectory:
    """
    Iterate npg_step from `initial`.

    A record is taken before every step and once after the last one. The run stops
    early once the QRE-gap (the NE-gap when tau = 0) drops below params.stop_gap.
    """
    check_profile(game, initial)
    tau = params.tau
    regularized = tau > 0
    start = time.perf_counter()

    bound0 = theoretical_bound(game, initial, params, 0)
    rho = contraction_factor(game, params)
    aux = aux_init(game, initial, tau) if regularized else None

    records = []
    profile = initial
    for k in range(params.max_iters + 1):
        marginals = all_marginals(game, profile)
        ne = ne_gap(game, profile).max_gap
        gap = qre_gap(game, profile, tau).max_gap if regularized else ne
        residual = aux_residual(aux, marginals, tau) if regularized else math.nan
        bound = bound0 * rho ** k if not math.isnan(bound0) else math.nan
        if not (math.isfinite(gap) and math.isfinite(ne)):
            raise NumericError("non-finite gap", iteration=k, tau=tau)
        records.append(IterateRecord(
            iter=k,
            qre_gap=gap,
            ne_gap=ne,
            bound=bound,
            aux_residual=residual,
            wall_time_ms=(time.perf_counter() - start) * 1000.0,
        ))
        if k % LOG_EVERY == 0:
            logger.debug("tau=%g iter=%d qre_gap=%.3e ne_gap=%.3e", tau, k, gap, ne)
        if gap < params.stop_gap or k == params.max_iters:
            break
        if regularized:
            aux = aux_step(aux, marginals, params)
        profile = npg_step(game, profile, params, iteration=k, marginals=marginals)

    logger.debug("tau=%g finished after %d records, final gap %.3e", tau, len(records), records[-1].qre_gap)
    return Trajectory(tuple(records), profile)
