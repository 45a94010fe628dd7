"""
qrenpg: Errors
Exception types shared by the library modules and the command-line tools.
"""

from __future__ import annotations


class QrenpgError(Exception):
    """Base class for every error raised by qrenpg."""

    kind = "error"


class DimensionError(QrenpgError, ValueError):
    """Shapes of a game and a policy profile do not agree."""

    kind = "dimension"


class ParameterError(QrenpgError, ValueError):
    """A numeric parameter (tau, eta, ...) is outside its admissible range."""

    kind = "parameter"


class ConfigError(QrenpgError):
    """An experiment config file is missing, malformed or inconsistent."""

    kind = "config"


class GameFileError(QrenpgError):
    """A game file cannot be parsed."""

    kind = "game_file"


class NumericError(QrenpgError, ArithmeticError):
    """
    A computation produced non-finite values or failed to converge.

    Context (iteration, tau, agent, state) is appended to the message when given.
    """

    kind = "numeric"

    def __init__(self, message, iteration=None, tau=None, agent=None, state=None):
        self.iteration = iteration
        self.tau = tau
        self.agent = agent
        self.state = state
        self.base_message = message
        context = [
            f"{name}={value}"
            for name, value in (("iteration", iteration), ("tau", tau), ("agent", agent), ("state", state))
            if value is not None
        ]
        if context:
            message = f"{message} ({', '.join(context)})"
        super().__init__(message)

    def with_context(self, **context):
        """Return a copy with extra context filled in where it was missing."""
        merged = {
            "iteration": self.iteration,
            "tau": self.tau,
            "agent": self.agent,
            "state": self.state,
        }
        for key, value in context.items():
            if merged.get(key) is None:
                merged[key] = value
        return NumericError(self.base_message, **merged)
