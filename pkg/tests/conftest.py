"""
Shared pytest configuration and fixtures for qrenpg tests.

This module provides:
- The seeded games used throughout (3/4/5 random game, 5-agent ring, 3x5x5 Markov game)
- Matching pennies for the unregularized cycling check
- A config writer for experiment tests
- A CLI runner for end-to-end subprocess tests
"""

import json
import os
import subprocess
import sys
from pathlib import Path
from typing import Any, Callable, Dict

import pytest
import yaml

TOOLS_DIR = Path(__file__).parent.parent / "tools"
sys.path.insert(0, str(TOOLS_DIR))

from qrenpg_generators import GameSpec, build_game, matching_pennies, random_profile  # noqa: E402

REFERENCE_SEED = 7


@pytest.fixture
def tools_path() -> Path:
    """Absolute path to the tools directory (for subprocess tests)."""
    return TOOLS_DIR


@pytest.fixture(scope="session")
def static_spec() -> GameSpec:
    return GameSpec("random_static", (3, 4, 5), seed=REFERENCE_SEED)


@pytest.fixture(scope="session")
def static_game(static_spec):
    """Random 3-agent game with |A| = (3, 4, 5), rewards in [0, 1]."""
    return build_game(static_spec)


@pytest.fixture(scope="session")
def static_initial(static_spec):
    return random_profile(static_spec.action_sizes, 11)


@pytest.fixture(scope="session")
def ring_game():
    """Zero-sum polymatrix game on a 5-agent ring, 10 actions each."""
    return build_game(GameSpec("polymatrix_zero_sum", (10,) * 5, seed=REFERENCE_SEED))


@pytest.fixture(scope="session")
def markov_game():
    """Random Markov game: 3 agents, 5 actions each, 5 states, gamma 0.95."""
    return build_game(GameSpec("random_markov", (5, 5, 5), seed=REFERENCE_SEED, num_states=5))


@pytest.fixture
def pennies():
    return matching_pennies()


@pytest.fixture
def write_config(tmp_path: Path) -> Callable[..., Path]:
    """
    Write a config mapping as YAML under tmp_path and return its path.

    A minimal static config is used when called without arguments.
    """
    def _write(data: Dict[str, Any] = None, name: str = "config.yaml") -> Path:
        if data is None:
            data = {
                "version": 1,
                "game": {"kind": "random_static", "action_sizes": [2, 3], "seed": 3},
                "tau_values": [0, 20],
                "eta": "auto",
                "eta_per_tau": {0: 0.1},
                "max_iters": 50,
                "initial_policy": {"kind": "random", "seed": 5},
            }
        path = tmp_path / name
        path.write_text(yaml.safe_dump(data))
        return path

    return _write


@pytest.fixture
def run_cli(tools_path: Path, tmp_path: Path, monkeypatch) -> Callable[..., Dict[str, Any]]:
    """
    Run qrenpg_cli.py in a subprocess from tmp_path.

    Returns a dict with returncode, the parsed JSON result (None if stdout is
    not JSON) and stderr.
    """
    monkeypatch.delenv("QRENPG_OUTPUT_DIR", raising=False)

    def _run(*args: str, timeout: int = 240) -> Dict[str, Any]:
        env = dict(os.environ)
        env.pop("QRENPG_OUTPUT_DIR", None)
        proc = subprocess.run(
            [sys.executable, str(tools_path / "qrenpg_cli.py"), *args],
            capture_output=True,
            text=True,
            cwd=tmp_path,
            env=env,
            timeout=timeout,
        )
        try:
            result = json.loads(proc.stdout)
        except json.JSONDecodeError:
            result = None
        return {"returncode": proc.returncode, "result": result, "stderr": proc.stderr, "stdout": proc.stdout}

    return _run
