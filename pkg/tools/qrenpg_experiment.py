#!/usr/bin/env python3
"""
qrenpg: Experiments
Config-driven tau sweeps over static and Markov games, the game file format,
CSV traces with a metadata header, and SVG gap plots.

Every cmd_* function returns a result dict ({"success": True, ...} or
{"success": False, "error": ..., "error_type": ...}); qrenpg_cli prints it.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402
import yaml  # noqa: E402

from qrenpg_dynamics import (  # noqa: E402
    DEFAULT_MAX_ITERS,
    DEFAULT_STOP_GAP,
    DynamicsParams,
    default_learning_rate,
    run,
)
from qrenpg_errors import ConfigError, GameFileError, ParameterError, QrenpgError  # noqa: E402
from qrenpg_game import NormalFormGame, PolicyProfile, PolymatrixGame, StaticGame  # noqa: E402
from qrenpg_generators import (  # noqa: E402
    GameSpec,
    build_game,
    random_profile,
    random_state_profile,
)
from qrenpg_markov import (  # noqa: E402
    DEFAULT_MARKOV_MAX_ITERS,
    MarkovGame,
    StatePolicyProfile,
    run_markov,
)

logger = logging.getLogger(__name__)

CONFIG_VERSION = 1
FORMAT_VERSION = 1
OUTPUT_ENV = "QRENPG_OUTPUT_DIR"
DEFAULT_RESULTS_ROOT = "qrenpg-results"

STATIC_COLUMNS = ("iter", "qre_gap", "ne_gap", "bound", "aux_residual", "wall_time_ms")
MARKOV_COLUMNS = ("iter", "markov_qre_gap", "wall_time_ms")

SVG_CLIP = 1e-16
GAME_FILE_MAGIC = "qrenpg-game"
VALUES_MARKER = "--- values"
MARKOV_GAP_DEFINITION = "rho . (V_br - V_pi), V_br by soft value iteration on the MDP induced by pi_-i"


# =============================================================================
# Configuration
# =============================================================================

CONFIG_KEYS = {
    "version", "game", "tau_values", "eta", "eta_per_tau", "max_iters", "stop_gap",
    "initial_policy", "soft_advantage", "output_dir", "emit_svg",
}


@dataclass(frozen=True)
class ExperimentConfig:
    """A resolved experiment: exactly one of game_spec / game_path is set."""

    tau_values: tuple[float, ...]
    game_spec: GameSpec | None = None
    game_path: str | None = None
    eta: float | str = "auto"
    eta_per_tau: tuple[tuple[float, float], ...] = ()
    max_iters: int | None = None
    stop_gap: float = DEFAULT_STOP_GAP
    initial_kind: str = "uniform"
    initial_seed: int | None = None
    soft_advantage: bool = False
    output_dir: str | None = None
    emit_svg: bool = False

    def canonical(self) -> dict:
        """Everything that determines the traces (output location and plotting excluded)."""
        return {
            "version": CONFIG_VERSION,
            "game": self.game_spec.to_dict() if self.game_spec else {"path": self.game_path},
            "tau_values": list(self.tau_values),
            "eta": self.eta,
            "eta_per_tau": [list(pair) for pair in self.eta_per_tau],
            "max_iters": self.max_iters,
            "stop_gap": self.stop_gap,
            "initial_policy": {"kind": self.initial_kind, "seed": self.initial_seed},
            "soft_advantage": self.soft_advantage,
        }

    def to_yaml_dict(self) -> dict:
        data = self.canonical()
        data["eta_per_tau"] = {tau: eta for tau, eta in self.eta_per_tau}
        if self.initial_seed is None:
            data["initial_policy"] = {"kind": self.initial_kind}
        if self.max_iters is None:
            del data["max_iters"]
        data["emit_svg"] = self.emit_svg
        if self.output_dir is not None:
            data["output_dir"] = self.output_dir
        return data

    def step_size(self, tau: float):
        for listed, eta in self.eta_per_tau:
            if listed == tau:
                return eta
        return self.eta


def config_hash(config: ExperimentConfig) -> str:
    canonical = json.dumps(config.canonical(), sort_keys=True, separators=(",", ":"))
    return hashlib.md5(canonical.encode()).hexdigest()[:16]


def _number(value, name: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{name} must be a number, got {value!r}")
    return float(value)


def parse_config(data: dict, base_dir: Path | None = None) -> ExperimentConfig:
    """
    Validate a config mapping (already parsed from YAML).

    Args:
        data: top-level mapping
        base_dir: directory relative game paths are resolved against

    Returns:
        ExperimentConfig
    """
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping")
    unknown = sorted(set(data) - CONFIG_KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    if data.get("version") != CONFIG_VERSION:
        raise ConfigError(f"config needs 'version: {CONFIG_VERSION}', got {data.get('version')!r}")

    game = data.get("game")
    if not isinstance(game, dict):
        raise ConfigError("'game' must be a game spec mapping or {path: ...}")
    game_spec = game_path = None
    if "path" in game:
        if set(game) != {"path"}:
            raise ConfigError("'game' with a path takes no other keys")
        game_path = Path(str(game["path"]))
        if base_dir is not None and not game_path.is_absolute():
            game_path = base_dir / game_path
        game_path = str(game_path)
    else:
        try:
            game_spec = GameSpec.from_dict(game)
        except (ParameterError, TypeError, ValueError) as e:
            raise ConfigError(f"invalid game spec: {e}") from e

    taus = data.get("tau_values")
    if not isinstance(taus, list) or not taus:
        raise ConfigError("'tau_values' must be a nonempty list")
    tau_values = tuple(_number(t, "tau") for t in taus)
    if any(not math.isfinite(t) or t < 0 for t in tau_values):
        raise ConfigError(f"tau values must be finite and >= 0, got {list(tau_values)}")

    eta = data.get("eta", "auto")
    if eta != "auto":
        eta = _number(eta, "eta")
        if not eta > 0:
            raise ConfigError(f"eta must be > 0, got {eta}")

    per_tau = data.get("eta_per_tau") or {}
    if not isinstance(per_tau, dict):
        raise ConfigError("'eta_per_tau' must map tau to eta")
    eta_per_tau = tuple(sorted((_number(k, "tau"), _number(v, "eta")) for k, v in per_tau.items()))

    max_iters = data.get("max_iters")
    if max_iters is not None and (isinstance(max_iters, bool) or not isinstance(max_iters, int) or max_iters < 1):
        raise ConfigError(f"max_iters must be a positive integer, got {max_iters!r}")

    initial = data.get("initial_policy") or {"kind": "uniform"}
    if not isinstance(initial, dict) or initial.get("kind") not in ("uniform", "random"):
        raise ConfigError("'initial_policy' must be {kind: uniform} or {kind: random, seed: N}")
    if set(initial) - {"kind", "seed"}:
        raise ConfigError(f"unknown initial_policy keys: {', '.join(sorted(set(initial) - {'kind', 'seed'}))}")
    initial_seed = None
    if initial["kind"] == "random":
        initial_seed = initial.get("seed", 0)
        if isinstance(initial_seed, bool) or not isinstance(initial_seed, int) or initial_seed < 0:
            raise ConfigError(f"initial_policy seed must be a nonnegative integer, got {initial_seed!r}")

    output_dir = data.get("output_dir")
    return ExperimentConfig(
        tau_values=tau_values,
        game_spec=game_spec,
        game_path=game_path,
        eta=eta,
        eta_per_tau=eta_per_tau,
        max_iters=max_iters,
        stop_gap=_number(data.get("stop_gap", DEFAULT_STOP_GAP), "stop_gap"),
        initial_kind=initial["kind"],
        initial_seed=initial_seed,
        soft_advantage=bool(data.get("soft_advantage", False)),
        output_dir=None if output_dir is None else str(output_dir),
        emit_svg=bool(data.get("emit_svg", False)),
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, "r") as f:
            data = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise ConfigError(f"cannot parse {path}: {e}") from e
    if data is None:
        raise ConfigError(f"config file {path} is empty")
    config = parse_config(data, base_dir=path.parent)
    logger.info("loaded config %s (hash %s)", path, config_hash(config))
    return config


def apply_overrides(config: ExperimentConfig, out=None, seed=None, tau=None, eta=None,
                    iters=None, svg=False) -> ExperimentConfig:
    """Command-line flags take precedence over config values."""
    changes = {}
    if out is not None:
        changes["output_dir"] = str(out)
    if seed is not None:
        if config.game_spec is None:
            raise ConfigError("--seed needs a generated game, not a game file")
        changes["game_spec"] = dataclasses.replace(config.game_spec, seed=int(seed))
    if tau is not None:
        try:
            taus = tuple(float(t) for t in str(tau).split(",") if t.strip())
        except ValueError as e:
            raise ConfigError(f"--tau must be a comma-separated list of numbers: {tau}") from e
        if not taus or any(not math.isfinite(t) or t < 0 for t in taus):
            raise ConfigError(f"--tau values must be finite and >= 0: {tau}")
        changes["tau_values"] = taus
    if eta is not None:
        if eta == "auto":
            changes["eta"] = "auto"
        else:
            try:
                changes["eta"] = float(eta)
            except ValueError as e:
                raise ConfigError(f"--eta must be a number or 'auto', got {eta}") from e
            if not changes["eta"] > 0:
                raise ConfigError(f"--eta must be > 0, got {eta}")
    if iters is not None:
        if int(iters) < 1:
            raise ConfigError(f"--iters must be >= 1, got {iters}")
        changes["max_iters"] = int(iters)
    if svg:
        changes["emit_svg"] = True
    return dataclasses.replace(config, **changes) if changes else config


def resolve_output_dir(config: ExperimentConfig) -> Path:
    """Config/flag value, then $QRENPG_OUTPUT_DIR, then ./qrenpg-results/<config hash>."""
    if config.output_dir:
        return Path(config.output_dir)
    env = os.environ.get(OUTPUT_ENV)
    if env:
        return Path(env)
    return Path.cwd() / DEFAULT_RESULTS_ROOT / config_hash(config)


# =============================================================================
# Game files
# =============================================================================

def _write_block(lines: list, name: str, values: np.ndarray) -> None:
    values = np.asarray(values, dtype=float)
    lines.append(f"@ {name} " + " ".join(str(d) for d in values.shape))
    width = values.shape[-1] if values.ndim else 1
    flat = values.ravel()
    for start in range(0, flat.size, width):
        lines.append(" ".join(repr(float(v)) for v in flat[start:start + width]))


def write_game_file(game, path, spec: GameSpec | None = None) -> Path:
    """
    Header: YAML mapping (format, version, representation, shapes, declared range,
    generating spec). Body: "@ name dims..." blocks of row-major values printed with
    shortest round-trip repr.
    """
    path = Path(path)
    header = {"format": GAME_FILE_MAGIC, "version": FORMAT_VERSION,
              "spec": spec.to_dict() if spec else None}
    lines: list[str] = []
    if isinstance(game, MarkovGame):
        header.update(representation="markov", action_sizes=list(game.action_sizes),
                      num_states=game.num_states, gamma=game.gamma,
                      reward_range=list(game.reward_range))
        for i, rewards in enumerate(game.rewards):
            _write_block(lines, f"reward/{i}", rewards)
        _write_block(lines, "kernel", game.kernel)
        _write_block(lines, "initial_dist", game.initial_dist)
    elif isinstance(game, PolymatrixGame):
        header.update(representation="polymatrix", action_sizes=list(game.action_sizes),
                      edges=[list(e) for e in game.edges], reward_range=list(game.reward_range))
        for k, matrix in enumerate(game.matrices):
            _write_block(lines, f"edge/{k}", matrix)
    elif isinstance(game, StaticGame):
        header.update(representation="dense", action_sizes=list(game.action_sizes),
                      reward_range=list(game.reward_range))
        for i, rewards in enumerate(game.rewards):
            _write_block(lines, f"reward/{i}", rewards)
    else:
        raise GameFileError(f"cannot export {type(game).__name__}")

    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        f.write(f"# {GAME_FILE_MAGIC} file\n")
        f.write(yaml.safe_dump(header, sort_keys=True, default_flow_style=None))
        f.write(VALUES_MARKER + "\n")
        f.write("\n".join(lines) + "\n")
    logger.info("wrote game file %s", path)
    return path


def _read_blocks(body: Iterable[str]) -> dict:
    blocks = {}
    name = None
    for number, line in enumerate(body, start=1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("@"):
            parts = line[1:].split()
            if not parts:
                raise GameFileError(f"value line {number}: block header without a name")
            try:
                shape = tuple(int(d) for d in parts[1:])
            except ValueError as e:
                raise GameFileError(f"value line {number}: bad dimensions in {line!r}") from e
            name = parts[0]
            blocks[name] = (shape, [])
            continue
        if name is None:
            raise GameFileError(f"value line {number}: values before the first block header")
        try:
            blocks[name][1].extend(float(v) for v in line.split())
        except ValueError as e:
            raise GameFileError(f"value line {number}: {e}") from e
    arrays = {}
    for name, (shape, values) in blocks.items():
        expected = int(np.prod(shape)) if shape else 1
        if len(values) != expected:
            raise GameFileError(f"block {name} has {len(values)} values, expected {expected}")
        arrays[name] = np.array(values, dtype=float).reshape(shape)
    return arrays


def read_game_file(path):
    """
    Load a game written by write_game_file.

    Returns:
        (game, GameSpec or None)
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise GameFileError(f"cannot read game file {path}: {e}") from e
    head, marker, body = text.partition("\n" + VALUES_MARKER + "\n")
    if not marker:
        raise GameFileError(f"{path}: missing '{VALUES_MARKER}' separator")
    try:
        header = yaml.safe_load(head)
    except yaml.YAMLError as e:
        raise GameFileError(f"{path}: bad header: {e}") from e
    if not isinstance(header, dict) or header.get("format") != GAME_FILE_MAGIC:
        raise GameFileError(f"{path}: not a {GAME_FILE_MAGIC} file")
    if header.get("version") != FORMAT_VERSION:
        raise GameFileError(f"{path}: unsupported format version {header.get('version')!r}")
    blocks = _read_blocks(body.splitlines())
    sizes = tuple(header.get("action_sizes") or ())
    representation = header.get("representation")
    try:
        if representation == "dense":
            game = StaticGame(tuple(blocks[f"reward/{i}"] for i in range(len(sizes))),
                              tuple(header["reward_range"]))
        elif representation == "polymatrix":
            edges = tuple(tuple(e) for e in header["edges"])
            game = PolymatrixGame(sizes, edges, tuple(blocks[f"edge/{k}"] for k in range(len(edges))),
                                  tuple(header["reward_range"]))
        elif representation == "markov":
            game = MarkovGame(tuple(blocks[f"reward/{i}"] for i in range(len(sizes))), blocks["kernel"],
                              header["gamma"], blocks["initial_dist"],
                              tuple(header["reward_range"]) if header.get("reward_range") else None)
        else:
            raise GameFileError(f"{path}: unknown representation {representation!r}")
        spec = GameSpec.from_dict(header["spec"]) if header.get("spec") else None
    except KeyError as e:
        raise GameFileError(f"{path}: missing entry {e}") from e
    except (ParameterError, ValueError) as e:
        raise GameFileError(f"{path}: {e}") from e
    if tuple(game.action_sizes) != sizes:
        raise GameFileError(f"{path}: header sizes {sizes} disagree with values {game.action_sizes}")
    return game, spec


# =============================================================================
# Traces
# =============================================================================

def tau_label(tau: float) -> str:
    return repr(float(tau))


def trace_filename(tau: float) -> str:
    return f"trace_tau_{tau_label(tau)}.csv"


def write_trace(path, metadata: dict, records: Sequence, columns: Sequence[str]) -> Path:
    """"# key: <json>" metadata lines followed by a CSV of the records."""
    path = Path(path)
    frame = pd.DataFrame([[getattr(r, c) for c in columns] for r in records], columns=list(columns))
    frame["iter"] = frame["iter"].astype(int)
    with open(path, "w", newline="") as f:
        for key in sorted(metadata):
            f.write(f"# {key}: {json.dumps(metadata[key], sort_keys=True)}\n")
        frame.to_csv(f, index=False, na_rep="nan", lineterminator="\n")
    logger.info("wrote trace %s (%d rows)", path, len(frame))
    return path


def read_trace(path) -> tuple[dict, pd.DataFrame]:
    path = Path(path)
    metadata = {}
    try:
        with open(path, "r") as f:
            for line in f:
                if not line.startswith("# "):
                    break
                key, _, value = line[2:].partition(": ")
                metadata[key] = json.loads(value)
        frame = pd.read_csv(path, comment="#")
    except (OSError, ValueError) as e:
        raise ConfigError(f"cannot read trace {path}: {e}") from e
    return metadata, frame


# =============================================================================
# SVG
# =============================================================================

def emit_svg(traces: Sequence[tuple[str, Sequence[float], Sequence[float]]], path, gap_name: str,
             title: str | None = None) -> Path:
    """
    Log-scale line plot, one series per (label, iterations, values) entry.

    Values at or below 1e-16 are clipped to 1e-16, NaN rows are dropped and series
    are tagged trace-0, trace-1, ... in the SVG.
    """
    if not traces:
        raise ParameterError("no traces to plot")
    path = Path(path)
    with plt.rc_context({"svg.hashsalt": "qrenpg", "svg.fonttype": "path"}):
        fig, ax = plt.subplots(figsize=(6, 4))
        try:
            for k, (label, iterations, values) in enumerate(traces):
                x = np.asarray(iterations, dtype=float)
                y = np.asarray(values, dtype=float)
                keep = ~np.isnan(y)
                if not np.any(keep):
                    raise ParameterError(f"trace {label!r} has no values to plot")
                ax.plot(x[keep], np.maximum(y[keep], SVG_CLIP), label=label, gid=f"trace-{k}")
            ax.set_yscale("log")
            ax.set_xlabel("iteration")
            ax.set_ylabel(gap_name)
            ax.grid(alpha=0.15)
            ax.legend()
            if title:
                ax.set_title(title)
            fig.tight_layout()
            path.parent.mkdir(parents=True, exist_ok=True)
            fig.savefig(path, format="svg", metadata={"Date": None})
        finally:
            plt.close(fig)
    logger.info("wrote %s", path)
    return path


# =============================================================================
# Commands
# =============================================================================

def _failure(error: Exception) -> dict:
    kind = error.kind if isinstance(error, QrenpgError) else "io"
    return {"success": False, "error": str(error), "error_type": kind}


def resolve_game(config: ExperimentConfig):
    """(game, GameSpec or None) for the config's generated or stored game."""
    if config.game_spec is not None:
        return build_game(config.game_spec), config.game_spec
    return read_game_file(config.game_path)


def resolve_params(game, config: ExperimentConfig, default_iters: int) -> list[DynamicsParams]:
    """One DynamicsParams per tau; every tau is checked before anything runs."""
    params = []
    for tau in config.tau_values:
        eta = config.step_size(tau)
        try:
            if eta == "auto":
                eta = default_learning_rate(game, tau)
            params.append(DynamicsParams(tau, eta, config.max_iters or default_iters, config.stop_gap))
        except ParameterError as e:
            raise ConfigError(f"tau={tau}: {e}") from e
    return params


def _write_resolved_config(config: ExperimentConfig, out: Path) -> None:
    with open(out / "config.yaml", "w") as f:
        yaml.safe_dump(config.to_yaml_dict(), f, sort_keys=True)


def _base_metadata(config: ExperimentConfig, spec: GameSpec | None, game) -> dict:
    metadata = {
        "config_hash": config_hash(config),
        "config_version": CONFIG_VERSION,
        "format_version": FORMAT_VERSION,
        "action_sizes": list(game.action_sizes),
        "game": spec.to_dict() if spec else {"path": config.game_path},
        "initial_policy": {"kind": config.initial_kind, "seed": config.initial_seed},
        "stop_gap": config.stop_gap,
    }
    if spec is not None and spec.kind == "polymatrix_zero_sum":
        metadata["edge_range"] = spec.edge_range
    return metadata


def cmd_generate(spec, out_path) -> dict:
    """Build a game from a spec (GameSpec or mapping) and write it as a game file."""
    try:
        if not isinstance(spec, GameSpec):
            spec = GameSpec.from_dict(spec)
        game = build_game(spec)
        path = write_game_file(game, out_path, spec)
        result = {
            "success": True,
            "path": str(path),
            "kind": spec.kind,
            "action_sizes": list(spec.action_sizes),
            "seed": spec.seed,
        }
        if isinstance(game, MarkovGame):
            result["num_states"] = game.num_states
        return result
    except (QrenpgError, OSError) as e:
        return _failure(e)
    except (TypeError, ValueError) as e:
        return {"success": False, "error": f"malformed game spec: {e}", "error_type": "parameter"}


def cmd_run(config: ExperimentConfig) -> dict:
    """One static-game trace per tau, all from the same game and initial profile."""
    try:
        game, spec = resolve_game(config)
        if isinstance(game, MarkovGame):
            raise ConfigError("this is a Markov game; use run-markov")
        params_list = resolve_params(game, config, DEFAULT_MAX_ITERS)
        if config.initial_kind == "random":
            initial = random_profile(game.action_sizes, config.initial_seed)
        else:
            initial = PolicyProfile.uniform(game.action_sizes)

        out = resolve_output_dir(config)
        out.mkdir(parents=True, exist_ok=True)
        write_game_file(game, out / "game.txt", spec)
        _write_resolved_config(config, out)
        base = _base_metadata(config, spec, game)

        traces = []
        frames = []
        for params in params_list:
            logger.info("static run tau=%g eta=%g max_iters=%d", params.tau, params.eta, params.max_iters)
            trajectory = run(game, initial, params)
            metadata = dict(base, tau=params.tau, eta=params.eta, max_iters=params.max_iters,
                            kind="static")
            path = write_trace(out / trace_filename(params.tau), metadata, trajectory.records, STATIC_COLUMNS)
            last = trajectory.records[-1]
            traces.append({
                "tau": params.tau,
                "eta": params.eta,
                "path": str(path),
                "iterations": last.iter,
                "final_qre_gap": last.qre_gap,
                "final_ne_gap": last.ne_gap,
            })
            frames.append((f"tau={params.tau:g}", trajectory.column("iter"), trajectory))

        svgs = []
        if config.emit_svg:
            for column in ("qre_gap", "ne_gap"):
                series = [(label, it, traj.column(column)) for label, it, traj in frames]
                svgs.append(str(emit_svg(series, out / f"{column}.svg", column)))
        return {"success": True, "output_dir": str(out), "config_hash": config_hash(config),
                "traces": traces, "svg": svgs}
    except (QrenpgError, OSError) as e:
        return _failure(e)


def cmd_run_markov(config: ExperimentConfig) -> dict:
    """
    One Markov trace per tau. A static game is embedded as a single-state Markov
    game with gamma = 0.
    """
    try:
        game, spec = resolve_game(config)
        if isinstance(game, NormalFormGame):
            logger.info("embedding static game as a single-state Markov game (gamma=0)")
            game = MarkovGame.from_static(game, gamma=0.0)
        params_list = resolve_params(game, config, DEFAULT_MARKOV_MAX_ITERS)
        if config.initial_kind == "random":
            initial = random_state_profile(game.action_sizes, game.num_states, config.initial_seed)
        else:
            initial = StatePolicyProfile.uniform(game.num_states, game.action_sizes)

        out = resolve_output_dir(config)
        out.mkdir(parents=True, exist_ok=True)
        write_game_file(game, out / "game.txt", spec if spec and spec.kind == "random_markov" else None)
        _write_resolved_config(config, out)
        base = _base_metadata(config, spec, game)
        base.update(gamma=game.gamma, rho="uniform" if np.allclose(game.initial_dist, 1.0 / game.num_states)
                    else game.initial_dist.tolist(),
                    num_states=game.num_states, soft_advantage=config.soft_advantage,
                    gap_definition=MARKOV_GAP_DEFINITION)

        traces = []
        series = []
        for params in params_list:
            logger.info("markov run tau=%g eta=%g max_iters=%d", params.tau, params.eta, params.max_iters)
            trajectory = run_markov(game, initial, params, config.soft_advantage)
            metadata = dict(base, tau=params.tau, eta=params.eta, max_iters=params.max_iters, kind="markov")
            path = write_trace(out / trace_filename(params.tau), metadata, trajectory.records, MARKOV_COLUMNS)
            last = trajectory.records[-1]
            traces.append({
                "tau": params.tau,
                "eta": params.eta,
                "path": str(path),
                "iterations": last.iter,
                "final_markov_qre_gap": last.markov_qre_gap,
            })
            series.append((f"tau={params.tau:g}", trajectory.column("iter"), trajectory.column("markov_qre_gap")))

        svgs = []
        if config.emit_svg:
            svgs.append(str(emit_svg(series, out / "markov_qre_gap.svg", "markov_qre_gap")))
        return {"success": True, "output_dir": str(out), "config_hash": config_hash(config),
                "traces": traces, "svg": svgs}
    except (QrenpgError, OSError) as e:
        return _failure(e)


def cmd_plot(trace_paths: Sequence, out_path, column: str = "qre_gap") -> dict:
    """Re-render an SVG from existing trace CSVs."""
    try:
        if not trace_paths:
            raise ConfigError("no trace files given")
        series = []
        for trace_path in trace_paths:
            metadata, frame = read_trace(trace_path)
            if column not in frame.columns:
                raise ConfigError(f"{trace_path} has no column {column!r}")
            label = f"tau={metadata['tau']:g}" if "tau" in metadata else Path(trace_path).stem
            series.append((label, frame["iter"].to_numpy(), frame[column].to_numpy()))
        path = emit_svg(series, out_path, column)
        return {"success": True, "path": str(path), "column": column, "traces": len(series)}
    except (QrenpgError, OSError) as e:
        return _failure(e)
