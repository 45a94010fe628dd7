"""
Tests for qrenpg_experiment.py

Tests cover:
- Config parsing, loading, overrides, hashing and output-dir resolution
- Game files for all three representations
- Trace CSVs and SVG output
- cmd_run / cmd_run_markov / cmd_generate / cmd_plot result dicts
- Qualitative behavior of the shipped reference configs (slow)
"""

import sys
import xml.etree.ElementTree as ET
from pathlib import Path

import numpy as np
import pytest
import yaml

sys.path.insert(0, str(Path(__file__).parent.parent / "tools"))

from qrenpg_dynamics import DynamicsParams, run  # noqa: E402
from qrenpg_errors import ConfigError, GameFileError, NumericError, ParameterError  # noqa: E402
from qrenpg_experiment import (  # noqa: E402
    MARKOV_COLUMNS,
    STATIC_COLUMNS,
    apply_overrides,
    cmd_generate,
    cmd_plot,
    cmd_run,
    cmd_run_markov,
    config_hash,
    emit_svg,
    load_config,
    parse_config,
    read_game_file,
    read_trace,
    resolve_output_dir,
    resolve_params,
    trace_filename,
    write_game_file,
    write_trace,
)
from qrenpg_game import PolicyProfile  # noqa: E402
from qrenpg_generators import GameSpec, build_game, random_profile, random_state_profile  # noqa: E402
from qrenpg_markov import MarkovGame, run_markov  # noqa: E402

SVG_NS = "{http://www.w3.org/2000/svg}"


def _base(**overrides):
    data = {
        "version": 1,
        "game": {"kind": "random_static", "action_sizes": [2, 3], "seed": 3},
        "tau_values": [0, 20],
        "eta": "auto",
        "eta_per_tau": {0: 0.1},
        "max_iters": 50,
        "initial_policy": {"kind": "random", "seed": 5},
    }
    data.update(overrides)
    return data


def _trace_vertices(svg_path, index=0):
    root = ET.parse(svg_path).getroot()
    group = root.find(f".//{SVG_NS}g[@id='trace-{index}']")
    assert group is not None
    d = group.find(f".//{SVG_NS}path").get("d")
    return d.count("M") + d.count("L")


class TestParseConfig:
    """Validation of config mappings."""

    def test_valid(self):
        config = parse_config(_base())
        assert config.tau_values == (0.0, 20.0)
        assert config.game_spec == GameSpec("random_static", (2, 3), seed=3)
        assert config.eta == "auto"
        assert config.step_size(0.0) == 0.1
        assert config.step_size(20.0) == "auto"
        assert config.initial_kind == "random"
        assert config.initial_seed == 5
        assert config.emit_svg is False

    @pytest.mark.parametrize("data", [
        ["not", "a", "mapping"],
        _base(colour="red"),
        _base(version=2),
        {k: v for k, v in _base().items() if k != "version"},
        _base(game=None),
        _base(game={"kind": "random_static", "action_sizes": [1, 3]}),
        _base(game={"kind": "random_static", "action_sizes": [2, 3], "speed": 1}),
        _base(game={"path": "g.txt", "seed": 1}),
        _base(tau_values=[]),
        _base(tau_values=[-1.0]),
        _base(tau_values=["big"]),
        _base(eta=0),
        _base(eta="fast"),
        _base(eta_per_tau=[0.1]),
        _base(max_iters=0),
        _base(max_iters=True),
        _base(initial_policy={"kind": "greedy"}),
        _base(initial_policy={"kind": "random", "seed": -1}),
        _base(initial_policy={"kind": "random", "seed": 1, "noise": 2}),
    ])
    def test_rejects(self, data):
        with pytest.raises(ConfigError):
            parse_config(data)

    def test_relative_game_path(self, tmp_path):
        config = parse_config(_base(game={"path": "games/g.txt"}), base_dir=tmp_path)
        assert config.game_path == str(tmp_path / "games" / "g.txt")
        assert config.game_spec is None

    def test_uniform_initial_by_default(self):
        data = _base()
        del data["initial_policy"]
        config = parse_config(data)
        assert config.initial_kind == "uniform"
        assert config.initial_seed is None


class TestLoadConfig:
    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config(tmp_path / "absent.yaml")

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.yaml"
        path.write_text("")
        with pytest.raises(ConfigError, match="empty"):
            load_config(path)

    def test_bad_yaml(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("version: [1\n")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_loads(self, write_config):
        config = load_config(write_config())
        assert config.max_iters == 50

    def test_shipped_configs_parse(self):
        configs = Path(__file__).parent.parent / "configs"
        for name in ("random_static.yaml", "ring.yaml", "markov.yaml"):
            config = load_config(configs / name)
            assert config.game_spec is not None


class TestOverrides:
    def test_flags_take_precedence(self):
        config = apply_overrides(parse_config(_base()), out="elsewhere", seed=9, tau="0.5,1",
                                 eta="0.02", iters=7, svg=True)
        assert config.output_dir == "elsewhere"
        assert config.game_spec.seed == 9
        assert config.tau_values == (0.5, 1.0)
        assert config.eta == 0.02
        assert config.max_iters == 7
        assert config.emit_svg is True

    def test_no_flags_is_identity(self):
        config = parse_config(_base())
        assert apply_overrides(config) is config

    @pytest.mark.parametrize("kwargs", [
        {"tau": "a,b"},
        {"tau": "-1"},
        {"eta": "fast"},
        {"eta": "-0.1"},
        {"iters": 0},
    ])
    def test_rejects(self, kwargs):
        with pytest.raises(ConfigError):
            apply_overrides(parse_config(_base()), **kwargs)

    def test_seed_needs_generated_game(self):
        config = parse_config(_base(game={"path": "g.txt"}))
        with pytest.raises(ConfigError):
            apply_overrides(config, seed=3)


class TestHashAndOutput:
    def test_hash_is_stable_and_short(self):
        first = config_hash(parse_config(_base()))
        assert first == config_hash(parse_config(_base()))
        assert len(first) == 16

    def test_hash_ignores_output_and_plotting(self):
        plain = parse_config(_base())
        assert config_hash(plain) == config_hash(parse_config(_base(output_dir="x", emit_svg=True)))

    def test_hash_tracks_parameters(self):
        assert config_hash(parse_config(_base())) != config_hash(parse_config(_base(tau_values=[0, 21])))

    def test_output_dir_precedence(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        monkeypatch.delenv("QRENPG_OUTPUT_DIR", raising=False)
        config = parse_config(_base())
        assert resolve_output_dir(config) == tmp_path / "qrenpg-results" / config_hash(config)
        monkeypatch.setenv("QRENPG_OUTPUT_DIR", str(tmp_path / "env"))
        assert resolve_output_dir(config) == tmp_path / "env"
        assert resolve_output_dir(apply_overrides(config, out=tmp_path / "flag")) == tmp_path / "flag"


class TestResolveParams:
    def test_auto_and_listed_rates(self):
        config = parse_config(_base())
        game = build_game(config.game_spec)
        params = resolve_params(game, config, 100)
        assert [p.eta for p in params] == [0.1, pytest.approx(0.05)]
        assert all(p.max_iters == 50 for p in params)

    def test_illegal_auto_names_tau(self):
        config = parse_config(_base(eta_per_tau={}))
        with pytest.raises(ConfigError, match="tau=0.0"):
            resolve_params(build_game(config.game_spec), config, 100)

    def test_rejects_eta_tau_above_one(self):
        config = parse_config(_base(eta=0.5, eta_per_tau={}, tau_values=[4]))
        with pytest.raises(ConfigError, match="tau=4.0"):
            resolve_params(build_game(config.game_spec), config, 100)

    def test_default_iterations(self):
        data = _base()
        del data["max_iters"]
        config = parse_config(data)
        params = resolve_params(build_game(config.game_spec), config, 123)
        assert all(p.max_iters == 123 for p in params)


class TestGameFiles:
    """write_game_file / read_game_file."""

    def test_dense_round_trip(self, tmp_path, static_game, static_spec):
        game, spec = read_game_file(write_game_file(static_game, tmp_path / "g.txt", static_spec))
        assert spec == static_spec
        assert game.reward_range == static_game.reward_range
        for a, b in zip(game.rewards, static_game.rewards):
            np.testing.assert_array_equal(a, b)

    def test_polymatrix_round_trip(self, tmp_path, ring_game):
        game, spec = read_game_file(write_game_file(ring_game, tmp_path / "g.txt"))
        assert spec is None
        assert game.edges == ring_game.edges
        for a, b in zip(game.matrices, ring_game.matrices):
            np.testing.assert_array_equal(a, b)

    def test_markov_round_trip(self, tmp_path, markov_game):
        game, _ = read_game_file(write_game_file(markov_game, tmp_path / "g.txt"))
        assert isinstance(game, MarkovGame)
        assert game.gamma == markov_game.gamma
        np.testing.assert_array_equal(game.kernel, markov_game.kernel)
        np.testing.assert_array_equal(game.rewards[2], markov_game.rewards[2])
        np.testing.assert_array_equal(game.initial_dist, markov_game.initial_dist)
        assert game.reward_range == markov_game.reward_range == (0.0, 1.0)

    def test_markov_declared_range_is_validated_on_read(self, tmp_path, markov_game):
        path = write_game_file(markov_game, tmp_path / "g.txt")
        text = path.read_text()
        assert "reward_range: [0.0, 1.0]" in text
        path.write_text(text.replace("reward_range: [0.0, 1.0]", "reward_range: [0.0, 0.5]"))
        with pytest.raises(GameFileError, match="declared range"):
            read_game_file(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(GameFileError):
            read_game_file(tmp_path / "absent.txt")

    def test_missing_separator(self, tmp_path):
        path = tmp_path / "g.txt"
        path.write_text("format: qrenpg-game\nversion: 1\n")
        with pytest.raises(GameFileError, match="separator"):
            read_game_file(path)

    def test_wrong_format(self, tmp_path):
        path = tmp_path / "g.txt"
        path.write_text("format: other\nversion: 1\n--- values\n")
        with pytest.raises(GameFileError):
            read_game_file(path)

    def test_block_size_mismatch(self, tmp_path, pennies):
        path = write_game_file(pennies, tmp_path / "g.txt")
        text = path.read_text().replace("@ reward/1 2 2", "@ reward/1 2 3")
        path.write_text(text)
        with pytest.raises(GameFileError, match="reward/1"):
            read_game_file(path)

    def test_bad_number(self, tmp_path, pennies):
        path = write_game_file(pennies, tmp_path / "g.txt")
        lines = path.read_text().splitlines()
        lines[-1] = "0.0 zero"
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(GameFileError):
            read_game_file(path)

    def test_unknown_representation(self, tmp_path, pennies):
        path = write_game_file(pennies, tmp_path / "g.txt")
        path.write_text(path.read_text().replace("representation: dense", "representation: sparse"))
        with pytest.raises(GameFileError, match="sparse"):
            read_game_file(path)


class TestTraces:
    def test_round_trip(self, tmp_path, pennies):
        initial = PolicyProfile((np.array([0.7, 0.3]), np.array([0.4, 0.6])))
        trajectory = run(pennies, initial, DynamicsParams(0.0, 0.1, max_iters=5))
        metadata = {"tau": 0.0, "eta": 0.1, "game": {"kind": "pennies"}}
        path = write_trace(tmp_path / trace_filename(0.0), metadata, trajectory.records, STATIC_COLUMNS)
        assert path.name == "trace_tau_0.0.csv"
        read_metadata, frame = read_trace(path)
        assert read_metadata == metadata
        assert list(frame.columns) == list(STATIC_COLUMNS)
        assert frame["iter"].tolist() == [0, 1, 2, 3, 4, 5]
        assert frame["bound"].isna().all()
        np.testing.assert_allclose(frame["ne_gap"].to_numpy(), trajectory.column("ne_gap"), rtol=1e-12)

    def test_trace_filename_keeps_precision(self):
        assert trace_filename(0.001) == "trace_tau_0.001.csv"
        assert trace_filename(48) == "trace_tau_48.0.csv"

    def test_unreadable_trace(self, tmp_path):
        with pytest.raises(ConfigError):
            read_trace(tmp_path / "absent.csv")


class TestSvg:
    def test_two_points_make_two_vertices(self, tmp_path):
        path = emit_svg([("a", [0, 1], [1.0, 0.1])], tmp_path / "a.svg", "qre_gap")
        assert _trace_vertices(path) == 2

    def test_nan_rows_dropped_and_zero_clipped(self, tmp_path):
        path = emit_svg([("a", [0, 1, 2], [1.0, np.nan, 0.0]), ("b", [0, 1], [0.5, 0.25])],
                        tmp_path / "a.svg", "qre_gap")
        assert _trace_vertices(path, 0) == 2
        assert _trace_vertices(path, 1) == 2

    def test_deterministic_bytes(self, tmp_path):
        traces = [("tau=0.1", [0, 1, 2], [1.0, 0.5, 0.25])]
        first = emit_svg(traces, tmp_path / "a.svg", "qre_gap")
        second = emit_svg(traces, tmp_path / "b.svg", "qre_gap")
        assert first.read_bytes() == second.read_bytes()

    def test_empty_input(self, tmp_path):
        with pytest.raises(ParameterError):
            emit_svg([], tmp_path / "a.svg", "qre_gap")

    def test_all_nan_series(self, tmp_path):
        with pytest.raises(ParameterError):
            emit_svg([("a", [0, 1], [np.nan, np.nan])], tmp_path / "a.svg", "qre_gap")


class TestCommands:
    """Result dicts of the cmd_* entry points."""

    def test_generate(self, tmp_path):
        result = cmd_generate({"kind": "random_markov", "action_sizes": [2, 2], "num_states": 2, "seed": 1},
                              tmp_path / "g.txt")
        assert result["success"] is True
        assert result["num_states"] == 2
        game, spec = read_game_file(result["path"])
        assert spec.kind == "random_markov"

    def test_generate_rejects_spec(self, tmp_path):
        result = cmd_generate({"kind": "random_static", "action_sizes": [1]}, tmp_path / "g.txt")
        assert result["success"] is False
        assert result["error_type"] == "parameter"

    def test_run_writes_outputs(self, tmp_path):
        config = parse_config(_base(output_dir=str(tmp_path / "out"), emit_svg=True))
        result = cmd_run(config)
        assert result["success"] is True, result
        out = tmp_path / "out"
        assert (out / "game.txt").exists()
        assert (out / "config.yaml").exists()
        assert sorted(p.name for p in out.glob("trace_tau_*.csv")) == ["trace_tau_0.0.csv", "trace_tau_20.0.csv"]
        assert [Path(p).name for p in result["svg"]] == ["qre_gap.svg", "ne_gap.svg"]
        assert result["config_hash"] == config_hash(config)
        metadata, frame = read_trace(out / "trace_tau_20.0.csv")
        assert metadata["tau"] == 20.0
        assert metadata["eta"] == pytest.approx(0.05)
        assert metadata["kind"] == "static"
        assert metadata["config_version"] == 1
        assert frame["qre_gap"].iloc[-1] < 1e-10
        assert (frame["qre_gap"] <= frame["bound"] + 1e-10).all()

    def test_resolved_config_reloads(self, tmp_path):
        config = parse_config(_base(output_dir=str(tmp_path / "out")))
        cmd_run(config)
        reloaded = parse_config(yaml.safe_load((tmp_path / "out" / "config.yaml").read_text()))
        assert config_hash(reloaded) == config_hash(config)

    def test_run_from_game_file(self, tmp_path, pennies):
        write_game_file(pennies, tmp_path / "pennies.txt")
        config = parse_config(_base(game={"path": "pennies.txt"}, tau_values=[1.0], eta=0.5, eta_per_tau={},
                                    output_dir=str(tmp_path / "out")), base_dir=tmp_path)
        result = cmd_run(config)
        assert result["success"] is True, result
        assert result["traces"][0]["final_qre_gap"] < 1e-6

    def test_run_rejects_markov_game(self, tmp_path):
        config = parse_config(_base(game={"kind": "random_markov", "action_sizes": [2, 2], "num_states": 2},
                                    output_dir=str(tmp_path / "out")))
        result = cmd_run(config)
        assert result["success"] is False
        assert "run-markov" in result["error"]

    def test_run_reports_illegal_rate(self, tmp_path):
        config = parse_config(_base(eta_per_tau={}, output_dir=str(tmp_path / "out")))
        result = cmd_run(config)
        assert result["success"] is False
        assert result["error_type"] == "config"
        assert not (tmp_path / "out").exists()

    def test_run_reports_numeric_failure(self, tmp_path, mocker):
        mocker.patch("qrenpg_experiment.run", side_effect=NumericError("overflow", iteration=3, tau=0.0))
        result = cmd_run(parse_config(_base(output_dir=str(tmp_path / "out"))))
        assert result["success"] is False
        assert result["error_type"] == "numeric"
        assert "iteration=3" in result["error"]

    def test_run_markov(self, tmp_path):
        config = parse_config(_base(
            game={"kind": "random_markov", "action_sizes": [2, 2], "num_states": 3, "seed": 1},
            tau_values=[0.1], eta=0.01, eta_per_tau={}, max_iters=5, soft_advantage=True,
            output_dir=str(tmp_path / "out"), emit_svg=True,
        ))
        result = cmd_run_markov(config)
        assert result["success"] is True, result
        metadata, frame = read_trace(result["traces"][0]["path"])
        assert list(frame.columns) == list(MARKOV_COLUMNS)
        assert len(frame) == 6
        assert metadata["gamma"] == 0.95
        assert metadata["rho"] == "uniform"
        assert metadata["soft_advantage"] is True
        assert metadata["config_version"] == 1
        assert [Path(p).name for p in result["svg"]] == ["markov_qre_gap.svg"]

    def test_run_markov_on_static_game_matches_run(self, tmp_path):
        data = _base(tau_values=[0.5], eta=0.2, eta_per_tau={}, max_iters=20, stop_gap=0.0)
        static = cmd_run(parse_config(dict(data, output_dir=str(tmp_path / "static"))))
        markov = cmd_run_markov(parse_config(dict(data, output_dir=str(tmp_path / "markov"))))
        _, static_frame = read_trace(static["traces"][0]["path"])
        markov_metadata, markov_frame = read_trace(markov["traces"][0]["path"])
        assert markov_metadata["gamma"] == 0.0
        np.testing.assert_allclose(markov_frame["markov_qre_gap"], static_frame["qre_gap"], atol=1e-10)

    def test_plot(self, tmp_path):
        config = parse_config(_base(output_dir=str(tmp_path / "out")))
        run_result = cmd_run(config)
        paths = [t["path"] for t in run_result["traces"]]
        result = cmd_plot(paths, tmp_path / "plot.svg", "ne_gap")
        assert result["success"] is True
        assert result["traces"] == 2
        assert (tmp_path / "plot.svg").exists()

    def test_plot_unknown_column(self, tmp_path):
        config = parse_config(_base(output_dir=str(tmp_path / "out")))
        paths = [t["path"] for t in cmd_run(config)["traces"]]
        result = cmd_plot(paths, tmp_path / "plot.svg", "regret")
        assert result["success"] is False
        assert result["error_type"] == "config"


def _shipped(name):
    config = load_config(Path(__file__).parent.parent / "configs" / name)
    game = build_game(config.game_spec)
    return config, game


def _log_slope(trajectory, start=100, stop=1000, floor=1e-11):
    """Least-squares slope of log qre_gap against iter, above the round-off floor."""
    iters, gaps = trajectory.column("iter"), trajectory.column("qre_gap")
    live = gaps > floor
    window = live & (iters >= start) & (iters <= stop)
    if window.sum() < 2:
        window = live
    return np.polyfit(iters[window], np.log(gaps[window]), 1)[0]


@pytest.mark.slow
class TestShippedConfigs:
    """The reference configs reproduce the expected qualitative behavior."""

    def test_random_static_rates(self):
        config, game = _shipped("random_static.yaml")
        initial = random_profile(game.action_sizes, config.initial_seed)
        params = {p.tau: p for p in resolve_params(game, config, config.max_iters)}
        unregularized = run(game, initial, params[0.0])
        assert len(unregularized.records) == config.max_iters + 1
        assert unregularized.column("qre_gap").min() > 1e-3

        converged = {tau: run(game, initial, params[tau]) for tau in (0.1, 1.0, 48.0)}
        assert converged[0.1].column("qre_gap").min() < 1e-6
        for trajectory in converged.values():
            assert trajectory.records[-1].qre_gap < 1e-10
        slopes = [_log_slope(converged[tau]) for tau in (0.1, 1.0, 48.0)]
        assert slopes[0] < 0
        assert slopes[1] < slopes[0]
        assert slopes[2] < slopes[1]

    def test_ring_ne_gap_below_large_tau_plateau(self):
        config, game = _shipped("ring.yaml")
        initial = random_profile(game.action_sizes, config.initial_seed)
        params = {p.tau: p for p in resolve_params(game, config, config.max_iters)}
        final = {tau: run(game, initial, params[tau]).records[-1].ne_gap for tau in (0.1, 1.0, 200.0)}
        assert final[0.1] < final[200.0]
        assert final[1.0] < final[200.0]

    def test_markov_largest_tau_decays_monotonically(self):
        config, game = _shipped("markov.yaml")
        initial = random_state_profile(game.action_sizes, game.num_states, config.initial_seed)
        tau = max(config.tau_values)
        params = DynamicsParams(tau, config.step_size(tau), max_iters=300, stop_gap=config.stop_gap)
        gaps = run_markov(game, initial, params, config.soft_advantage).column("markov_qre_gap")
        assert np.all(np.diff(gaps) <= 1e-12)
        assert gaps[-1] < 1e-9
