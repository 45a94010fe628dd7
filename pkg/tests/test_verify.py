"""
Tests for qrenpg_verify.py

Tests cover:
- Every property suite passes on a few seeds
- The cmd_verify report, its error types and parallel execution
- A deliberately broken update step is caught
"""

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent.parent / "tools"))

import qrenpg_dynamics  # noqa: E402
from qrenpg_verify import SUITES, Tally, cmd_verify, run_suite  # noqa: E402


class TestTally:
    def test_counts(self):
        tally = Tally("demo")
        assert tally.check(1.0, 1.0)
        assert tally.check(1.0 + 1e-13, 1.0, 1e-12)
        assert not tally.check(2.0, 1.0, 0.5, "too big")
        report = tally.as_dict()
        assert report["checks"] == 3
        assert report["violations"] == 1
        assert report["max_excess"] == pytest.approx(0.5)
        assert report["first_failure"].startswith("too big")

    def test_clean_report_has_no_failure_entry(self):
        tally = Tally("demo")
        tally.check(0.0, 1.0)
        assert "first_failure" not in tally.as_dict()


class TestSuites:
    @pytest.mark.parametrize("name", sorted(SUITES))
    def test_suite_passes(self, name):
        tally = run_suite(name, seed_count=3)
        assert tally.checks > 0
        assert tally.violations == 0, tally.first_failure

    @pytest.mark.parametrize("name", ["fisher", "fisher_bridge"])
    def test_fisher_suites_over_many_seeds(self, name):
        tally = run_suite(name, seed_count=25)
        assert tally.violations == 0, tally.first_failure

    def test_base_seed_shifts_instances(self):
        tally = run_suite("gap_nonnegative", seed_count=2, base_seed=1000)
        assert tally.violations == 0

    def test_unknown_suite(self):
        with pytest.raises(KeyError):
            run_suite("nonexistent", seed_count=1)


class TestCmdVerify:
    def test_report(self):
        result = cmd_verify(seed_count=2, suites=["fisher", "product_l1"])
        assert result["success"] is True
        assert result["seed_count"] == 2
        assert set(result["suites"]) == {"fisher", "product_l1"}
        assert all(s["violations"] == 0 for s in result["suites"].values())

    def test_unknown_suite_is_config_error(self):
        result = cmd_verify(seed_count=2, suites=["nonexistent"])
        assert result["success"] is False
        assert result["error_type"] == "config"
        assert "fisher" in result["available"]

    def test_seed_count_must_be_positive(self):
        result = cmd_verify(seed_count=0, suites=["fisher"])
        assert result["error_type"] == "config"

    def test_parallel_report_matches_sequential(self):
        names = ["soft_value_iteration", "fisher", "product_l1", "fisher_bridge"]
        parallel = cmd_verify(seed_count=3, suites=names, workers=2)
        sequential = cmd_verify(seed_count=3, suites=names, workers=1)
        assert list(parallel["suites"]) == names
        assert parallel == sequential

    def test_workers_must_be_positive(self):
        result = cmd_verify(seed_count=2, suites=["fisher"], workers=0)
        assert result["error_type"] == "config"

    def test_broken_step_is_caught(self, mocker):
        """Dropping the regularization from the update breaks the envelope."""
        original = qrenpg_dynamics.npg_step

        def unregularized(game, profile, params, iteration=None, marginals=None):
            broken = qrenpg_dynamics.DynamicsParams(0.0, params.eta, params.max_iters, params.stop_gap)
            return original(game, profile, broken, iteration=iteration, marginals=marginals)

        mocker.patch("qrenpg_dynamics.npg_step", side_effect=unregularized)
        result = cmd_verify(seed_count=2, suites=["convergence_envelope"], workers=1)
        assert result["success"] is False
        assert result["error_type"] == "verification"
        assert result["suites"]["convergence_envelope"]["violations"] > 0
