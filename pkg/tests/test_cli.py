"""
Tests for the command-line interface.
"""

import json

import pytest

from harness.cli import dispatch
from harness.config import RunConfig

G1 = "s3 g6 s6 g0 s0 s6 s3"
G2 = "s3 g6 s6 g5 s5 g6 s6 g0 s0 s6 s5 s6 s3"


@pytest.fixture
def trained_run(tmp_path, capsys):
    out = tmp_path / "runs"
    code = dispatch(["train", "--env", "corridor", "--system", "h-dqn", "--seed", "0",
                     "--episodes", "3", "--out-dir", str(out)])
    capsys.readouterr()
    assert code == 0
    config = RunConfig(env="corridor", system="h-dqn", seed=0, episodes=3)
    return out / config.run_dir_name()


class TestGrammarCommands:
    """Test derive, validate-grammar and extract-grammar."""

    @pytest.mark.parametrize("name, expected", [("g1.csg", G1), ("g2.csg", G2)])
    def test_derive_examples(self, grammar_dir, capsys, name, expected):
        """Test the example grammars derive their documented strings."""
        assert dispatch(["derive", "--grammar", str(grammar_dir / name)]) == 0
        assert capsys.readouterr().out.strip() == expected

    def test_derive_budget(self, grammar_dir, capsys):
        """Test a derivation that runs out of steps exits 1 with a message."""
        assert dispatch(["derive", "--grammar", str(grammar_dir / "g2.csg"), "--max-steps", "3"]) == 1
        captured = capsys.readouterr()
        assert captured.out == ""
        assert captured.err

    def test_validate_valid(self, grammar_dir, capsys):
        """Test a valid grammar exits 0."""
        assert dispatch(["validate-grammar", "--grammar", str(grammar_dir / "g2.csg")]) == 0
        assert capsys.readouterr().out.startswith("valid k-recurrent grammar")

    def test_validate_invalid(self, grammar_dir, tmp_path, capsys):
        """Test a second meta rule for a state exits 1 and lists the violation."""
        text = (grammar_dir / "g1.csg").read_text(encoding="utf-8") + "s3 <META> -> s3 g5 <ACT> s3\n"
        path = tmp_path / "broken.csg"
        path.write_text(text, encoding="utf-8")
        assert dispatch(["validate-grammar", "--grammar", str(path)]) == 1
        assert capsys.readouterr().out.startswith("invalid constrained grammar")

    def test_missing_grammar_file(self, tmp_path, capsys):
        """Test an unreadable grammar file is a domain error."""
        assert dispatch(["derive", "--grammar", str(tmp_path / "absent.csg")]) == 1
        assert "error:" in capsys.readouterr().err

    def test_extract_policy_file(self, grammar_dir, tmp_path, capsys):
        """Test the two-state-memory corridor policy yields a grammar deriving the recurrent string."""
        output = tmp_path / "extracted.csg"
        assert dispatch(["extract-grammar", "--policy", str(grammar_dir / "policy_example2.json"),
                         "--output", str(output)]) == 0
        assert dispatch(["derive", "--grammar", str(output)]) == 0
        assert capsys.readouterr().out.strip() == G2

    def test_extract_needs_one_source(self, capsys):
        """Test --policy and --run-dir are mutually exclusive."""
        assert dispatch(["extract-grammar", "--policy", "a.json", "--run-dir", "runs/x"]) == 2
        capsys.readouterr()


class TestCheckHfFeasible:
    """Test the HF-feasibility check."""

    def test_witness(self, capsys):
        """Test the recurrent corridor trajectory reports s6 with g5 and g0."""
        assert dispatch(["check-hf-feasible", "--trajectory", "s3 g6 s6 g5 s5 g6 s6 g0 s0"]) == 0
        assert capsys.readouterr().out.strip() == "(s6, g5, g0)"

    def test_feasible(self, capsys):
        """Test a trajectory with one goal per state prints none."""
        assert dispatch(["check-hf-feasible", "--trajectory", "s3 g6 s6 g0 s0", "--terminal", "s0"]) == 0
        assert capsys.readouterr().out.strip() == "none"

    def test_malformed(self, capsys):
        """Test an even-length trajectory exits 1."""
        assert dispatch(["check-hf-feasible", "--trajectory", "s3 g6"]) == 1
        assert "error:" in capsys.readouterr().err


class TestUsage:
    """Test usage errors."""

    def test_unknown_flag(self, capsys):
        """Test an unknown flag exits 2."""
        assert dispatch(["derive", "--grammar", "g.csg", "--fast"]) == 2
        capsys.readouterr()

    def test_missing_command(self, capsys):
        """Test a missing subcommand exits 2."""
        assert dispatch([]) == 2
        capsys.readouterr()

    def test_unknown_environment(self, capsys):
        """Test an environment outside the choices exits 2."""
        assert dispatch(["train", "--env", "maze"]) == 2
        capsys.readouterr()

    def test_config_with_unknown_key(self, tmp_path, capsys):
        """Test a config file key outside the hyperparameters exits 1."""
        path = tmp_path / "config.json"
        path.write_text(json.dumps({"momentum": 0.9}))
        assert dispatch(["train", "--config", str(path), "--episodes", "1",
                         "--out-dir", str(tmp_path / "runs")]) == 1
        assert "momentum" in capsys.readouterr().err


class TestRunCommands:
    """Test train, verify-theory and extract-grammar on a run directory."""

    def test_train_prints_summary(self, tmp_path, capsys):
        """Test train writes the run directory and prints the summary."""
        out = tmp_path / "runs"
        assert dispatch(["train", "--system", "h-reinforce", "--episodes", "2",
                         "--out-dir", str(out)]) == 0
        printed = capsys.readouterr().out
        assert "corridor.h-reinforce.runs_completed=1" in printed
        assert (out / "summary.txt").exists()

    def test_verify_theory(self, trained_run, capsys):
        """Test verify-theory prints a JSON report for the run."""
        assert dispatch(["verify-theory", "--run-dir", str(trained_run)]) == 0
        report = json.loads(capsys.readouterr().out)
        assert report["system"] == "h-dqn"
        assert report["env"] == "corridor"
        assert report["witness"] is None
        assert report["results_digest"]["included"] is True
        assert report["results_digest"]["file"] == f"{trained_run.name}/checkpoint.json"

    def test_verify_theory_detects_changed_results(self, trained_run, capsys):
        """Test verify-theory exits 1 once a file covered by the results digest was edited."""
        with open(trained_run / "episodes.csv", "a", encoding="utf-8") as handle:
            handle.write("99,0.0,1,0\n")
        assert dispatch(["verify-theory", "--run-dir", str(trained_run)]) == 1
        digest = json.loads(capsys.readouterr().out)["results_digest"]
        assert digest["included"] is False
        assert digest["recomputed_root"] != digest["results_digest"]

    def test_extract_from_run(self, trained_run, capsys):
        """Test a memoryless run extracts to a constrained grammar."""
        assert dispatch(["extract-grammar", "--run-dir", str(trained_run)]) == 0
        assert "%kind constrained" in capsys.readouterr().out

    def test_missing_run_dir(self, tmp_path, capsys):
        """Test a run directory without config.json exits 1."""
        assert dispatch(["verify-theory", "--run-dir", str(tmp_path)]) == 1
        capsys.readouterr()
