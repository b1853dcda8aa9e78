"""
Tests for configuration, the episode loop, experiments and the theory bridge.
"""

import csv
import json

import numpy as np
import pytest

from harness.config import ConfigError, RunConfig, build_config, load_config_file
from harness.digest import MerkleTree, digest_directory, leaf_hash, prove_file
from harness.experiment import (
    AGGREGATE_HEADER,
    EPISODE_HEADER,
    EpisodeError,
    aggregate,
    build_components,
    checkpoint_digest_proof,
    handcrafted_policy_baseline,
    load_run,
    moving_average,
    replicate_configs,
    run_episode,
    run_experiment,
    run_single,
)
from harness.run_log import RunEventLog
from harness.theory_bridge import verify_against_theory
from hrl.controllers import OptimalController, make_goals
from hrl.environments import CorridorEnv, GridEnv, StochasticCorridorEnv
from hrl.errors import HRLError
from hrl.meta_controllers import (
    HReinforceMetaController,
    MetaController,
    RhReinforceMetaController,
    ScriptedMetaController,
)

GRID_SCRIPT = ("g1", "g0", "g2", "g0", "g3", "g0", "gτ")


def tiny(**overrides):
    values = {"episodes": 4, "replay_size": 50, "batch_size": 4, "gru_units": 8}
    values.update(overrides)
    return RunConfig(**values)


def scripted_episode(env, script):
    meta = ScriptedMetaController(env.spec, make_goals(env.spec), script)
    return run_episode(None, env, meta, OptimalController(env))


def read_rows(path):
    with open(path, newline="", encoding="utf-8") as handle:
        return list(csv.reader(handle))


class TestRunConfig:
    """Test run configuration."""

    def test_episode_defaults(self):
        """Test per-environment episode budgets."""
        assert RunConfig(env="corridor").resolved_episodes == 10_000
        assert RunConfig(env="stochastic-corridor").resolved_episodes == 10_000
        assert RunConfig(env="grid").resolved_episodes == 20_000

    def test_exploration_defaults(self):
        """Test the random phase applies to REINFORCE systems on the corridor only."""
        assert RunConfig(env="corridor", system="rh-reinforce").resolved_exploration_episodes == 1_000
        assert RunConfig(env="corridor", system="h-reinforce").resolved_exploration_episodes == 1_000
        assert RunConfig(env="corridor", system="h-dqn").resolved_exploration_episodes == 0
        assert RunConfig(env="grid", system="rh-reinforce").resolved_exploration_episodes == 0

    def test_invalid_values(self):
        """Test unknown components and bad budgets are rejected."""
        with pytest.raises(ConfigError):
            RunConfig(env="doom")
        with pytest.raises(ConfigError):
            RunConfig(system="options")
        with pytest.raises(ConfigError):
            RunConfig(episodes=-1)
        with pytest.raises(ConfigError):
            RunConfig(epsilon_start=0.1, epsilon_end=0.5)

    def test_unknown_keys(self):
        """Test from_dict rejects keys it does not know."""
        with pytest.raises(ConfigError):
            RunConfig.from_dict({"env": "corridor", "momentum": 0.9})

    def test_hash_ignores_seed(self):
        """Test seeds of one setting share the hash but not the directory."""
        a, b = RunConfig(seed=0), RunConfig(seed=1)
        assert a.config_hash() == b.config_hash()
        assert a.run_dir_name() != b.run_dir_name()
        assert a.run_dir_name() == f"corridor_rh-reinforce_{a.config_hash()}_seed0"
        assert RunConfig(learning_rate=0.01).config_hash() != a.config_hash()

    def test_precedence(self, tmp_path):
        """Test flags override the file, which overrides defaults."""
        path = tmp_path / "config.json"
        path.write_text(json.dumps({"learning_rate": 0.01, "episodes": 50}))
        config = build_config(load_config_file(path), episodes=7, seed=3)
        assert config.learning_rate == 0.01
        assert config.episodes == 7
        assert config.gru_units == 64

    def test_file_rejects_unknown_keys(self, tmp_path):
        """Test config files may only hold hyperparameters."""
        path = tmp_path / "config.json"
        path.write_text(json.dumps({"seed": 3}))
        with pytest.raises(ConfigError):
            load_config_file(path)

    def test_provenance_record(self):
        """Test the provenance record names the run and carries resolved budgets."""
        record = RunConfig(env="grid").provenance_record()
        assert record["run"].startswith("grid_rh-reinforce_")
        assert record["config"]["episodes"] == 20_000
        assert RunConfig.from_dict(record["config"]).config_hash() == record["config_hash"]


class TestRunLog:
    """Test the in-memory run log."""

    def test_filters_and_statistics(self):
        """Test logs filter by type and summarize episodes."""
        log = RunEventLog("run")
        log.log_run_started({})
        log.log_episode(0, 1.0, 4, False)
        log.log_episode(1, 0.0, 2, True)
        log.log_anomaly("nan", {})
        assert len(log.get_logs("episode")) == 2
        stats = log.get_statistics()
        assert stats["episodes"] == 2
        assert stats["truncated_episodes"] == 1
        assert stats["mean_return"] == 0.5
        assert stats["anomalies"] == 1
        assert "timestamp" not in stats


class TestDigest:
    """Test the Merkle results digest."""

    def test_content_changes_root(self, tmp_path):
        """Test any file change changes the root."""
        (tmp_path / "a.csv").write_text("1")
        (tmp_path / "b.csv").write_text("2")
        before = digest_directory(tmp_path)
        (tmp_path / "b.csv").write_text("3")
        assert digest_directory(tmp_path) != before

    def test_exclusion(self, tmp_path):
        """Test excluded files do not enter the digest."""
        (tmp_path / "a.csv").write_text("1")
        before = digest_directory(tmp_path)
        (tmp_path / "summary.txt").write_text("x")
        assert digest_directory(tmp_path, exclude=("summary.txt",)) == before

    def test_proofs_verify(self, tmp_path):
        """Test every file has a proof leading to the root."""
        for i in range(5):
            (tmp_path / f"f{i}.txt").write_text(str(i))
        for i in range(5):
            leaf, proof, root = prove_file(tmp_path, f"f{i}.txt")
            assert MerkleTree.verify_proof(leaf, proof, root)
        assert not MerkleTree.verify_proof(leaf_hash("f0.txt", b"9"), prove_file(tmp_path, "f0.txt")[1], root)

    def test_empty_directory(self, tmp_path):
        """Test an empty directory has the empty root."""
        assert digest_directory(tmp_path) == MerkleTree.EMPTY_ROOT


class TestRunEpisode:
    """Test the episode loop with scripted goals."""

    def test_optimal_corridor_script(self):
        """Test g6 g5 g6 g0 earns +1 in four decisions."""
        log = scripted_episode(CorridorEnv(), ("g6", "g5", "g6", "g0"))
        assert log.episode_return == 1.0
        assert log.meta_decisions == 4
        assert not log.truncated

    def test_single_visit_script(self):
        """Test g6 g0 earns 0.01."""
        log = scripted_episode(CorridorEnv(), ("g6", "g0"))
        assert log.episode_return == pytest.approx(0.01)

    def test_grid_script(self):
        """Test the landmark tour earns +1 within 60 actions."""
        env = GridEnv()
        log = scripted_episode(env, GRID_SCRIPT)
        assert log.episode_return == 1.0
        assert env.steps_taken == 35

    def test_truncated_episode(self):
        """Test a budget hit mid-goal ends the episode with return 0."""
        log = scripted_episode(CorridorEnv(step_limit=5), ("g6", "g5", "g6", "g0"))
        assert log.truncated
        assert log.episode_return == 0.0

    def test_errors_carry_episode(self):
        """Test component failures are reported with the episode index."""
        env = CorridorEnv()
        meta = ScriptedMetaController(env.spec, make_goals(env.spec), ("g6",))
        with pytest.raises(EpisodeError) as info:
            run_episode(None, env, meta, OptimalController(env), episode=12)
        assert info.value.episode == 12

    def test_return_is_sum_of_decision_rewards(self):
        """Test the learner sees decision rewards that add up to the episode return."""
        env = CorridorEnv()
        seen = []

        class Recording(ScriptedMetaController):
            def end_episode(self, decisions):
                seen.extend(d.reward for d in decisions)

        meta = Recording(env.spec, make_goals(env.spec), ("g6", "g5", "g6", "g0"))
        log = run_episode(None, env, meta, OptimalController(env))
        assert sum(seen) == log.episode_return

    def test_meta_update_leaves_controller_alone(self, monkeypatch):
        """Test the Rh-REINFORCE episode update moves the meta parameters and never the controller's."""
        config = tiny(system="rh-reinforce", controller="learned", step_limit=200)
        env, meta, controller = build_components(config)
        assert isinstance(meta, RhReinforceMetaController)
        assert controller.learns
        updates = []
        meta_end_episode = meta.end_episode

        def snapshot(params):
            return {name: value.copy() for name, value in params.items()}

        def end_episode(decisions):
            controller_before, meta_before = snapshot(controller.params), snapshot(meta.params)
            meta_end_episode(decisions)
            updates.append((controller_before, snapshot(controller.params), meta_before, snapshot(meta.params),
                            sum(d.reward for d in decisions)))

        monkeypatch.setattr(meta, "end_episode", end_episode)
        for episode in range(30):
            run_episode(config, env, meta, controller, episode)
            if updates[-1][4] != 0.0:
                break
        for controller_before, controller_after, _, _, _ in updates:
            assert all(np.array_equal(controller_before[n], controller_after[n]) for n in controller_before)
        _, _, meta_before, meta_after, reward = updates[-1]
        assert reward != 0.0
        assert any(not np.array_equal(meta_before[n], meta_after[n]) for n in meta_before)


class TestBaselines:
    """Test the scripted optimal baseline."""

    def test_deterministic_environments(self):
        """Test the optimal scripts always earn +1 without slips."""
        assert handcrafted_policy_baseline(CorridorEnv(), episodes=3) == 1.0
        assert handcrafted_policy_baseline(GridEnv(), episodes=2) == 1.0

    def test_stochastic_corridor(self):
        """Test slips lower the optimal script's mean return."""
        mean = handcrafted_policy_baseline(StochasticCorridorEnv(), episodes=500, seed=0)
        assert 0.0 < mean < 1.0


class TestMovingAverage:
    """Test the smoothing window."""

    def test_partial_windows(self):
        """Test early entries average only the available episodes."""
        assert np.allclose(moving_average([1.0, 0.0, 1.0, 1.0], window=2), [1.0, 0.5, 0.5, 1.0])

    def test_default_window(self):
        """Test the default window is 100 episodes."""
        values = np.r_[np.zeros(100), np.ones(100)]
        curve = moving_average(values)
        assert curve[99] == 0.0
        assert curve[199] == 1.0
        assert curve[149] == pytest.approx(0.5)

    def test_empty(self):
        """Test no episodes give an empty curve."""
        assert moving_average([]).size == 0


class TestExperiment:
    """Test runs and experiment directories."""

    def test_files_written(self, tmp_path):
        """Test one run writes its files and the experiment writes aggregates and a summary."""
        config = tiny(system="h-reinforce")
        result = run_experiment([config], tmp_path)
        run_dir = tmp_path / config.run_dir_name()
        rows = read_rows(run_dir / "episodes.csv")
        assert tuple(rows[0]) == EPISODE_HEADER
        assert len(rows) == 5
        for name in ("config.json", "checkpoint.json", "theory.json", "run_stats.json"):
            assert (run_dir / name).exists()
        aggregate_rows = read_rows(tmp_path / "aggregate_corridor_h-reinforce.csv")
        assert tuple(aggregate_rows[0]) == AGGREGATE_HEADER
        assert len(aggregate_rows) == 5
        summary = (tmp_path / "summary.txt").read_text()
        assert "corridor.h-reinforce.final_1000_mean=" in summary
        assert f"results_digest={result.digest}" in summary

    def test_reruns_are_identical(self, tmp_path):
        """Test identical seeds reproduce identical files."""
        configs = [tiny(system="h-dqn", seed=s) for s in (0, 1)] + [tiny(system="rh-reinforce")]
        first = run_experiment(configs, tmp_path / "a")
        second = run_experiment(configs, tmp_path / "b")
        assert first.digest == second.digest
        assert (tmp_path / "a" / "summary.txt").read_bytes() == (tmp_path / "b" / "summary.txt").read_bytes()

    def test_workers_match_sequential(self, tmp_path):
        """Test parallel runs produce the same results as sequential ones."""
        configs = [tiny(system="h-reinforce", seed=s) for s in (0, 1)]
        assert run_experiment(configs, tmp_path / "seq").digest == \
            run_experiment(configs, tmp_path / "par", workers=2).digest

    def test_aggregate_ignores_order(self):
        """Test the aggregate curve does not depend on run order."""
        runs = [run_single(tiny(system="h-reinforce", seed=s)) for s in (0, 1, 2)]
        forward = aggregate(runs)[("corridor", "h-reinforce")]
        backward = aggregate(list(reversed(runs)))[("corridor", "h-reinforce")]
        assert np.array_equal(forward.values, backward.values)
        assert forward.seeds == (0, 1, 2)

    def test_zero_episodes(self, tmp_path):
        """Test a zero-episode run leaves header-only CSVs and no checkpoint or theory report."""
        config = tiny(system="h-reinforce", episodes=0)
        result = run_experiment([config], tmp_path)
        run_dir = tmp_path / config.run_dir_name()
        assert len(result.curves[("corridor", "h-reinforce")]) == 0
        assert len(read_rows(run_dir / "episodes.csv")) == 1
        assert (run_dir / "config.json").exists()
        assert not (run_dir / "checkpoint.json").exists()
        assert not (run_dir / "theory.json").exists()
        with pytest.raises(HRLError):
            load_run(run_dir)
        assert len(read_rows(tmp_path / "aggregate_corridor_h-reinforce.csv")) == 1

    def test_checkpoint_digest_proof(self, tmp_path):
        """Test a run checkpoint is proven against the recorded results digest, and nothing without a summary."""
        config = tiny(system="h-reinforce", episodes=2)
        result = run_experiment([config], tmp_path)
        proof = checkpoint_digest_proof(tmp_path / config.run_dir_name())
        assert proof["included"] is True
        assert proof["results_digest"] == result.digest
        (tmp_path / "summary.txt").unlink()
        assert checkpoint_digest_proof(tmp_path / config.run_dir_name()) is None

    def test_aborted_run_is_recorded(self, tmp_path, monkeypatch):
        """Test a failing run is reported while the others are aggregated."""
        import harness.experiment as experiment

        original = experiment.train_run

        def flaky(config, out_dir=None, verify=True):
            if config.seed == 1:
                raise RuntimeError("boom")
            return original(config, out_dir, verify)

        monkeypatch.setattr(experiment, "train_run", flaky)
        result = run_experiment([tiny(system="h-reinforce", seed=s) for s in (0, 1)], tmp_path)
        assert result.summary["runs_aborted"] == "1"
        assert result.summary["corridor.h-reinforce.runs_aborted"] == "1"
        assert result.curves[("corridor", "h-reinforce")].seeds == (0,)

    def test_learned_controller_run(self, tmp_path):
        """Test a run with the actor-critic controller checkpoints both levels."""
        config = tiny(system="h-reinforce", controller="learned", episodes=2)
        run_experiment([config], tmp_path)
        payload = json.loads((tmp_path / config.run_dir_name() / "checkpoint.json").read_text())
        assert any(name.startswith("actor.") for name in payload["tensors"])
        assert any(name.startswith("policy.") for name in payload["tensors"])

    def test_load_run_restores_parameters(self, tmp_path):
        """Test a run directory reloads into the trained parameters."""
        config = tiny(system="rh-reinforce", exploration_episodes=0)
        run_experiment([config], tmp_path)
        loaded_config, _, meta, _ = load_run(tmp_path / config.run_dir_name())
        assert loaded_config.config_hash() == config.config_hash()
        payload = json.loads((tmp_path / config.run_dir_name() / "checkpoint.json").read_text())
        for name, value in meta.params.items():
            assert value.ravel().tolist() == payload["tensors"][name]["data"]

    def test_replicate_grid(self):
        """Test replicate covers environments x systems x seeds."""
        configs = replicate_configs(range(10))
        assert len(configs) == 90
        assert {(c.env, c.system) for c in configs} == {
            (e, s) for e in ("corridor", "stochastic-corridor", "grid")
            for s in ("rh-reinforce", "h-reinforce", "h-dqn")
        }


class PingPong(MetaController):
    system = "ping-pong"
    memory_length = None

    def select_goal(self, state):
        return self.greedy_goal([state.observation])

    def greedy_goal(self, observations):
        return self.goals[5] if observations[-1][6] == 1.0 else self.goals[6]

    @property
    def params(self):
        return {}


class TestTheoryBridge:
    """Test policy extraction, derivation and replay."""

    def test_recurrent_corridor_policy(self):
        """Test the optimal corridor policy is HF-infeasible and earns +1 on replay."""
        env = CorridorEnv()
        meta = ScriptedMetaController(env.spec, make_goals(env.spec), ("g6", "g5", "g6", "g0"))
        report = verify_against_theory(meta, env)
        assert report.status == "completed"
        assert report.k == 1
        assert report.trajectory == "s3 g6 s6 g5 s5 g6 s6 g0 s0"
        assert report.replay_reward == 1.0
        assert report.replay.consistent
        assert report.witness.as_tuple() == ("s6", "g5", "g0")

    def test_explicit_k(self):
        """Test a longer memory keeps the same trajectory."""
        env = CorridorEnv()
        meta = ScriptedMetaController(env.spec, make_goals(env.spec), ("g6", "g5", "g6", "g0"))
        report = verify_against_theory(meta, env, k=2)
        assert report.k == 2
        assert report.derived == "s3 g6 s6 g5 s5 g6 s6 g0 s0 s6 s5 s6 s3"

    def test_too_short_k_is_reported(self):
        """Test a memory too short for the policy is reported, not raised."""
        env = CorridorEnv()
        meta = ScriptedMetaController(env.spec, make_goals(env.spec), ("g6", "g5", "g6", "g0"))
        report = verify_against_theory(meta, env, k=0)
        assert report.status == "memory_conflict"

    def test_grid_tour(self):
        """Test the grid tour pairs the start cell with several goals."""
        env = GridEnv()
        report = verify_against_theory(ScriptedMetaController(env.spec, make_goals(env.spec), GRID_SCRIPT), env)
        assert report.replay_reward == 1.0
        assert report.witness.state == "s00"
        assert report.trajectory.startswith("s00 g1 s04 g0 s00 g2")

    def test_feedforward_has_no_witness(self):
        """Test a memoryless controller's extracted trajectory is never HF-infeasible."""
        env = CorridorEnv()
        for seed in range(5):
            meta = HReinforceMetaController(env.spec, make_goals(env.spec), np.random.default_rng(seed))
            report = verify_against_theory(meta, env)
            assert report.k == 0
            assert report.witness is None
            assert not report.to_dict()["hf_infeasible"]

    def test_looping_policy(self):
        """Test a policy that never terminates is reported as looping."""
        env = CorridorEnv()
        report = verify_against_theory(PingPong(env.spec, make_goals(env.spec)), env)
        assert report.status == "looping_policy"
        assert report.trajectory is None

    def test_stochastic_uses_deterministic_model(self):
        """Test the stochastic corridor is verified on its intended transitions."""
        env = StochasticCorridorEnv(seed=0)
        meta = ScriptedMetaController(env.spec, make_goals(env.spec), ("g6", "g5", "g6", "g0"))
        report = verify_against_theory(meta, env)
        assert report.replay_reward == 1.0
        assert report.env == "stochastic-corridor"

    def test_report_is_json(self):
        """Test the report serializes to JSON."""
        env = CorridorEnv()
        meta = ScriptedMetaController(env.spec, make_goals(env.spec), ("g6", "g0"))
        data = json.loads(json.dumps(verify_against_theory(meta, env).to_dict()))
        assert data["witness"] is None
        assert data["trajectory"] == "s3 g6 s6 g0 s0"
        assert data["replay_reward"] == 0.01
