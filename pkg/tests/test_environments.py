"""
Tests for the tabular environments.
"""

import numpy as np
import pytest

from hrl.environments import (
    CORRIDOR_STEP_LIMIT,
    GRID_STEP_LIMIT,
    CorridorEnv,
    GridEnv,
    Move,
    StochasticCorridorEnv,
    grid_reward_condition,
    make_environment,
    random_policy_baseline,
)
from hrl.errors import EnvironmentUsageError


def walk(env, moves):
    outcome = None
    for move in moves:
        outcome = env.step(move)
    return outcome


class TestCorridor:
    """Test the deterministic corridor."""

    def test_reset_observation(self):
        """Test reset places the agent at s3 with a one-hot observation over all seven states."""
        env = CorridorEnv()
        state = env.reset()
        assert state.id == "s3"
        assert state.observation.shape == (7,)
        assert state.observation[3] == 1.0
        assert state.observation.sum() == 1.0

    def test_right_at_end_is_noop(self):
        """Test moving right at s6 stays at s6."""
        env = CorridorEnv()
        env.reset()
        outcome = walk(env, [Move.RIGHT] * 4)
        assert outcome.next_state.id == "s6"

    def test_two_visits_pay_one(self):
        """Test two s5->s6 arrivals followed by reaching s0 pays +1."""
        env = CorridorEnv()
        env.reset()
        outcome = walk(env, [Move.RIGHT] * 3 + [Move.LEFT, Move.RIGHT] + [Move.LEFT] * 6)
        assert outcome.done and not outcome.truncated
        assert outcome.reward == 1.0
        assert env.visits == 2

    def test_one_visit_pays_small_reward(self):
        """Test a single visit to s6 earns 0.01."""
        env = CorridorEnv()
        env.reset()
        outcome = walk(env, [Move.RIGHT] * 3 + [Move.LEFT] * 6)
        assert outcome.reward == pytest.approx(0.01)

    def test_task_one_needs_single_visit(self):
        """Test required_visits=1 pays +1 after one visit."""
        env = CorridorEnv(required_visits=1)
        env.reset()
        outcome = walk(env, [Move.RIGHT] * 3 + [Move.LEFT] * 6)
        assert outcome.reward == 1.0

    def test_truncation(self):
        """Test the episode is truncated with reward 0 after the step limit."""
        env = CorridorEnv()
        env.reset()
        outcome = walk(env, [Move.RIGHT, Move.LEFT] * (CORRIDOR_STEP_LIMIT // 2))
        assert outcome.truncated and outcome.done
        assert outcome.reward == 0.0
        assert env.steps_taken == CORRIDOR_STEP_LIMIT

    def test_step_after_done_raises(self):
        """Test stepping a finished episode is a usage error."""
        env = CorridorEnv()
        env.reset()
        walk(env, [Move.LEFT] * 3)
        assert env.done
        with pytest.raises(EnvironmentUsageError):
            env.step(Move.LEFT)

    def test_step_before_reset_raises(self):
        """Test stepping before reset is a usage error."""
        with pytest.raises(EnvironmentUsageError):
            CorridorEnv().step(Move.LEFT)

    def test_grid_action_rejected(self):
        """Test the corridor rejects Up."""
        env = CorridorEnv()
        env.reset()
        with pytest.raises(EnvironmentUsageError):
            env.step(Move.UP)

    def test_custom_step_limit(self):
        """Test a step_limit override changes the truncation point."""
        env = make_environment("corridor", step_limit=4)
        env.reset()
        outcome = walk(env, [Move.RIGHT, Move.LEFT] * 2)
        assert outcome.truncated


class TestStochasticCorridor:
    """Test the stochastic corridor."""

    def test_right_is_fair_coin(self):
        """Test Right succeeds about half the time."""
        env = StochasticCorridorEnv(seed=7)
        successes = 0
        trials = 4000
        for _ in range(trials):
            env.reset()
            successes += env.step(Move.RIGHT).next_state.id == "s4"
        assert abs(successes / trials - 0.5) < 0.03

    def test_left_is_deterministic(self):
        """Test Left always moves left."""
        env = StochasticCorridorEnv(seed=1)
        for _ in range(50):
            env.reset()
            assert env.step(Move.LEFT).next_state.id == "s2"

    def test_same_seed_same_episode(self):
        """Test identical seeds give identical transitions."""
        first, second = StochasticCorridorEnv(seed=3), StochasticCorridorEnv(seed=3)
        first.reset()
        second.reset()
        for _ in range(10):
            a, b = first.step(Move.RIGHT), second.step(Move.RIGHT)
            assert a.next_state.id == b.next_state.id
            if a.done:
                break

    def test_deterministic_model(self):
        """Test the deterministic model of the stochastic corridor never slips."""
        model = StochasticCorridorEnv(seed=0).deterministic_model()
        model.reset()
        assert walk(model, [Move.RIGHT] * 3).next_state.id == "s6"

    def test_random_baseline(self):
        """Test uniformly random actions earn close to 0.031 when the budget does not bind."""
        mean = random_policy_baseline(StochasticCorridorEnv(step_limit=200), 20_000, seed=11)
        assert mean == pytest.approx(0.031, abs=0.02)

    def test_random_baseline_is_reproducible(self):
        """Test the baseline is a pure function of the seed."""
        first = random_policy_baseline(StochasticCorridorEnv(), 500, seed=4)
        second = random_policy_baseline(StochasticCorridorEnv(), 500, seed=4)
        assert first == second

    def test_random_baseline_rejects_zero_episodes(self):
        """Test at least one episode is required."""
        with pytest.raises(ValueError):
            random_policy_baseline(StochasticCorridorEnv(), 0)


class TestGrid:
    """Test the 5x5 grid."""

    def test_layout(self):
        """Test the grid has 25 cells plus the terminal and starts top-left."""
        env = GridEnv()
        assert len(env.spec.states) == 26
        assert env.reset().id == "s00"
        assert env.spec.goal_targets == {"g0": "s00", "g1": "s04", "g2": "s40", "g3": "s44", "gτ": "τ"}

    def test_walls_are_noops(self):
        """Test moves into walls leave the agent in place."""
        env = GridEnv()
        env.reset()
        assert env.step(Move.UP).next_state.id == "s00"
        assert env.step(Move.LEFT).next_state.id == "s00"

    def test_exit_from_top_middle(self):
        """Test Up from s02 enters the terminal."""
        env = GridEnv()
        env.reset()
        outcome = walk(env, [Move.RIGHT, Move.RIGHT, Move.UP])
        assert outcome.next_state.id == "τ"
        assert outcome.done
        assert outcome.reward == 0.0

    def test_visit_log_records_start(self):
        """Test the visit log begins with the start tag."""
        env = GridEnv()
        env.reset()
        walk(env, [Move.RIGHT] * 4 + [Move.LEFT] * 4)
        assert env.visit_log == ["0", "1", "0"]

    def test_full_tour_pays_one(self):
        """Test visiting 1, start, 2, start, 3, start before exiting pays +1."""
        env = GridEnv()
        env.reset()
        moves = ([Move.RIGHT] * 4 + [Move.LEFT] * 4
                 + [Move.DOWN] * 4 + [Move.UP] * 4
                 + [Move.RIGHT] * 4 + [Move.DOWN] * 4 + [Move.UP] * 4 + [Move.LEFT] * 4
                 + [Move.RIGHT] * 2 + [Move.UP])
        outcome = walk(env, moves)
        assert len(moves) <= GRID_STEP_LIMIT
        assert outcome.reward == 1.0

    def test_reward_condition_brute_force(self):
        """Test the greedy subsequence check against a brute-force matcher."""
        from itertools import combinations

        required = ("1", "0", "2", "0", "3", "0", "τ")

        def brute(log):
            return any(tuple(log[i] for i in idx) == required
                       for idx in combinations(range(len(log)), len(required)))

        rng = np.random.default_rng(5)
        alphabet = ["0", "1", "2", "3", "τ"]
        for _ in range(300):
            log = ["0"] + [alphabet[i] for i in rng.integers(0, 5, size=int(rng.integers(0, 10)))]
            assert grid_reward_condition(log) == brute(log)

    def test_make_environment_unknown(self):
        """Test unknown environment names are rejected."""
        with pytest.raises(ValueError):
            make_environment("doom")
