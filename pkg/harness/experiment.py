"""
Harness Experiment
The episode loop, single training runs and multi-run experiments.

An episode alternates meta decisions and controller rollouts until the
environment ends it; the meta controller learns once per episode (or per
decision for h-DQN). Runs are independent and may execute in worker
processes; aggregation always reduces the completed runs in seed order,
so results do not depend on completion order.
"""

import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from itertools import repeat
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from harness.config import ENVIRONMENTS, SYSTEMS, RunConfig, build_config
from harness.digest import MerkleTree, digest_directory, prove_file
from harness.run_log import RunEventLog
from harness.theory_bridge import verify_against_theory
from hrl.controllers import ActorCriticController, OptimalController, OutcomeKind, make_goals, run_controller
from hrl.environments import EpisodicEnvironment, make_environment
from hrl.errors import HRLError
from hrl.meta_controllers import (
    EpsilonSchedule,
    HDqnMetaController,
    HReinforceMetaController,
    MetaController,
    MetaDecision,
    RhReinforceMetaController,
    ScriptedMetaController,
)
from hrl.neural import Params, load_checkpoint, save_checkpoint

logger = logging.getLogger(__name__)

MOVING_AVERAGE_WINDOW = 100
FINAL_WINDOW = 1_000

EPISODES_FILE = "episodes.csv"
CONFIG_FILE = "config.json"
CHECKPOINT_FILE = "checkpoint.json"
THEORY_FILE = "theory.json"
STATS_FILE = "run_stats.json"
SUMMARY_FILE = "summary.txt"

EPISODE_HEADER = ("episode", "return", "meta_decisions", "truncated")
AGGREGATE_HEADER = ("episode", "mean_ma100")

DEFAULT_SCRIPTS = {
    "corridor": ("g6", "g5", "g6", "g0"),
    "stochastic-corridor": ("g6", "g5", "g6", "g0"),
    "grid": ("g1", "g0", "g2", "g0", "g3", "g0", "gτ"),
}


class EpisodeError(HRLError):
    """A component failure, tagged with the episode it happened in."""

    def __init__(self, message: str, episode: int):
        super().__init__(f"episode {episode}: {message}")
        self.episode = episode


@dataclass(frozen=True)
class EpisodeLog:
    """One finished episode."""

    episode: int
    episode_return: float
    meta_decisions: int
    truncated: bool

    def to_row(self) -> Tuple[str, ...]:
        return (str(self.episode), repr(float(self.episode_return)),
                str(self.meta_decisions), str(int(self.truncated)))


@dataclass
class RunResult:
    config: RunConfig
    episodes: List[EpisodeLog] = field(default_factory=list)
    run_dir: Optional[str] = None
    theory: Optional[Dict] = None
    error: Optional[str] = None

    @property
    def completed(self) -> bool:
        return self.error is None

    @property
    def returns(self) -> np.ndarray:
        return np.array([log.episode_return for log in self.episodes], dtype=np.float64)


@dataclass
class AggregateCurve:
    """Mean over runs of each run's moving-average return curve."""

    env: str
    system: str
    values: np.ndarray
    seeds: Tuple[int, ...]

    def __len__(self) -> int:
        return len(self.values)

    @property
    def file_name(self) -> str:
        return f"aggregate_{self.env}_{self.system}.csv"


@dataclass
class ExperimentResult:
    runs: List[RunResult]
    curves: Dict[Tuple[str, str], AggregateCurve]
    summary: Dict[str, str]
    digest: Optional[str] = None


def moving_average(values: Sequence[float], window: int = MOVING_AVERAGE_WINDOW) -> np.ndarray:
    """Trailing mean over ``window`` episodes; the first entries average what is available."""
    data = np.asarray(values, dtype=np.float64)
    if data.size == 0:
        return data
    sums = np.concatenate([[0.0], np.cumsum(data)])
    ends = np.arange(1, data.size + 1)
    starts = np.maximum(0, ends - window)
    return (sums[ends] - sums[starts]) / (ends - starts)


def build_meta_controller(config: RunConfig, env: EpisodicEnvironment,
                          rng: np.random.Generator) -> MetaController:
    goals = make_goals(env.spec)
    if config.system == "rh-reinforce":
        return RhReinforceMetaController(env.spec, goals, rng, hidden_size=config.gru_units,
                                         learning_rate=config.learning_rate, gamma=config.gamma_meta,
                                         update_while_exploring=config.exploration_updates)
    if config.system == "h-reinforce":
        return HReinforceMetaController(env.spec, goals, rng, hidden_sizes=config.dense_units,
                                        learning_rate=config.learning_rate, gamma=config.gamma_meta,
                                        update_while_exploring=config.exploration_updates)
    schedule = EpsilonSchedule(config.epsilon_start, config.epsilon_end, config.epsilon_decay_steps)
    return HDqnMetaController(env.spec, goals, rng, hidden_sizes=config.dense_units,
                              learning_rate=config.learning_rate, gamma=config.gamma_meta,
                              replay_size=config.replay_size, batch_size=config.batch_size,
                              target_update_rate=config.target_update_rate, schedule=schedule)


def build_controller(config: RunConfig, env: EpisodicEnvironment, rng: np.random.Generator):
    if config.controller == "learned":
        return ActorCriticController(env, make_goals(env.spec), hidden_sizes=config.dense_units,
                                     learning_rate=config.learning_rate, gamma=config.gamma_controller,
                                     intrinsic_reward=config.intrinsic_reward, rng=rng)
    return OptimalController(env)


def build_components(config: RunConfig):
    """Environment, meta controller and controller of one run, each on its own seed stream."""
    env_seed, meta_seed, controller_seed = np.random.SeedSequence(config.seed).spawn(3)
    env = make_environment(config.env, env_seed, config.step_limit, config.required_visits)
    meta = build_meta_controller(config, env, np.random.default_rng(meta_seed))
    controller = build_controller(config, env, np.random.default_rng(controller_seed))
    return env, meta, controller


def run_params(meta: MetaController, controller) -> Params:
    params = dict(meta.params)
    if getattr(controller, "learns", False):
        params.update(controller.params)
    return params


def run_episode(config: Optional[RunConfig], env: EpisodicEnvironment, meta: MetaController,
                controller, episode: int = 0) -> EpisodeLog:
    """
    Play one episode and let the learners update.

    The meta controller picks a goal, the controller pursues it while the
    external reward is accumulated into the decision, and the new state is
    fed back to the meta controller. The controller learns only when the
    run uses the learned controller.

    Raises:
        EpisodeError: wrapping any environment, controller or learner failure
    """
    learn_controller = config is not None and config.controller == "learned"
    decisions: List[MetaDecision] = []
    truncated = False
    try:
        meta.begin_episode()
        state = env.reset()
        while not env.done:
            goal = meta.select_goal(state)
            outcome = run_controller(controller, env, goal, learn=learn_controller)
            decision = MetaDecision(state, goal, outcome.accumulated_external_reward)
            decisions.append(decision)
            meta.record(decision, outcome.final_state, outcome.done)
            truncated = outcome.kind is OutcomeKind.TRUNCATED
            state = outcome.final_state
        meta.end_episode(decisions)
    except HRLError as exc:
        raise EpisodeError(str(exc), episode) from exc

    episode_return = sum(decision.reward for decision in decisions)
    return EpisodeLog(episode, episode_return, len(decisions), truncated)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[str]]):
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def write_json(path: Path, payload: Dict):
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")


def train_run(config: RunConfig, out_dir: Optional[Union[str, Path]] = None,
              verify: bool = True) -> RunResult:
    """
    Train one system on one environment with one seed.

    With ``out_dir`` the run directory receives config.json, episodes.csv,
    run_stats.json and, once at least one episode was played,
    checkpoint.json and (when ``verify`` is set) theory.json. A run of
    zero episodes has no trained parameters to save or verify.
    """
    env, meta, controller = build_components(config)
    events = RunEventLog(config.run_dir_name())
    events.log_run_started(config.to_dict())

    exploration = config.resolved_exploration_episodes
    episodes: List[EpisodeLog] = []
    if exploration:
        events.log_phase("exploration", 0)
    for index in range(config.resolved_episodes):
        if index == exploration and exploration:
            events.log_phase("learning", index)
        meta.exploring = index < exploration
        try:
            record = run_episode(config, env, meta, controller, index)
        except EpisodeError as exc:
            events.log_anomaly(str(exc), {"episode": index})
            raise
        events.log_episode(record.episode, record.episode_return, record.meta_decisions, record.truncated)
        episodes.append(record)
    meta.exploring = False

    trained = bool(episodes)
    theory = verify_against_theory(meta, env, system=config.system).to_dict() if verify and trained else None
    result = RunResult(config, episodes, theory=theory)
    events.log_run_finished({"episodes": len(episodes)})

    if out_dir is not None:
        run_dir = Path(out_dir) / config.run_dir_name()
        run_dir.mkdir(parents=True, exist_ok=True)
        write_json(run_dir / CONFIG_FILE, config.provenance_record())
        write_csv(run_dir / EPISODES_FILE, EPISODE_HEADER, (log.to_row() for log in episodes))
        if trained:
            save_checkpoint(run_dir / CHECKPOINT_FILE, run_params(meta, controller))
        write_json(run_dir / STATS_FILE, events.get_statistics())
        if theory is not None:
            write_json(run_dir / THEORY_FILE, theory)
        result.run_dir = str(run_dir)
    return result


def run_single(config: RunConfig, out_dir: Optional[Union[str, Path]] = None) -> RunResult:
    """Worker entry point: a failing run is returned with its error instead of raising."""
    try:
        return train_run(config, out_dir)
    except Exception as exc:  # pylint: disable=broad-except
        logger.warning("run %s aborted: %s", config.run_dir_name(), exc)
        return RunResult(config, error=f"{type(exc).__name__}: {exc}")


def aggregate(runs: Sequence[RunResult]) -> Dict[Tuple[str, str], AggregateCurve]:
    """Mean moving-average curve per (env, system) over completed runs, reduced in seed order."""
    groups: Dict[Tuple[str, str], List[RunResult]] = {}
    for run in runs:
        if run.completed:
            groups.setdefault((run.config.env, run.config.system), []).append(run)

    curves = {}
    for (env, system), members in sorted(groups.items()):
        members.sort(key=lambda run: run.config.seed)
        lengths = {len(run.episodes) for run in members}
        if len(lengths) > 1:
            logger.warning("%s/%s runs differ in length %s; truncating to the shortest", env, system, sorted(lengths))
        length = min(lengths)
        total = np.zeros(length)
        for run in members:
            total = total + moving_average(run.returns[:length])
        curves[(env, system)] = AggregateCurve(env, system, total / len(members), tuple(run.config.seed for run in members))
    return curves


def _format(value: Optional[float]) -> str:
    return "n/a" if value is None else repr(float(value))


def summarize(runs: Sequence[RunResult], curves: Dict[Tuple[str, str], AggregateCurve]) -> Dict[str, str]:
    """Key-value summary: final-1000-episode means, final moving averages and theory findings."""
    summary: Dict[str, str] = {
        "final_window": str(FINAL_WINDOW),
        "final_window_note": "mean return over the last episodes of each run; the window is this harness's choice",
        "moving_average_window": str(MOVING_AVERAGE_WINDOW),
        "runs_total": str(len(runs)),
        "runs_aborted": str(sum(1 for run in runs if not run.completed)),
    }
    keys = sorted({(run.config.env, run.config.system) for run in runs})
    for env, system in keys:
        prefix = f"{env}.{system}"
        members = sorted((run for run in runs if (run.config.env, run.config.system) == (env, system)),
                         key=lambda run: run.config.seed)
        done = [run for run in members if run.completed]
        aborted = [run for run in members if not run.completed]
        if aborted:
            logger.warning("%s: %d of %d runs aborted; aggregating the rest", prefix, len(aborted), len(members))
        summary[f"{prefix}.runs_completed"] = str(len(done))
        summary[f"{prefix}.runs_aborted"] = ",".join(str(run.config.seed) for run in aborted) or "none"

        finals = [float(np.mean(run.returns[-FINAL_WINDOW:])) for run in done if len(run.episodes)]
        summary[f"{prefix}.final_1000_mean"] = _format(float(np.mean(finals)) if finals else None)
        last_ma = [float(moving_average(run.returns)[-1]) for run in done if len(run.episodes)]
        summary[f"{prefix}.final_ma100_by_seed"] = " ".join(repr(v) for v in last_ma) or "n/a"
        curve = curves.get((env, system))
        summary[f"{prefix}.final_ma100_mean"] = _format(curve.values[-1] if curve is not None and len(curve) else None)

        theories = [run.theory for run in done if run.theory is not None]
        witnessed = [t for t in theories if t.get("witness")]
        summary[f"{prefix}.hf_infeasible_runs"] = f"{len(witnessed)}/{len(theories)}"
    return summary


def write_summary(path: Path, summary: Dict[str, str]):
    path.write_text("".join(f"{key}={value}\n" for key, value in summary.items()), encoding="utf-8")


def read_summary(path: Path) -> Dict[str, str]:
    """Parse a key=value summary file."""
    lines = path.read_text(encoding="utf-8").splitlines()
    return dict(line.split("=", 1) for line in lines if "=" in line)


def checkpoint_digest_proof(run_dir: Union[str, Path]) -> Optional[Dict]:
    """
    Check that a run's checkpoint is covered by the results digest of its experiment.

    The experiment directory is the parent of ``run_dir``. The Merkle proof
    of ``<run>/checkpoint.json`` is recomputed from the files on disk and
    verified against the ``results_digest`` recorded in summary.txt, so any
    file changed since the experiment finished shows up as not included.

    Returns:
        None when the experiment has no summary, otherwise the file, the
        recorded and recomputed roots, the proof length and ``included``
    """
    directory = Path(run_dir)
    experiment = directory.parent
    summary_path = experiment / SUMMARY_FILE
    if not summary_path.exists():
        return None
    recorded = read_summary(summary_path).get("results_digest", "")
    relative = f"{directory.name}/{CHECKPOINT_FILE}"
    leaf, proof, root = prove_file(experiment, relative, exclude=(SUMMARY_FILE,))
    included = root == recorded and MerkleTree.verify_proof(leaf, proof, recorded)
    if not included:
        logger.warning("%s is not covered by results digest %s", relative, recorded)
    return {"file": relative, "results_digest": recorded, "recomputed_root": root,
            "proof_length": len(proof), "included": included}


def run_experiment(configs: Sequence[RunConfig], out_dir: Union[str, Path],
                   workers: int = 1) -> ExperimentResult:
    """
    Run every configuration and write per-run, aggregate and summary files.

    Args:
        configs: At least one run configuration
        out_dir: Experiment directory, created if needed
        workers: Worker processes; 1 runs everything in this process

    Returns:
        ExperimentResult with the curves, the summary and the results digest
    """
    if not configs:
        raise ValueError("run_experiment needs at least one configuration")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    logger.info("running %d configurations with %d worker(s)", len(configs), workers)

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            runs = list(pool.map(run_single, configs, repeat(out)))
    else:
        runs = [run_single(config, out) for config in configs]

    curves = aggregate(runs)
    for curve in curves.values():
        rows = ((str(i), repr(float(v))) for i, v in enumerate(curve.values))
        write_csv(out / curve.file_name, AGGREGATE_HEADER, rows)

    summary = summarize(runs, curves)
    digest = digest_directory(out, exclude=(SUMMARY_FILE,))
    summary["results_digest"] = digest
    write_summary(out / SUMMARY_FILE, summary)
    return ExperimentResult(runs, curves, summary, digest)


def replicate_configs(seeds: Iterable[int] = range(10), envs: Sequence[str] = ENVIRONMENTS,
                      systems: Sequence[str] = SYSTEMS, file_values: Optional[Dict] = None,
                      **flags) -> List[RunConfig]:
    """The full grid of environments x systems x seeds."""
    return [build_config(file_values, env=env, system=system, seed=seed, **flags)
            for env in envs for system in systems for seed in seeds]


def handcrafted_policy_baseline(env: EpisodicEnvironment, goals: Optional[Sequence[str]] = None,
                                episodes: int = 1_000, seed=None) -> float:
    """
    Mean return of a fixed goal script executed by the optimal controller.

    The default scripts are the optimal goal sequences: g6 g5 g6 g0 in the
    corridors and g1 g0 g2 g0 g3 g0 gτ in the grid.
    """
    if episodes < 1:
        raise ValueError("episodes must be at least 1")
    script = tuple(goals) if goals is not None else DEFAULT_SCRIPTS[env.spec.name]
    meta = ScriptedMetaController(env.spec, make_goals(env.spec), script)
    controller = OptimalController(env)
    env.reset(seed=seed)
    total = sum(run_episode(None, env, meta, controller, index).episode_return for index in range(episodes))
    mean = total / episodes
    logger.info("handcrafted baseline on %s over %d episodes: %.4f", env.spec.name, episodes, mean)
    return mean


def load_run(run_dir: Union[str, Path]):
    """
    Rebuild a finished run from its directory.

    Returns:
        (config, env, meta controller, controller) with the checkpoint loaded
    """
    directory = Path(run_dir)
    try:
        record = json.loads((directory / CONFIG_FILE).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise HRLError(f"cannot read {directory / CONFIG_FILE}: {exc}") from exc
    config = RunConfig.from_dict(record["config"])
    checkpoint = directory / CHECKPOINT_FILE
    if not checkpoint.exists():
        raise HRLError(f"{directory} has no {CHECKPOINT_FILE}; the run played no episodes")
    env, meta, controller = build_components(config)
    load_checkpoint(checkpoint, run_params(meta, controller))
    return config, env, meta, controller
