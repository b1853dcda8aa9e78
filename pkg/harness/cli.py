"""
Harness CLI
Command-line entry point for training, replication and grammar tooling.

Exit codes: 0 on success, 1 on a domain error (invalid grammar, malformed
trajectory, failed run), 2 on a usage error. Results go to stdout and
diagnostics to stderr.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from grammar_core.derivation import DEFAULT_MAX_STEPS, derive
from grammar_core.errors import GrammarError
from grammar_core.extraction import extract_grammar
from grammar_core.text_format import format_grammar, load_grammar, save_grammar
from grammar_core.theory import hf_infeasible
from grammar_core.validation import validate
from harness.config import ENVIRONMENTS, SYSTEMS, CONTROLLERS, ConfigError, build_config, load_config_file
from harness.experiment import (
    ExperimentResult,
    checkpoint_digest_proof,
    load_run,
    replicate_configs,
    run_experiment,
)
from harness.theory_bridge import policy_table, verify_against_theory
from hrl.controllers import OptimalController
from hrl.environments import make_environment
from hrl.errors import HRLError

logger = logging.getLogger(__name__)

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")


def _run_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--episodes", type=int, help="Episodes per run (default: per environment)")
    parser.add_argument("--out-dir", default="runs", help="Experiment directory (default: runs)")
    parser.add_argument("--config", help="JSON file of hyperparameter overrides")
    parser.add_argument("--controller", choices=CONTROLLERS, help="Low-level controller (default: optimal)")
    parser.add_argument("--step-limit", type=int, help="Primitive-action budget per episode")
    parser.add_argument("--exploration-episodes", type=int, help="Random-goal episodes before learning")
    parser.add_argument("--required-visits", type=int, help="Corridor: s5->s6 visits needed for +1")
    parser.add_argument("--workers", type=int, default=1, help="Worker processes (default: 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="python -m harness",
        description="Recurrent hierarchical RL experiments and trajectory grammars.",
    )
    parser.add_argument("--log-level", choices=LOG_LEVELS, default="WARNING", help="Logging level (stderr)")
    commands = parser.add_subparsers(dest="command", metavar="command")
    commands.required = True

    train = commands.add_parser("train", help="Train one system on one environment")
    train.add_argument("--env", choices=ENVIRONMENTS, default="corridor")
    train.add_argument("--system", choices=SYSTEMS, default="rh-reinforce")
    train.add_argument("--seed", type=int, default=0)
    _run_flags(train)

    replicate = commands.add_parser("replicate", help="Run every environment x system x seed")
    replicate.add_argument("--env", choices=ENVIRONMENTS, nargs="+", default=list(ENVIRONMENTS))
    replicate.add_argument("--system", choices=SYSTEMS, nargs="+", default=list(SYSTEMS))
    replicate.add_argument("--seeds", type=int, default=10, help="Seeds 0..N-1 (default: 10)")
    _run_flags(replicate)

    derive_cmd = commands.add_parser("derive", help="Derive the string a grammar generates")
    derive_cmd.add_argument("--grammar", required=True, help="Grammar file")
    derive_cmd.add_argument("--start", help="Start state (default: first start rule)")
    derive_cmd.add_argument("--max-steps", type=int, default=DEFAULT_MAX_STEPS)

    check = commands.add_parser("validate-grammar", help="Check a grammar against its definition")
    check.add_argument("--grammar", required=True, help="Grammar file")

    feasible = commands.add_parser("check-hf-feasible", help="Look for a state paired with two goals")
    feasible.add_argument("--trajectory", required=True, help="Space-separated trajectory string")
    feasible.add_argument("--terminal", help="Terminal state symbol")

    extract = commands.add_parser("extract-grammar", help="Grammar of a deterministic meta policy")
    source = extract.add_mutually_exclusive_group(required=True)
    source.add_argument("--policy", help="JSON policy file")
    source.add_argument("--run-dir", help="Finished run directory")
    extract.add_argument("--k", type=int, help="Memory length (default: from the policy or automatic)")
    extract.add_argument("--output", help="Write the grammar here instead of stdout")

    verify = commands.add_parser("verify-theory", help="Replay a trained run and check it against the results digest")
    verify.add_argument("--run-dir", required=True, help="Finished run directory")
    verify.add_argument("--k", type=int, help="Memory length (default: automatic)")
    return parser


def _run_overrides(args: argparse.Namespace) -> Dict:
    return {
        "episodes": args.episodes,
        "controller": args.controller,
        "step_limit": args.step_limit,
        "exploration_episodes": args.exploration_episodes,
        "required_visits": args.required_visits,
    }


def _print_summary(result: ExperimentResult):
    for key, value in result.summary.items():
        print(f"{key}={value}")


def cmd_train(args: argparse.Namespace) -> int:
    file_values = load_config_file(args.config) if args.config else None
    config = build_config(file_values, env=args.env, system=args.system, seed=args.seed, **_run_overrides(args))
    result = run_experiment([config], args.out_dir, workers=1)
    _print_summary(result)
    return 0 if all(run.completed for run in result.runs) else 1


def cmd_replicate(args: argparse.Namespace) -> int:
    file_values = load_config_file(args.config) if args.config else None
    configs = replicate_configs(range(args.seeds), args.env, args.system, file_values, **_run_overrides(args))
    result = run_experiment(configs, args.out_dir, workers=args.workers)
    _print_summary(result)
    return 0 if all(run.completed for run in result.runs) else 1


def cmd_derive(args: argparse.Namespace) -> int:
    grammar = load_grammar(args.grammar)
    starts = grammar.start_states()
    start = args.start or (starts[0] if starts else None)
    if start is None:
        raise GrammarError(f"{args.grammar} has no start rule")
    result = derive(grammar, start, args.max_steps)
    if not result.completed:
        print(result.describe(), file=sys.stderr)
        return 1
    print(result.render())
    return 0


def cmd_validate(args: argparse.Namespace) -> int:
    report = validate(load_grammar(args.grammar))
    print(report.render())
    return 0 if report.is_valid else 1


def cmd_check_hf(args: argparse.Namespace) -> int:
    witness = hf_infeasible(args.trajectory, args.terminal)
    print(witness if witness is not None else "none")
    return 0


def _read_policy(path: str) -> Dict:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read policy file {path}: {exc}") from exc
    if not isinstance(data, dict) or not isinstance(data.get("policy"), dict):
        raise ConfigError(f"{path}: expected an object with a 'policy' mapping")
    return data


def cmd_extract(args: argparse.Namespace) -> int:
    if args.policy:
        data = _read_policy(args.policy)
        env = make_environment(data.get("env", "corridor")).deterministic_model()
        mapping = {tuple(history.split()): goal for history, goal in data["policy"].items()}
        k = args.k if args.k is not None else int(data.get("k", max(len(h) for h in mapping) - 1))
        controller = OptimalController(env)
        goals = None
    else:
        _, trained_env, meta, _ = load_run(args.run_dir)
        env = trained_env.deterministic_model()
        controller = OptimalController(env)
        k, mapping = policy_table(meta, env, controller, args.k)
        goals = meta.goals

    spec = env.spec
    grammar = extract_grammar(mapping, controller.outcome_table(goals), [spec.start_state], k,
                              terminal_state=spec.terminal_state)
    if args.output:
        save_grammar(grammar, args.output)
    else:
        print(format_grammar(grammar), end="")
    return 0


def cmd_verify(args: argparse.Namespace) -> int:
    config, env, meta, _ = load_run(args.run_dir)
    report = verify_against_theory(meta, env, args.k, system=config.system).to_dict()
    digest = checkpoint_digest_proof(args.run_dir)
    if digest is not None:
        report["results_digest"] = digest
    print(json.dumps(report, indent=2, sort_keys=True, ensure_ascii=False))
    return 1 if digest is not None and not digest["included"] else 0


COMMANDS = {
    "train": cmd_train,
    "replicate": cmd_replicate,
    "derive": cmd_derive,
    "validate-grammar": cmd_validate,
    "check-hf-feasible": cmd_check_hf,
    "extract-grammar": cmd_extract,
    "verify-theory": cmd_verify,
}


def dispatch(argv: Optional[Sequence[str]] = None) -> int:
    """Parse ``argv`` and run the command; returns the exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(list(argv) if argv is not None else None)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else 2

    logging.basicConfig(level=args.log_level, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (GrammarError, HRLError, ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main(argv: Optional[List[str]] = None):
    sys.exit(dispatch(argv))


if __name__ == "__main__":
    main()
