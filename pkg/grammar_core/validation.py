"""
Grammar Core Validation
Checks a grammar against the structural conditions of its class.

Clause labels used in reports:
    symbols  every symbol comes from the symbol table
    start    at least one start rule
    meta     exactly one meta rule per state (constrained) or at most one
             per (state, context) with context length <= k (k-recurrent)
    act      exactly one act rule per (state, goal)
"""

from dataclasses import dataclass, field
from itertools import combinations
from typing import Any, Dict, List

from grammar_core.symbols import Grammar, KRecurrentGrammar, ProductionRule, RuleKind


@dataclass(frozen=True)
class Violation:
    clause: str
    message: str

    def __str__(self) -> str:
        return f"[{self.clause}] {self.message}"


@dataclass
class ValidationReport:
    """Violations make a grammar invalid; warnings do not."""

    grammar_kind: str
    violations: List[Violation] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)

    @property
    def is_valid(self) -> bool:
        return not self.violations

    def clauses(self) -> List[str]:
        return sorted({violation.clause for violation in self.violations})

    def add(self, clause: str, message: str):
        self.violations.append(Violation(clause, message))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "grammar_kind": self.grammar_kind,
            "is_valid": self.is_valid,
            "violations": [{"clause": v.clause, "message": v.message} for v in self.violations],
            "warnings": list(self.warnings),
        }

    def render(self) -> str:
        if self.is_valid:
            lines = [f"valid {self.grammar_kind} grammar"]
        else:
            lines = [f"invalid {self.grammar_kind} grammar"] + [f"  {v}" for v in self.violations]
        lines += [f"  warning: {w}" for w in self.warnings]
        return "\n".join(lines)


def _check_symbols(grammar: Grammar, rule: ProductionRule, report: ValidationReport):
    table = grammar.symbols
    if not table.is_state(rule.state):
        report.add("symbols", f"{rule.render(table.terminal_state)}: {rule.state!r} is not a state")
    if rule.goal is not None and not table.is_goal(rule.goal):
        report.add("symbols", f"{rule.render(table.terminal_state)}: {rule.goal!r} is not a goal")
    for symbol in rule.context:
        if not table.is_state(symbol):
            report.add("symbols", f"{rule.render(table.terminal_state)}: context symbol {symbol!r} is not a state")
    if rule.kind is RuleKind.ACT_RETURN:
        if rule.next_state == table.terminal_state:
            report.add("act", f"{rule.render(table.terminal_state)}: a returning act rule cannot reach the terminal")
        elif not table.is_state(rule.next_state or ""):
            report.add("symbols", f"{rule.render(table.terminal_state)}: {rule.next_state!r} is not a state")


def _check_constrained_meta(grammar: Grammar, report: ValidationReport):
    for state in grammar.symbols.states:
        rules = grammar.meta_rules(state)
        for rule in rules:
            if rule.context:
                report.add("meta", f"{rule.render()}: constrained meta rules take no context")
        if len(rules) != 1:
            report.add("meta", f"state {state} has {len(rules)} meta rules, expected exactly 1")


def _check_recurrent_meta(grammar: KRecurrentGrammar, report: ValidationReport):
    for state in grammar.symbols.states:
        rules = grammar.meta_rules(state)
        seen: Dict[tuple, int] = {}
        for rule in rules:
            if len(rule.context) > grammar.k:
                report.add("meta", f"{rule.render()}: context length {len(rule.context)} exceeds k={grammar.k}")
            seen[rule.context] = seen.get(rule.context, 0) + 1
        for context, count in seen.items():
            if count > 1:
                shown = " ".join(context) or "(empty)"
                report.add("meta", f"state {state} has {count} meta rules for context {shown}")
        for first, second in combinations(sorted(seen, key=len), 2):
            if len(first) < len(second) and second[:len(first)] == first:
                report.warnings.append(
                    f"state {state}: context {' '.join(first) or '(empty)'} is a prefix of "
                    f"{' '.join(second)}; the longer context takes precedence"
                )


def validate(grammar: Grammar) -> ValidationReport:
    """
    Check a grammar against the conditions of its class.

    Returns:
        ValidationReport listing each violated clause
    """
    report = ValidationReport(grammar.kind)
    table = grammar.symbols

    for rule in grammar.sorted_rules():
        _check_symbols(grammar, rule, report)

    if not grammar.start_states():
        report.add("start", "grammar has no start rule")

    if isinstance(grammar, KRecurrentGrammar):
        _check_recurrent_meta(grammar, report)
    else:
        _check_constrained_meta(grammar, report)

    for state in table.states:
        for goal in table.goals:
            count = len(grammar.act_rules(state, goal))
            if count != 1:
                report.add("act", f"pair ({state}, {goal}) has {count} act rules, expected exactly 1")

    return report
