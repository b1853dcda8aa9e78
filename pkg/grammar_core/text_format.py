"""
Grammar Core Text Format
Reads and writes grammars as plain text, one rule per line.

    # comment
    %kind k-recurrent
    %k 2
    %terminal s0
    %states s1 s2 s3
    %goals g0 g1
    S -> s3 <META>
    s6 <META> s3 -> s6 g5 <ACT> s6 s3
    s3 g6 <ACT> -> s3 g6 s6 <META>
    s6 g0 <ACT> -> s6 g0 s0
    s1 g1 <ACT> -> s1 g1 <ACT>

Directives are optional. Without them the symbol table is inferred from
the rules, and the grammar is constrained unless some meta rule has a
context or ``%k`` is given.
"""

from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

from grammar_core.errors import GrammarFormatError
from grammar_core.symbols import (
    ACT,
    DEFAULT_TERMINAL,
    META,
    NONTERMINALS,
    START,
    ConstrainedGrammar,
    Grammar,
    KRecurrentGrammar,
    ProductionRule,
    RuleKind,
    SymbolTable,
    natural_key,
)

KINDS = ("constrained", "k-recurrent")


def _parse_rule(lhs: List[str], rhs: List[str], line_number: int) -> Tuple[ProductionRule, Optional[str]]:
    """Returns the rule and, for terminating act rules, the terminal symbol used."""
    for symbol in lhs[:1] + rhs[:1]:
        if symbol in (META, ACT):
            raise GrammarFormatError("a rule cannot start with a nonterminal marker", line_number)

    if lhs == [START]:
        if len(rhs) != 2 or rhs[1] != META or rhs[0] in NONTERMINALS:
            raise GrammarFormatError(f"start rule must read 'S -> state {META}'", line_number)
        return ProductionRule.start(rhs[0]), None

    if len(lhs) >= 2 and lhs[1] == META:
        state, context = lhs[0], lhs[2:]
        if len(rhs) < 4 or rhs[0] != state or rhs[2] != ACT or rhs[3] != state or rhs[4:] != context:
            raise GrammarFormatError(
                f"meta rule must read '{state} {META} ctx -> {state} goal {ACT} {state} ctx'", line_number
            )
        if any(symbol in NONTERMINALS for symbol in context + [rhs[1]]):
            raise GrammarFormatError("nonterminal inside a meta rule context or goal", line_number)
        return ProductionRule.meta(state, rhs[1], context), None

    if len(lhs) == 3 and lhs[2] == ACT:
        state, goal = lhs[0], lhs[1]
        if rhs[:2] != [state, goal]:
            raise GrammarFormatError(f"act rule must keep '{state} {goal}' on the right-hand side", line_number)
        tail = rhs[2:]
        if tail == [ACT]:
            return ProductionRule.act_loop(state, goal), None
        if len(tail) == 2 and tail[1] == META and tail[0] not in NONTERMINALS:
            return ProductionRule.act_return(state, goal, tail[0]), None
        if len(tail) == 1 and tail[0] not in NONTERMINALS:
            return ProductionRule.act_terminate(state, goal), tail[0]
        raise GrammarFormatError("unrecognised act rule right-hand side", line_number)

    raise GrammarFormatError(f"unrecognised left-hand side {' '.join(lhs)!r}", line_number)


def parse_grammar(text: str) -> Grammar:
    """
    Parse grammar text.

    Raises:
        GrammarFormatError: on malformed lines or inconsistent directives
    """
    directives: Dict[str, List[str]] = {}
    rules: List[ProductionRule] = []
    terminals_used: Dict[str, int] = {}

    for line_number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("%"):
            name, *values = line[1:].split()
            if name not in ("kind", "k", "terminal", "states", "goals"):
                raise GrammarFormatError(f"unknown directive %{name}", line_number)
            if name in directives:
                raise GrammarFormatError(f"directive %{name} given twice", line_number)
            directives[name] = values
            continue
        if line.count("->") != 1:
            raise GrammarFormatError("rule lines need exactly one '->'", line_number)
        left, right = line.split("->")
        rule, terminal = _parse_rule(left.split(), right.split(), line_number)
        rules.append(rule)
        if terminal is not None:
            terminals_used.setdefault(terminal, line_number)

    terminal = _single_value(directives, "terminal", line_number=None)
    if terminal is None:
        if len(terminals_used) > 1:
            raise GrammarFormatError(f"terminating rules disagree on the terminal: {sorted(terminals_used)}")
        terminal = next(iter(terminals_used), DEFAULT_TERMINAL)
    for symbol, line_number in terminals_used.items():
        if symbol != terminal:
            raise GrammarFormatError(f"{symbol!r} is not the terminal {terminal!r}", line_number)

    symbols = SymbolTable(
        tuple(directives["states"]) if "states" in directives else _inferred_states(rules, terminal),
        tuple(directives["goals"]) if "goals" in directives else _inferred_goals(rules),
        terminal,
    )

    k_value = _single_value(directives, "k", line_number=None)
    kind = _single_value(directives, "kind", line_number=None)
    if kind is not None and kind not in KINDS:
        raise GrammarFormatError(f"unknown grammar kind {kind!r}")
    if kind is None:
        has_context = any(rule.context for rule in rules)
        kind = "k-recurrent" if (k_value is not None or has_context) else "constrained"

    if kind == "constrained":
        if k_value not in (None, "0"):
            raise GrammarFormatError("a constrained grammar cannot declare k > 0")
        return ConstrainedGrammar(symbols, frozenset(rules))

    if k_value is None:
        k = max((len(rule.context) for rule in rules), default=0)
    else:
        try:
            k = int(k_value)
        except ValueError:
            raise GrammarFormatError(f"%k expects an integer, got {k_value!r}") from None
        if k < 0:
            raise GrammarFormatError(f"%k must be non-negative, got {k}")
    return KRecurrentGrammar(symbols, k, frozenset(rules))


def _single_value(directives: Dict[str, List[str]], name: str, line_number: Optional[int]) -> Optional[str]:
    if name not in directives:
        return None
    values = directives[name]
    if len(values) != 1:
        raise GrammarFormatError(f"%{name} takes exactly one value", line_number)
    return values[0]


def _inferred_states(rules: List[ProductionRule], terminal: str) -> Tuple[str, ...]:
    states = set()
    for rule in rules:
        states.add(rule.state)
        states.update(rule.context)
        if rule.kind is RuleKind.ACT_RETURN and rule.next_state:
            states.add(rule.next_state)
    states.discard(terminal)
    return tuple(sorted(states, key=natural_key))


def _inferred_goals(rules: List[ProductionRule]) -> Tuple[str, ...]:
    return tuple(sorted({rule.goal for rule in rules if rule.goal}, key=natural_key))


def format_grammar(grammar: Grammar) -> str:
    """Render a grammar so that ``parse_grammar`` gives it back unchanged."""
    table = grammar.symbols
    lines = [f"%kind {grammar.kind}"]
    if isinstance(grammar, KRecurrentGrammar):
        lines.append(f"%k {grammar.k}")
    lines += [
        f"%terminal {table.terminal_state}",
        f"%states {' '.join(table.states)}",
        f"%goals {' '.join(table.goals)}",
    ]
    lines += [rule.render(table.terminal_state) for rule in grammar.sorted_rules()]
    return "\n".join(lines) + "\n"


def load_grammar(path: Union[str, Path]) -> Grammar:
    return parse_grammar(Path(path).read_text(encoding="utf-8"))


def save_grammar(grammar: Grammar, path: Union[str, Path]):
    Path(path).write_text(format_grammar(grammar), encoding="utf-8")
