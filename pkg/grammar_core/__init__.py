"""Grammars describing the trajectories of hierarchical agents."""

from grammar_core.derivation import DerivationOutcome, DerivationResult, derive
from grammar_core.errors import (
    DerivationError,
    ExtractionError,
    GrammarError,
    GrammarFormatError,
    GrammarValidationError,
    SymbolTableError,
    TrajectoryFormatError,
)
from grammar_core.extraction import ActOutcome, ActOutcomeKind, complete_with_defaults, extract_grammar
from grammar_core.symbols import (
    ConstrainedGrammar,
    Grammar,
    KRecurrentGrammar,
    ProductionRule,
    RuleKind,
    SymbolTable,
    TrajectoryString,
)
from grammar_core.text_format import format_grammar, load_grammar, parse_grammar
from grammar_core.theory import HfWitness, hf_infeasible, split_trajectory, to_zero_recurrent
from grammar_core.validation import ValidationReport, validate
