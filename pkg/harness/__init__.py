"""Training runs, experiments and the bridge from trained policies to grammars."""
