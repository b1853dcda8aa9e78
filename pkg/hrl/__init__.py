"""Hierarchical reinforcement learning: environments, controllers and meta controllers."""
