"""Scenario-to-network conversion, closed-loop rollouts and realism scoring."""
