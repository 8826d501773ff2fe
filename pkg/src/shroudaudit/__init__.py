"""Ballot-level risk-limiting audit toolkit with shrouded per-contest
cast vote records: publication pipeline, observer checks, seeded sampling,
audit engine, Monte Carlo simulator, CLI, and a local session service."""

__version__ = "0.1.0"
