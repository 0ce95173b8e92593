"""Dynamic Granger-causal graph hypotheses from conditionally weighted factor models."""

__version__ = "0.1.0"
