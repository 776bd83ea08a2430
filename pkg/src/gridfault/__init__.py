"""DC power-flow cyber-physical attack analysis: scenario simulation,
post-attack state recovery, failed-link localization, and per-link
correctness certificates."""

__version__ = "0.1.0"
