"""Risk-aware recurrent Q-learning for pairs trading, with the surrounding
research harness (data, pair selection, environment, baselines, backtests)."""

__version__ = "0.1.0"
