"""GPU memory requirement regression: BiGRU-fronted Transformer plus tree baselines."""

__version__ = "0.1.0"
