"""Model-based RL agents that learn split latent dynamics from motion clips."""

__version__ = "0.1.0"
