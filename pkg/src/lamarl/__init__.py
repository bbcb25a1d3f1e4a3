"""Learning-anticipation update rules for off-policy multi-agent RL."""

__version__ = "0.1.0"
