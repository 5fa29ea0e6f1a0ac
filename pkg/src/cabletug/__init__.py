"""Decentralized cable-robot fleet: simulator, fuzzy/GA and Q-learning trainers."""

__version__ = "0.1.0"
