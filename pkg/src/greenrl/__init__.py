"""Robust model-based RL for a surrogate autonomous greenhouse.

Bootstrap-masked probabilistic dynamics ensemble, p-percentile sample
dropout, and Dyna-style soft actor-critic policy optimization.
"""
__version__ = "0.1.0"
