"""Simulated 2-DoF, 3-tendon leg that learns an inverse map from motor
babbling and tracks joint trajectories open-loop or with PI velocity feedback."""

__version__ = "0.1.0"
