"""Age-structured epidemic MDP with two cost objectives, plus the training and
evaluation machinery to approximate its Pareto front."""

__version__ = "0.1.0"
