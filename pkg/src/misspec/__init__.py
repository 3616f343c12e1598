"""Lower bounds and improper learners for misspecified GLM prediction."""

__version__ = "0.1.0"
