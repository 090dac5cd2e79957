"""Differentiable mass-spring-damper bodies with trainable controllers."""

__version__ = "0.1.0"
