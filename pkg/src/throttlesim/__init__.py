"""Simulated bi-level CPU autoscaling: per-service throttle-target controllers
steered by an application-level contextual bandit."""

__version__ = "0.1.0"
