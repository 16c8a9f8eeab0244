"""Desk-scale continual learning for spiking networks with temporal
development: progressive per-task column growth, evolutionary long-range
wiring, and feedback-guided local inhibition and pruning."""

__version__ = "0.1.0"
