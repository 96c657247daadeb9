"""Positivization library: tensor networks, the ladder model, circuits and training."""
