"""Demonstrations, behavior cloning, the training loop, sweeps and evaluation."""
