"""Experiment presets, pairwise matrices and the command-line interface."""
