"""Synthetic sequential-task benchmark, metrics and experiment runners."""
