"""Evaluation harness comparing direct, chain-of-translation and translate-and-test prompting."""

__version__ = "0.1.0"
