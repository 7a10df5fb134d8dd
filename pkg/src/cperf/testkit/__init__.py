"""Synthetic datasets and brute-force oracles for checking the pipeline."""

from .oracle import brute_force_anchor_scores, brute_force_cperf, brute_force_matches
from .synth import SynthSpec, generate_synthetic, make_synthetic, write_dataset

__all__ = [
    "SynthSpec",
    "brute_force_anchor_scores",
    "brute_force_cperf",
    "brute_force_matches",
    "generate_synthetic",
    "make_synthetic",
    "write_dataset",
]
