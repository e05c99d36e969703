"""Random uniform-reshuffle wealth exchange: particle chains, kinetic limit and samplers."""

__version__ = "0.1.0"
