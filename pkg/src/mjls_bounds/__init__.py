"""Joint spectral radius bounds and stability certificates for Markovian jump linear systems."""

__version__ = "0.1.0"
