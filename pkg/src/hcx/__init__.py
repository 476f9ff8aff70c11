"""hcx: Hilbert-scheme coordinates, gauge reductions and Toda-type flatness solvers."""

__version__ = "0.1.0"
