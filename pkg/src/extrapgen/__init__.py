"""Extrapolated data generation under selection: exact discrete identification
and a continuous likelihood/diffusion pipeline."""

__version__ = "0.1.0"
