"""Unpaired image-to-image translation with dual-domain denoising diffusion models."""

__version__ = "0.1.0"
