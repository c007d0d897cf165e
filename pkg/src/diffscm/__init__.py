"""Diffusion-based causal models."""
