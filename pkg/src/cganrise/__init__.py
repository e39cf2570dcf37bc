"""Conditional-GAN feedforward with RISE feedback and latent-space adaptation
for a two-link manipulator."""

__version__ = "0.1.0"
