"""Hyperspectral unmixing under the multilinear mixing model.

Synthetic scene generation, classic per-pixel and block-coordinate
solvers, and two convolutional autoencoder unmixing networks built on a
small taped autodiff engine.
"""

__version__ = "0.1.0"
