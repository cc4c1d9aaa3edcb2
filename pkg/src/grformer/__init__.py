"""Grouped residual window attention for lightweight single-image super-resolution.

Subpackages cover the tensor/autodiff substrate, the attention unit and full
network, closed-form parameter/MAC accounting, Y-channel image metrics, a
desk-scale training loop, and verification oracles. See the CLI (`grformer`)
for the operator surface.
"""

__version__ = "0.1.0"
