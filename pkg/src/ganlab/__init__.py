"""ganlab: a small laboratory for forgetting, mode collapse and non-convergence in GAN training.

Everything runs on numpy through a built-in reverse-mode autodiff engine
(:mod:`ganlab.autodiff`), so penalties that differentiate through input
gradients work without an external framework.
"""

__version__ = "0.1.0"
