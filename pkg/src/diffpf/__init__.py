"""Particle filtering with a conditional diffusion sampler as the update step."""

from diffpf.kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"

__all__ = ["KERNEL_BACKEND", "__version__"]
