"""Differentiable Gaussian splat renderer (forward compositing and adjoint)."""
from .projection import COV_FLOOR, NEAR_CLIP, ProjectedGaussian, project
from .raster import (BACKEND, CUTOFF, T_MIN, available_backends, coverage, rasterize,
                     rasterize_backward, render, render_backward, to_raw_gradients)

__all__ = ["COV_FLOOR", "NEAR_CLIP", "ProjectedGaussian", "project", "BACKEND", "CUTOFF", "T_MIN",
           "available_backends", "coverage", "rasterize", "rasterize_backward", "render",
           "render_backward", "to_raw_gradients"]
