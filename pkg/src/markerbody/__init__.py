"""Marker-based 3d human body reconstruction.

The package is organized around a small float64 reverse-mode autodiff core
(:mod:`markerbody.autodiff`, :mod:`markerbody.nn`), a procedural stand-in
parametric body model (:mod:`markerbody.body`), pinhole camera utilities
(:mod:`markerbody.camera`), a sparse surface-marker representation
(:mod:`markerbody.markers`), a marker-to-mesh regressor (:mod:`markerbody.poser`),
an iterative transformer marker refiner (:mod:`markerbody.refiner`),
differentiable losses with a soft rasterizer (:mod:`markerbody.losses`,
:mod:`markerbody.rasterizer`), evaluation metrics (:mod:`markerbody.metrics`),
a synthetic data generator (:mod:`markerbody.synth`) and a command line
interface (:mod:`markerbody.cli`).
"""

__version__ = "0.1.0"
