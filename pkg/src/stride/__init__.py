"""Reconstruction of spatiotemporal PDE fields from sparse sensor windows.

A recurrent window encoder maps a short history of point-sensor readings
to a latent state; a modulated coordinate network decodes the latent at
arbitrary query locations.  The package also ships the data generators,
baselines, training and evaluation harnesses, and observability
diagnostics used to exercise that pipeline end to end.
"""

__version__ = "0.1.0"
