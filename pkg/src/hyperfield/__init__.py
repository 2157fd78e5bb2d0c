"""Desk-scale hyperspectral plot phenotyping pipeline.

Stages: reflectance calibration, plot segmentation, grid mapping,
endmember extraction, constrained unmixing, sub-plot yield allocation
and feature extraction, and a from-scratch MLP yield regressor. A
synthetic scene generator exercises the whole chain end to end.
"""

__version__ = "0.1.0"
