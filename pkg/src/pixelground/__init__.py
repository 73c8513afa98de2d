"""Pixel-grounded geospatial reasoning toolkit.

Binary-mask primitives, the pixel-mask to visual-token selection pipeline,
text-guided optical/SAR modality selection, a scripted interleaved inference
loop, deterministic benchmark synthesis from semantic rasters, dual-metric
evaluation, and the segmentation/LM training losses.
"""

__version__ = "0.1.0"
