"""Automatic building annotation of VHR SAR images.

The package turns TomoSAR point clouds plus auxiliary information (building
footprints or a georeferenced optical label raster) into binary building
masks in SAR azimuth-range coordinates, refines per-pixel classifier scores
with a fully connected CRF, and scores masks with the usual segmentation
metrics.
"""

from .cloud import PointClass, PointCloud

__version__ = "0.1.0"

__all__ = ["PointClass", "PointCloud", "__version__"]
