"""Multimodal semantic fusion (AAF + DFF) for voxelized LiDAR, at desk scale."""

__version__ = "0.1.0"
