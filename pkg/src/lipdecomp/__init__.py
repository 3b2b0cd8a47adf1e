"""Lipschitz-graph-domain decompositions of domains with point-cloud boundaries."""

from .geom import Ball, BoundarySample, Box, Plane

__all__ = ["Ball", "BoundarySample", "Box", "Plane"]
__version__ = "0.1.0"
