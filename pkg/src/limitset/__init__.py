"""Hausdorff dimension of limit sets and pressure metrics for convex
co-compact Moebius groups, via transfer operators and periodic-orbit sums."""

__version__ = "0.1.0"
