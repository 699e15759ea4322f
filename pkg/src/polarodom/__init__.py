"""Radar-inertial odometry with per-point polar uncertainty modeling."""

__version__ = "0.1.0"
