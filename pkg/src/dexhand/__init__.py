"""Desk-scale dexterous hand teleoperation and imitation learning toolkit."""

__version__ = "0.1.0"
