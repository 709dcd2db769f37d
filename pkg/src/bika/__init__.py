"""Multiply-free threshold-sum networks and their systolic-array cycle model."""

__version__ = "0.1.0"
