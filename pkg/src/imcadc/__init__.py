"""Behavioral simulation of current-mode in-memory-computing readout chains.

ADC models with mismatch, linearity metrics, single-point calibration, a
bit-sliced crossbar, and hardware-aware network training through real ADC
transfer curves.
"""

__version__ = "0.1.0"
