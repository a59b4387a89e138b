"""Reduced-order model for supercritical coolant flow in straight cooling channels.

Bulk pressure and enthalpy are marched along the channel with 1-D relations,
and a small feedforward network predicts the hot-gas-side wall temperature at
every station.
"""

__version__ = "0.1.0"
