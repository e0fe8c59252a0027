"""Discrete-event simulator of dense 802.11 downlinks.

Compares access-point selection strategies (strongest-signal, probe-delay,
SINR-measurement and solver-based assignment) on a shared topology with a
common CSMA/CA MAC and SINR-based reception model.
"""

__version__ = "0.1.0"
