"""Beamforming toolkit for the underlay cognitive-radio Z-channel.

Implements and compares three downlink beamformer designs: conventional
max-min-fair SINR balancing, exact worst-user symbol-error-probability
minimization via a barrier method, and a fast SOCP approximation, together
with the special functions, cone solver, and Monte-Carlo harness needed to
evaluate them.
"""

__version__ = "0.1.0"
