"""Morse-Conley homology engine for gradient semi-flows.

Builds Conley pairs from sublevel sets and semi-flow preimages, counts
connecting trajectories with orientation transport, assembles the integer
Morse complex, constructs semi-flow-invariant cellular filtrations, and
cross-checks everything against an exact cubical homology backend.
"""

__version__ = "0.1.0"
