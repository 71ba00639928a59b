"""Deterministic simulator of a distributed internet-exchange fabric.

A set of provider-edge routers joined by point-to-point links emulates one
shared LAN for member networks: shortest-path routing and label switching
underneath, a full mesh of signalled pseudo-wires on top, learning bridges
with split-horizon forwarding, and member peering through route servers.
"""

from ixsim.engine import Simulation
from ixsim.scenario import load_scenario, parse_scenario

__version__ = "0.1.0"

__all__ = ["Simulation", "load_scenario", "parse_scenario", "__version__"]
