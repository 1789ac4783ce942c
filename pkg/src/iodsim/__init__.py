"""Internet-of-Drones airspace simulator."""

from .airspace import ElementId, PerformanceProfile, Point, format_address, parse_address
from .engine import Engine, run
from .scenario import load_scenario

__version__ = "0.1.0"

__all__ = [
    "ElementId", "Engine", "PerformanceProfile", "Point", "format_address", "load_scenario", "parse_address", "run",
]
