"""Ground-assisted federated learning in LEO satellite constellations."""

__version__ = "0.1.0"
