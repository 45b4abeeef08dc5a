"""Traffic signal control under incidents: a seeded microsimulator with driver information models."""

__version__ = "0.1.0"
