"""Home-work mobility networks, community detection, and segregation indices."""

__version__ = "0.1.0"
