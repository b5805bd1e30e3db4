"""Near-field NOMA with dynamic metasurface antennas."""
__version__ = "0.1.0"
