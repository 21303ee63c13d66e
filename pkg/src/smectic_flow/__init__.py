"""Linear, decoupled, energy-stable time stepping for smectic-A liquid crystal flows in 2D."""

__version__ = "0.1.0"
