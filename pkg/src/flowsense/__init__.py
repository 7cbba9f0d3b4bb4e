"""Flow-level traffic anomaly detection for AGC networks."""

__version__ = "0.1.0"
