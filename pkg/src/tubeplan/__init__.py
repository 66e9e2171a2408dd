"""Safety-guaranteed trajectory planning for AUVs under wave disturbance."""

__version__ = "0.1.0"
