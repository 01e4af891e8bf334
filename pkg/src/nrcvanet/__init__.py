"""Non-recurrent congestion detection and classification over a simulated VANET."""

__version__ = "0.1.0"
