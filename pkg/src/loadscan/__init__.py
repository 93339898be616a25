"""Static scanner for load-time code execution in shared ML model files."""

__version__ = "0.1.0"
