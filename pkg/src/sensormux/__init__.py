"""Sensor-multiplexing side-channel simulator."""
__version__ = "0.1.0"
