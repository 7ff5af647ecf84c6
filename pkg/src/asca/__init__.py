"""Acoustic side-channel attack toolkit: recover touchscreen taps from a microphone array."""

__version__ = "0.1.0"
