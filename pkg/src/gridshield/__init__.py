"""Firewall placement against cyber-physical intrusions in DC power networks."""

__version__ = "0.1.0"
