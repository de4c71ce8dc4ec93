"""Desk-scale wearable health-monitoring platform: data, models, firmware, protocol, simulation."""

__version__ = "0.1.0"
