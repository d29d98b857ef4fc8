"""Energy-aware demand selection and trading engine for IoT data marketplaces."""

__version__ = "0.1.0"
