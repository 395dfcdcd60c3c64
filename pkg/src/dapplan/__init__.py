"""Plan data acquisition point (DAP) placement and smart-meter routing under latency reliability targets."""

__version__ = "0.1.0"
