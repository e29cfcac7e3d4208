"""HSPI: hardware/software platform inference toolkit."""

__version__ = "0.4.0"
