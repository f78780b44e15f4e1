"""Network slice orchestration over simulated multi-domain testbeds, with embedded security and ML agents."""

__version__ = "0.1.0"
