"""Cell-free symbiotic radio: channels, estimation, rates, and beamforming."""

__version__ = "0.1.0"
