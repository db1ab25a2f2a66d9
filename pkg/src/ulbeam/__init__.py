"""Learning multiuser MIMO downlink beamforming from uplink channel information."""

__version__ = "0.1.0"
