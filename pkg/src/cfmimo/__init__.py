"""Downlink simulator and analysis library for cell-free massive MIMO with
multi-antenna access points and multi-antenna users."""

from . import channel, estimation, harness, netgeom, powerctl, se, transmit

__all__ = ["channel", "estimation", "harness", "netgeom", "powerctl", "se",
           "transmit"]
