"""Test-function construction for the Yamabe problem on manifolds with umbilic boundary."""

__version__ = "0.1.0"
