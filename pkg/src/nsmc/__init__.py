"""Sparse measure-valued control of the 2D incompressible Navier-Stokes equations."""

__version__ = "0.1.0"
