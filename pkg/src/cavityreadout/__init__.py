"""Cavity-enhanced optical spin readout: input-output theory, master-equation
dynamics, counting statistics, Monte Carlo and fitting."""

__version__ = "0.1.0"
