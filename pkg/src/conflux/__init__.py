"""Conflux: pivot-chain ordering of a block DAG, confirmation risk, simulation and attacks."""

__version__ = "0.1.0"
