"""Weighted reduced order models (weighted greedy RB and weighted POD) for parametrized PDEs with random inputs."""

__version__ = "0.1.0"
