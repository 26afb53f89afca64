"""phaseprobe: atomistic metrology toolkit for superconducting nitride trilayers."""

__version__ = "0.1.0"
