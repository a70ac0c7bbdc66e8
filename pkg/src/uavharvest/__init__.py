"""UAV data-harvesting simulator with multi-objective soft actor-critic
training and evaluation."""

__version__ = "0.1.0"
