"""Optimal detection of repeating spike patterns by a leaky integrate-and-fire neuron."""

__version__ = "0.1.0"
