"""Minimal reverse-mode differentiation over dense numpy arrays."""

from . import ops
from .optim import Adam, adam_step
from .tensor import Graph, Parameter, ShapeError, Tensor, backward, topo_order, zero_grad

__all__ = ["Adam", "Graph", "Parameter", "ShapeError", "Tensor", "adam_step", "backward", "ops", "topo_order", "zero_grad"]
