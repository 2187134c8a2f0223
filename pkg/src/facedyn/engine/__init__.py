"""Minimal reverse-mode autodiff engine on numpy arrays."""

from facedyn.engine.tensor import Tensor, concat, no_grad
from facedyn.engine.nn import Module, ModuleList, Parameter

__all__ = ["Tensor", "concat", "no_grad", "Module", "ModuleList", "Parameter"]
