"""trackode: parameter estimation for linear ODE models by optimal tracking."""

__version__ = "0.1.0"

from .expr import ExprNode, parse_expr
from .model import ModelSpec, builtin_models, get_model, load_model_json
from .odesolve import GridFunction, TimeGrid

__all__ = [
    "ExprNode",
    "parse_expr",
    "ModelSpec",
    "builtin_models",
    "get_model",
    "load_model_json",
    "GridFunction",
    "TimeGrid",
    "__version__",
]
