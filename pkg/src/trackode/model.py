"""Parameterized linear ODE models  dx/dt = A(theta, t) x + r(theta, t).

A model is a matrix of coefficient expressions plus a known initial state and
a time horizon.  Builtins cover the scalar linear model, the scalar model
nonlinear in its parameters, its sin-forced variant, and the five-species
alpha-pinene isomerization network.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .expr import ExprEvalError, ExprNode, parse_expr

__all__ = [
    "ModelSpec",
    "ModelError",
    "ModelEvalError",
    "eval_A",
    "eval_r",
    "eval_dA_dtheta",
    "eval_dr_dtheta",
    "builtin_models",
    "get_model",
    "BUILTIN_TRUE_THETA",
    "load_model_json",
    "save_model_json",
    "ModelTables",
]


class ModelError(ValueError):
    pass


class ModelEvalError(ModelError):
    """Non-finite coefficient value; carries the offending entry indices."""


@dataclass(frozen=True)
class ModelSpec:
    """Immutable description of a parameterized linear ODE."""

    name: str
    d: int
    p: int
    A_entries: tuple[tuple[ExprNode, ...], ...]
    r_entries: tuple[ExprNode, ...]
    x0: tuple[float, ...]
    horizon_T: float

    def __post_init__(self):
        if self.d < 1 or self.p < 1:
            raise ModelError("model dimensions must be positive")
        if len(self.A_entries) != self.d or any(len(row) != self.d for row in self.A_entries):
            raise ModelError(f"A must be {self.d}x{self.d}")
        if len(self.r_entries) != self.d:
            raise ModelError(f"r must have length {self.d}")
        if len(self.x0) != self.d:
            raise ModelError(f"x0 must have length {self.d}")
        if not np.all(np.isfinite(self.x0)):
            raise ModelError("x0 must be finite")
        if not self.horizon_T > 0:
            raise ModelError("horizon must be positive")
        for node in self._all_entries():
            k = node.max_param_index()
            if k > self.p:
                raise ModelError(f"expression references theta[{k}] but p={self.p}")

    def _all_entries(self):
        for row in self.A_entries:
            yield from row
        yield from self.r_entries

    @property
    def x0_array(self) -> np.ndarray:
        return np.array(self.x0, dtype=float)

    def check_theta(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float).ravel()
        if theta.size != self.p:
            raise ModelError(f"theta has length {theta.size}, expected {self.p}")
        if not np.all(np.isfinite(theta)):
            raise ModelError("theta must be finite")
        return theta


def _eval_entry(node: ExprNode, theta, t, where: str):
    try:
        out = node.eval(np.asarray(t, dtype=float), theta)
    except ExprEvalError as exc:
        raise ModelEvalError(f"{where}: {exc}") from exc
    if not np.all(np.isfinite(out)):
        raise ModelEvalError(f"{where}: non-finite value")
    return out


def eval_A(model: ModelSpec, theta, t: float) -> np.ndarray:
    """Evaluate A(theta, t) entrywise, raising on any non-finite entry."""
    theta = model.check_theta(theta)
    out = np.empty((model.d, model.d))
    for i in range(model.d):
        for j in range(model.d):
            out[i, j] = _eval_entry(model.A_entries[i][j], theta, t, f"A[{i + 1}][{j + 1}]")
    return out


def eval_r(model: ModelSpec, theta, t: float) -> np.ndarray:
    theta = model.check_theta(theta)
    out = np.empty(model.d)
    for i in range(model.d):
        out[i] = _eval_entry(model.r_entries[i], theta, t, f"r[{i + 1}]")
    return out


def eval_dA_dtheta(model: ModelSpec, theta, t: float) -> np.ndarray:
    """Forward-mode derivative of A in theta, shape ``(d, d, p)``."""
    theta = model.check_theta(theta)
    out = np.empty((model.d, model.d, model.p))
    tt = np.asarray(t, dtype=float)
    for i in range(model.d):
        for j in range(model.d):
            try:
                _, grad = model.A_entries[i][j].eval_with_grad(tt, theta)
            except ExprEvalError as exc:
                raise ModelEvalError(f"A[{i + 1}][{j + 1}]: {exc}") from exc
            if not np.all(np.isfinite(grad)):
                raise ModelEvalError(f"A[{i + 1}][{j + 1}]: non-finite derivative")
            out[i, j, :] = grad.reshape(model.p)
    return out


def eval_dr_dtheta(model: ModelSpec, theta, t: float) -> np.ndarray:
    """Forward-mode derivative of r in theta, shape ``(d, p)``."""
    theta = model.check_theta(theta)
    out = np.empty((model.d, model.p))
    tt = np.asarray(t, dtype=float)
    for i in range(model.d):
        try:
            _, grad = model.r_entries[i].eval_with_grad(tt, theta)
        except ExprEvalError as exc:
            raise ModelEvalError(f"r[{i + 1}]: {exc}") from exc
        if not np.all(np.isfinite(grad)):
            raise ModelEvalError(f"r[{i + 1}]: non-finite derivative")
        out[i, :] = grad.reshape(model.p)
    return out


# -- builtins ---------------------------------------------------------------


def _make_model(name, A, r, x0, T, p):
    d = len(A)
    return ModelSpec(
        name=name,
        d=d,
        p=p,
        A_entries=tuple(tuple(parse_expr(e, p) for e in row) for row in A),
        r_entries=tuple(parse_expr(e, p) for e in r),
        x0=tuple(float(v) for v in x0),
        horizon_T=float(T),
    )


_ALPHA_PINENE_A = [
    ["-(theta[1]+theta[2])", "0", "0", "0", "0"],
    ["theta[1]", "0", "0", "0", "0"],
    ["theta[2]", "0", "-(theta[3]+theta[4])", "0", "theta[5]"],
    ["0", "0", "theta[3]", "0", "0"],
    ["0", "0", "theta[4]", "0", "-theta[5]"],
]


def builtin_models() -> dict[str, ModelSpec]:
    """Registry of the four builtin models, keyed by name."""
    return {
        "scalar-linear": _make_model(
            "scalar-linear", [["theta[1]"]], ["0"], [1.0], 5.0, p=1
        ),
        "nonlinear": _make_model(
            "nonlinear", [["theta[1]/(theta[2]^2 + t)"]], ["0"], [1.0], 15.0, p=2
        ),
        "nonlinear-sin": _make_model(
            "nonlinear-sin", [["theta[1]/(theta[2]^2 + t)"]], ["sin(t)"], [1.0], 15.0, p=2
        ),
        "alpha-pinene": _make_model(
            "alpha-pinene", _ALPHA_PINENE_A, ["0"] * 5, [100.0, 0, 0, 0, 0], 100.0, p=5
        ),
    }


# True parameters used in the simulation studies.  The scalar-linear value is
# a package default: the original study never states it.
BUILTIN_TRUE_THETA = {
    "scalar-linear": (0.5,),
    "nonlinear": (1.4, 1.0),
    "nonlinear-sin": (1.4, 1.0),
    "alpha-pinene": (5.93e-4, 2.96e-4, 2.05e-4, 27.5e-4, 4e-4),
}


def get_model(name: str) -> ModelSpec:
    registry = builtin_models()
    if name not in registry:
        raise ModelError(
            f"unknown model {name!r}; builtins: {', '.join(sorted(registry))}"
        )
    return registry[name]


# -- JSON model files --------------------------------------------------------


def load_model_json(path) -> ModelSpec:
    """Load a model from a JSON file with fields name/d/p/A/r/x0/T."""
    with open(path) as fh:
        raw = json.load(fh)
    for key in ("name", "d", "p", "A", "r", "x0", "T"):
        if key not in raw:
            raise ModelError(f"model file {path}: missing field {key!r}")
    return _make_model(raw["name"], raw["A"], raw["r"], raw["x0"], raw["T"], int(raw["p"]))


def save_model_json(model: ModelSpec, path) -> None:
    raise NotImplementedError(
        "expression trees do not retain source text; keep the original JSON"
    )


# -- dense evaluation on a refined grid --------------------------------------


@dataclass
class ModelTables:
    """A(t), r(t) and optional theta-Jacobians sampled on a time array.

    ``t`` is typically the half-step refinement of a solver grid so that RK4
    stage evaluations never interpolate model coefficients.
    """

    t: np.ndarray
    A: np.ndarray  # (m, d, d)
    r: np.ndarray  # (m, d)
    dA: np.ndarray | None = None  # (m, d, d, p)
    dr: np.ndarray | None = None  # (m, d, p)

    @classmethod
    def build(cls, model: ModelSpec, theta, t: np.ndarray, with_grad: bool = False):
        theta = model.check_theta(theta)
        t = np.asarray(t, dtype=float)
        m, d, p = t.size, model.d, model.p
        A = np.empty((m, d, d))
        r = np.empty((m, d))
        dA = np.empty((m, d, d, p)) if with_grad else None
        dr = np.empty((m, d, p)) if with_grad else None
        for i in range(d):
            for j in range(d):
                node = model.A_entries[i][j]
                if with_grad and node.depends_on_theta():
                    val, grad = node.eval_with_grad(t, theta)
                    A[:, i, j] = val
                    dA[:, i, j, :] = grad.T
                else:
                    A[:, i, j] = _eval_entry(node, theta, t, f"A[{i + 1}][{j + 1}]")
                    if with_grad:
                        dA[:, i, j, :] = 0.0
            node = model.r_entries[i]
            if with_grad and node.depends_on_theta():
                val, grad = node.eval_with_grad(t, theta)
                r[:, i] = val
                dr[:, i, :] = grad.T
            else:
                r[:, i] = _eval_entry(node, theta, t, f"r[{i + 1}]")
                if with_grad:
                    dr[:, i, :] = 0.0
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(r))):
            raise ModelEvalError("non-finite model coefficient on the grid")
        return cls(t=t, A=A, r=r, dA=dA, dr=dr)
