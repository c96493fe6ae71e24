"""Fixed-step RK4 integration on a shared uniform grid.

Every downstream computation couples several functions of time pointwise
(trajectories, Riccati solutions, controls), so they all live on one
:class:`TimeGrid` and interpolation between solver outputs never happens.
Final-value problems are solved by exact time reversal.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "TimeGrid",
    "GridFunction",
    "DivergenceError",
    "integrate_ivp",
    "integrate_fvp",
    "resolvant",
    "duhamel_solution",
    "quadrature",
    "simpson_weights",
    "quad_nodes",
    "cumulative_quadrature",
    "midpoint_values",
]


class DivergenceError(RuntimeError):
    """Integration produced a non-finite state."""

    def __init__(self, message: str, t: float):
        super().__init__(f"{message} (t = {t:.6g})")
        self.t = t


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid with ``n_steps`` intervals on ``[t0, t1]``."""

    t0: float
    t1: float
    n_steps: int

    def __post_init__(self):
        if not self.t1 > self.t0:
            raise ValueError("need t1 > t0")
        if self.n_steps < 2:
            raise ValueError("need n_steps >= 2")

    @property
    def h(self) -> float:
        return (self.t1 - self.t0) / self.n_steps

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(self.t0, self.t1, self.n_steps + 1)

    @property
    def refined_nodes(self) -> np.ndarray:
        """Nodes plus step midpoints (2 n_steps + 1 points)."""
        return np.linspace(self.t0, self.t1, 2 * self.n_steps + 1)

    @property
    def quad_refined_nodes(self) -> np.ndarray:
        """Quarter-step nodes (4 n_steps + 1 points)."""
        return np.linspace(self.t0, self.t1, 4 * self.n_steps + 1)

    def index_of(self, t: float) -> int:
        """Index of a grid node, or raise if ``t`` is off-grid."""
        pos = (t - self.t0) / self.h
        idx = int(round(pos))
        if idx < 0 or idx > self.n_steps or abs(pos - idx) > 1e-9:
            raise ValueError(f"t = {t} is not a node of {self}")
        return idx


def _cubic_stencil(pos: np.ndarray, n_points: int):
    """Shifted 4-point Lagrange stencils on a uniform grid (exact on cubics)."""
    base = np.clip(np.floor(pos).astype(int), 0, n_points - 2)
    left = np.clip(base - 1, 0, n_points - 4)
    s = pos - left
    w0 = -(s - 1) * (s - 2) * (s - 3) / 6
    w1 = s * (s - 2) * (s - 3) / 2
    w2 = -s * (s - 1) * (s - 3) / 2
    w3 = s * (s - 1) * (s - 2) / 6
    return left, np.stack([w0, w1, w2, w3], axis=-1)


@dataclass(frozen=True)
class GridFunction:
    """Vector-valued function sampled on the nodes of a :class:`TimeGrid`.

    ``values`` has one row per node; columns are the components (state
    entries, stacked matrix columns, or a single scalar).  Values are frozen
    after construction.
    """

    grid: TimeGrid
    values: np.ndarray
    interpolation: str = "cubic"

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        if vals.shape[0] != self.grid.n_steps + 1:
            raise ValueError(
                f"values have {vals.shape[0]} rows for {self.grid.n_steps + 1} nodes"
            )
        if not np.all(np.isfinite(vals)):
            raise ValueError("grid function values must be finite")
        if self.interpolation not in ("linear", "cubic"):
            raise ValueError(f"unknown interpolation {self.interpolation!r}")
        vals = vals.copy()
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def k(self) -> int:
        return self.values.shape[1]

    def at(self, t) -> np.ndarray:
        """Evaluate at arbitrary times inside the grid span."""
        t = np.asarray(t, dtype=float)
        scalar = t.ndim == 0
        tt = np.atleast_1d(t)
        lo, hi = self.grid.t0, self.grid.t1
        tol = 1e-9 * (hi - lo)
        if np.any(tt < lo - tol) or np.any(tt > hi + tol):
            raise ValueError("evaluation time outside the grid span")
        pos = np.clip((tt - lo) / self.grid.h, 0.0, float(self.grid.n_steps))
        n_points = self.grid.n_steps + 1
        if self.interpolation == "linear" or n_points < 4:
            base = np.clip(pos.astype(int), 0, self.grid.n_steps - 1)
            w = (pos - base)[:, None]
            out = (1 - w) * self.values[base] + w * self.values[base + 1]
        else:
            left, w = _cubic_stencil(pos, n_points)
            out = np.einsum("qs,qsk->qk", w, self.values[left[:, None] + np.arange(4)])
        return out[0] if scalar else out

    def refined(self) -> np.ndarray:
        """Values on nodes and midpoints, shape ``(2 n + 1, k)``."""
        out = np.empty((2 * self.grid.n_steps + 1, self.k))
        out[::2] = self.values
        out[1::2] = midpoint_values(self.values)
        return out

    def to_csv(self, path) -> None:
        header = "t," + ",".join(f"v{i + 1}" for i in range(self.k))
        data = np.column_stack([self.grid.nodes, self.values])
        np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.17g")

    @classmethod
    def from_csv(cls, path, interpolation: str = "cubic") -> "GridFunction":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        t = data[:, 0]
        n = t.size - 1
        grid = TimeGrid(float(t[0]), float(t[-1]), n)
        if not np.allclose(t, grid.nodes, rtol=0, atol=1e-9 * (t[-1] - t[0])):
            raise ValueError(f"{path}: times are not a uniform grid")
        return cls(grid, data[:, 1:], interpolation)


def midpoint_values(values: np.ndarray) -> np.ndarray:
    """O(h^4) midpoint reconstruction of node samples (cubic stencils)."""
    v = np.asarray(values, dtype=float)
    squeeze = v.ndim == 1
    if squeeze:
        v = v[:, None]
    n = v.shape[0] - 1
    if n < 3:
        mid = (v[:-1] + v[1:]) / 2
    else:
        mid = np.empty((n, v.shape[1]))
        mid[1:-1] = (-v[:-3] + 9 * v[1:-2] + 9 * v[2:-1] - v[3:]) / 16
        mid[0] = (5 * v[0] + 15 * v[1] - 5 * v[2] + v[3]) / 16
        mid[-1] = (5 * v[-1] + 15 * v[-2] - 5 * v[-3] + v[-4]) / 16
    return mid[:, 0] if squeeze else mid


# -- generic RK4 --------------------------------------------------------------


def _rk4_loop(field, t_nodes, y0):
    h = t_nodes[1] - t_nodes[0]
    y = np.empty((t_nodes.size,) + np.shape(y0))
    y[0] = y0
    for i in range(t_nodes.size - 1):
        t = t_nodes[i]
        yi = y[i]
        k1 = np.asarray(field(t, yi))
        k2 = np.asarray(field(t + h / 2, yi + h / 2 * k1))
        k3 = np.asarray(field(t + h / 2, yi + h / 2 * k2))
        k4 = np.asarray(field(t + h, yi + h * k3))
        ynew = yi + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(ynew)):
            raise DivergenceError("integration diverged", t + h)
        y[i + 1] = ynew
    return y


def integrate_ivp(field, x0, grid: TimeGrid) -> GridFunction:
    """RK4 solve of ``dx/dt = field(t, x)`` from ``x0`` on the grid nodes."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    vals = _rk4_loop(field, grid.nodes, x0)
    return GridFunction(grid, vals)


def integrate_fvp(field, xT, grid: TimeGrid) -> GridFunction:
    """Final-value RK4 solve, by integrating the time-reversed system.

    With ``y(tau) = x(t1 - tau)`` the reversed field is ``-field(t1 - tau, y)``;
    rows are re-indexed on the forward grid so the last row is exactly ``xT``.
    """
    xT = np.atleast_1d(np.asarray(xT, dtype=float))
    t1 = grid.t1

    def reversed_field(tau, y):
        return -np.asarray(field(t1 - tau, y))

    tau_nodes = np.linspace(0.0, t1 - grid.t0, grid.n_steps + 1)
    vals = _rk4_loop(reversed_field, tau_nodes, xT)
    return GridFunction(grid, vals[::-1])


def resolvant(A_of_t, s: float, grid: TimeGrid) -> GridFunction:
    """Fundamental matrix t -> Phi(t, s) for t >= s, with Phi(s, s) = I.

    Columns of the matrices are stacked into the value columns; rows before
    ``s`` repeat the identity.
    """
    i0 = grid.index_of(s)
    probe = np.asarray(A_of_t(grid.t0))
    d = probe.shape[0]

    def field(t, m):
        return np.asarray(A_of_t(t)) @ m

    vals = np.empty((grid.n_steps + 1, d, d))
    vals[: i0 + 1] = np.eye(d)
    sub = grid.nodes[i0:]
    if sub.size > 1:
        vals[i0:] = _rk4_loop(field, sub, np.eye(d))
    return GridFunction(grid, vals.reshape(grid.n_steps + 1, d * d, order="F"))


def duhamel_solution(model, theta, u: GridFunction | None, grid: TimeGrid) -> GridFunction:
    """Variation-of-constants solution of dx/dt = A x + r + u from x0.

    X(t) = Phi(t,0) [x0 + int_0^t Phi(s,0)^{-1} (r(s) + u(s)) ds], with the
    resolvant integrated through quarter-step coefficient tables and the
    cumulative integral taken panel-wise at fourth order.
    """
    from .model import ModelTables
    from ._kernels import rk4_forward_matrix

    if u is not None and u.grid != grid:
        raise ValueError("control is defined on a different grid")
    tables4 = ModelTables.build(model, theta, grid.quad_refined_nodes)
    Phi2, ok, idx = rk4_forward_matrix(tables4.A, grid.h / 2)
    if not ok:
        raise DivergenceError("resolvant diverged", grid.refined_nodes[idx])
    forcing = tables4.r[::2].copy()
    if u is not None:
        forcing += u.refined()
    integrand = np.linalg.solve(Phi2, forcing[:, :, None])[:, :, 0]
    cum = cumulative_quadrature(integrand, grid.h / 2)[::2]
    vals = np.einsum("nij,nj->ni", Phi2[::2], model.x0_array[None, :] + cum)
    return GridFunction(grid, vals)


# -- quadrature ----------------------------------------------------------------


def simpson_weights(n_points: int, h: float) -> np.ndarray:
    """Composite Simpson weights; trapezoid on the final panel when the
    interval count is odd."""
    n = n_points - 1
    if n < 1:
        raise ValueError("need at least two points")
    w = np.zeros(n_points)
    m = n if n % 2 == 0 else n - 1
    if m >= 2:
        w[0 : m + 1 : 2] += 2.0
        w[1:m:2] += 4.0
        w[0] -= 1.0
        w[m] -= 1.0
        w[: m + 1] *= h / 3.0
    if n % 2 == 1:
        w[-2] += h / 2.0
        w[-1] += h / 2.0
    return w


def quadrature(f: GridFunction) -> float:
    """Integral of a scalar grid function over its span."""
    if f.k != 1:
        raise ValueError("quadrature expects a scalar-valued grid function")
    w = simpson_weights(f.grid.n_steps + 1, f.grid.h)
    return float(w @ f.values[:, 0])


def quad_nodes(values: np.ndarray, h: float) -> float:
    """Simpson integral of per-node scalar samples."""
    v = np.asarray(values, dtype=float)
    return float(simpson_weights(v.shape[0], h) @ v)


# Panel integrals of the local Lagrange cubic: interior panels use the centred
# stencil, boundary panels the one-sided ones.
_PANEL_FIRST = np.array([9.0, 19.0, -5.0, 1.0]) / 24.0
_PANEL_MID = np.array([-1.0, 13.0, 13.0, -1.0]) / 24.0
_PANEL_LAST = _PANEL_FIRST[::-1]


def cumulative_quadrature(values: np.ndarray, h: float) -> np.ndarray:
    """Cumulative integral at every node, fourth order on smooth data."""
    v = np.asarray(values, dtype=float)
    squeeze = v.ndim == 1
    if squeeze:
        v = v[:, None]
    n = v.shape[0] - 1
    panels = np.empty((n, v.shape[1]))
    if n < 3:
        panels[:] = (v[:-1] + v[1:]) / 2.0
    else:
        panels[1:-1] = (
            _PANEL_MID[0] * v[:-3]
            + _PANEL_MID[1] * v[1:-2]
            + _PANEL_MID[2] * v[2:-1]
            + _PANEL_MID[3] * v[3:]
        )
        panels[0] = _PANEL_FIRST @ v[:4]
        panels[-1] = _PANEL_LAST @ v[-4:]
    out = np.zeros_like(v)
    np.cumsum(panels * h, axis=0, out=out[1:])
    return out[:, 0] if squeeze else out
