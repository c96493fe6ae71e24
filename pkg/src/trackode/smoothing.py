"""First-step nonparametric estimation by cubic B-spline regression.

Knots are uniform on ``[0, T]`` with full boundary multiplicity; per-state
least squares, knot count selected by GCV.  A fit can be constrained to pass
through the known initial state exactly, which pins the first coefficient
(only the first basis function is nonzero at t = 0 for a clamped basis).
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import BSpline

__all__ = [
    "Dataset",
    "SplineBasis",
    "SplineFit",
    "SmoothingError",
    "fit_regression_spline",
    "select_knots_gcv",
    "eval_spline",
    "eval_spline_deriv",
]

_ORDER = 4  # cubic


class SmoothingError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    """Observation times and values; times strictly increasing in [0, T]."""

    times: np.ndarray
    observations: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float).ravel()
        y = np.asarray(self.observations, dtype=float)
        if y.ndim == 1:
            y = y[:, None]
        if t.size != y.shape[0]:
            raise SmoothingError("times and observations disagree in length")
        if t.size < 2:
            raise SmoothingError("need at least two observations")
        if np.any(np.diff(t) <= 0):
            raise SmoothingError("times must be strictly increasing")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(y))):
            raise SmoothingError("dataset must be finite")
        t = t.copy(); t.setflags(write=False)
        y = y.copy(); y.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "observations", y)

    @property
    def n(self) -> int:
        return self.times.size

    @property
    def d(self) -> int:
        return self.observations.shape[1]

    def to_csv(self, path) -> None:
        header = "t," + ",".join(f"y{i + 1}" for i in range(self.d))
        data = np.column_stack([self.times, self.observations])
        np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.17g")

    @classmethod
    def from_csv(cls, path) -> "Dataset":
        try:
            data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        except ValueError as exc:
            raise SmoothingError(f"{path}: {exc}") from exc
        if data.shape[1] < 2:
            raise SmoothingError(f"{path}: need a time column and one state column")
        return cls(data[:, 0], data[:, 1:])


@dataclass(frozen=True)
class SplineBasis:
    """Cubic basis with ``k_interior`` uniform interior knots on [0, T]."""

    t_max: float
    k_interior: int
    t_min: float = 0.0

    def __post_init__(self):
        if self.k_interior < 0:
            raise SmoothingError("interior knot count must be >= 0")
        if not self.t_max > self.t_min:
            raise SmoothingError("empty basis domain")

    @property
    def dimension(self) -> int:
        return self.k_interior + _ORDER

    @property
    def knots(self) -> np.ndarray:
        interior = np.linspace(self.t_min, self.t_max, self.k_interior + 2)[1:-1]
        return np.concatenate(
            [np.full(_ORDER, self.t_min), interior, np.full(_ORDER, self.t_max)]
        )

    def design_matrix(self, t: np.ndarray, deriv: int = 0) -> np.ndarray:
        t = np.clip(np.asarray(t, dtype=float), self.t_min, self.t_max)
        spl = BSpline(self.knots, np.eye(self.dimension), _ORDER - 1, extrapolate=True)
        if deriv:
            spl = spl.derivative(deriv)
        return spl(t)


@dataclass(frozen=True)
class SplineFit:
    basis: SplineBasis
    coeffs: np.ndarray  # (K, d)
    noise_variance: np.ndarray  # (d,)
    coeff_covariance: np.ndarray  # (d, K, K)
    gcv_score: float
    rss: float
    constrained: bool = False

    @property
    def d(self) -> int:
        return self.coeffs.shape[1]

    def __call__(self, t, deriv: int = 0) -> np.ndarray:
        B = self.basis.design_matrix(np.atleast_1d(t), deriv)
        out = B @ self.coeffs
        return out[0] if np.ndim(t) == 0 else out

    def to_json(self, path) -> None:
        payload = {
            "knots": self.basis.knots.tolist(),
            "k_interior": self.basis.k_interior,
            "coeffs": self.coeffs.tolist(),
            "noise_variance": self.noise_variance.tolist(),
            "gcv": self.gcv_score,
            "rss": self.rss,
            "constrained": self.constrained,
        }
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2)


def fit_regression_spline(
    data: Dataset, basis: SplineBasis, constrain_x0=None
) -> SplineFit:
    """Per-state least squares on the B-spline design.

    With ``constrain_x0`` the fit satisfies X(t_min) = x0 exactly by pinning
    the first coefficient (clamped basis: only B_1 is nonzero at the left
    endpoint) and regressing the remaining ones on the adjusted response.
    """
    B = basis.design_matrix(data.times)
    n, K = B.shape
    free = K - 1 if constrain_x0 is not None else K
    if n < free:
        raise SmoothingError(
            f"rank-deficient design: K={K} basis functions for n={n} points"
        )
    y = data.observations
    d = data.d
    coeffs = np.empty((K, d))
    cov = np.zeros((d, K, K))
    if constrain_x0 is not None:
        x0 = np.asarray(constrain_x0, dtype=float).ravel()
        if x0.size != d:
            raise SmoothingError("constraint dimension mismatch")
        Bf = B[:, 1:]
        target = y - np.outer(B[:, 0], x0)
        gram = Bf.T @ Bf
        try:
            sol = np.linalg.solve(gram, Bf.T @ target)
            gram_inv = np.linalg.inv(gram)
        except np.linalg.LinAlgError as exc:
            raise SmoothingError(
                f"rank-deficient design: K={K} basis functions for n={n} points"
            ) from exc
        coeffs[0] = x0
        coeffs[1:] = sol
        resid = target - Bf @ sol
        dof = max(n - free, 1)
        sigma2 = np.sum(resid**2, axis=0) / dof
        for j in range(d):
            cov[j, 1:, 1:] = sigma2[j] * gram_inv
    else:
        gram = B.T @ B
        try:
            sol = np.linalg.solve(gram, B.T @ y)
            gram_inv = np.linalg.inv(gram)
        except np.linalg.LinAlgError as exc:
            raise SmoothingError(
                f"rank-deficient design: K={K} basis functions for n={n} points"
            ) from exc
        coeffs[:] = sol
        resid = y - B @ sol
        dof = max(n - K, 1)
        sigma2 = np.sum(resid**2, axis=0) / dof
        for j in range(d):
            cov[j] = sigma2[j] * gram_inv
    rss = float(np.sum(resid**2))
    gcv = _gcv_value(rss, n, free, d, float(np.max(np.abs(y), initial=1.0)))
    return SplineFit(
        basis=basis,
        coeffs=coeffs,
        noise_variance=sigma2,
        coeff_covariance=cov,
        gcv_score=gcv,
        rss=rss,
        constrained=constrain_x0 is not None,
    )


def _gcv_value(rss: float, n: int, k_eff: int, d: int, y_scale: float) -> float:
    # Residuals below the numerical noise floor are clamped so that exact
    # fits tie and the tie-break (smaller K) decides.
    floor = d * n * (1e-13 * y_scale) ** 2
    rss = max(rss, floor)
    denom = (1.0 - k_eff / n) ** 2
    if denom <= 0:
        return np.inf
    return (rss / n) / denom


def select_knots_gcv(data: Dataset, candidates) -> SplineBasis:
    """Pick the interior-knot count minimizing summed per-state GCV.

    Ties break toward fewer knots; the scan order cannot matter because the
    comparison key is (score, count).
    """
    candidates = sorted(set(int(c) for c in candidates))
    if not candidates:
        raise SmoothingError("no knot candidates supplied")
    t_max = float(data.times[-1])
    best = None
    for k_int in candidates:
        basis = SplineBasis(t_max=t_max, k_interior=k_int)
        if basis.dimension > data.n:
            continue
        fit = fit_regression_spline(data, basis)
        key = (fit.gcv_score, k_int)
        if best is None or key < best[0]:
            best = (key, basis)
    if best is None:
        raise SmoothingError("all knot candidates infeasible for this sample size")
    return best[1]


def default_knot_candidates(n: int) -> list[int]:
    top = min(15, n // 4)
    return list(range(1, top + 1)) if top >= 1 else [0]


def eval_spline(fit: SplineFit, t) -> np.ndarray:
    """Value of the fitted curve; ``t`` must lie inside the basis domain."""
    _check_domain(fit, t)
    return fit(t)


def eval_spline_deriv(fit: SplineFit, t) -> np.ndarray:
    """Analytic first derivative of the fitted curve."""
    _check_domain(fit, t)
    return fit(t, deriv=1)


def _check_domain(fit: SplineFit, t) -> None:
    t = np.asarray(t)
    lo, hi = fit.basis.t_min, fit.basis.t_max
    tol = 1e-9 * (hi - lo)
    if np.any(t < lo - tol) or np.any(t > hi + tol):
        raise SmoothingError(f"evaluation time outside [{lo}, {hi}]")
