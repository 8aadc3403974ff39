"""Shared data model: datasets, hyperparameters, fitted models and reports."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Dict, Optional, Sequence, Tuple

import numpy as np


class ScqrError(Exception):
    """Base class for all package errors."""


class ParameterError(ScqrError, ValueError):
    """An argument is outside its admissible range."""


class DegenerateColumnError(ParameterError):
    """A column has zero variance and cannot be standardized."""


class SolverError(ScqrError, RuntimeError):
    """A numerical backend failed to produce a usable solution."""

    def __init__(self, message: str, status: Optional[str] = None):
        super().__init__(message)
        self.status = status


class InstanceSizeError(ScqrError, ValueError):
    """An exhaustive routine was asked to enumerate too many candidates."""


@dataclass(frozen=True)
class Dataset:
    """Feature matrix ``X`` (n x d) and response ``y`` (n,).

    ``centers`` and ``scales`` hold the per-column standardization records,
    ``y_center`` and ``y_scale`` the response record, so that predictions on
    the standardized scale can be mapped back to original units.
    """

    X: np.ndarray
    y: np.ndarray
    feature_names: Optional[Tuple[str, ...]] = None
    standardized: bool = False
    centers: Optional[np.ndarray] = None
    scales: Optional[np.ndarray] = None
    y_center: Optional[float] = None
    y_scale: Optional[float] = None

    def __post_init__(self):
        X = np.array(self.X, dtype=float)
        y = np.array(self.y, dtype=float).ravel()
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2:
            raise ParameterError("X must be a 2-D array")
        n, d = X.shape
        if n < 2 or d < 1:
            raise ParameterError(f"need n >= 2 and d >= 1, got n={n}, d={d}")
        if y.shape[0] != n:
            raise ParameterError(f"y has {y.shape[0]} entries but X has {n} rows")
        if not np.all(np.isfinite(X)):
            raise ParameterError("X contains non-finite values")
        if not np.all(np.isfinite(y)):
            raise ParameterError("y contains non-finite values")
        if self.feature_names is not None:
            names = tuple(str(s) for s in self.feature_names)
            if len(names) != d:
                raise ParameterError("feature_names length does not match d")
            object.__setattr__(self, "feature_names", names)
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def names(self) -> Tuple[str, ...]:
        if self.feature_names is not None:
            return self.feature_names
        return tuple(f"x{j}" for j in range(self.d))

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return replace(self, X=self.X[rows], y=self.y[rows])

    def columns(self, cols) -> "Dataset":
        cols = np.asarray(cols, dtype=int)
        names = None if self.feature_names is None else tuple(self.feature_names[c] for c in cols)
        centers = None if self.centers is None else self.centers[cols]
        scales = None if self.scales is None else self.scales[cols]
        return replace(self, X=self.X[:, cols], feature_names=names, centers=centers, scales=scales)

    def negated(self) -> "Dataset":
        """Flip the response sign.

        A concave tau-quantile fit equals the negation of a convex
        (1 - tau)-quantile fit on ``-y``.
        """
        yc = None if self.y_center is None else -self.y_center
        return replace(self, y=-self.y, y_center=yc)

    def transform_X(self, X) -> np.ndarray:
        """Map raw feature rows onto the scale this dataset lives on."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if not self.standardized:
            return X
        return (X - self.centers) / self.scales

    def inverse_y(self, values) -> np.ndarray:
        """Map responses on this dataset's scale back to original units."""
        values = np.asarray(values, dtype=float)
        if not self.standardized:
            return values
        return values * self.y_scale + self.y_center


def _check_tau(tau: float) -> None:
    if not (0.0 < tau < 1.0):
        raise ParameterError(f"tau must lie in (0, 1), got {tau}")


@dataclass(frozen=True)
class QuantileConfig:
    """Hyperparameters of the regularized, epsilon-insensitive CQR problem.

    ``tol`` is the separation tolerance of the cutting-plane loop. The
    default is tight because Benders cuts and the subset oracle compare
    objective values to 1e-4.
    """

    tau: float = 0.5
    C: float = 1.0
    epsilon: float = 0.0
    tol: float = 1e-6
    qp_eps: float = 1e-6
    max_cp_iters: int = 200
    qp_max_iters: int = 20000
    regularized: bool = True
    initial_pool: str = "empty"
    qp_method: str = "ipm"

    def __post_init__(self):
        _check_tau(self.tau)
        if not self.C > 0:
            raise ParameterError(f"C must be positive, got {self.C}")
        if not self.epsilon >= 0:
            raise ParameterError(f"epsilon must be nonnegative, got {self.epsilon}")
        if not self.tol > 0:
            raise ParameterError(f"tol must be positive, got {self.tol}")
        if not self.qp_eps > 0:
            raise ParameterError(f"qp_eps must be positive, got {self.qp_eps}")
        if int(self.max_cp_iters) < 1:
            raise ParameterError("max_cp_iters must be a positive integer")
        if self.initial_pool not in ("empty", "knn"):
            raise ParameterError(f"unknown initial_pool {self.initial_pool!r}")
        if self.qp_method not in ("ipm", "admm"):
            raise ParameterError(f"unknown qp_method {self.qp_method!r}")

    def with_(self, **kwargs) -> "QuantileConfig":
        return replace(self, **kwargs)


class Termination(str, enum.Enum):
    CONVERGED = "Converged"
    ITER_LIMIT = "IterLimit"
    TIME_LIMIT = "TimeLimit"


@dataclass(frozen=True)
class SolveReport:
    iterations: int
    wall_time: float
    objective: float
    primal_infeasibility: float
    termination: Termination
    objective_trace: Tuple[float, ...] = ()
    n_constraints: int = 0

    def __post_init__(self):
        if self.iterations < 0 or self.wall_time < 0 or self.primal_infeasibility < 0:
            raise ParameterError("report fields must be nonnegative")

    def to_dict(self) -> dict:
        return {
            "iterations": int(self.iterations),
            "wall_time": float(self.wall_time),
            "objective": float(self.objective),
            "primal_infeasibility": float(self.primal_infeasibility),
            "termination": self.termination.value,
            "n_constraints": int(self.n_constraints),
        }


@dataclass(frozen=True)
class CqrModel:
    """A fitted max-affine quantile function.

    Piece ``i`` is ``theta[i] + beta[i] @ (x - anchors[i])``. ``mu`` maps
    generated convexity pairs ``(i, j)`` to their multipliers; pairs that
    were never generated carry an implicit zero.
    """

    theta: np.ndarray
    beta: np.ndarray
    xi: np.ndarray
    xi_star: np.ndarray
    anchors: np.ndarray
    objective: float
    mu: Dict[Tuple[int, int], float] = field(default_factory=dict)
    lam: Optional[np.ndarray] = None
    lam_star: Optional[np.ndarray] = None
    tau: float = 0.5
    support: Optional[np.ndarray] = None

    def __post_init__(self):
        for name in ("theta", "beta", "xi", "xi_star", "anchors"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.beta.ndim == 1:
            object.__setattr__(self, "beta", self.beta.reshape(-1, 1))
        if self.anchors.ndim == 1:
            object.__setattr__(self, "anchors", self.anchors.reshape(-1, 1))

    @property
    def n(self) -> int:
        return self.theta.shape[0]

    @property
    def d(self) -> int:
        return self.beta.shape[1]

    def mu_arrays(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return ``(rows, cols, values)`` of the sparse multiplier map."""
        if not self.mu:
            e = np.zeros(0, dtype=int)
            return e, e, np.zeros(0)
        keys = np.array(list(self.mu.keys()), dtype=int)
        vals = np.fromiter(self.mu.values(), dtype=float, count=len(self.mu))
        return keys[:, 0], keys[:, 1], vals


@dataclass(frozen=True)
class SupportVector:
    """Binary feature indicator with at most ``k`` ones."""

    z: np.ndarray
    k: int

    def __post_init__(self):
        z = np.asarray(self.z)
        zi = np.rint(z).astype(np.int8)
        if z.ndim != 1 or not np.all((zi == 0) | (zi == 1)) or not np.allclose(z, zi):
            raise ParameterError("support entries must be 0 or 1")
        if int(self.k) < 0:
            raise ParameterError("k must be nonnegative")
        if int(zi.sum()) > int(self.k):
            raise ParameterError(f"support has {int(zi.sum())} ones, more than k={self.k}")
        zi.setflags(write=False)
        object.__setattr__(self, "z", zi)
        object.__setattr__(self, "k", int(self.k))

    @classmethod
    def from_indices(cls, indices: Sequence[int], d: int, k: Optional[int] = None) -> "SupportVector":
        z = np.zeros(d, dtype=np.int8)
        z[list(indices)] = 1
        return cls(z, len(indices) if k is None else k)

    @classmethod
    def from_bits(cls, bits: str, k: Optional[int] = None) -> "SupportVector":
        z = np.array([int(b) for b in bits], dtype=np.int8)
        return cls(z, int(z.sum()) if k is None else k)

    @property
    def d(self) -> int:
        return self.z.shape[0]

    @property
    def indices(self) -> Tuple[int, ...]:
        return tuple(int(j) for j in np.flatnonzero(self.z))

    def bits(self) -> str:
        return "".join("1" if v else "0" for v in self.z)

    def hamming(self, other: "SupportVector") -> int:
        return int(np.sum(self.z != other.z))

    def __hash__(self):
        return hash((self.bits(), self.k))

    def __eq__(self, other):
        if not isinstance(other, SupportVector):
            return NotImplemented
        return self.k == other.k and np.array_equal(self.z, other.z)


def pinball_loss(u, tau: float):
    """Check loss: ``tau*u`` for ``u >= 0`` and ``(tau-1)*u`` otherwise.

    Works elementwise on arrays; returns a float for scalar input.
    """
    _check_tau(tau)
    u = np.asarray(u, dtype=float)
    out = np.where(u >= 0, tau * u, (tau - 1.0) * u)
    if out.ndim == 0:
        return float(out)
    return out


def standardize(data: Dataset) -> Dataset:
    """Center every column of ``X`` and ``y`` and scale to unit l2 norm.

    The returned dataset records the centers and scales relative to the
    original units; standardizing an already standardized dataset composes
    the records, so the mapping back to raw units stays correct.
    """
    X, y = data.X, data.y
    cx = X.mean(axis=0)
    Xc = X - cx
    sx = np.linalg.norm(Xc, axis=0)
    names = data.names()
    for j in range(data.d):
        if sx[j] <= 1e-12 * max(1.0, np.abs(X[:, j]).max()):
            raise DegenerateColumnError(f"column {names[j]!r} has zero variance")
    cy = y.mean()
    yc = y - cy
    sy = float(np.linalg.norm(yc))
    if sy <= 1e-12 * max(1.0, np.abs(y).max()):
        raise DegenerateColumnError("response column has zero variance")
    Xs = Xc / sx
    ys = yc / sy
    if data.standardized:
        centers = data.centers + cx * data.scales
        scales = data.scales * sx
        y_center = data.y_center + cy * data.y_scale
        y_scale = data.y_scale * sy
    else:
        centers, scales, y_center, y_scale = cx, sx, float(cy), sy
    return replace(
        data,
        X=Xs,
        y=ys,
        standardized=True,
        centers=np.asarray(centers, dtype=float),
        scales=np.asarray(scales, dtype=float),
        y_center=float(y_center),
        y_scale=float(y_scale),
    )
