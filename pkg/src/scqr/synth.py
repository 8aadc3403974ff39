"""Synthetic data generating processes for the Monte Carlo experiments.

Randomness comes from PCG64 generators seeded by ``SeedSequence(seed)``
with one spawned child per purpose, so the feature draws do not shift
when the noise draw changes and vice versa:

========  =========================================
stream    purpose
========  =========================================
0         features (and the random true support)
1         noise
2         train/test splits
3         cross-validation folds
========  =========================================
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

from .types import Dataset, ParameterError

STREAM_FEATURES = 0
STREAM_NOISE = 1
STREAM_SPLIT = 2
STREAM_FOLDS = 3

QV_SUPPORT = (0, 1, 4, 7, 8, 12, 14, 18, 24, 25)
QV_MEDIAN = (0, 1, 4, 7)


def rng_stream(seed: int, stream: int) -> np.random.Generator:
    """Independent PCG64 generator for ``(seed, stream)``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(stream),))
    return np.random.Generator(np.random.PCG64(ss))


class DgpKind(str, enum.Enum):
    DGP_I = "DgpI"
    DGP_II = "DgpII"
    QUADRATIC_GAUSSIAN = "QuadraticGaussian"
    QUANTILE_VARYING = "QuantileVarying"


@dataclass(frozen=True)
class DgpSpec:
    """Data generating process parameters.

    Exactly one of ``sigma`` and ``snr`` must be set. For the quadratic
    design the true support is ``support`` when given, otherwise ``k``
    features drawn at random (all ``d`` when ``k`` is also missing).
    """

    kind: DgpKind
    n: int
    d: int = 2
    sigma: Optional[float] = None
    snr: Optional[float] = None
    rho: float = 0.0
    support: Optional[Tuple[int, ...]] = None
    k: Optional[int] = None
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", DgpKind(self.kind))
        if int(self.n) < 2:
            raise ParameterError("n must be at least 2")
        if int(self.d) < 1:
            raise ParameterError("d must be at least 1")
        if (self.sigma is None) == (self.snr is None):
            raise ParameterError("set exactly one of sigma and snr")
        if self.sigma is not None and self.sigma < 0:
            raise ParameterError("sigma must be nonnegative")
        if self.snr is not None and not self.snr > 0:
            raise ParameterError("snr must be positive")
        if not 0.0 <= self.rho <= 1.0:
            raise ParameterError("rho must lie in [0, 1]")
        if self.rho >= 1.0:
            raise ParameterError("rho = 1 gives a singular correlation matrix")
        need = {DgpKind.DGP_I: 2, DgpKind.DGP_II: 3}.get(self.kind, 1)
        if self.d < need:
            raise ParameterError(f"{self.kind.value} needs d >= {need}")
        if self.kind is DgpKind.QUANTILE_VARYING and self.d < 26:
            raise ParameterError("QuantileVarying needs d >= 26")
        if self.support is not None:
            sup = tuple(sorted(int(p) for p in self.support))
            if len(set(sup)) != len(sup) or any(p < 0 or p >= self.d for p in sup):
                raise ParameterError("support indices must be distinct and inside [0, d)")
            object.__setattr__(self, "support", sup)
        if self.k is not None and not 1 <= int(self.k) <= self.d:
            raise ParameterError("k must lie in [1, d]")


@dataclass(frozen=True)
class Truth:
    """What generated a dataset: the noiseless function and/or true support."""

    f_true: Optional[Callable[[np.ndarray], np.ndarray]]
    support: Optional[Tuple[int, ...]]
    sigma_used: float
    median_support: Optional[Tuple[int, ...]] = None

    def to_dict(self) -> dict:
        return {
            "support": None if self.support is None else list(self.support),
            "median_support": None if self.median_support is None else list(self.median_support),
            "sigma_used": self.sigma_used,
        }


def correlation_matrix(d: int, rho: float) -> np.ndarray:
    """Toeplitz matrix ``rho ** |p - q|``."""
    idx = np.arange(d)
    return rho ** np.abs(idx[:, None] - idx[None, :]).astype(float)


def _gaussian_features(rng, n, d, rho):
    if rho == 0.0:
        return rng.standard_normal((n, d))
    L = np.linalg.cholesky(correlation_matrix(d, rho))
    return rng.standard_normal((n, d)) @ L.T


def _noise_scale(spec: DgpSpec, mu: np.ndarray) -> float:
    if spec.sigma is not None:
        return float(spec.sigma)
    var = float(np.var(mu, ddof=1))
    return math.sqrt(var / spec.snr)


def _dgp1(x):
    return 3.0 + x[:, 0] ** 0.2 + x[:, 1] ** 0.3


def _dgp2(x):
    return 3.0 + x[:, 0] ** 0.05 + x[:, 1] ** 0.15 + x[:, 2] ** 0.3


def gen_dgp(spec: DgpSpec) -> Tuple[Dataset, Truth]:
    """Draw one dataset from ``spec``.

    ``sigma`` is the noise standard deviation. With ``snr`` it is set to
    ``sqrt(Var(mu) / snr)`` using the sample variance of the noiseless
    signal ``mu``. The QuantileVarying design multiplies the noise by the
    off-median block, so the median block alone is the conditional median.
    """
    frng = rng_stream(spec.seed, STREAM_FEATURES)
    nrng = rng_stream(spec.seed, STREAM_NOISE)
    n, d = spec.n, spec.d
    names = tuple(f"x{j}" for j in range(d))
    if spec.kind in (DgpKind.DGP_I, DgpKind.DGP_II):
        X = frng.uniform(1.0, 10.0, size=(n, d))
        f = _dgp1 if spec.kind is DgpKind.DGP_I else _dgp2
        mu = f(X)
        sigma = _noise_scale(spec, mu)
        y = mu + sigma * nrng.standard_normal(n)
        used = (0, 1) if spec.kind is DgpKind.DGP_I else (0, 1, 2)
        return Dataset(X, y, feature_names=names), Truth(f, used, sigma)
    if spec.kind is DgpKind.QUADRATIC_GAUSSIAN:
        X = _gaussian_features(frng, n, d, spec.rho)
        if spec.support is not None:
            sup = spec.support
        elif spec.k is not None:
            sup = tuple(sorted(int(p) for p in frng.choice(d, size=int(spec.k), replace=False)))
        else:
            sup = tuple(range(d))
        cols = np.asarray(sup, dtype=int)

        def f(x, cols=cols):
            x = np.atleast_2d(x)
            return np.sum(x[:, cols] ** 2, axis=1)

        mu = f(X)
        sigma = _noise_scale(spec, mu)
        y = mu + sigma * nrng.standard_normal(n)
        return Dataset(X, y, feature_names=names), Truth(f, sup, sigma)
    # quantile-varying support
    X = _gaussian_features(frng, n, d, spec.rho)
    med = np.asarray(QV_MEDIAN)
    rest = np.asarray([p for p in QV_SUPPORT if p not in QV_MEDIAN])
    head = np.sum(X[:, med] ** 2, axis=1)
    scale = np.sum(X[:, rest] ** 2, axis=1)
    if spec.sigma is not None:
        sigma = float(spec.sigma)
    else:
        sigma = math.sqrt(float(np.var(head, ddof=1)) / spec.snr)
    y = head + scale * sigma * nrng.standard_normal(n)

    def f_median(x):
        x = np.atleast_2d(x)
        return np.sum(x[:, med] ** 2, axis=1)

    return Dataset(X, y, feature_names=names), Truth(f_median, QV_SUPPORT, sigma, QV_MEDIAN)


def train_test_split(data: Dataset, test_fraction: float, seed: int) -> Tuple[Dataset, Dataset]:
    """Seeded random partition; the test part has ``floor(n * fraction)`` rows."""
    if not 0.0 < test_fraction < 1.0:
        raise ParameterError("test_fraction must lie in (0, 1)")
    n = data.n
    m = int(math.floor(n * test_fraction))
    if m < 1 or n - m < 1:
        raise ParameterError("split leaves an empty part")
    perm = rng_stream(seed, STREAM_SPLIT).permutation(n)
    test = np.sort(perm[:m])
    train = np.sort(perm[m:])
    return data.subset(train), data.subset(test)


def split_indices(n: int, test_fraction: float, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    perm = rng_stream(seed, STREAM_SPLIT).permutation(n)
    m = int(math.floor(n * test_fraction))
    return np.sort(perm[m:]), np.sort(perm[:m])
