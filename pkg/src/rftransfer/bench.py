"""Synthetic transfer tasks built from BBOB-style test functions.

The functions are the plain textbook forms (no BBOB oscillation, asymmetry
or optimum offsets); each has minimum value 0.  A target instance is the
source function composed with a hidden rotation and translation.
"""
import math
from dataclasses import dataclass

import numpy as np

from .exceptions import DimensionError, InputError, NumericError
from .forest import Dataset
from .linalg import random_rotation

LOG_EPSILON = 1e-12
DOMAIN = (-5.0, 5.0)


def _exponents(d, scale):
    if d == 1:
        return np.zeros(1)
    return scale * np.arange(d) / (d - 1)


def sphere(x):
    return float(np.sum(x * x))


def ellipsoid(x):
    return float(np.sum(10.0 ** _exponents(x.size, 6.0) * x * x))


def rastrigin(x):
    return float(10.0 * (x.size - np.sum(np.cos(2 * np.pi * x))) + np.sum(x * x))


def linear_slope(x):
    # slope +1 in every coordinate; clamped at the box edge as in BBOB f5, so
    # the value stays >= 0 for arguments pushed outside the box by a transform
    z = np.minimum(x, DOMAIN[1])
    return float(np.sum(DOMAIN[1] - z))


def rosenbrock(x):
    return float(np.sum(100.0 * (x[:-1] ** 2 - x[1:]) ** 2 + (x[:-1] - 1.0) ** 2))


def different_powers(x):
    return float(np.sum(np.abs(x) ** (2.0 + _exponents(x.size, 4.0))))


FUNCTIONS = {
    "sphere": (sphere, "F1"),
    "ellipsoid": (ellipsoid, "F2"),
    "rastrigin": (rastrigin, "F3"),
    "linear_slope": (linear_slope, "F5"),
    "rosenbrock": (rosenbrock, "F8"),
    "different_powers": (different_powers, "F14"),
}
_ALIASES = {code.lower(): name for name, (_, code) in FUNCTIONS.items()}


def resolve(fid):
    """Canonical function name for a name or BBOB code such as ``"F3"``."""
    key = str(fid).strip().lower()
    key = _ALIASES.get(key, key)
    if key not in FUNCTIONS:
        raise InputError(f"unknown benchmark function {fid!r}; "
                         f"choose from {sorted(FUNCTIONS)}")
    return key


@dataclass(frozen=True)
class BenchmarkFunction:
    name: str
    d: int

    def __post_init__(self):
        object.__setattr__(self, "name", resolve(self.name))
        if self.d < 1:
            raise DimensionError(f"dimension must be >= 1, got {self.d}")

    @property
    def code(self):
        return FUNCTIONS[self.name][1]

    @property
    def f_opt(self):
        return 0.0

    @property
    def x_opt(self):
        if self.name == "rosenbrock":
            return np.ones(self.d)
        if self.name == "linear_slope":
            return np.full(self.d, DOMAIN[1])
        return np.zeros(self.d)

    def __call__(self, x):
        return eval_function(self, x)


def eval_function(f, x):
    x = np.asarray(x, dtype=float).ravel()
    if x.size != f.d:
        raise DimensionError(f"{f.name} is {f.d}-dimensional, got length {x.size}")
    return FUNCTIONS[f.name][0](x)


@dataclass(frozen=True, eq=False)
class TransferInstance:
    """Target ``f_T(x) = f_S(W x + v)`` for a hidden rotation W and shift v."""

    source: BenchmarkFunction
    W: np.ndarray
    v: np.ndarray
    seed: int

    @property
    def d(self):
        return self.source.d

    def source_value(self, x):
        return eval_function(self.source, x)

    def target_value(self, x):
        x = np.asarray(x, dtype=float).ravel()
        return eval_function(self.source, self.W @ x + self.v)

    @property
    def target_argmin(self):
        return np.linalg.solve(self.W, self.source.x_opt - self.v)


def make_instance(fid, d, seed, translation_range=1.0):
    if d < 2:
        raise DimensionError(f"transfer instances need d >= 2, got {d}")
    f = BenchmarkFunction(fid, d)
    rot_ss, shift_ss = np.random.SeedSequence(seed).spawn(2)
    W = random_rotation(d, np.random.default_rng(rot_ss))
    v = np.random.default_rng(shift_ss).uniform(-translation_range,
                                                translation_range, size=d)
    return TransferInstance(f, W, v, seed)


def sample_uniform(n, d, lo, hi, rng):
    if n < 1:
        raise InputError(f"n must be >= 1, got {n}")
    if not lo < hi:
        raise InputError(f"need lo < hi, got [{lo}, {hi}]")
    return np.random.default_rng(rng).uniform(lo, hi, size=(n, d))


def log_transform(values, f_opt=0.0, epsilon=LOG_EPSILON):
    return np.log10(np.asarray(values, dtype=float) - f_opt + epsilon)


def inverse_log_transform(y, f_opt=0.0, epsilon=LOG_EPSILON):
    return 10.0 ** np.asarray(y, dtype=float) - epsilon + f_opt


def build_dataset(fn, X, log=False, epsilon=LOG_EPSILON, f_opt=0.0):
    """Evaluate ``fn`` row-wise; optionally ``log10(f - f_opt + epsilon)``."""
    if log and not epsilon > 0:
        raise InputError(f"epsilon must be positive, got {epsilon}")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.empty(X.shape[0])
    for i, row in enumerate(X):
        val = fn(row)
        if not math.isfinite(val):
            raise NumericError(f"non-finite function value {val} at row {i}")
        y[i] = val
    if log:
        y = log_transform(y, f_opt, epsilon)
        bad = np.flatnonzero(~np.isfinite(y))
        if bad.size:
            raise NumericError(
                f"log transform undefined at row {bad[0]} (value below f_opt)")
    return Dataset(X, y)
