"""Transfer a fitted forest to a new task by learning an affine input map.

The transferred model is ``f_T(x) = f_S(W x + v)``.  W is parameterized
through so(d): a candidate vector is ``(v, z)`` with ``z`` the row-major upper
triangle of an antisymmetric matrix A and ``W = exp(A)``.  The translation
and rotation parameters are fitted with BIPOP-CMA-ES on the mean squared error
over a small transfer set.
"""
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .cmaes import SearchSpace, bipop_run
from .exceptions import DimensionError, InputError, ModelFormatError
from .forest import Dataset, ForestModel, predict_batch
from .linalg import is_rotation, lie_dim, matrix_exp, pack_antisymmetric

TRANSLATION_BOUND = 1.5
ROTATION_BOUND = math.pi
TRANSFORM_FORMAT = "rftransfer-transform"
TRANSFORM_VERSION = 1


@dataclass(frozen=True, eq=False)
class AffineTransform:
    W: np.ndarray
    v: np.ndarray
    # so(d) coordinates the rotation was built from, when known
    z: Optional[np.ndarray] = None

    def __post_init__(self):
        W = np.asarray(self.W, dtype=float)
        v = np.asarray(self.v, dtype=float).ravel()
        if W.ndim != 2 or W.shape != (v.size, v.size):
            raise DimensionError(f"W must be {v.size}x{v.size}, got {W.shape}")
        if not np.all(np.isfinite(v)):
            raise InputError("translation must be finite")
        if not is_rotation(W):
            raise InputError("W is not a rotation matrix")
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "v", v)

    @property
    def d(self):
        return self.v.size

    @classmethod
    def identity(cls, d):
        return cls(np.eye(d), np.zeros(d), np.zeros(lie_dim(d)))

    def apply(self, X):
        """Map rows of ``X`` to ``W x + v``."""
        X = np.asarray(X, dtype=float)
        return X @ self.W.T + self.v


def candidate_length(d):
    return d + lie_dim(d)


def search_space(d):
    n_rot = lie_dim(d)
    lower = np.concatenate([np.full(d, -TRANSLATION_BOUND), np.full(n_rot, -ROTATION_BOUND)])
    return SearchSpace(lower, -lower)


def initial_step_size(d):
    """One fifth of the mean coordinate range of the search box."""
    n_rot = lie_dim(d)
    mean_range = (d * 2 * TRANSLATION_BOUND + n_rot * 2 * ROTATION_BOUND) / (d + n_rot)
    return mean_range / 5.0


def decode_candidate(x, d):
    x = np.asarray(x, dtype=float).ravel()
    if x.size != candidate_length(d):
        raise DimensionError(
            f"candidate for d={d} must have length {candidate_length(d)}, got {x.size}")
    v = x[:d].copy()
    z = x[d:].copy()
    return AffineTransform(matrix_exp(pack_antisymmetric(z, d)), v, z)


def encode_candidate(transform):
    if transform.z is None:
        raise InputError("transform carries no so(d) coordinates to encode")
    return np.concatenate([transform.v, transform.z])


def init_candidate(d, rng):
    """Translation ~ U[-0.5, 0.5]^d; rotation coordinates from the upper
    triangle of a standard Gaussian antisymmetric matrix, clipped to [-pi, pi]."""
    if d < 1:
        raise DimensionError(f"dimension must be >= 1, got {d}")
    rng = np.random.default_rng(rng)
    v = rng.uniform(-0.5, 0.5, size=d)
    z = np.clip(rng.standard_normal(lie_dim(d)), -ROTATION_BOUND, ROTATION_BOUND)
    return np.concatenate([v, z])


def transfer_loss(source, transform, transfer_set):
    """Mean squared error of ``source(W x + v)`` against the transfer targets."""
    if transfer_set.n == 0:
        raise InputError("transfer set is empty")
    if transfer_set.d != source.d or transform.d != source.d:
        raise DimensionError(f"dimensions disagree: model {source.d}, transform "
                             f"{transform.d}, data {transfer_set.d}")
    pred = predict_batch(source, transform.apply(transfer_set.X))
    return float(np.mean((pred - transfer_set.y) ** 2))


@dataclass(frozen=True, eq=False)
class TransferredModel:
    source: ForestModel
    transform: AffineTransform

    def __post_init__(self):
        if self.source.d != self.transform.d:
            raise DimensionError(f"model is {self.source.d}-D, transform is "
                                 f"{self.transform.d}-D")

    @property
    def d(self):
        return self.source.d

    def predict(self, x):
        return transferred_predict(self, x)

    def predict_batch(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.d:
            raise DimensionError(f"expected inputs with {self.d} columns, got {X.shape}")
        return predict_batch(self.source, self.transform.apply(X))


def transferred_predict(model, x):
    x = np.asarray(x, dtype=float).ravel()
    if x.size != model.d:
        raise DimensionError(f"expected a {model.d}-vector, got length {x.size}")
    return float(model.predict_batch(x.reshape(1, -1))[0])


@dataclass(frozen=True)
class TransferSettings:
    total_budget: int = 20_000
    n_restarts: int = 3
    tol: float = 1e-12
    inject_identity: bool = True
    popsize: Optional[int] = None
    budget_factor: int = 250


def tl_cmaes(source, transfer_set, settings=None, rng=None):
    """Fit (v, W) so that ``source(W x + v)`` matches the transfer set.

    Returns the best transform and the optimizer result.
    """
    settings = settings or TransferSettings()
    if transfer_set.n == 0:
        raise InputError("transfer set is empty")
    d = source.d
    if transfer_set.d != d:
        raise DimensionError(f"model is {d}-D but transfer data is {transfer_set.d}-D")
    X = transfer_set.X
    y = transfer_set.y

    def objective(x):
        t = decode_candidate(x, d)
        pred = predict_batch(source, t.apply(X))
        return float(np.mean((pred - y) ** 2))

    inject = np.zeros((1, candidate_length(d))) if settings.inject_identity else None
    result = bipop_run(objective, search_space(d),
                       lambda g: init_candidate(d, g), initial_step_size(d),
                       settings.total_budget, settings.n_restarts, rng=rng,
                       lam=settings.popsize, tol=settings.tol, inject=inject,
                       budget_factor=settings.budget_factor)
    return decode_candidate(result.best_x, d), result


def fit_transferred(source, transfer_set, settings=None, rng=None):
    transform, result = tl_cmaes(source, transfer_set, settings, rng)
    return TransferredModel(source, transform), result


def save_transform(transform, path):
    if transform.z is None:
        raise InputError("only transforms with so(d) coordinates can be saved")
    doc = {"format": TRANSFORM_FORMAT, "version": TRANSFORM_VERSION,
           "d": transform.d, "v": [float(a) for a in transform.v],
           "z": [float(a) for a in transform.z]}
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")
    return Path(path)


def load_transform(path):
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: invalid JSON ({exc})") from exc
    try:
        if doc["format"] != TRANSFORM_FORMAT or doc["version"] != TRANSFORM_VERSION:
            raise ModelFormatError(f"{path}: unsupported transform format")
        d = int(doc["d"])
        x = np.concatenate([np.asarray(doc["v"], dtype=float),
                            np.asarray(doc["z"], dtype=float)])
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"{path}: malformed transform ({exc})") from exc
    try:
        return decode_candidate(x, d)
    except DimensionError as exc:
        raise ModelFormatError(f"{path}: {exc}") from exc
