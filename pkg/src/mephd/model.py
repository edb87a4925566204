"""Moment-condition models ``E_Q g(X, theta) = 0`` and sample ingestion."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DimensionMismatch, ParseError, UnknownModel

__all__ = [
    "MomentModel",
    "Sample",
    "builtin_model",
    "register_model",
    "available_models",
    "gbar_eval",
    "load_sample",
]


@dataclass(frozen=True)
class MomentModel:
    """A constraint function ``g`` with its theta-Jacobian.

    ``g(X, theta)`` receives the whole observation matrix ``X`` of shape
    ``(n, obs_dim)`` and returns an ``(n, l)`` array; ``g_jac`` returns
    ``(n, l, d)``.  ``g_hess`` (``(n, l, d, d)``) is only needed for the
    misspecification covariance; when omitted it is obtained by central
    differences of ``g_jac``.
    """

    name: str
    d: int
    l: int
    obs_dim: int
    g: Callable[[np.ndarray, np.ndarray], np.ndarray]
    g_jac: Callable[[np.ndarray, np.ndarray], np.ndarray]
    theta_box: tuple
    g_hess: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    theta_init: Optional[Callable[[np.ndarray], np.ndarray]] = None
    description: str = ""

    def moments(self, X, theta):
        return np.asarray(self.g(_as_obs(X, self.obs_dim), _as_theta(theta, self.d)), dtype=float)

    def gbar(self, X, theta):
        """``(n, l+1)`` matrix whose rows are ``(1, g_1, ..., g_l)``."""
        gm = self.moments(X, theta)
        out = np.empty((gm.shape[0], self.l + 1))
        out[:, 0] = 1.0
        out[:, 1:] = gm
        return out

    def jacobian(self, X, theta):
        return np.asarray(self.g_jac(_as_obs(X, self.obs_dim), _as_theta(theta, self.d)), dtype=float)

    def hessian(self, X, theta, step=1e-5):
        X = _as_obs(X, self.obs_dim)
        theta = _as_theta(theta, self.d)
        if self.g_hess is not None:
            return np.asarray(self.g_hess(X, theta), dtype=float)
        out = np.empty((X.shape[0], self.l, self.d, self.d))
        for k in range(self.d):
            h = step * max(1.0, abs(theta[k]))
            e = np.zeros(self.d)
            e[k] = h
            out[..., k] = (self.jacobian(X, theta + e) - self.jacobian(X, theta - e)) / (2 * h)
        return 0.5 * (out + np.swapaxes(out, -1, -2))

    def initial_theta(self, X):
        X = _as_obs(X, self.obs_dim)
        if self.theta_init is not None:
            return _as_theta(self.theta_init(X), self.d)
        lo = np.array([b[0] for b in self.theta_box], dtype=float)
        hi = np.array([b[1] for b in self.theta_box], dtype=float)
        return 0.5 * (lo + hi)

    def in_box(self, theta):
        theta = _as_theta(theta, self.d)
        return all(lo <= t <= hi for t, (lo, hi) in zip(theta, self.theta_box))


@dataclass(frozen=True)
class Sample:
    observations: np.ndarray
    source: str = field(default="", compare=False)

    def __post_init__(self):
        obs = np.asarray(self.observations, dtype=float)
        if obs.ndim == 1:
            obs = obs[:, None]
        if obs.ndim != 2:
            raise DimensionMismatch("observations must be a vector or a 2-d array")
        obs.setflags(write=False)
        object.__setattr__(self, "observations", obs)

    @property
    def n(self):
        return self.observations.shape[0]

    @property
    def obs_dim(self):
        return self.observations.shape[1]


def _as_obs(X, obs_dim):
    if isinstance(X, Sample):
        X = X.observations
    X = np.asarray(X, dtype=float)
    if X.ndim == 0:
        X = X.reshape(1, 1)
    elif X.ndim == 1:
        X = X.reshape(-1, 1) if obs_dim == 1 else X.reshape(1, -1)
    if X.shape[1] != obs_dim:
        raise DimensionMismatch(f"observations have {X.shape[1]} columns, model expects {obs_dim}")
    return X


def _as_theta(theta, d):
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if theta.shape != (d,):
        raise DimensionMismatch(f"theta has shape {theta.shape}, expected ({d},)")
    return theta


# -- builtin models -------------------------------------------------------


def _qinlawless_g(X, theta):
    x = X[:, 0]
    t = theta[0]
    return np.column_stack((x - t, x * x - 2.0 * t * t - 1.0))


def _qinlawless_jac(X, theta):
    n = X.shape[0]
    out = np.empty((n, 2, 1))
    out[:, 0, 0] = -1.0
    out[:, 1, 0] = -4.0 * theta[0]
    return out


def _qinlawless_hess(X, theta):
    out = np.zeros((X.shape[0], 2, 1, 1))
    out[:, 1, 0, 0] = -4.0
    return out


def _mean1_g(X, theta):
    return X[:, :1] - theta[0]


def _mean1_jac(X, theta):
    return np.full((X.shape[0], 1, 1), -1.0)


def _mean1_hess(X, theta):
    return np.zeros((X.shape[0], 1, 1, 1))


def _normal2_g(X, theta):
    x = X[:, 0]
    mu, v = theta
    return np.column_stack((x - mu, x * x - mu * mu - v, x**3 - mu**3 - 3.0 * mu * v))


def _normal2_jac(X, theta):
    mu, v = theta
    jac = np.array([[-1.0, 0.0], [-2.0 * mu, -1.0], [-3.0 * mu * mu - 3.0 * v, -3.0 * mu]])
    return np.broadcast_to(jac, (X.shape[0], 3, 2)).copy()


def _normal2_hess(X, theta):
    mu, _ = theta
    h = np.zeros((3, 2, 2))
    h[1, 0, 0] = -2.0
    h[2, 0, 0] = -6.0 * mu
    h[2, 0, 1] = h[2, 1, 0] = -3.0
    return np.broadcast_to(h, (X.shape[0], 3, 2, 2)).copy()


def _sample_mean(X):
    return np.array([X[:, 0].mean()])


def _mean_and_variance(X):
    x = X[:, 0]
    return np.array([x.mean(), max(x.var(), 1e-4)])


_REGISTRY = {
    "qinlawless": MomentModel(
        name="qinlawless",
        d=1,
        l=2,
        obs_dim=1,
        g=_qinlawless_g,
        g_jac=_qinlawless_jac,
        g_hess=_qinlawless_hess,
        theta_box=((-10.0, 10.0),),
        theta_init=_sample_mean,
        description="N(theta, theta^2 + 1) moment link: mean theta, second moment 2 theta^2 + 1",
    ),
    "mean1": MomentModel(
        name="mean1",
        d=1,
        l=1,
        obs_dim=1,
        g=_mean1_g,
        g_jac=_mean1_jac,
        g_hess=_mean1_hess,
        theta_box=((-10.0, 10.0),),
        theta_init=_sample_mean,
        description="population mean",
    ),
    "normal2": MomentModel(
        name="normal2",
        d=2,
        l=3,
        obs_dim=1,
        g=_normal2_g,
        g_jac=_normal2_jac,
        g_hess=_normal2_hess,
        theta_box=((-10.0, 10.0), (1e-4, 100.0)),
        theta_init=_mean_and_variance,
        description="normal mean and variance through the first three moments",
    ),
}


def builtin_model(name):
    try:
        return _REGISTRY[name]
    except KeyError:
        raise UnknownModel(
            f"unknown model {name!r}; available: {', '.join(sorted(_REGISTRY))}"
        ) from None


def register_model(model, overwrite=False):
    """Make a custom :class:`MomentModel` available through :func:`builtin_model`."""
    if model.name in _REGISTRY and not overwrite:
        raise ValueError(f"a model named {model.name!r} is already registered")
    _REGISTRY[model.name] = model
    return model


def available_models():
    return sorted(_REGISTRY)


def gbar_eval(model, x, theta):
    """Augmented constraint vector ``(1, g_1(x, theta), ..., g_l(x, theta))``."""
    return model.gbar(_as_obs(x, model.obs_dim)[:1], theta)[0]


# -- CSV ingestion --------------------------------------------------------


def _is_number(cell):
    try:
        float(cell)
    except ValueError:
        return False
    return True


def load_sample(path, obs_dim):
    """Read a numeric CSV with one observation per row.

    A single header row is skipped when its first cell is not numeric.
    Blank lines are ignored; rows keep their file order.
    """
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for lineno, raw in enumerate(reader, start=1):
            cells = [c.strip() for c in raw]
            if not cells or all(c == "" for c in cells):
                continue
            if not rows and lineno == 1 and not _is_number(cells[0]):
                continue
            if len(cells) != obs_dim:
                raise DimensionMismatch(
                    f"row {lineno} has {len(cells)} columns, expected {obs_dim}"
                )
            values = []
            for col, c in enumerate(cells, start=1):
                try:
                    values.append(float(c))
                except ValueError:
                    raise ParseError(f"non-numeric value {c!r}", row=lineno, column=col) from None
            rows.append(values)
    if not rows:
        raise ParseError(f"no observations in {path}")
    return Sample(np.array(rows, dtype=float), source=str(path))
