"""Power (Cressie-Read) divergence functions, their conjugates and RAFs.

For a real ``gamma`` the divergence function is

    phi_g(x) = (x**g - g*x + g - 1) / (g*(g - 1))

with the logarithmic limits ``phi_0(x) = -log x + x - 1`` and
``phi_1(x) = x log x - x + 1``.  Where ``phi_g`` is not defined (or not
convex) on the negative half line it is continued by its tangent at 0, so
every function maps the extended real line into ``[0, +inf]``.

Everything here is vectorised over numpy arrays; scalar input gives
scalar output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, UnknownDivergence

__all__ = [
    "DivergenceSpec",
    "RafValue",
    "make_power_divergence",
    "divergence_from_name",
    "phi_eval",
    "phi_prime_inverse",
    "conjugate_eval",
    "raf_value",
    "NAMED_DIVERGENCES",
]

NAMED_DIVERGENCES = {
    "chi2m": -1.0,
    "klm": 0.0,
    "hellinger": 0.5,
    "kl": 1.0,
    "chi2": 2.0,
}

# labels used in simulation reports
DISPLAY_NAMES = {
    "chi2m": "ME-chi2m",
    "klm": "MELE",
    "hellinger": "ME-H",
    "kl": "ME-KL",
    "chi2": "ME-chi2",
}


def _is_even_integer(g):
    return float(g).is_integer() and int(g) % 2 == 0


def _scalarize(a):
    a = np.asarray(a, dtype=float)
    return float(a) if a.ndim == 0 else a


@dataclass(frozen=True)
class DivergenceSpec:
    """A member of the power divergence family.

    Attributes
    ----------
    gamma : float
        Family index.
    name : str
        CLI name (``klm``, ``chi2``, ... or ``power:<gamma>``).
    domain_lo, domain_hi : float
        Endpoints ``a < 1 < b`` of the domain where ``phi`` is finite.
    prime_lo, prime_hi : float
        Open interval equal to the image of ``phi'`` over the interior of the
        strictly convex part of the domain.  The dual variable ``t`` must keep
        ``t @ gbar`` inside it.
    phi_second_at_one : float
        ``phi''(1)``; equal to one for the whole family.
    natural_on_reals : bool
        True when the power formula itself is convex on all of R (even
        integer ``gamma >= 2``) so no tangent continuation is used.
    """

    gamma: float
    name: str
    domain_lo: float
    domain_hi: float
    prime_lo: float
    prime_hi: float
    phi_second_at_one: float = 1.0
    natural_on_reals: bool = False

    kind = "power"

    @property
    def label(self):
        return DISPLAY_NAMES.get(self.name, f"ME-power({self.gamma:g})")

    @property
    def restricted_domain(self):
        """True when the projection weights must stay nonnegative."""
        return self.domain_lo > -math.inf

    # -- pointwise phi -----------------------------------------------------

    def phi(self, x):
        """Return ``(phi(x), phi'(x), phi''(x))`` with IEEE limits at endpoints."""
        g = self.gamma
        x = np.asarray(x, dtype=float)
        v = np.empty_like(x)
        d1 = np.empty_like(x)
        d2 = np.empty_like(x)

        with np.errstate(all="ignore"):
            if self.natural_on_reals:
                fin = np.isfinite(x)
                xf = x[fin]
                v[fin] = (xf**g - g * xf + g - 1.0) / (g * (g - 1.0))
                d1[fin] = (xf ** (g - 1.0) - 1.0) / (g - 1.0)
                d2[fin] = xf ** (g - 2.0)
                inf = ~fin
                v[inf] = math.inf
                d1[inf] = np.sign(x[inf]) * math.inf
                d2[inf] = 1.0 if g == 2 else math.inf
                return _scalarize(v), _scalarize(d1), _scalarize(d2)

            pos = (x > 0) & np.isfinite(x)
            xp = x[pos]
            if g == 0:
                v[pos] = -np.log(xp) + xp - 1.0
                d1[pos] = 1.0 - 1.0 / xp
                d2[pos] = 1.0 / (xp * xp)
            elif g == 1:
                v[pos] = xp * np.log(xp) - xp + 1.0
                d1[pos] = np.log(xp)
                d2[pos] = 1.0 / xp
            else:
                v[pos] = (xp**g - g * xp + g - 1.0) / (g * (g - 1.0))
                d1[pos] = (xp ** (g - 1.0) - 1.0) / (g - 1.0)
                d2[pos] = xp ** (g - 2.0)

            # phi(0), phi'(0) as right limits
            if g <= 0:
                phi0 = math.inf
            else:
                phi0 = 1.0 / g
            dphi0 = -1.0 / (g - 1.0) if g > 1 else -math.inf

            zero = x == 0
            v[zero] = phi0
            d1[zero] = dphi0
            d2[zero] = math.inf if g < 2 else (1.0 if g == 2 else 0.0)

            top = x == math.inf
            v[top] = math.inf
            d1[top] = 1.0 / (1.0 - g) if g < 1 else math.inf
            d2[top] = 0.0 if g < 2 else math.inf

            neg = x < 0
            if g > 1:
                # tangent continuation at 0
                v[neg] = phi0 + dphi0 * x[neg]
                d1[neg] = dphi0
                d2[neg] = 0.0
            else:
                v[neg] = math.inf
                d1[neg] = -math.inf
                d2[neg] = math.inf

        # adding 0.0 turns -0.0 into 0.0
        return _scalarize(v + 0.0), _scalarize(d1 + 0.0), _scalarize(d2)

    # -- inverse of phi' and the conjugate -------------------------------

    def in_prime_image(self, u):
        u = np.asarray(u, dtype=float)
        return (u > self.prime_lo) & (u < self.prime_hi)

    def _check_prime(self, u):
        u = np.asarray(u, dtype=float)
        if not np.all(self.in_prime_image(u)):
            raise DomainError(
                f"argument outside the image of phi' ({self.prime_lo}, {self.prime_hi}) "
                f"for divergence {self.name}"
            )
        return u

    def prime_inverse(self, u):
        """Inverse of ``phi'``; raises DomainError outside the prime image."""
        u = self._check_prime(u)
        return _scalarize(self._conj_terms(u)[1])

    def conjugate(self, u):
        """Return ``(phi*(u), phi*'(u), phi*''(u))`` for ``u`` in the prime image."""
        u = self._check_prime(u)
        val, d1, d2 = self._conj_terms(u)
        return _scalarize(val), _scalarize(d1), _scalarize(d2)

    def _conj_terms(self, u):
        # unchecked; caller guarantees u lies in the prime image
        g = self.gamma
        if g == 2:
            return u + 0.5 * u * u, 1.0 + u, np.ones_like(u)
        if self.natural_on_reals:
            w = 1.0 + (g - 1.0) * u
            x = np.sign(w) * np.abs(w) ** (1.0 / (g - 1.0))
            ax = np.abs(x)
            with np.errstate(divide="ignore"):
                return (ax**g - 1.0) / g, x, ax ** (2.0 - g)
        if g == 1:
            logx = u
        else:
            logx = np.log1p((g - 1.0) * u) / (g - 1.0)
        x = np.exp(logx)
        if g == 0:
            val = logx
        else:
            val = np.expm1(g * logx) / g
        return val, x, np.exp((2.0 - g) * logx)


def make_power_divergence(gamma, name=None):
    """Build the spec of the power divergence with index ``gamma``."""
    g = float(gamma)
    if not math.isfinite(g):
        raise DomainError("gamma must be finite")
    if name is None:
        name = next((k for k, v in NAMED_DIVERGENCES.items() if v == g), f"power:{g:g}")
    natural = g >= 2 and _is_even_integer(g)
    if g <= 1:
        a, b = 0.0, math.inf
        lo = -math.inf
        hi = math.inf if g == 1 else 1.0 / (1.0 - g)
    else:
        a, b = -math.inf, math.inf
        hi = math.inf
        lo = -math.inf if natural else -1.0 / (g - 1.0)
    return DivergenceSpec(
        gamma=g,
        name=name,
        domain_lo=a,
        domain_hi=b,
        prime_lo=lo,
        prime_hi=hi,
        phi_second_at_one=1.0,
        natural_on_reals=natural,
    )


def divergence_from_name(name):
    """Parse a CLI divergence name such as ``klm`` or ``power:1.5``."""
    key = name.strip().lower()
    if key in NAMED_DIVERGENCES:
        return make_power_divergence(NAMED_DIVERGENCES[key], name=key)
    if key.startswith("power:"):
        try:
            g = float(key.split(":", 1)[1])
        except ValueError:
            raise UnknownDivergence(f"cannot parse gamma in {name!r}") from None
        return make_power_divergence(g)
    raise UnknownDivergence(
        f"unknown divergence {name!r}; expected one of "
        f"{', '.join(NAMED_DIVERGENCES)} or power:<gamma>"
    )


def phi_eval(spec, x):
    return spec.phi(x)


def phi_prime_inverse(spec, u):
    return spec.prime_inverse(u)


def conjugate_eval(spec, u):
    return spec.conjugate(u)


@dataclass(frozen=True)
class RafValue:
    gamma: float
    delta: float
    value: float


def raf_value(gamma, delta):
    """Residual adjustment function ``A_gamma`` at Pearson residual ``delta``."""
    if not delta > -1:
        raise DomainError("the Pearson residual must exceed -1")
    g = float(gamma)
    if g == 1:
        value = -math.log1p(delta)
    else:
        value = math.expm1((1.0 - g) * math.log1p(delta)) / (g - 1.0)
    return RafValue(gamma=g, delta=float(delta), value=value)
