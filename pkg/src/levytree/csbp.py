"""Continuous-state branching process numerics.

The transition kernel of the process with mechanism psi is encoded by
u(t, lam), the solution of

    u_t(lam) + int_0^t psi(u_s(lam)) ds = lam,

equivalently du/dt = -psi(u), u_0 = lam.  Because psi is positive and
increasing, u is obtained by inverting the strictly monotone map

    G(x) = int_x^lam dv / psi(v) = t,

which is numerically benign where explicit ODE stepping is stiff.  The
extinction function v(t) solves int_v^inf dv/psi(v) = t and is finite
exactly when the Grey condition holds.

Closed forms exist for the quadratic and stable families; they are kept
out of this module on purpose and live in the test suite as independent
oracles, so that every assertion compares two genuinely distinct routes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq

from .mechanism import BranchingMechanism, MechanismError


class ExtinctionError(ValueError):
    """Raised when v(t) is requested but infinite (Grey condition fails)."""


_BRACKET_LIMIT = 2000


def _inv_psi_integral(m: BranchingMechanism, a: float, b: float, tol: float) -> float:
    """int_a^b dv/psi(v) for 0 < a <= b < inf, via a log substitution.

    With v = e^s the integrand e^s/psi(e^s) is smooth and positive, which
    keeps adaptive quadrature accurate across many decades of v.
    """
    if not (0.0 < a <= b):
        raise ValueError("need 0 < a <= b")
    if a == b:
        return 0.0
    val, _ = quad(
        lambda s: math.exp(s) / m.psi(math.exp(s)),
        math.log(a),
        math.log(b),
        epsabs=1e-14,
        epsrel=tol,
        limit=200,
    )
    return val


def _tail_integral(m: BranchingMechanism, y: float, tol: float) -> float:
    """int_y^inf dv/psi(v) for y > 0, assuming the Grey condition.

    Substituting v = y / w^mu maps the tail to (0, 1]; mu = 1/(gamma-1)
    flattens the w^{gamma-2} endpoint singularity of a dominant stable
    term, while mu = 1 is already smooth when beta > 0.
    """
    if y <= 0:
        raise ValueError("need y > 0")
    if not m.grey_condition():
        raise ExtinctionError("tail integral diverges: Grey condition fails")
    if m.beta > 0:
        mu = 1.0
    else:
        _, g = m.stable_tail
        mu = 1.0 / (g - 1.0)

    # v = y * w^-mu gives dv = mu * y * w^{-mu-1} dw on w in (0, 1]
    def integrand(w):
        if w <= 0.0:
            return 0.0
        v = y * w**-mu
        return mu * y * w ** (-mu - 1.0) / m.psi(v)

    val, _ = quad(integrand, 0.0, 1.0, epsabs=1e-14, epsrel=tol, limit=200)
    return val


@dataclass(frozen=True)
class CsbpKernel:
    """Laplace-functional kernel of the CSBP with a given mechanism.

    All methods are pure; the kernel memoizes extinction values v(t)
    internally (they are expensive and reused heavily by samplers).
    """

    mechanism: BranchingMechanism
    quad_tol: float = 1e-10

    def __post_init__(self):
        object.__setattr__(self, "_v_cache", {})

    # -- the kernel u ----------------------------------------------------------

    def u(self, t: float, lam: float) -> float:
        """Solve u + int_0^t psi(u_s) ds = lam for the value at time t."""
        if t < 0 or lam < 0:
            raise ValueError("u requires t >= 0 and lam >= 0")
        if lam == 0.0:
            return 0.0
        if t == 0.0:
            return lam
        m = self.mechanism

        def shortfall(x):
            return _inv_psi_integral(m, x, lam, self.quad_tol) - t

        lo = lam
        for _ in range(4000):
            lo *= 0.25
            if shortfall(lo) > 0.0:
                break
        else:
            raise RuntimeError("u bracket failed; mechanism degenerate?")
        return brentq(shortfall, lo, lam, xtol=1e-300, rtol=8.9e-16)

    def u_grid(self, t: float, lams) -> np.ndarray:
        return np.array([self.u(t, lam) for lam in np.atleast_1d(lams)])

    # -- extinction function v ---------------------------------------------------

    def v(self, t: float) -> float:
        """Unique v with int_v^inf du/psi(u) = t; requires the Grey condition."""
        if t <= 0:
            raise ValueError("v requires t > 0")
        if not self.mechanism.grey_condition():
            raise ExtinctionError(
                "v(t) is infinite: int^inf du/psi(u) diverges for this mechanism"
            )
        cache = self._v_cache
        if t in cache:
            return cache[t]
        m = self.mechanism

        def excess(y):
            return _tail_integral(m, y, self.quad_tol) - t

        lo = hi = 1.0
        for _ in range(_BRACKET_LIMIT):
            if excess(hi) <= 0.0:
                break
            hi *= 4.0
        for _ in range(_BRACKET_LIMIT):
            if excess(lo) >= 0.0:
                break
            lo *= 0.25
        val = brentq(excess, lo, hi, xtol=1e-300, rtol=8.9e-16)
        cache[t] = val
        return val

    def tail_time(self, y: float) -> float:
        """int_y^inf du/psi(u): the level at which the extinction function
        equals y (inverse of v)."""
        return _tail_integral(self.mechanism, y, self.quad_tol)

    # -- self-consistency defects -------------------------------------------------

    def semigroup_check(self, t: float, s: float, lam: float) -> float:
        """|u(t, u(s, lam)) - u(t+s, lam)|; should be < 1e-8 on [0, 5]."""
        return abs(self.u(t, self.u(s, lam)) - self.u(t + s, lam))

    def u_lambda_derivative_check(self, t: float, lam: float, step: float = 1e-5) -> float:
        """Defect between finite-difference du/dlam and psi(u_t(lam))/psi(lam)."""
        if lam <= 0:
            raise ValueError("derivative check needs lam > 0")
        h = step * max(1.0, lam)
        fd = (self.u(t, lam + h) - self.u(t, lam - h)) / (2.0 * h)
        target = self.mechanism.psi(self.u(t, lam)) / self.mechanism.psi(lam)
        return abs(fd - target)

    def integral_residual(self, t: float, lam: float) -> float:
        """|u_t + int_0^t psi(u_s) ds - lam| by independent quadrature in s."""
        if lam == 0.0 or t == 0.0:
            return 0.0
        ut = self.u(t, lam)
        acc, _ = quad(lambda s: self.mechanism.psi(self.u(s, lam)), 0.0, t,
                      epsabs=1e-12, epsrel=1e-10, limit=200)
        return abs(ut + acc - lam)
