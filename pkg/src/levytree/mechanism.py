"""Branching mechanisms: convex Laplace exponents of spectrally positive
Levy processes, restricted to a parametric family with closed-form
derivatives.

A mechanism is

    psi(lam) = alpha*lam + beta*lam**2
               + sum_i w_i * (exp(-lam*r_i) - 1 + lam*r_i)
               + c * lam**gamma

with alpha, beta >= 0, finitely many atoms (r_i, w_i), and an optional
exact stable term c*lam**gamma, gamma in (1, 2).  Everything downstream
(CSBP kernels, reduced-tree laws, marked-tree offspring distributions)
consumes mechanisms only through the operations defined here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq


class MechanismError(ValueError):
    """Invalid mechanism parameters or arguments outside the domain."""


_MAX_BRACKET_GROWTH = 2000


@dataclass(frozen=True)
class BranchingMechanism:
    """Immutable parametric branching mechanism.

    alpha: nonnegative drift coefficient.
    beta: nonnegative quadratic (diffusion) coefficient.
    levy_atoms: tuple of (r, w) pairs, r > 0, w > 0, encoding an atomic
        jump measure sum_i w_i * delta_{r_i}.
    stable_tail: optional (c, gamma) with c > 0 and 1 < gamma < 2 adding
        the exact term c*lam**gamma.

    The trivial purely linear case (beta == 0, no atoms, no stable term)
    is rejected: it has no branching content.
    """

    alpha: float = 0.0
    beta: float = 0.0
    levy_atoms: tuple[tuple[float, float], ...] = ()
    stable_tail: tuple[float, float] | None = None

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise MechanismError("alpha and beta must be nonnegative")
        atoms = tuple((float(r), float(w)) for r, w in self.levy_atoms)
        object.__setattr__(self, "levy_atoms", atoms)
        for r, w in atoms:
            if r <= 0 or w <= 0:
                raise MechanismError("atoms need r > 0 and w > 0")
        if self.stable_tail is not None:
            c, g = self.stable_tail
            if c <= 0:
                raise MechanismError("stable coefficient c must be positive")
            if not (1.0 < g < 2.0):
                raise MechanismError("stable index must lie in (1, 2)")
            object.__setattr__(self, "stable_tail", (float(c), float(g)))
        if self.beta == 0 and not atoms and self.stable_tail is None:
            raise MechanismError("purely linear mechanism is not allowed")

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def quadratic(beta: float = 1.0, alpha: float = 0.0) -> "BranchingMechanism":
        return BranchingMechanism(alpha=alpha, beta=beta)

    @staticmethod
    def stable(gamma_idx: float, c: float = 1.0) -> "BranchingMechanism":
        return BranchingMechanism(stable_tail=(c, gamma_idx))

    @staticmethod
    def from_config(spec: dict) -> "BranchingMechanism":
        """Build from a config table.

        Recognized keys: kind ("quadratic" | "stable" | "custom"), alpha,
        beta, c, gamma, atoms = [[r, w], ...].
        """
        kind = spec.get("kind", "custom")
        if kind == "quadratic":
            return BranchingMechanism.quadratic(
                beta=float(spec.get("beta", 1.0)), alpha=float(spec.get("alpha", 0.0))
            )
        if kind == "stable":
            if "gamma" not in spec:
                raise MechanismError("stable mechanism needs a 'gamma' field")
            return BranchingMechanism(
                alpha=float(spec.get("alpha", 0.0)),
                stable_tail=(float(spec.get("c", 1.0)), float(spec["gamma"])),
            )
        if kind == "custom":
            tail = None
            if "gamma" in spec:
                tail = (float(spec.get("c", 1.0)), float(spec["gamma"]))
            atoms = tuple((float(r), float(w)) for r, w in spec.get("atoms", ()))
            return BranchingMechanism(
                alpha=float(spec.get("alpha", 0.0)),
                beta=float(spec.get("beta", 0.0)),
                levy_atoms=atoms,
                stable_tail=tail,
            )
        raise MechanismError(f"unknown mechanism kind {kind!r}")

    def to_config(self) -> dict:
        spec = {"kind": "custom", "alpha": self.alpha, "beta": self.beta,
                "atoms": [list(a) for a in self.levy_atoms]}
        if self.stable_tail is not None:
            spec["c"], spec["gamma"] = self.stable_tail
        return spec

    # -- evaluation ------------------------------------------------------------

    def psi(self, lam):
        """Evaluate psi(lam); lam may be a scalar or a numpy array, lam >= 0."""
        lam = np.asarray(lam, dtype=float)
        if np.any(lam < 0):
            raise MechanismError("psi requires lam >= 0")
        out = self.alpha * lam + self.beta * lam * lam
        for r, w in self.levy_atoms:
            x = lam * r
            # expm1 keeps the small-x cancellation e^{-x} - 1 + x accurate
            out = out + w * (np.expm1(-x) + x)
        if self.stable_tail is not None:
            c, g = self.stable_tail
            out = out + c * np.power(lam, g)
        return float(out) if out.ndim == 0 else out

    def psi_prime(self, lam):
        """First derivative; closed form, valid for lam >= 0."""
        lam = np.asarray(lam, dtype=float)
        if np.any(lam < 0):
            raise MechanismError("psi_prime requires lam >= 0")
        out = self.alpha + 2.0 * self.beta * lam
        for r, w in self.levy_atoms:
            out = out + w * r * (-np.expm1(-lam * r))
        if self.stable_tail is not None:
            c, g = self.stable_tail
            with np.errstate(divide="ignore"):
                out = out + c * g * np.power(lam, g - 1.0)
        return float(out) if out.ndim == 0 else out

    def psi_deriv(self, k: int, lam):
        """Exact k-th derivative, k >= 1.

        With a stable term the derivatives of order >= 2 blow up at 0, so
        lam > 0 is required there.
        """
        if k < 1 or k != int(k):
            raise MechanismError("derivative order k must be an integer >= 1")
        k = int(k)
        if k == 1:
            return self.psi_prime(lam)
        lam = np.asarray(lam, dtype=float)
        if np.any(lam < 0):
            raise MechanismError("psi_deriv requires lam >= 0")
        if self.stable_tail is not None and np.any(lam == 0):
            raise MechanismError("stable derivatives of order >= 2 need lam > 0")
        out = np.zeros_like(lam)
        if k == 2:
            out = out + 2.0 * self.beta
        for r, w in self.levy_atoms:
            out = out + ((-1.0) ** k) * w * r**k * np.exp(-lam * r)
        if self.stable_tail is not None:
            c, g = self.stable_tail
            coeff = c * math.prod(g - j for j in range(k))
            out = out + coeff * np.power(lam, g - k)
        return float(out) if out.ndim == 0 else out

    def psi_inverse(self, y: float) -> float:
        """Unique x >= 0 with psi(x) == y, to ~1e-12 relative accuracy.

        psi is strictly increasing on [0, inf) for every valid mechanism,
        so a doubling bracket plus Brent iteration suffices.
        """
        if y < 0:
            raise MechanismError("psi_inverse requires y >= 0")
        if y == 0.0:
            return 0.0
        hi = max(1.0, y / self.alpha) if self.alpha > 0 else 1.0
        grow = 0
        while self.psi(hi) < y:
            hi *= 2.0
            grow += 1
            if grow > _MAX_BRACKET_GROWTH:
                raise MechanismError("psi_inverse bracket failed to grow")
        if self.psi(hi) == y:
            return hi
        x = brentq(lambda x: self.psi(x) - y, 0.0, hi, xtol=1e-300, rtol=8.9e-16)
        # one Newton polish; psi' > 0 away from the trivial case
        dp = self.psi_prime(x)
        if dp > 0 and x > 0:
            x -= (self.psi(x) - y) / dp
        return max(x, 0.0)

    # -- derived quantities ----------------------------------------------------

    def psi_tilde(self, lam):
        """psi(lam)/lam, extended by continuity to psi_tilde(0) = alpha."""
        lam_arr = np.asarray(lam, dtype=float)
        if np.any(lam_arr < 0):
            raise MechanismError("psi_tilde requires lam >= 0")
        with np.errstate(invalid="ignore", divide="ignore"):
            out = np.where(lam_arr > 0, self.psi(lam_arr) / np.maximum(lam_arr, 1e-300),
                           self.alpha)
        return float(out) if out.ndim == 0 else out

    def gamma_quotient(self, a: float, b: float) -> float:
        """Chord slope (psi(a)-psi(b))/(a-b); the diagonal returns psi'(a)."""
        if a < 0 or b < 0:
            raise MechanismError("gamma_quotient requires a, b >= 0")
        if abs(a - b) <= 1e-12 * max(1.0, abs(a), abs(b)):
            return self.psi_prime(0.5 * (a + b))
        return (self.psi(a) - self.psi(b)) / (a - b)

    def theta(self, r: float) -> float:
        """psi'(r) - psi(r)/r, nonnegative by convexity (0 at r = 0)."""
        if r < 0:
            raise MechanismError("theta requires r >= 0")
        return self.psi_prime(r) - self.psi_tilde(r)

    # -- qualitative conditions --------------------------------------------------

    def grey_condition(self) -> bool:
        """Whether int^inf du/psi(u) converges.

        In this parametric family psi grows superlinearly iff beta > 0 or a
        stable term is present; atomic-only mechanisms grow linearly and the
        integral diverges.
        """
        return self.beta > 0 or self.stable_tail is not None

    def sheu_condition(self) -> bool:
        """Whether int^inf (int_0^t psi)^{-1/2} dt converges.

        For beta > 0 the inner integral grows like t^3, for a stable term
        like t^{gamma+1} with gamma > 1; both make the outer integral
        converge.  Linear growth (atomic-only) gives an inner t^2 and a
        divergent outer integral, exactly as for the Grey condition.
        """
        return self.beta > 0 or self.stable_tail is not None

    def gamma_exponent(self) -> float:
        """Growth exponent sup{r : lam^{-r} psi(lam) -> inf}."""
        if self.beta > 0:
            return 2.0
        if self.stable_tail is not None:
            return self.stable_tail[1]
        return 1.0
