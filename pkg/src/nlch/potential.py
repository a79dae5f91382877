"""Reference free-energy densities with a convex split f = f_c - f_e.

Two potentials are supported.

Flory-Huggins (kind "fh"), defined on (-1, 1):

    f(rho) = beta^-1 [(1-rho) log((1-rho)/2) + (1+rho) log((1+rho)/2)] + (1 - rho^2)
    f_c    = the beta^-1 logarithmic part          (convex, singular slope at +-1)
    f_e    = rho^2 - 1                             (convex)

Ginzburg-Landau (kind "gl"), defined everywhere:

    f(rho) = (rho^2 - 1)^2 / 4 = (rho^4 + 1)/4 - rho^2/2
    f_c    = (rho^4 + 1)/4
    f_e    = rho^2 / 2

The time discretization treats f_c' implicitly and f_e' explicitly, so both
pieces being convex is what the stability argument rests on. For FH the
derivative evaluations clamp their argument to [-1+delta, 1-delta]
(delta = barrier_margin, 1e-12 by default) instead of erroring mid-solve:
the implicit log barrier keeps converged iterates interior, so the clamp
only guards transient solver iterates. ``saturation_count`` reports how many
entries a clamp would touch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DomainError

__all__ = ["Potential", "make_potential", "POTENTIAL_KINDS"]

POTENTIAL_KINDS = ("fh", "gl")


def make_potential(kind: str, beta: float = 1.0, barrier_margin: float = 1e-12) -> "Potential":
    kind = str(kind).lower()
    if kind not in POTENTIAL_KINDS:
        raise ConfigurationError(f"unknown potential {kind!r}, expected one of {POTENTIAL_KINDS}")
    if not (beta > 0):
        raise ConfigurationError(f"beta must be positive, got {beta}")
    if not (0 < barrier_margin < 1e-6):
        raise ConfigurationError(
            f"barrier_margin must lie in (0, 1e-6), got {barrier_margin}"
        )
    return Potential(kind=kind, beta=float(beta), barrier_margin=float(barrier_margin))


@dataclass(frozen=True)
class Potential:
    kind: str
    beta: float = 1.0
    barrier_margin: float = 1e-12

    def _clamp(self, rho):
        d = self.barrier_margin
        return np.clip(rho, -1.0 + d, 1.0 - d)

    def _check_domain(self, rho, *, strict: bool) -> None:
        bound = 1.0 if not strict else np.nextafter(1.0, 0.0)
        if np.max(np.abs(rho)) > bound:
            raise DomainError(
                f"Flory-Huggins potential evaluated outside (-1, 1): max|rho| = "
                f"{np.max(np.abs(rho))}"
            )

    def f(self, rho, *, clamp: bool = False):
        """Free-energy density. FH requires |rho| < 1 unless ``clamp``."""
        rho = np.asarray(rho, dtype=np.float64)
        if self.kind == "gl":
            return (rho ** 2 - 1.0) ** 2 / 4.0
        if clamp:
            rho = self._clamp(rho)
        else:
            self._check_domain(rho, strict=True)
        return (
            ((1.0 - rho) * np.log((1.0 - rho) / 2.0) + (1.0 + rho) * np.log((1.0 + rho) / 2.0))
            / self.beta
            + (1.0 - rho ** 2)
        )

    def split(self, rho, *, clamp: bool = False):
        """Convex split (f_c, f_e) with f = f_c - f_e."""
        rho = np.asarray(rho, dtype=np.float64)
        if self.kind == "gl":
            return (rho ** 4 + 1.0) / 4.0, rho ** 2 / 2.0
        if clamp:
            rho = self._clamp(rho)
        else:
            self._check_domain(rho, strict=True)
        fc = (
            (1.0 - rho) * np.log((1.0 - rho) / 2.0) + (1.0 + rho) * np.log((1.0 + rho) / 2.0)
        ) / self.beta
        return fc, rho ** 2 - 1.0

    def fc_prime(self, rho):
        """Derivative of the implicit (convex) part; FH clamps near +-1."""
        rho = np.asarray(rho, dtype=np.float64)
        if self.kind == "gl":
            return rho ** 3
        rho = self._clamp(rho)
        return np.log((1.0 + rho) / (1.0 - rho)) / self.beta

    def fe_prime(self, rho):
        """Derivative of the explicit part; total function for both kinds."""
        rho = np.asarray(rho, dtype=np.float64)
        if self.kind == "gl":
            return rho
        return 2.0 * rho

    def fc_second(self, rho):
        """Second derivative of f_c, used by the Newton Jacobian."""
        rho = np.asarray(rho, dtype=np.float64)
        if self.kind == "gl":
            return 3.0 * rho ** 2
        rho = self._clamp(rho)
        return 2.0 / (self.beta * (1.0 - rho ** 2))

    def saturation_count(self, rho) -> int:
        """Number of entries the FH clamp would modify (0 for GL)."""
        if self.kind == "gl":
            return 0
        d = self.barrier_margin
        rho = np.asarray(rho, dtype=np.float64)
        return int(np.count_nonzero(np.abs(rho) > 1.0 - d))
