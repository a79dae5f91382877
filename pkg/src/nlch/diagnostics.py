"""Discrete energy, pseudo-energy, per-step invariant checks and slope fits.

The scheme dissipates a pseudo-energy rather than the plain discrete energy:

    E_h(rho)        = h^2 sum [f_c(rho) - f_e(rho) + rho^2] - <J * rho, rho>_h
    Ehat_h(a, b)    = E_h(a) + ||a - b||^2 + <J * (a - b), a - b>_h

and the per-step stability statement is

    Ehat_h(rho^{k+1}, rho^k) - Ehat_h(rho^k, rho^{k-1}) <= ||rho^{k+1} - rho^k||^2.

``check_step`` evaluates both sides, the per-step dissipation product
<rho^{k+1} - rho^k, w^{k+1}>_h (nonpositive for exact solves), and the usual
bookkeeping (mass, max|rho|), producing one StepReport per accepted step.
Violations are recorded, not raised; the verification suite turns them into
failures.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .grid import Field, field_from_array, inner_product, l2_norm, total_mass
from .kernel import DiscreteKernel, convolve_fft
from .potential import Potential

__all__ = [
    "StepReport",
    "discrete_energy",
    "pseudo_energy",
    "check_step",
    "fit_dissipation_slope",
]

#: slack applied when counting inequality violations
CHECK_TOL = 1e-10


@dataclass(frozen=True)
class StepReport:
    """Per-step diagnostics; theorem2 fields are NaN on the first step,
    where no previous increment exists."""

    step_index: int
    time: float
    mass_raw: float
    max_abs_rho: float
    energy: float
    pseudo_energy: float
    theorem2_lhs: float
    theorem2_rhs: float
    inner_w_check: float
    solver_iters: int
    saturation_count: int

    @property
    def theorem2_ok(self) -> bool:
        if math.isnan(self.theorem2_lhs):
            return True
        return self.theorem2_lhs <= self.theorem2_rhs + CHECK_TOL

    @property
    def dissipation_ok(self) -> bool:
        return self.inner_w_check <= CHECK_TOL


def discrete_energy(rho: Field, kernel: DiscreteKernel, p: Potential, conv: Field | None = None) -> float:
    """Discrete free energy E_h. ``conv`` may pass a precomputed J * rho."""
    if p.kind == "fh" and np.max(np.abs(rho.values)) > 1.0:
        raise DomainError("discrete_energy (FH) requires max|rho| <= 1")
    if conv is None:
        conv = convolve_fft(kernel, rho)
    fc, fe = p.split(rho.values, clamp=True)
    h2 = rho.grid.h ** 2
    bulk = h2 * float(np.sum(fc - fe + rho.values ** 2))
    return bulk - inner_product(conv, rho)


def pseudo_energy(
    rho_next: Field,
    rho_curr: Field,
    kernel: DiscreteKernel,
    p: Potential,
    conv_next: Field | None = None,
    conv_curr: Field | None = None,
) -> float:
    """Pseudo-energy Ehat_h(rho_next, rho_curr).

    By linearity J * (a - b) = J*a - J*b, so cached convolutions of both
    fields make the increment term free.
    """
    diff = field_from_array(rho_next.grid, rho_next.values - rho_curr.values)
    if conv_next is not None and conv_curr is not None:
        conv_diff = field_from_array(
            rho_next.grid, conv_next.values - conv_curr.values
        )
    else:
        conv_diff = convolve_fft(kernel, diff)
    e = discrete_energy(rho_next, kernel, p, conv=conv_next)
    return e + l2_norm(diff) ** 2 + inner_product(conv_diff, diff)


def check_step(
    state_before,
    state_after,
    kernel: DiscreteKernel,
    p: Potential,
    w_next: Field,
    prev_report: StepReport | None = None,
    solver_iters: int = 0,
    saturation_count: int = 0,
) -> StepReport:
    """Assemble the StepReport for the transition state_before -> state_after.

    ``w_next`` is the chemical potential that produced the step (for the
    implicit scheme, the solver's converged w). The theorem-2 fields compare
    against ``prev_report`` and are NaN when it is absent (first step).
    ``state_before``/``state_after`` only need ``rho_curr``, ``conv_curr``,
    ``time`` and ``step_index`` attributes.
    """
    rho_new = state_after.rho_curr
    rho_old = state_before.rho_curr
    diff = field_from_array(rho_new.grid, rho_new.values - rho_old.values)
    try:
        energy = discrete_energy(rho_new, kernel, p, conv=state_after.conv_curr)
        pseudo = pseudo_energy(
            rho_new,
            rho_old,
            kernel,
            p,
            conv_next=state_after.conv_curr,
            conv_curr=state_before.conv_curr,
        )
    except DomainError:
        # a bound-violating field (naive scheme) has no FH energy
        energy = math.nan
        pseudo = math.nan
    prev_pseudo = math.nan
    if prev_report is not None:
        prev_pseudo = prev_report.pseudo_energy
    elif getattr(state_before, "rho_prev", None) is not None:
        try:
            prev_pseudo = pseudo_energy(
                rho_old,
                state_before.rho_prev,
                kernel,
                p,
                conv_next=state_before.conv_curr,
            )
        except DomainError:
            prev_pseudo = math.nan
    if math.isnan(prev_pseudo) or math.isnan(pseudo):
        lhs = rhs = math.nan
    else:
        lhs = pseudo - prev_pseudo
        rhs = l2_norm(diff) ** 2
    return StepReport(
        step_index=state_after.step_index,
        time=state_after.time,
        mass_raw=total_mass(rho_new).raw,
        max_abs_rho=float(np.max(np.abs(rho_new.values))),
        energy=energy,
        pseudo_energy=pseudo,
        theorem2_lhs=lhs,
        theorem2_rhs=rhs,
        inner_w_check=inner_product(diff, w_next),
        solver_iters=solver_iters,
        saturation_count=saturation_count,
    )


def fit_dissipation_slope(series, window) -> float:
    """Least-squares slope of log E versus log t over a time window.

    ``series`` is a sequence of (t, E_h) pairs, ``window`` the inclusive
    (t_min, t_max) range. Requires at least 10 points in the window and
    positive times. If the energy touches zero or goes negative the data is
    shifted by E - E_min plus a tiny offset before taking logs.
    """
    arr = np.asarray(list(series), dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError("series must be a sequence of (t, E) pairs")
    t_min, t_max = window
    sel = (arr[:, 0] >= t_min) & (arr[:, 0] <= t_max)
    t = arr[sel, 0]
    e = arr[sel, 1]
    if t.size < 10:
        raise ValueError(f"slope window [{t_min}, {t_max}] holds {t.size} points, need >= 10")
    if np.any(t <= 0) or not np.all(np.isfinite(t)) or not np.all(np.isfinite(e)):
        raise ValueError("slope fit needs finite data at positive times")
    if np.min(e) <= 0.0:
        e = e - np.min(e) + 1e-12 * max(1.0, float(np.max(np.abs(e))))
    if np.min(e) <= 0.0:
        raise ValueError("energies not positive after offset")
    slope, _ = np.polyfit(np.log(t), np.log(e), 1)
    return float(slope)
