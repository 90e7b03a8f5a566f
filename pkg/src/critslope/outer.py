"""Outer problem: the critical slope floor via safeguarded Newton.

The worst-case logarithmic norm lambda[m] (inner-problem value) decreases
monotonically in the floor m, so the smallest m with lambda[m] equal to a
target level is a bracketed scalar root.  Newton steps use the costless
derivative read off the converged extremizer:

    phi[m]  = -lambda[m],
    phi'[m] = -sum_{i at floor} x_i z_i  > 0,

and fall back to bisection whenever the Newton step leaves the bracket,
the floor-index set is empty, or the inner solve did not converge.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .flow import Extremizer, FlowConfig, find_extremizer
from .linalg import as_square_matrix, mu2, spectral_norm

__all__ = [
    "NotContractiveError",
    "OuterSolveError",
    "OuterConfig",
    "TraceRow",
    "SolveTrace",
    "SlopeSolution",
    "slope_upper_bound",
    "contraction_margin",
    "critical_slope",
]


class NotContractiveError(ValueError):
    """The requested level is outside the reachable range of lambda[m]."""


class OuterSolveError(RuntimeError):
    """Outer iteration failed; carries the trace accumulated so far."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class OuterConfig:
    """Settings for the critical-slope solve.

    ``target`` is the desired worst-case logarithmic norm at the returned
    floor: 0 for plain contractivity, negative for a strict margin,
    positive for a relaxed growth level.  ``m0=None`` starts at
    min(upper bound, 1 - 1e-3).
    """

    target: float = 0.0
    m_tol: float = 1e-12
    phi_tol: float = 1e-10
    max_outer: int = 60
    m0: float | None = None
    flow: FlowConfig = field(default_factory=FlowConfig)

    def __post_init__(self):
        if self.m_tol <= 0 or self.phi_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_outer < 1:
            raise ValueError("max_outer must be at least 1")


@dataclass(frozen=True)
class TraceRow:
    k: int
    m: float
    phi: float
    dphi: float | None
    step_kind: str  # update computed from this row's data: newton | bisection


@dataclass
class SolveTrace:
    rows: list[TraceRow] = field(default_factory=list)

    def append(self, row: TraceRow):
        self.rows.append(row)

    @property
    def ms(self):
        return [r.m for r in self.rows]

    @property
    def phis(self):
        return [r.phi for r in self.rows]

    def __len__(self):
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)


@dataclass(frozen=True)
class SlopeSolution:
    m_star: float
    extremizer: Extremizer
    trace: SolveTrace


def slope_upper_bound(a, target: float = 0.0) -> float:
    """Upper bound for the critical slope, 1 - |mu2(A) - target| / ||A||_2.

    Degenerates to 0 when the numerator reaches the spectral norm (the
    critical slope may then be 0).  Requires mu2(A) + |target| < 0.
    """
    a = as_square_matrix(a)
    mu = mu2(a)
    if mu + abs(target) >= 0:
        raise NotContractiveError(
            f"mu2(A) = {mu:.6g} is not below -|target| = {-abs(target):.6g}; "
            "no critical slope exists (consider shifting A first)"
        )
    nrm = spectral_norm(a)
    shifted = abs(mu - target)
    if shifted >= nrm:
        return 0.0
    return float(min(1.0, max(0.0, 1.0 - shifted / nrm)))


def contraction_margin(e: Extremizer) -> tuple[float, float | None]:
    """Margin phi = -lambda and its m-derivative at a converged extremizer.

    The derivative is carried by the floor entries only: interior entries
    contribute nothing (their x_i z_i vanishes) and entries at 1 do not
    move with m.  Returns (phi, None) when no entry sits at the floor.
    """
    phi = -e.lam
    if not e.at_floor:
        return phi, None
    idx = list(e.at_floor)
    dphi = -float(np.sum(e.x[idx] * e.z[idx]))
    return phi, dphi


def _warm_start(e: Extremizer, new_floor: float) -> np.ndarray:
    # keep the previous pattern; entries at the old floor track the new one
    d = e.iterate.d.copy()
    old = e.iterate.floor
    d[d <= old + e.iterate.eps_active] = new_floor
    return d


def solve_scalar(inner, m0: float, cfg: OuterConfig):
    """Safeguarded Newton-bisection on phi[m] + target = 0 over [0, 1].

    ``inner(m, warm) -> (payload, phi, dphi, warm_next, converged)`` runs
    the inner solve; phi must be increasing in m.  The implicit bracket
    endpoints carry phi(0) + target <= 0 <= phi(1) + target, which the
    caller must have checked.  Returns (m, payload, trace).
    """
    m_lo, m_hi = 0.0, 1.0
    m = min(max(m0, 0.0), 1.0)
    warm = None
    trace = SolveTrace()
    payload = None
    psi = None
    for k in range(cfg.max_outer):
        payload, phi, dphi, warm, converged = inner(m, warm)
        psi = phi + cfg.target
        if psi > 0:
            m_hi = m
        else:
            m_lo = m
        newton = None
        if dphi is not None and dphi > 0 and converged:
            newton = m - psi / dphi
        take_newton = newton is not None and m_lo < newton < m_hi
        trace.append(
            TraceRow(k, m, phi, dphi, "newton" if take_newton else "bisection")
        )
        if abs(psi) <= cfg.phi_tol or (m_hi - m_lo) <= cfg.m_tol:
            break
        m = newton if take_newton else 0.5 * (m_lo + m_hi)
    if abs(psi) > max(1e3 * cfg.phi_tol, 1e-8):
        raise OuterSolveError(
            f"no slope in [0, 1] attains the target level; residual "
            f"{psi:.3g} at m = {m:.6g}",
            trace=trace,
        )
    return m, payload, trace


def critical_slope(a, cfg: OuterConfig | None = None) -> SlopeSolution:
    """Smallest slope floor whose worst-case logarithmic norm hits the target.

    Each outer iteration warm-starts the inner flow from the previous
    extremizer with its floor entries rescaled to the new m.
    """
    a = as_square_matrix(a)
    cfg = cfg or OuterConfig()
    m_ub = slope_upper_bound(a, cfg.target)  # also validates contractivity
    m0 = cfg.m0 if cfg.m0 is not None else min(m_ub, 1.0 - 1e-3)

    def inner(m, warm):
        d0 = None if warm is None else _warm_start(warm, m)
        e = find_extremizer(a, m, d0=d0, cfg=cfg.flow)
        phi, dphi = contraction_margin(e)
        return e, phi, dphi, e, e.converged

    m_star, extremizer, trace = solve_scalar(inner, m0, cfg)
    if not extremizer.converged:
        raise OuterSolveError(
            f"inner flow did not converge at m = {m_star:.12g}", trace=trace
        )
    return SlopeSolution(m_star=m_star, extremizer=extremizer, trace=trace)
