"""Inner problem: worst-case logarithmic norm over a box of diagonal scalings.

For a fixed slope floor m, the extremizer maximizing mu2(D A) over all
diagonal D with entries in [m, 1] is computed by integrating a projected
gradient flow with an adaptive-step Euler method.  Each accepted step
strictly decreases the objective

    f(D) = -lambda_max(Sym(D A)),

so no classical error control is needed; the step size is halved on
rejection and doubled after clean acceptances.  At active bounds the flow
direction is projected so the iterate stays in the box, which realizes the
KKT conditions without computing multipliers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import EigenPair, as_square_matrix, rightmost_eigenpair, spectral_norm

__all__ = [
    "FlowConfig",
    "DiagonalIterate",
    "FirstOrderReport",
    "Extremizer",
    "EulerStep",
    "objective",
    "gradient",
    "project_direction",
    "euler_step",
    "find_extremizer",
    "check_stationarity",
]

_JITTER = 1e-10


@dataclass(frozen=True)
class FlowConfig:
    """Tuning knobs for the constrained gradient flow.

    ``grad_tol=None`` resolves to 1e-9 * (1 + ||A||_2) per solve;
    ``restarts=None`` resolves to min(2**dim - 1, 8) extra random
    binary-pattern starts (the inner problem is non-convex and extremizers
    are in general not unique).
    """

    h0: float = 0.1
    theta: float = 2.0
    grad_tol: float | None = None
    h_min: float = 1e-14
    max_steps: int = 100_000
    eps_active: float = 1e-10
    restarts: int | None = None
    tol_interior: float = 1e-6
    seed: int = 0
    record: bool = False

    def __post_init__(self):
        if not self.theta > 1:
            raise ValueError("theta must exceed 1")
        if not 0 < self.h_min < self.h0:
            raise ValueError("need 0 < h_min < h0")

    def resolve_restarts(self, dim: int) -> int:
        if self.restarts is not None:
            return self.restarts
        return int(min(2**min(dim, 30) - 1, 8))


@dataclass(frozen=True)
class DiagonalIterate:
    """Diagonal of D with its slope floor; entries clamped into [floor, 1]."""

    d: np.ndarray
    floor: float
    eps_active: float = 1e-10

    def __post_init__(self):
        if not 0.0 <= self.floor <= 1.0:
            raise ValueError(f"floor must lie in [0, 1], got {self.floor}")
        d = np.clip(np.asarray(self.d, dtype=float), self.floor, 1.0)
        object.__setattr__(self, "d", d)

    @property
    def n(self) -> int:
        return self.d.size

    @property
    def active_low(self) -> np.ndarray:
        """Indices pinned at the floor."""
        return np.where(self.d <= self.floor + self.eps_active)[0]

    @property
    def active_high(self) -> np.ndarray:
        """Indices pinned at 1."""
        return np.where(self.d >= 1.0 - self.eps_active)[0]

    def matrix(self) -> np.ndarray:
        return np.diag(self.d)


@dataclass(frozen=True)
class FirstOrderReport:
    """Per-index first-order conditions at a candidate extremizer.

    ``products[i]`` is x_i * z_i.  Entries at 1 must have nonnegative
    product, entries at the floor nonpositive, interior entries zero
    (within tolerances); ``violations`` lists the offending indices.
    """

    products: np.ndarray
    labels: tuple[str, ...]
    violations: tuple[int, ...]
    tol: float
    tol_interior: float

    @property
    def ok(self) -> bool:
        return not self.violations


@dataclass(frozen=True)
class Extremizer:
    """Converged inner-problem solution at a fixed slope floor."""

    iterate: DiagonalIterate
    lam: float
    x: np.ndarray
    z: np.ndarray
    at_one: tuple[int, ...]
    at_floor: tuple[int, ...]
    interior: tuple[int, ...]
    stationarity: FirstOrderReport
    converged: bool
    near_multiple: bool
    steps: int
    trace: list | None = None

    @property
    def margin(self) -> float:
        """Contraction margin -lambda (positive when strictly contractive)."""
        return -self.lam


@dataclass(frozen=True)
class EulerStep:
    """Outcome of one flow step; ``stalled`` marks a stationary point."""

    iterate: DiagonalIterate
    f_value: float
    h_next: float
    eig: EigenPair | None
    stalled: bool


def _scaled(dvec: np.ndarray, a: np.ndarray) -> np.ndarray:
    # D A with D = diag(dvec): row i scaled by d_i
    return dvec[:, None] * a


def _objective_vec(dvec: np.ndarray, a: np.ndarray) -> tuple[float, EigenPair]:
    m = _scaled(dvec, a)
    eig = rightmost_eigenpair(0.5 * (m + m.T))
    return -eig.value, eig


def objective(it: DiagonalIterate, a) -> tuple[float, EigenPair]:
    """Objective -mu2(D A) together with the rightmost eigenpair."""
    a = as_square_matrix(a)
    return _objective_vec(it.d, a)


def gradient(it: DiagonalIterate, a) -> tuple[np.ndarray, EigenPair, np.ndarray]:
    """Free objective gradient g with g_i = -x_i z_i, where z = A x.

    The unconstrained descent flow is d' = -g, i.e. d'_i = x_i z_i.
    """
    a = as_square_matrix(a)
    _, eig = _objective_vec(it.d, a)
    z = a @ eig.vector
    return -(eig.vector * z), eig, z


def _project(dvec: np.ndarray, v: np.ndarray, floor: float, eps: float) -> np.ndarray:
    out = v.copy()
    low = dvec <= floor + eps
    high = dvec >= 1.0 - eps
    out[low] = np.maximum(0.0, out[low])
    out[high] = np.minimum(0.0, out[high])
    return out


def project_direction(it: DiagonalIterate, v) -> np.ndarray:
    """Zero out direction components that would leave the box."""
    v = np.asarray(v, dtype=float)
    return _project(it.d, v, it.floor, it.eps_active)


def _try_step(dvec, f_cur, vproj, h, floor, cfg, evaluate):
    """Monotone step with rejection: halve h until f decreases or h underflows.

    Returns (d_new, f_new, aux_new, h_next, stalled).
    """
    rejected = False
    while True:
        cand = np.clip(dvec + h * vproj, floor, 1.0)
        f_new, aux = evaluate(cand)
        if f_new < f_cur:
            break
        h /= cfg.theta
        rejected = True
        if h < cfg.h_min:
            return dvec, f_cur, None, h, True
    return cand, f_new, aux, (h if rejected else cfg.theta * h), False


def euler_step(
    it: DiagonalIterate,
    a,
    f_current: float,
    h_proposed: float,
    cfg: FlowConfig,
    eig: EigenPair | None = None,
) -> EulerStep:
    """One adaptive Euler step of the constrained gradient flow.

    ``eig`` may carry the eigenpair already computed at ``it`` (the value
    from the previous acceptance test) to avoid a second eigensolve.
    """
    a = as_square_matrix(a)
    if eig is None:
        _, eig = _objective_vec(it.d, a)
    z = a @ eig.vector
    vproj = _project(it.d, eig.vector * z, it.floor, cfg.eps_active)
    if not np.any(vproj):
        return EulerStep(it, f_current, h_proposed, eig, stalled=True)
    evaluate = lambda dv: _objective_vec(dv, a)
    d_new, f_new, eig_new, h_next, stalled = _try_step(
        it.d, f_current, vproj, max(h_proposed, cfg.h_min), it.floor, cfg, evaluate
    )
    if stalled:
        return EulerStep(it, f_current, h_next, eig, stalled=True)
    out = DiagonalIterate(d_new, it.floor, cfg.eps_active)
    return EulerStep(out, f_new, h_next, eig_new, stalled=False)


def _descend(d0, floor, cfg, evaluate, direction, grad_tol, rng):
    """Drive the projected flow from d0 to stationarity.

    ``evaluate(d) -> (f, aux)`` and ``direction(d, aux) -> raw flow vector``
    abstract over the single-layer and multilayer objectives; ``aux`` must
    expose ``near_multiple``.  Returns (d, f, aux, converged, steps, trace).
    """
    d = np.clip(np.asarray(d0, dtype=float), floor, 1.0)
    f, aux = evaluate(d)
    h = cfg.h0
    trace = [] if cfg.record else None
    jittered = False
    steps = 0
    converged = True
    while True:
        if steps >= cfg.max_steps:
            converged = False
            break
        v = _project(d, direction(d, aux), floor, cfg.eps_active)
        gnorm = float(np.linalg.norm(v))
        if trace is not None:
            low = tuple(np.where(d <= floor + cfg.eps_active)[0])
            high = tuple(np.where(d >= 1.0 - cfg.eps_active)[0])
            trace.append((steps, f, h, low, high))
        if gnorm <= grad_tol:
            break
        d_new, f_new, aux_new, h, stalled = _try_step(
            d, f, v, h, floor, cfg, evaluate
        )
        if stalled:
            # Near-coalescent eigenvalues can produce a bogus descent
            # direction; nudge once and retry before accepting the point.
            if aux.near_multiple and not jittered:
                jittered = True
                d = np.clip(d + _JITTER * rng.standard_normal(d.size), floor, 1.0)
                f, aux = evaluate(d)
                h = cfg.h0
                continue
            break
        d, f, aux = d_new, f_new, aux_new
        steps += 1
    return d, f, aux, converged, steps, trace


def _binary_starts(n, floor, count, rng):
    starts = []
    for _ in range(count):
        bits = rng.integers(0, 2, size=n)
        starts.append(np.where(bits == 1, 1.0, floor))
    return starts


def _partition(dvec, floor, eps):
    at_floor = dvec <= floor + eps
    at_one = (dvec >= 1.0 - eps) & ~at_floor
    i_floor = tuple(int(i) for i in np.where(at_floor)[0])
    i_one = tuple(int(i) for i in np.where(at_one)[0])
    i_int = tuple(int(i) for i in np.where(~at_floor & ~at_one)[0])
    return i_one, i_floor, i_int


def check_stationarity(
    e: Extremizer, tol: float = 1e-8, tol_interior: float = 1e-6
) -> FirstOrderReport:
    """First-order conditions: x_i z_i >= 0 at 1, <= 0 at the floor, = 0 inside."""
    return _stationarity(
        e.x * e.z, e.at_one, e.at_floor, e.interior, tol, tol_interior
    )


def _stationarity(products, at_one, at_floor, interior, tol, tol_interior):
    n = products.size
    labels = [""] * n
    violations = []
    for i in at_one:
        labels[i] = "one"
        if products[i] <= -tol:
            violations.append(i)
    for i in at_floor:
        labels[i] = "floor"
        if products[i] >= tol:
            violations.append(i)
    for i in interior:
        labels[i] = "interior"
        if abs(products[i]) > tol_interior:
            violations.append(i)
    return FirstOrderReport(
        products=products,
        labels=tuple(labels),
        violations=tuple(sorted(violations)),
        tol=tol,
        tol_interior=tol_interior,
    )


def find_extremizer(
    a,
    floor: float,
    d0: np.ndarray | None = None,
    cfg: FlowConfig | None = None,
) -> Extremizer:
    """Minimize -mu2(D A) over the box [floor, 1]^n.

    Runs the flow from ``d0`` (all-ones when omitted) plus ``cfg.restarts``
    random binary patterns, and returns the best local extremizer found,
    merging deterministically by (objective value, lexicographic diagonal).
    Global optimality is not certified.
    """
    a = as_square_matrix(a)
    cfg = cfg or FlowConfig()
    if not 0.0 <= floor <= 1.0:
        raise ValueError(f"floor must lie in [0, 1], got {floor}")
    n = a.shape[0]
    grad_tol = cfg.grad_tol
    if grad_tol is None:
        grad_tol = 1e-9 * (1.0 + spectral_norm(a))

    evaluate = lambda dv: _objective_vec(dv, a)
    direction = lambda dv, eig: eig.vector * (a @ eig.vector)

    rng = np.random.default_rng(cfg.seed)
    starts = [np.ones(n) if d0 is None else np.asarray(d0, dtype=float)]
    starts += _binary_starts(n, floor, cfg.resolve_restarts(n), rng)

    best = None
    for start in starts:
        d, f, eig, ok, steps, trace = _descend(
            start, floor, cfg, evaluate, direction, grad_tol, rng
        )
        key = (f, tuple(d))
        if best is None or key < best[0]:
            best = (key, d, eig, ok, steps, trace)

    _, d, eig, ok, steps, trace = best
    # re-derive the eigenpair at the final point so the reported quantities
    # are exactly consistent with each other
    _, eig = _objective_vec(d, a)
    z = a @ eig.vector
    it = DiagonalIterate(d, floor, cfg.eps_active)
    at_one, at_floor, interior = _partition(it.d, floor, cfg.eps_active)
    report = _stationarity(
        eig.vector * z, at_one, at_floor, interior, 1e-8, cfg.tol_interior
    )
    return Extremizer(
        iterate=it,
        lam=eig.value,
        x=eig.vector,
        z=z,
        at_one=at_one,
        at_floor=at_floor,
        interior=interior,
        stationarity=report,
        converged=ok,
        near_multiple=eig.near_multiple,
        steps=steps,
        trace=trace,
    )
