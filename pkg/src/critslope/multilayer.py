"""Layer stacks: worst-case logarithmic norm of D_k A_k ... D_1 A_1.

The single-layer flow generalizes directly: the eigenvalue sensitivity of
the symmetrized product with respect to the i-th diagonal is carried by
the forward/backward chain vectors

    z_1 = A_1 x,   z_i = A_i D_{i-1} z_{i-1},
    w_k = x,       w_i = A_{i+1}^T D_{i+1} w_{i+1},

giving the per-layer flow direction diag(z_i w_i^T).  All layers share a
single slope floor.  The stacked diagonals are optimized as one flat
vector, reusing the single-layer stepping engine, so the k = 1 case
reproduces the single-layer solver exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .flow import (
    DiagonalIterate,
    FirstOrderReport,
    FlowConfig,
    _binary_starts,
    _descend,
    _objective_vec,
    _partition,
    _stationarity,
)
from .linalg import EigenPair, as_square_matrix, rightmost_eigenpair, spectral_norm
from .outer import NotContractiveError, OuterConfig, OuterSolveError, SolveTrace, solve_scalar

__all__ = [
    "LayerStack",
    "MultiExtremizer",
    "stack_objective",
    "layer_gradients",
    "find_stack_extremizer",
    "stack_margin",
    "stack_critical_slope",
    "StackSolution",
]


@dataclass(frozen=True)
class LayerStack:
    """Ordered weight matrices A_1, ..., A_k, all n-by-n."""

    matrices: tuple

    def __post_init__(self):
        mats = tuple(as_square_matrix(m) for m in self.matrices)
        if not mats:
            raise ValueError("a layer stack needs at least one matrix")
        n = mats[0].shape[0]
        for i, m in enumerate(mats):
            if m.shape[0] != n:
                raise ValueError(
                    f"layer {i} has dimension {m.shape[0]}, expected {n}"
                )
        object.__setattr__(self, "matrices", mats)

    @property
    def k(self) -> int:
        return len(self.matrices)

    @property
    def n(self) -> int:
        return self.matrices[0].shape[0]


@dataclass(frozen=True)
class MultiExtremizer:
    """Converged stack extremizer: one diagonal per layer, shared floor."""

    iterates: tuple
    lam: float
    x: np.ndarray
    zs: tuple
    ws: tuple
    partitions: tuple  # per layer: (at_one, at_floor, interior)
    reports: tuple
    converged: bool
    near_multiple: bool
    steps: int

    @property
    def margin(self) -> float:
        return -self.lam

    @property
    def floor(self) -> float:
        return self.iterates[0].floor


def _product(ds: np.ndarray, stack: LayerStack) -> np.ndarray:
    # ds has shape (k, n); product D_k A_k ... D_1 A_1 built left to right
    m = ds[0][:, None] * stack.matrices[0]
    for d, a in zip(ds[1:], stack.matrices[1:]):
        m = d[:, None] * (a @ m)
    return m


def _eval_stack(dflat: np.ndarray, stack: LayerStack) -> tuple[float, EigenPair]:
    if stack.k == 1:
        return _objective_vec(dflat, stack.matrices[0])
    m = _product(dflat.reshape(stack.k, stack.n), stack)
    eig = rightmost_eigenpair(0.5 * (m + m.T))
    return -eig.value, eig


def _chains(dflat: np.ndarray, stack: LayerStack, x: np.ndarray):
    ds = dflat.reshape(stack.k, stack.n)
    zs = [stack.matrices[0] @ x]
    for i in range(1, stack.k):
        zs.append(stack.matrices[i] @ (ds[i - 1] * zs[-1]))
    ws = [x]
    for i in range(stack.k - 2, -1, -1):
        ws.append(stack.matrices[i + 1].T @ (ds[i + 1] * ws[-1]))
    ws.reverse()
    return zs, ws


def stack_objective(ds, stack: LayerStack) -> tuple[float, EigenPair]:
    """Objective -mu2(D_k A_k ... D_1 A_1) with its rightmost eigenpair."""
    dflat = _as_flat(ds, stack)
    return _eval_stack(dflat, stack)


def _as_flat(ds, stack: LayerStack) -> np.ndarray:
    if isinstance(ds, np.ndarray):
        arr = np.asarray(ds, dtype=float).reshape(stack.k * stack.n)
        return arr
    rows = []
    floor = None
    for d in ds:
        if isinstance(d, DiagonalIterate):
            if floor is not None and d.floor != floor:
                raise ValueError("all layers must share one slope floor")
            floor = d.floor
            rows.append(d.d)
        else:
            rows.append(np.asarray(d, dtype=float))
    if len(rows) != stack.k:
        raise ValueError(f"expected {stack.k} diagonals, got {len(rows)}")
    return np.concatenate(rows)


def layer_gradients(me: MultiExtremizer, stack: LayerStack) -> list[np.ndarray]:
    """Per-layer flow directions (z_i * w_i); layer i's objective gradient
    is the negative of entry i."""
    dflat = np.concatenate([it.d for it in me.iterates])
    zs, ws = _chains(dflat, stack, me.x)
    return [z * w for z, w in zip(zs, ws)]


def find_stack_extremizer(
    stack: LayerStack,
    floor: float,
    d0=None,
    cfg: FlowConfig | None = None,
) -> MultiExtremizer:
    """Minimize the stack objective over shared-floor diagonal boxes."""
    cfg = cfg or FlowConfig()
    if not 0.0 <= floor <= 1.0:
        raise ValueError(f"floor must lie in [0, 1], got {floor}")
    k, n = stack.k, stack.n
    grad_tol = cfg.grad_tol
    if grad_tol is None:
        grad_tol = 1e-9 * (1.0 + spectral_norm(_product(np.ones((k, n)), stack)))

    evaluate = lambda dv: _eval_stack(dv, stack)

    def direction(dv, eig):
        zs, ws = _chains(dv, stack, eig.vector)
        if k == 1:
            return eig.vector * zs[0]
        return np.concatenate([z * w for z, w in zip(zs, ws)])

    rng = np.random.default_rng(cfg.seed)
    starts = [np.ones(k * n) if d0 is None else _as_flat(d0, stack)]
    starts += _binary_starts(k * n, floor, cfg.resolve_restarts(k * n), rng)

    best = None
    for start in starts:
        d, f, eig, ok, steps, _ = _descend(
            start, floor, cfg, evaluate, direction, grad_tol, rng
        )
        key = (f, tuple(d))
        if best is None or key < best[0]:
            best = (key, d, ok, steps)

    _, dflat, ok, steps = best
    _, eig = _eval_stack(dflat, stack)
    zs, ws = _chains(dflat, stack, eig.vector)
    ds = dflat.reshape(k, n)
    iterates, partitions, reports = [], [], []
    for i in range(k):
        it = DiagonalIterate(ds[i], floor, cfg.eps_active)
        part = _partition(it.d, floor, cfg.eps_active)
        iterates.append(it)
        partitions.append(part)
        reports.append(
            _stationarity(zs[i] * ws[i], part[0], part[1], part[2], 1e-8, cfg.tol_interior)
        )
    return MultiExtremizer(
        iterates=tuple(iterates),
        lam=eig.value,
        x=eig.vector,
        zs=tuple(zs),
        ws=tuple(ws),
        partitions=tuple(partitions),
        reports=tuple(reports),
        converged=ok,
        near_multiple=eig.near_multiple,
        steps=steps,
    )


def stack_margin(me: MultiExtremizer) -> tuple[float, float | None]:
    """Margin -lambda and its floor-derivative summed over all layers."""
    phi = -me.lam
    total = 0.0
    any_floor = False
    for (z, w, part) in zip(me.zs, me.ws, me.partitions):
        idx = list(part[1])
        if idx:
            any_floor = True
            total += float(np.sum(z[idx] * w[idx]))
    if not any_floor:
        return phi, None
    return phi, -total


@dataclass(frozen=True)
class StackSolution:
    m_star: float
    extremizer: MultiExtremizer
    trace: SolveTrace


def _warm_flat(me: MultiExtremizer, new_floor: float) -> np.ndarray:
    rows = []
    for it in me.iterates:
        d = it.d.copy()
        d[d <= it.floor + it.eps_active] = new_floor
        rows.append(d)
    return np.concatenate(rows)


def stack_critical_slope(stack: LayerStack, cfg: OuterConfig | None = None) -> StackSolution:
    """Critical shared floor for a layer stack (same contract as the
    single-layer solve; the derivative sums the floor entries of every
    layer's chain product)."""
    cfg = cfg or OuterConfig()
    mu_one = -_eval_stack(np.ones(stack.k * stack.n), stack)[0]
    if mu_one + abs(cfg.target) >= 0:
        raise NotContractiveError(
            f"mu2 of the full product at D_i = I is {mu_one:.6g}, not below "
            f"-|target| = {-abs(cfg.target):.6g}"
        )
    m0 = cfg.m0 if cfg.m0 is not None else 1.0 - 1e-3

    def inner(m, warm):
        d0 = None if warm is None else _warm_flat(warm, m)
        me = find_stack_extremizer(stack, m, d0=d0, cfg=cfg.flow)
        phi, dphi = stack_margin(me)
        return me, phi, dphi, me, me.converged

    m_star, extremizer, trace = solve_scalar(inner, m0, cfg)
    if not extremizer.converged:
        raise OuterSolveError(
            f"stack inner flow did not converge at m = {m_star:.12g}", trace=trace
        )
    return StackSolution(m_star=m_star, extremizer=extremizer, trace=trace)
