"""Reference transport solver on computation graphs.

Semi-discrete system (unidirectional mode, per node):

    dc0/dt = D·(L c0) - k+·c0 + k'+·c+
    dc+/dt = -(U c+) + k+·c0 - k'+·c+

L is the graph Laplacian with edge weights 1/l², U the two-point upwind
discretisation of u·∇ along each node's axial predecessor.  Time stepping
is explicit Euler with CFL-style sub-steps (safety factor 0.5).  Inlet
sections are held at their Dirichlet values; outlet sections copy their
axial predecessors (zero-gradient closure).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix, csr_matrix

from ._backend import KernelOps, advance
from .errors import NegativeInput, NonFiniteState
from .graphs import BoundaryCondition, ComputationGraph, NodeBoundary, SimParams

__all__ = [
    "DiscreteOperators",
    "FieldSeries",
    "build_operators",
    "stable_substep",
    "step",
    "run_to_steady",
]

CLAMP_EPS = 1e-14


@dataclass
class DiscreteOperators:
    """Sparse Laplacian/upwind pair plus the boundary index arrays."""

    laplacian: csr_matrix
    upwind: csr_matrix
    kernel_ops: KernelOps
    l_min: float
    deg_max: int
    u_max: float
    inlet_nodes: np.ndarray
    outlet_nodes: np.ndarray
    outlet_pred: np.ndarray


def build_operators(g: ComputationGraph) -> DiscreteOperators:
    """Build the discrete operators reused by the solver and the
    physics-residual loss."""
    n = g.n_nodes
    i = g.edges[:, 0]
    j = g.edges[:, 1]
    w = 1.0 / np.square(g.edge_lengths)

    rows = np.concatenate([i, j, i, j])
    cols = np.concatenate([j, i, i, j])
    data = np.concatenate([w, w, -w, -w])
    lap = coo_matrix((data, (rows, cols)), shape=(n, n)).tocsr()
    lap.sum_duplicates()
    lap.sort_indices()

    has_pred = g.axial_pred >= 0
    idx = np.nonzero(has_pred)[0]
    pred = g.axial_pred[idx]
    ell = np.linalg.norm(g.positions[idx] - g.positions[pred], axis=1)
    coef = g.velocity[idx] / ell
    rows = np.concatenate([idx, idx])
    cols = np.concatenate([idx, pred])
    data = np.concatenate([coef, -coef])
    # keep explicit entries even when u = 0 so the row structure is stable
    up = coo_matrix((data, (rows, cols)), shape=(n, n)).tocsr()
    up.sort_indices()

    deg = np.bincount(np.concatenate([i, j]), minlength=n)
    inlet = np.nonzero(g.boundary == NodeBoundary.INLET)[0].astype(np.int64)
    outlet = np.nonzero(g.boundary == NodeBoundary.OUTLET)[0].astype(np.int64)
    outlet_pred = g.axial_pred[outlet].astype(np.int64)
    if np.any(outlet_pred < 0):
        raise ValueError("outlet node without an axial predecessor")

    return DiscreteOperators(
        laplacian=lap,
        upwind=up,
        kernel_ops=KernelOps(lap, up),
        l_min=float(g.edge_lengths.min()),
        deg_max=int(deg.max()),
        u_max=float(g.velocity.max()),
        inlet_nodes=inlet,
        outlet_nodes=outlet,
        outlet_pred=outlet_pred,
    )


def stable_substep(ops: DiscreteOperators, p: SimParams) -> tuple[int, float]:
    """Number and size of explicit sub-steps covering one dt."""
    bounds = []
    if p.D > 0:
        bounds.append(ops.l_min**2 / (2.0 * p.D * ops.deg_max))
    if ops.u_max > 0:
        bounds.append(ops.l_min / ops.u_max)
    rate = p.k_plus + p.kp_plus
    if rate > 0:
        bounds.append(1.0 / rate)
    if not bounds:
        return 1, p.dt
    dt_max = 0.5 * min(bounds)
    n_sub = max(1, math.ceil(p.dt / dt_max))
    return n_sub, p.dt / n_sub


def _check_state(c0: np.ndarray, cp: np.ndarray) -> None:
    for arr in (c0, cp):
        if not np.all(np.isfinite(arr)):
            raise NonFiniteState("state contains non-finite values")
        if np.any(arr < -CLAMP_EPS):
            raise NegativeInput("state contains negative concentrations")


def _apply_bc(c0, cp, ops: DiscreteOperators, bc: BoundaryCondition | None) -> None:
    if bc is None:
        return
    v0, vp = bc.inlet_values
    c0[ops.inlet_nodes] = v0
    cp[ops.inlet_nodes] = vp
    if ops.outlet_nodes.size:
        c0[ops.outlet_nodes] = c0[ops.outlet_pred]
        cp[ops.outlet_nodes] = cp[ops.outlet_pred]


def step(
    state: tuple[np.ndarray, np.ndarray],
    g: ComputationGraph,
    ops: DiscreteOperators,
    p: SimParams,
    bc: BoundaryCondition | None,
) -> tuple[np.ndarray, np.ndarray]:
    """Advance one output step dt (internally sub-stepped).

    ``bc=None`` runs with no Dirichlet inlet and no outlet closure
    (all-reflecting boundaries), which is the mass-conserving mode used by
    the conservation properties.
    """
    c0 = np.array(state[0], dtype=np.float64, copy=True)
    cp = np.array(state[1], dtype=np.float64, copy=True)
    if c0.shape != (g.n_nodes,) or cp.shape != (g.n_nodes,):
        raise ValueError("state shape does not match the graph")
    _check_state(c0, cp)
    np.clip(c0, 0.0, None, out=c0)
    np.clip(cp, 0.0, None, out=cp)
    _apply_bc(c0, cp, ops, bc)

    n_sub, dt_sub = stable_substep(ops, p)
    if bc is None:
        inlet = outlet = pred = np.empty(0, dtype=np.int64)
        v0 = vp = 0.0
    else:
        inlet, outlet, pred = ops.inlet_nodes, ops.outlet_nodes, ops.outlet_pred
        v0, vp = bc.inlet_values
    status = advance(
        ops.kernel_ops, c0, cp, n_sub, dt_sub, p.D, p.k_plus, p.kp_plus,
        inlet, v0, vp, outlet, pred, CLAMP_EPS,
    )
    if status != 0:
        raise NonFiniteState("integration blew up (non-finite or negative state)")
    return c0, cp


@dataclass
class FieldSeries:
    """Concentration fields sampled at output instants.

    ``c0`` and ``c_plus`` are node-by-time matrices.  ``converged`` is
    False when the run stopped at max_time instead of the steady
    tolerance.
    """

    times: np.ndarray
    c0: np.ndarray
    c_plus: np.ndarray
    converged: bool = True

    def __post_init__(self):
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("output times must be strictly increasing")

    @property
    def n_outputs(self) -> int:
        return len(self.times)

    def state_at(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        return self.c0[:, k].copy(), self.c_plus[:, k].copy()

    @property
    def final_state(self) -> tuple[np.ndarray, np.ndarray]:
        return self.state_at(-1)

    def to_csv(self, g: ComputationGraph) -> str:
        cols = ["node_id", "x", "y", "z"]
        for t in self.times:
            cols.append(f"c0_t{t:g}")
        for t in self.times:
            cols.append(f"cplus_t{t:g}")
        lines = [",".join(cols)]
        for i in range(g.n_nodes):
            vals = [str(i)] + [repr(v) for v in g.positions[i]]
            vals += [repr(v) for v in self.c0[i]]
            vals += [repr(v) for v in self.c_plus[i]]
            lines.append(",".join(vals))
        return "\n".join(lines) + "\n"


def run_to_steady(
    g: ComputationGraph,
    p: SimParams,
    bc: BoundaryCondition | None,
    tol: float = 1e-6,
    max_time: float = 2000.0,
    initial_state: tuple[np.ndarray, np.ndarray] | None = None,
    ops: DiscreteOperators | None = None,
    store_every: int = 1,
) -> FieldSeries:
    """Integrate until the max-norm relative change between consecutive
    outputs drops below ``tol`` (or ``max_time`` is reached; the returned
    series is then flagged unconverged).

    ``store_every`` thins the stored outputs (the convergence check still
    runs on every dt); the final state is always stored.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    if ops is None:
        ops = build_operators(g)
    if initial_state is None:
        c0 = np.zeros(g.n_nodes)
        cp = np.zeros(g.n_nodes)
    else:
        c0 = np.array(initial_state[0], dtype=np.float64, copy=True)
        cp = np.array(initial_state[1], dtype=np.float64, copy=True)
    _check_state(c0, cp)
    _apply_bc(c0, cp, ops, bc)

    times = [0.0]
    snap_c0 = [c0.copy()]
    snap_cp = [cp.copy()]
    converged = False
    k = 0
    n_steps = int(round(max_time / p.dt))
    while k < n_steps:
        new_c0, new_cp = step((c0, cp), g, ops, p, bc)
        k += 1
        t = k * p.dt
        change = max(
            np.max(np.abs(new_c0 - c0)), np.max(np.abs(new_cp - cp))
        )
        scale = max(np.max(np.abs(new_c0)), np.max(np.abs(new_cp)), 1e-300)
        c0, cp = new_c0, new_cp
        done = change / scale < tol
        if done or k % store_every == 0:
            times.append(t)
            snap_c0.append(c0)
            snap_cp.append(cp)
        if done:
            converged = True
            break

    if not converged and times[-1] != k * p.dt:
        times.append(k * p.dt)
        snap_c0.append(c0)
        snap_cp.append(cp)
    return FieldSeries(
        times=np.array(times),
        c0=np.stack(snap_c0, axis=1),
        c_plus=np.stack(snap_cp, axis=1),
        converged=converged,
    )
