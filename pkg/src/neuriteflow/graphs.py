"""Computation graphs built from cross-section node templates.

Each circular cross-section contributes 17 nodes: the centre, an inner
ring at r = R/2 and an outer ring at r = 0.95R (eight angles each, so the
near-wall low-velocity region is represented).  A branch-point section
adds 6 saddle nodes on the bisector plane between the two daughter
directions, for 23 nodes total.  Axial edges connect equal template slots
of consecutive sections; in-section edges connect the centre to the inner
ring, the rings radially, and ring neighbours circumferentially.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .decomposition import BIFURCATION, PIPE, BranchSite, NeuriteUnit, SectionSite, UnitGraph
from .errors import DimensionMismatch

__all__ = [
    "NodeBoundary",
    "SimParams",
    "BoundaryCondition",
    "ComputationGraph",
    "build_unit_graph",
    "build_network_graph",
    "unit_boundary_roles",
    "node_features",
    "parabolic_velocity",
    "N_FEATURES",
    "CIRC_SLOTS",
    "BRANCH_SLOTS",
]

N_ANGLES = 8
INNER_FRAC = 0.5
WALL_EPS = 0.05
OUTER_FRAC = 1.0 - WALL_EPS
CIRC_SLOTS = 1 + 2 * N_ANGLES  # 17
SADDLE_FRACS = (INNER_FRAC, OUTER_FRAC)
SADDLE_PSI = (-math.pi / 4, 0.0, math.pi / 4)
BRANCH_SLOTS = CIRC_SLOTS + len(SADDLE_FRACS) * len(SADDLE_PSI)  # 23
N_FEATURES = 12

_THETAS = [k * math.pi / 4 for k in range(N_ANGLES)]

# in-section edge pattern for the 17-slot circular template
_CIRC_EDGES: list[tuple[int, int]] = []
for k in range(N_ANGLES):
    inner = 1 + k
    outer = 1 + N_ANGLES + k
    inner_next = 1 + (k + 1) % N_ANGLES
    outer_next = 1 + N_ANGLES + (k + 1) % N_ANGLES
    _CIRC_EDGES.append((0, inner))
    _CIRC_EDGES.append((inner, outer))
    _CIRC_EDGES.append((inner, inner_next))
    _CIRC_EDGES.append((outer, outer_next))


class NodeBoundary(IntEnum):
    INTERIOR = 0
    INLET = 1
    OUTLET = 2
    INTERFACE = 3


@dataclass
class SimParams:
    """Transport model parameters.

    Units: D in μm²/s, rates in 1/s, u_i in μm/s, dt in s.  In
    unidirectional mode the minus-species rates are carried but ignored by
    every consumer.
    """

    D: float = 1.0
    k_plus: float = 1.0
    k_minus: float = 0.0
    kp_plus: float = 0.5
    kp_minus: float = 0.0
    u_i: float = 0.1
    dt: float = 0.1
    unidirectional: bool = True

    def __post_init__(self):
        if self.D < 0:
            raise ValueError("D must be >= 0")
        for name in ("k_plus", "k_minus", "kp_plus", "kp_minus"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not self.dt > 0:
            raise ValueError("dt must be > 0")


@dataclass
class BoundaryCondition:
    """Inlet (and reserved outlet) concentrations and loading degrees."""

    c_in: float
    lambda_in: float = 1.0
    c_out: float = 0.0  # retained; unused in unidirectional mode
    lambda_out: float = 0.0  # retained; unused

    def __post_init__(self):
        if self.c_in < 0 or self.lambda_in < 0:
            raise ValueError("c_in and lambda_in must be >= 0")

    @property
    def inlet_values(self) -> tuple[float, float]:
        return self.c_in, self.lambda_in * self.c_in


def parabolic_velocity(radial_frac, u_i: float):
    """Axial velocity magnitude u(r) = u_i (1 - (r/R)^2)."""
    return u_i * (1.0 - np.square(radial_frac))


@dataclass
class ComputationGraph:
    """Per-unit (or whole-network) node/edge graph with static features."""

    kind: str
    positions: np.ndarray  # (N, 3) global μm
    local_coords: np.ndarray  # (N, 3) unit frame μm
    radius: np.ndarray  # (N,) section radius
    radial_frac: np.ndarray  # (N,) r/R
    velocity: np.ndarray  # (N,) u(r)
    boundary: np.ndarray  # (N,) NodeBoundary values
    slot: np.ndarray  # (N,) template slot index
    node_section: np.ndarray  # (N,) global section id
    edges: np.ndarray  # (E, 2)
    edge_lengths: np.ndarray  # (E,)
    axial_pred: np.ndarray  # (N,) upstream node id, -1 at none
    section_ids: list[int] = field(default_factory=list)

    def __post_init__(self):
        if np.any(self.edge_lengths <= 0):
            raise ValueError("edge lengths must be positive")
        self.node_index = {
            (int(s), int(k)): i
            for i, (s, k) in enumerate(zip(self.node_section, self.slot))
        }

    @property
    def n_nodes(self) -> int:
        return len(self.positions)

    def section_slot_nodes(self, section_id: int, n_slots: int = CIRC_SLOTS) -> np.ndarray:
        """Node ids of a section's first ``n_slots`` template slots."""
        return np.array([self.node_index[(section_id, k)] for k in range(n_slots)])

    def zero_state(self) -> np.ndarray:
        """(N, 2) zero concentrations for (c0, c+)."""
        return np.zeros((self.n_nodes, 2))


def _section_nodes(site: SectionSite):
    """Template node data for one section.

    Returns (positions, radial_fracs, slots).  Saddle nodes of a branch
    section sit off the section plane; their radial coordinate is the
    in-plane distance from the axis.
    """
    c, R = site.center, site.radius
    pos = [c]
    fracs = [0.0]
    for frac in (INNER_FRAC, OUTER_FRAC):
        for th in _THETAS:
            r = frac * R
            pos.append(c + r * (math.cos(th) * site.e1 + math.sin(th) * site.e2))
            fracs.append(frac)
    slots = list(range(CIRC_SLOTS))
    extra_edges: list[tuple[int, int]] = []
    if isinstance(site, BranchSite):
        w = site.d1 + site.d2
        w_in = w - np.dot(w, site.axis) * site.axis
        n = np.linalg.norm(w_in)
        m_hat = site.e1 if n < 1e-9 else w_in / n
        mu = math.atan2(np.dot(m_hat, site.e2), np.dot(m_hat, site.e1))
        k_star = int(round(mu / (math.pi / 4))) % N_ANGLES
        slot_id = CIRC_SLOTS
        for frac in SADDLE_FRACS:
            for psi in SADDLE_PSI:
                r = frac * R
                pos.append(c + r * math.cos(psi) * m_hat + r * math.sin(psi) * site.axis)
                fracs.append(frac * abs(math.cos(psi)))
                slots.append(slot_id)
                slot_id += 1
        # saddle connectivity: radial partners, chains along psi, and ties
        # from the upstream saddle nodes into the rings (also their preds)
        extra_edges = [
            (17, 20), (18, 21), (19, 22),
            (17, 18), (18, 19), (20, 21), (21, 22),
            (17, 1 + k_star), (20, 1 + N_ANGLES + k_star),
        ]
    return np.array(pos), np.array(fracs), slots, extra_edges


_SADDLE_PRED = {18: 17, 19: 18, 21: 20, 22: 21}


def _build_graph(
    sections: list[SectionSite],
    chains: list[list[int]],
    roles: dict[int, NodeBoundary],
    params: SimParams,
    kind: str,
) -> ComputationGraph:
    node_of: dict[tuple[int, int], int] = {}
    positions, fracs, slots, secs = [], [], [], []
    edges: list[tuple[int, int]] = []
    pred: list[int] = []

    for site in sections:
        pos, frac, slot_ids, extra = _section_nodes(site)
        base = len(positions)
        role = roles.get(site.id, NodeBoundary.INTERIOR)
        for j, s in enumerate(slot_ids):
            node_of[(site.id, s)] = base + j
            positions.append(pos[j])
            fracs.append(frac[j])
            slots.append(s)
            secs.append(site.id)
            pred.append(-1)
        for a, b in _CIRC_EDGES:
            edges.append((base + a, base + b))
        for a, b in extra:
            edges.append((base + a, base + b))
        if extra:
            for s, p in _SADDLE_PRED.items():
                pred[node_of[(site.id, s)]] = node_of[(site.id, p)]
            # upstream saddle nodes (psi = -pi/4) drain from their ring ties
            pred[node_of[(site.id, 17)]] = node_of[(site.id, extra[-2][1])]
            pred[node_of[(site.id, 20)]] = node_of[(site.id, extra[-1][1])]

    for chain in chains:
        for up_id, dn_id in zip(chain[:-1], chain[1:]):
            for s in range(CIRC_SLOTS):
                a = node_of[(up_id, s)]
                b = node_of[(dn_id, s)]
                edges.append((a, b))
                pred[b] = a

    positions = np.array(positions)
    edges_arr = np.array(sorted(set((min(a, b), max(a, b)) for a, b in edges)), dtype=int)
    lengths = np.linalg.norm(positions[edges_arr[:, 0]] - positions[edges_arr[:, 1]], axis=1)

    fracs = np.array(fracs)
    boundary = np.array(
        [int(roles.get(s, NodeBoundary.INTERIOR)) for s in secs], dtype=np.int8
    )
    radius_of = {s.id: s.radius for s in sections}

    return ComputationGraph(
        kind=kind,
        positions=positions,
        local_coords=_local_coords(positions, sections[0]),
        radius=np.array([radius_of[s] for s in secs]),
        radial_frac=fracs,
        velocity=parabolic_velocity(fracs, params.u_i),
        boundary=boundary,
        slot=np.array(slots, dtype=int),
        node_section=np.array(secs, dtype=int),
        edges=edges_arr,
        edge_lengths=lengths,
        axial_pred=np.array(pred, dtype=int),
        section_ids=[s.id for s in sections],
    )


def _local_coords(positions: np.ndarray, first: SectionSite) -> np.ndarray:
    """Coordinates in the unit frame: origin at the first section centre,
    x along its axis, y along its transported in-plane vector."""
    ex = first.axis
    ey = first.e1
    ez = np.cross(ex, ey)
    rel = positions - first.center
    return np.stack([rel @ ex, rel @ ey, rel @ ez], axis=1)


def unit_boundary_roles(unit: NeuriteUnit, ug: UnitGraph | None = None) -> dict[int, NodeBoundary]:
    """Boundary role of each terminal section of a unit.

    Standalone units (no UnitGraph context) get an inlet at their upstream
    section and outlets downstream.  Within a network, sections shared
    through an interface are flagged as interfaces instead, and only the
    network inlet keeps the inlet role.
    """
    roles: dict[int, NodeBoundary] = {}
    if ug is None:
        roles[unit.upstream_section] = NodeBoundary.INLET
        for s in unit.downstream_sections:
            roles[s] = NodeBoundary.OUTLET
        return roles
    iface_sections = {i.section_id for i in ug.interfaces}
    for s in [unit.upstream_section] + unit.downstream_sections:
        if s in iface_sections:
            roles[s] = NodeBoundary.INTERFACE
        elif s == ug.inlet_section:
            roles[s] = NodeBoundary.INLET
        elif s in ug.outlet_sections:
            roles[s] = NodeBoundary.OUTLET
    return roles


def build_unit_graph(
    unit: NeuriteUnit,
    params: SimParams,
    roles: dict[int, NodeBoundary] | None = None,
) -> ComputationGraph:
    """Instantiate the node/edge graph of one unit.

    A pipe of S sections yields 17·S nodes; a bifurcation yields
    23 + 9·17 = 176.
    """
    if roles is None:
        roles = unit_boundary_roles(unit)
    return _build_graph(unit.all_sites(), unit.axial_chains(), roles, params, unit.kind)


def build_network_graph(ug: UnitGraph, params: SimParams) -> ComputationGraph:
    """Merged whole-network graph; shared sections appear exactly once."""
    sections: list[SectionSite] = []
    seen: set[int] = set()
    chains: list[list[int]] = []
    for u in ug.units:
        for s in u.all_sites():
            if s.id not in seen:
                seen.add(s.id)
                sections.append(s)
        chains.extend(u.axial_chains())
    roles = {ug.inlet_section: NodeBoundary.INLET}
    for s in ug.outlet_sections:
        roles[s] = NodeBoundary.OUTLET
    return _build_graph(sections, chains, roles, params, "network")


def node_features(
    g: ComputationGraph, params: SimParams, c0: np.ndarray, c_plus: np.ndarray
) -> np.ndarray:
    """Per-node input features, shape (N, 12).

    Columns: local x, y, z, section radius, r/R, u(r), D, k+, k'+, u_i,
    c0, c+.  Ordering follows the graph's (section, slot) node order.
    """
    c0 = np.asarray(c0, dtype=float)
    c_plus = np.asarray(c_plus, dtype=float)
    if c0.shape != (g.n_nodes,) or c_plus.shape != (g.n_nodes,):
        raise DimensionMismatch(
            f"concentration snapshot must have shape ({g.n_nodes},)"
        )
    out = np.empty((g.n_nodes, N_FEATURES))
    out[:, 0:3] = g.local_coords
    out[:, 3] = g.radius
    out[:, 4] = g.radial_frac
    out[:, 5] = g.velocity
    out[:, 6] = params.D
    out[:, 7] = params.k_plus
    out[:, 8] = params.kp_plus
    out[:, 9] = params.u_i
    out[:, 10] = c0
    out[:, 11] = c_plus
    return out
