"""Interface assembly: corrections that stitch unit predictions together.

Three components (pipe-pipe, pipe-bifurcation, bifurcation-bifurcation)
share one MLP architecture.  For each interface, each side gathers both
sides' predicted values on the shared 17-node section plus three geometry
scalars, and its component emits corrected values for that side's
interface section and the section adjacent to it.  Training adds an
interface-consistency penalty to the MSE.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .decomposition import BIFURCATION, PIPE, Interface, NeuriteUnit, UnitGraph
from .errors import (
    DimensionMismatch,
    EmptyDataset,
    MissingPrediction,
    NonFiniteState,
    SlotMismatch,
    UnknownKind,
)
from .graphs import (
    CIRC_SLOTS,
    BoundaryCondition,
    ComputationGraph,
    NodeBoundary,
    SimParams,
    node_features,
)
from .nn.tensor import Tensor
from .simulator import EdgeAggregator, SimulatorModel
from .solver import FieldSeries

__all__ = [
    "COMPONENT_INPUT",
    "COMPONENT_OUTPUT",
    "ASSEMBLY_KINDS",
    "AssemblyComponent",
    "AssemblyTrainConfig",
    "InterfaceBinding",
    "InterfaceSide",
    "build_bindings",
    "assemble_step",
    "assembly_loss",
    "train_assembly",
    "global_rollout",
    "interface_jump",
]

ASSEMBLY_KINDS = ("p-p", "p-b", "b-b")
# own interface (17x2) + neighbour interface (17x2) + radii and spacing
COMPONENT_INPUT = 4 * CIRC_SLOTS + 3  # 71
# corrected own interface section + own adjacent section
COMPONENT_OUTPUT = 4 * CIRC_SLOTS  # 68


@dataclass
class AssemblyComponent:
    """One interface-kind corrector; weights shared across interfaces."""

    kind: str
    mlp: nn.Mlp

    @classmethod
    def create(cls, kind: str, rng: np.random.Generator) -> "AssemblyComponent":
        if kind not in ASSEMBLY_KINDS:
            raise UnknownKind(f"unknown assembly kind {kind!r}")
        return cls(
            kind=kind,
            mlp=nn.Mlp.create([COMPONENT_INPUT, 32, 32, 32, COMPONENT_OUTPUT], rng),
        )

    def architecture(self) -> dict:
        return {
            "model": "assembly-component",
            "kind": self.kind,
            "mlp": self.mlp.layer_sizes,
        }

    def save(self, path, seed: int, config: dict | None = None) -> None:
        nn.save_checkpoint(path, self.mlp.to_arrays(), self.architecture(),
                           seed, config)

    @classmethod
    def load(cls, path) -> tuple["AssemblyComponent", dict]:
        arrays, header = nn.load_checkpoint(path)
        comp = cls.create(header["architecture"]["kind"], np.random.default_rng(0))
        comp.mlp.load_arrays(arrays)
        return comp, header


@dataclass
class InterfaceSide:
    unit: int
    iface_nodes: np.ndarray  # (17,) node ids in that unit's graph
    adj_nodes: np.ndarray  # (17,)
    adj_radius: float


@dataclass
class InterfaceBinding:
    """Resolved node correspondence of one interface."""

    interface: Interface
    side_a: InterfaceSide
    side_b: InterfaceSide
    spacing: float

    @property
    def scalars_a(self) -> np.ndarray:
        return np.array([self.side_a.adj_radius, self.side_b.adj_radius,
                         self.spacing])

    @property
    def scalars_b(self) -> np.ndarray:
        return np.array([self.side_b.adj_radius, self.side_a.adj_radius,
                         self.spacing])


def _adjacent_section(unit: NeuriteUnit, section_id: int):
    """The unit's section next to a boundary section, toward its interior."""
    if unit.kind == PIPE:
        if unit.sites[0].id == section_id:
            return unit.sites[1]
        if unit.sites[-1].id == section_id:
            return unit.sites[-2]
    else:
        for branch in unit.branches:
            if branch[2].id == section_id:
                return branch[1]
    raise SlotMismatch(
        f"section {section_id} is not a boundary section of the unit"
    )


def build_bindings(
    ug: UnitGraph, unit_graphs: dict[int, ComputationGraph]
) -> list[InterfaceBinding]:
    """Node correspondences for every interface, sorted by section id.

    Both sides instantiate the same 17-slot template on the shared
    section, so slot k on one side corresponds to slot k on the other.
    """
    bindings = []
    for itf in sorted(ug.interfaces, key=lambda i: i.section_id):
        sides = []
        adj_sites = []
        for uid in (itf.unit_a, itf.unit_b):
            g = unit_graphs[uid]
            try:
                nodes = g.section_slot_nodes(itf.section_id)
            except KeyError:
                raise SlotMismatch(
                    f"unit {uid} has no section {itf.section_id}"
                ) from None
            adj = _adjacent_section(ug.units[uid], itf.section_id)
            adj_sites.append(adj)
            sides.append(
                InterfaceSide(
                    unit=uid,
                    iface_nodes=nodes,
                    adj_nodes=g.section_slot_nodes(adj.id),
                    adj_radius=adj.radius,
                )
            )
        spacing = float(np.linalg.norm(adj_sites[0].center - adj_sites[1].center))
        bindings.append(
            InterfaceBinding(interface=itf, side_a=sides[0], side_b=sides[1],
                             spacing=spacing)
        )
    return bindings


def _component_input(own_vals, nb_vals, scalars) -> np.ndarray:
    return np.concatenate([own_vals.ravel(), nb_vals.ravel(), scalars])


def assemble_step(
    states: dict[int, np.ndarray],
    ug: UnitGraph,
    components: dict[str, AssemblyComponent],
    bindings: list[InterfaceBinding],
) -> dict[int, np.ndarray]:
    """One message-passing correction pass over all interfaces.

    Gathers from the input snapshot and writes into a copy, so interface
    order cannot leak information within a pass; interfaces are processed
    in sorted-section order.  Non-interface nodes pass through unchanged.
    """
    for uid in range(len(ug.units)):
        if uid not in states:
            raise MissingPrediction(f"no prediction for unit {uid}")
    out = {uid: s.copy() for uid, s in states.items()}
    for binding in bindings:
        comp = components[binding.interface.kind]
        a, b = binding.side_a, binding.side_b
        vals_a = states[a.unit][a.iface_nodes]
        vals_b = states[b.unit][b.iface_nodes]
        for side, own_vals, nb_vals, scalars in (
            (a, vals_a, vals_b, binding.scalars_a),
            (b, vals_b, vals_a, binding.scalars_b),
        ):
            x = _component_input(own_vals, nb_vals, scalars)
            y = comp.mlp.forward_arrays(x[None, :])[0]
            corr = y.reshape(2, CIRC_SLOTS, 2)
            out[side.unit][side.iface_nodes] = corr[0]
            out[side.unit][side.adj_nodes] = corr[1]
    return out


def assembly_loss(
    out_a: Tensor,
    out_b: Tensor,
    truth_a: np.ndarray,
    truth_b: np.ndarray,
    rest_sq_err: float,
    n_nodes_total: int,
    alpha: float,
) -> Tensor:
    """MSE over the assembled pair plus the interface-consistency penalty.

    ``out_a``/``out_b`` are the two sides' component outputs (rows of
    samples, 68 columns in [interface | adjacent] block layout);
    ``truth_a``/``truth_b`` the matching ground-truth values.
    ``rest_sq_err`` carries the (constant) squared error of the
    uncorrected nodes so the reported value is the full-pair MSE.
    """
    if out_a.data.shape != truth_a.shape or out_b.data.shape != truth_b.shape:
        raise DimensionMismatch("assembly output/truth shapes disagree")
    s = out_a.data.shape[0]
    mse = (
        (out_a - truth_a).square().sum()
        + (out_b - truth_b).square().sum()
        + rest_sq_err
    ) * (1.0 / (s * n_nodes_total))
    iface_cols = 2 * CIRC_SLOTS
    gap = out_a.cols(0, iface_cols) - out_b.cols(0, iface_cols)
    penalty = gap.square().sum() * (alpha / (s * CIRC_SLOTS))
    return mse + penalty


@dataclass
class AssemblyPairSamples:
    """Training samples of one interface kind.

    Sides a and b are ordered as in the Interface record; for p-b pairs
    side a is always the pipe.
    """

    kind: str
    x_mid_a: np.ndarray  # (S, Na, 2) simulator intermediate predictions
    x_mid_b: np.ndarray  # (S, Nb, 2)
    truth_a: np.ndarray
    truth_b: np.ndarray
    ia_nodes: np.ndarray  # (S, 17) interface node ids, side a
    ab_adj_nodes_a: np.ndarray  # (S, 17) adjacent node ids, side a
    ib_nodes: np.ndarray
    ab_adj_nodes_b: np.ndarray
    scalars_a: np.ndarray  # (S, 3)
    scalars_b: np.ndarray  # (S, 3)
    geometry_ids: np.ndarray  # (S,)

    @property
    def n_samples(self) -> int:
        return len(self.x_mid_a)


@dataclass
class AssemblyDataset:
    groups: dict[str, AssemblyPairSamples]


@dataclass
class AssemblyTrainConfig:
    alpha: float = 10.0
    epochs: int = 200
    batch_size: int = 32
    split: float = 0.75
    seed: int = 0
    schedule: nn.LrSchedule = field(default_factory=nn.LrSchedule)

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")


def _gather_component_io(samples: AssemblyPairSamples, idx):
    """Input matrices for both sides and truth in output layout."""
    s = len(idx)
    xa = np.empty((s, COMPONENT_INPUT))
    xb = np.empty((s, COMPONENT_INPUT))
    ta = np.empty((s, COMPONENT_OUTPUT))
    tb = np.empty((s, COMPONENT_OUTPUT))
    rest = 0.0
    for r, si in enumerate(idx):
        va = samples.x_mid_a[si][samples.ia_nodes[si]]
        vb = samples.x_mid_b[si][samples.ib_nodes[si]]
        xa[r] = _component_input(va, vb, samples.scalars_a[si])
        xb[r] = _component_input(vb, va, samples.scalars_b[si])
        ta[r, :2 * CIRC_SLOTS] = samples.truth_a[si][samples.ia_nodes[si]].ravel()
        ta[r, 2 * CIRC_SLOTS:] = samples.truth_a[si][samples.ab_adj_nodes_a[si]].ravel()
        tb[r, :2 * CIRC_SLOTS] = samples.truth_b[si][samples.ib_nodes[si]].ravel()
        tb[r, 2 * CIRC_SLOTS:] = samples.truth_b[si][samples.ab_adj_nodes_b[si]].ravel()
        rest += _rest_sq_err(samples, si)
    return xa, xb, ta, tb, rest


def _rest_sq_err(samples: AssemblyPairSamples, si: int) -> float:
    """Squared error of the nodes an assembly pass leaves untouched."""
    touched_a = np.concatenate([samples.ia_nodes[si], samples.ab_adj_nodes_a[si]])
    touched_b = np.concatenate([samples.ib_nodes[si], samples.ab_adj_nodes_b[si]])
    mask_a = np.ones(len(samples.x_mid_a[si]), dtype=bool)
    mask_a[touched_a] = False
    mask_b = np.ones(len(samples.x_mid_b[si]), dtype=bool)
    mask_b[touched_b] = False
    da = samples.x_mid_a[si][mask_a] - samples.truth_a[si][mask_a]
    db = samples.x_mid_b[si][mask_b] - samples.truth_b[si][mask_b]
    return float(np.sum(da * da) + np.sum(db * db))


def train_assembly(
    ds: AssemblyDataset, cfg: AssemblyTrainConfig
) -> tuple[dict[str, AssemblyComponent], dict[str, list[dict]]]:
    """Train each interface kind's component on its own samples."""
    if not ds.groups or all(g.n_samples == 0 for g in ds.groups.values()):
        raise EmptyDataset("assembly dataset has no samples")
    for kind in ds.groups:
        if kind not in ASSEMBLY_KINDS:
            raise UnknownKind(f"unknown assembly kind {kind!r}")

    rng = np.random.default_rng(cfg.seed)
    components = {k: AssemblyComponent.create(k, rng) for k in ASSEMBLY_KINDS}
    histories: dict[str, list[dict]] = {}

    for kind in ASSEMBLY_KINDS:
        samples = ds.groups.get(kind)
        if samples is None or samples.n_samples == 0:
            continue
        comp = components[kind]
        n_total = samples.x_mid_a.shape[1] + samples.x_mid_b.shape[1]
        unique = np.unique(samples.geometry_ids)
        order = rng.permutation(len(unique))
        n_train = min(max(1, int(round(cfg.split * len(unique)))), len(unique) - 1)
        train_g = unique[order[:n_train]]
        train_idx = np.nonzero(np.isin(samples.geometry_ids, train_g))[0]
        test_idx = np.nonzero(~np.isin(samples.geometry_ids, train_g))[0]

        params = comp.mlp.parameters()
        state = nn.AdamState.for_params(params)
        history = []
        for epoch in range(cfg.epochs):
            lr = cfg.schedule.lr(epoch)
            perm = rng.permutation(train_idx)
            epoch_loss = 0.0
            for lo in range(0, len(perm), cfg.batch_size):
                idx = perm[lo:lo + cfg.batch_size]
                xa, xb, ta, tb, rest = _gather_component_io(samples, idx)
                out_a = comp.mlp.forward(Tensor(xa))
                out_b = comp.mlp.forward(Tensor(xb))
                loss = assembly_loss(out_a, out_b, ta, tb, rest, n_total, cfg.alpha)
                for p in params:
                    p.grad = None
                loss.backward()
                nn.adam_step(params, [p.grad for p in params], state, lr)
                epoch_loss += float(loss.data) * len(idx)
            epoch_loss /= max(len(perm), 1)
            test_loss = _assembly_eval(comp, samples, test_idx, n_total, cfg.alpha)
            history.append(
                {"epoch": epoch, "lr": lr, "train_loss": epoch_loss,
                 "test_loss": test_loss}
            )
        histories[kind] = history
    return components, histories


def _assembly_eval(comp, samples, idx, n_total, alpha) -> float:
    if len(idx) == 0:
        return math.nan
    xa, xb, ta, tb, rest = _gather_component_io(samples, idx)
    out_a = comp.mlp.forward_arrays(xa)
    out_b = comp.mlp.forward_arrays(xb)
    s = len(idx)
    mse = (np.sum((out_a - ta) ** 2) + np.sum((out_b - tb) ** 2) + rest) / (
        s * n_total
    )
    gap = out_a[:, :2 * CIRC_SLOTS] - out_b[:, :2 * CIRC_SLOTS]
    return float(mse + alpha * np.sum(gap * gap) / (s * CIRC_SLOTS))


def interface_jump(
    states: dict[int, np.ndarray], binding: InterfaceBinding
) -> float:
    """Mean absolute two-sided disagreement on an interface section."""
    a = states[binding.side_a.unit][binding.side_a.iface_nodes]
    b = states[binding.side_b.unit][binding.side_b.iface_nodes]
    return float(np.mean(np.abs(a - b)))


def global_rollout(
    ug: UnitGraph,
    unit_graphs: dict[int, ComputationGraph],
    simulators: dict[str, SimulatorModel],
    components: dict[str, AssemblyComponent],
    bc: BoundaryCondition,
    steps: int,
    params: SimParams,
    network_graph: ComputationGraph,
    initial_states: dict[int, np.ndarray] | None = None,
    store_every: int = 1,
) -> FieldSeries:
    """Network-wide rollout: per step, every unit's simulator advances one
    dt, interfaces are corrected, and the inlet Dirichlet is reasserted.

    The exported series lives on the network graph's nodes; interface
    duplicates are averaged.
    """
    bindings = build_bindings(ug, unit_graphs)
    aggregators = {uid: EdgeAggregator(g) for uid, g in unit_graphs.items()}
    v0, vp = bc.inlet_values

    if initial_states is None:
        states = {uid: g.zero_state() for uid, g in unit_graphs.items()}
    else:
        states = {uid: s.copy() for uid, s in initial_states.items()}

    def assert_inlet(st: dict[int, np.ndarray]) -> None:
        g = unit_graphs[ug.inlet_unit]
        inlet = g.boundary == NodeBoundary.INLET
        st[ug.inlet_unit][inlet, 0] = v0
        st[ug.inlet_unit][inlet, 1] = vp

    assert_inlet(states)

    # averaging map from unit nodes onto network nodes
    net_rows: dict[int, np.ndarray] = {}
    counts = np.zeros(network_graph.n_nodes)
    for uid, g in unit_graphs.items():
        rows = np.array(
            [network_graph.node_index[(int(s), int(k))]
             for s, k in zip(g.node_section, g.slot)]
        )
        net_rows[uid] = rows
        np.add.at(counts, rows, 1.0)

    def export(st: dict[int, np.ndarray]) -> np.ndarray:
        acc = np.zeros((network_graph.n_nodes, 2))
        for uid in sorted(st):
            np.add.at(acc, net_rows[uid], st[uid])
        return acc / counts[:, None]

    by_kind: dict[str, list[int]] = {}
    for uid, u in enumerate(ug.units):
        by_kind.setdefault(u.kind, []).append(uid)

    times = [0.0]
    snaps = [export(states)]
    for k in range(1, steps + 1):
        new_states: dict[int, np.ndarray] = {}
        for kind, uids in by_kind.items():
            model = simulators[kind]
            feats = np.concatenate(
                [node_features(unit_graphs[u], params,
                               states[u][:, 0], states[u][:, 1])
                 for u in uids]
            )
            agg = np.concatenate(
                [aggregators[u].aggregate(states[u][:, 0], states[u][:, 1])
                 for u in uids]
            )
            out = model.forward_arrays(feats, agg)
            lo = 0
            for u in uids:
                n = unit_graphs[u].n_nodes
                new_states[u] = out[lo:lo + n]
                lo += n
        assert_inlet(new_states)
        new_states = assemble_step(new_states, ug, components, bindings)
        assert_inlet(new_states)
        for uid, s in new_states.items():
            if not np.all(np.isfinite(s)):
                raise NonFiniteState(f"global rollout diverged at step {k}")
        states = new_states
        if k % store_every == 0 or k == steps:
            times.append(k * params.dt)
            snaps.append(export(states))
    arr = np.stack(snaps, axis=2)
    return FieldSeries(
        times=np.array(times), c0=arr[:, 0, :], c_plus=arr[:, 1, :],
        converged=True,
    )
