"""GN-block unit simulators: one-step concentration predictors.

Architecture: a linear encoder lifts the 12 node features to width 32; a
weight-shared GN block applied L times updates node states from the fixed
edge attributes (concentration gradients along edges plus edge length,
sum-aggregated per node); an MLP decoder emits (c0, c+) for the next
step.  Training minimises MSE plus the squared residuals of the governing
equations, evaluated with the solver's discrete operators.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.sparse import block_diag, coo_matrix, csr_matrix

from . import nn
from .errors import (
    DimensionMismatch,
    EmptyDataset,
    KindMismatch,
    NonFiniteState,
)
from .graphs import (
    BoundaryCondition,
    ComputationGraph,
    N_FEATURES,
    NodeBoundary,
    SimParams,
    node_features,
)
from .nn.tensor import Tensor, concat, csr_matmul
from .solver import DiscreteOperators, FieldSeries, build_operators

__all__ = [
    "HIDDEN_WIDTH",
    "EDGE_ATTR_WIDTH",
    "EdgeAggregator",
    "GraphBundle",
    "SimulatorModel",
    "SimulatorLossConfig",
    "TrainConfig",
    "TrainResult",
    "SimulatorDataset",
    "edge_attributes",
    "predict_step",
    "rollout",
    "simulator_loss",
    "train_simulator",
    "evaluate_mre",
]

HIDDEN_WIDTH = 32
EDGE_ATTR_WIDTH = 3  # gradient of c0, gradient of c+, edge length


def edge_attributes(c0_i, c0_j, cp_i, cp_j, length):
    """Fixed edge function for edge (i, j); antisymmetric gradient parts."""
    return np.array([
        (c0_j - c0_i) / length,
        (cp_j - cp_i) / length,
        length,
    ])


class EdgeAggregator:
    """Sum of incident edge attributes per node, as fixed linear maps.

    The gradient components reduce to a 1/l-weighted graph operator
    applied to each species; the length component is a per-node constant.
    """

    def __init__(self, g: ComputationGraph):
        n = g.n_nodes
        i, j = g.edges[:, 0], g.edges[:, 1]
        w = 1.0 / g.edge_lengths
        rows = np.concatenate([i, j, i, j])
        cols = np.concatenate([j, i, i, j])
        data = np.concatenate([w, w, -w, -w])
        op = coo_matrix((data, (rows, cols)), shape=(n, n)).tocsr()
        op.sum_duplicates()
        op.sort_indices()
        self.grad_op = op
        self.len_sum = np.bincount(
            np.concatenate([i, j]),
            weights=np.concatenate([g.edge_lengths, g.edge_lengths]),
            minlength=n,
        )

    def aggregate(self, c0: np.ndarray, cp: np.ndarray) -> np.ndarray:
        return np.stack(
            [self.grad_op @ c0, self.grad_op @ cp, self.len_sum], axis=1
        )


@dataclass
class GraphBundle:
    """Everything training/inference needs for one graph, built once."""

    graph: ComputationGraph
    ops: DiscreteOperators
    aggregator: EdgeAggregator
    upwind_t: csr_matrix
    residual_rows: np.ndarray  # PDE-governed node ids (not inlet/outlet)
    inlet_rows: np.ndarray

    @classmethod
    def from_graph(cls, g: ComputationGraph, ops: DiscreteOperators | None = None):
        ops = ops or build_operators(g)
        governed = (g.boundary != NodeBoundary.INLET) & (
            g.boundary != NodeBoundary.OUTLET
        )
        return cls(
            graph=g,
            ops=ops,
            aggregator=EdgeAggregator(g),
            upwind_t=ops.upwind.T.tocsr(),
            residual_rows=np.nonzero(governed)[0],
            inlet_rows=ops.inlet_nodes,
        )


@dataclass
class SimulatorModel:
    """Pipe or bifurcation simulator; same architecture, separate weights."""

    kind: str
    l_steps: int
    encoder: nn.Mlp
    node_mlp: nn.Mlp
    decoder: nn.Mlp

    @classmethod
    def create(cls, kind: str, rng: np.random.Generator, l_steps: int = 3):
        return cls(
            kind=kind,
            l_steps=l_steps,
            encoder=nn.Mlp.create([N_FEATURES, HIDDEN_WIDTH], rng),
            node_mlp=nn.Mlp.create(
                [HIDDEN_WIDTH + EDGE_ATTR_WIDTH, HIDDEN_WIDTH, HIDDEN_WIDTH,
                 HIDDEN_WIDTH],
                rng,
            ),
            decoder=nn.Mlp.create(
                [HIDDEN_WIDTH, HIDDEN_WIDTH, HIDDEN_WIDTH, HIDDEN_WIDTH, 2], rng
            ),
        )

    def parameters(self) -> list[Tensor]:
        return (
            self.encoder.parameters()
            + self.node_mlp.parameters()
            + self.decoder.parameters()
        )

    def architecture(self) -> dict:
        return {
            "model": "unit-simulator",
            "kind": self.kind,
            "l_steps": self.l_steps,
            "encoder": self.encoder.layer_sizes,
            "node_mlp": self.node_mlp.layer_sizes,
            "decoder": self.decoder.layer_sizes,
        }

    def forward_taped(self, feats: Tensor, agg: Tensor) -> Tensor:
        h = self.encoder.forward(feats)
        for _ in range(self.l_steps):
            h = self.node_mlp.forward(concat([h, agg], axis=1))
        return self.decoder.forward(h)

    def forward_arrays(self, feats: np.ndarray, agg: np.ndarray) -> np.ndarray:
        h = self.encoder.forward_arrays(feats)
        for _ in range(self.l_steps):
            h = self.node_mlp.forward_arrays(np.concatenate([h, agg], axis=1))
        return self.decoder.forward_arrays(h)

    def to_arrays(self) -> list[np.ndarray]:
        return (
            self.encoder.to_arrays()
            + self.node_mlp.to_arrays()
            + self.decoder.to_arrays()
        )

    def load_arrays(self, arrays: list[np.ndarray]) -> None:
        n_enc = len(self.encoder.parameters())
        n_node = len(self.node_mlp.parameters())
        self.encoder.load_arrays(arrays[:n_enc])
        self.node_mlp.load_arrays(arrays[n_enc:n_enc + n_node])
        self.decoder.load_arrays(arrays[n_enc + n_node:])

    def save(self, path, seed: int, config: dict | None = None) -> None:
        nn.save_checkpoint(path, self.to_arrays(), self.architecture(), seed, config)

    @classmethod
    def load(cls, path) -> tuple["SimulatorModel", dict]:
        arrays, header = nn.load_checkpoint(path)
        arch = header["architecture"]
        model = cls.create(
            arch["kind"], np.random.default_rng(0), l_steps=int(arch["l_steps"])
        )
        if model.architecture() != arch:
            from .errors import ArchitectureMismatch

            raise ArchitectureMismatch(f"{path}: unexpected architecture {arch}")
        model.load_arrays(arrays)
        return model, header


def _check_features(g: ComputationGraph, features: np.ndarray) -> None:
    if features.shape != (g.n_nodes, N_FEATURES):
        raise DimensionMismatch(
            f"features shape {features.shape} != ({g.n_nodes}, {N_FEATURES})"
        )


def predict_step(
    model: SimulatorModel,
    g: ComputationGraph,
    features: np.ndarray,
    bc: BoundaryCondition,
    aggregator: EdgeAggregator | None = None,
) -> np.ndarray:
    """One-step prediction with hard Dirichlet enforcement at inlet nodes."""
    if g.kind != model.kind:
        raise KindMismatch(f"graph kind {g.kind!r} != model kind {model.kind!r}")
    _check_features(g, features)
    if aggregator is None:
        aggregator = EdgeAggregator(g)
    agg = aggregator.aggregate(features[:, 10], features[:, 11])
    out = model.forward_arrays(features, agg)
    inlet = g.boundary == NodeBoundary.INLET
    if inlet.any():
        v0, vp = bc.inlet_values
        out[inlet, 0] = v0
        out[inlet, 1] = vp
    return out


def rollout(
    model: SimulatorModel,
    g: ComputationGraph,
    bc: BoundaryCondition,
    steps: int,
    params: SimParams,
    initial_state: tuple[np.ndarray, np.ndarray] | None = None,
) -> FieldSeries:
    """Recurrent application of predict_step, feeding outputs back."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if initial_state is None:
        c0 = np.zeros(g.n_nodes)
        cp = np.zeros(g.n_nodes)
    else:
        c0, cp = (np.array(a, dtype=float, copy=True) for a in initial_state)
    inlet = g.boundary == NodeBoundary.INLET
    v0, vp = bc.inlet_values
    c0[inlet] = v0
    cp[inlet] = vp
    aggregator = EdgeAggregator(g)
    times = [0.0]
    snaps = [np.stack([c0, cp], axis=1)]
    for k in range(1, steps + 1):
        feats = node_features(g, params, c0, cp)
        out = predict_step(model, g, feats, bc, aggregator)
        if not np.all(np.isfinite(out)):
            raise NonFiniteState(f"rollout diverged at step {k}")
        c0, cp = out[:, 0], out[:, 1]
        times.append(k * params.dt)
        snaps.append(out)
    stacked = np.stack(snaps, axis=2)  # (N, 2, T)
    return FieldSeries(
        times=np.array(times),
        c0=stacked[:, 0, :],
        c_plus=stacked[:, 1, :],
        converged=True,
    )


@dataclass
class SimulatorLossConfig:
    residual_weight: float = 1.0
    unidirectional: bool = True

    def __post_init__(self):
        if self.residual_weight < 0:
            raise ValueError("residual_weight must be >= 0")


def simulator_loss(
    pred: Tensor,
    truth: np.ndarray,
    prev_state: np.ndarray,
    bundle_ops: dict,
    p: SimParams,
    cfg: SimulatorLossConfig,
) -> Tensor:
    """MSE plus squared PDE residuals (forward difference over dt).

    ``bundle_ops`` carries 'laplacian', 'upwind', 'upwind_t' (possibly
    block-diagonal over a batch) and 'residual_rows'.  Gradients flow
    through ``pred`` only.
    """
    n = pred.data.shape[0]
    if truth.shape != (n, 2) or prev_state.shape != (n, 2):
        raise DimensionMismatch("pred/truth/prev shapes disagree")
    err = pred - truth
    mse = err.square().sum() * (1.0 / n)

    if cfg.residual_weight == 0.0:
        return mse

    lap = bundle_ops["laplacian"]
    up = bundle_ops["upwind"]
    up_t = bundle_ops["upwind_t"]
    rows = bundle_ops["residual_rows"]
    k_minus = 0.0 if cfg.unidirectional else p.k_minus
    kp_minus = 0.0 if cfg.unidirectional else p.kp_minus

    c0p = pred.cols(0, 1)
    cpp = pred.cols(1, 2)
    prev0 = prev_state[:, 0:1]
    prevp = prev_state[:, 1:2]

    r0 = (
        (c0p - prev0) * (1.0 / p.dt)
        - csr_matmul(lap, lap, c0p) * p.D
        + c0p * (p.k_plus + k_minus)
        - cpp * p.kp_plus
    )
    rp = (
        (cpp - prevp) * (1.0 / p.dt)
        + csr_matmul(up, up_t, cpp)
        - c0p * p.k_plus
        + cpp * (p.kp_plus + kp_minus)
    )
    m = max(len(rows), 1)
    res = (
        r0.rows(rows).square().sum() * (1.0 / m)
        + rp.rows(rows).square().sum() * (1.0 / m)
    )
    return mse + res * cfg.residual_weight


@dataclass
class SimulatorDataset:
    """One-step samples of a single unit kind.

    ``features[s]`` are the step-k node features of sample s on graph
    ``graph_ids[s]``; ``truth[s]`` is the solver state one dt later.
    Node counts may differ between samples (units come in several sizes),
    so samples are kept as per-sample arrays.
    """

    kind: str
    features: list[np.ndarray]  # S arrays of shape (N_s, 12)
    truth: list[np.ndarray]  # S arrays of shape (N_s, 2)
    graph_ids: np.ndarray  # (S,)
    geometry_ids: np.ndarray  # (S,)
    c_in: np.ndarray  # (S,)
    lambda_in: float
    graphs: dict[int, ComputationGraph]
    params: SimParams

    @property
    def n_samples(self) -> int:
        return len(self.features)

    def prev_state(self, s: int) -> np.ndarray:
        return self.features[s][:, 10:12]


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 32
    split: float = 0.75
    seed: int = 0
    schedule: nn.LrSchedule = field(default_factory=nn.LrSchedule)
    loss: SimulatorLossConfig = field(default_factory=SimulatorLossConfig)
    init_arrays: list | None = None  # warm start (transfer learning)


@dataclass
class TrainResult:
    model: SimulatorModel
    history: list[dict]
    best_epoch: int
    best_test_loss: float
    train_geometries: np.ndarray
    test_geometries: np.ndarray
    final_arrays: list


def _split_geometries(geometry_ids: np.ndarray, split: float, rng) -> tuple:
    unique = np.unique(geometry_ids)
    order = rng.permutation(len(unique))
    n_train = max(1, int(round(split * len(unique))))
    if n_train >= len(unique):
        n_train = len(unique) - 1
    train = unique[order[:n_train]]
    test = unique[order[n_train:]]
    return np.sort(train), np.sort(test)


def _batch_ops(bundles: dict, gids) -> dict:
    bs = [bundles[int(g)] for g in gids]
    if len(bs) == 1:
        b = bs[0]
        return {
            "laplacian": b.ops.laplacian,
            "upwind": b.ops.upwind,
            "upwind_t": b.upwind_t,
            "residual_rows": b.residual_rows,
        }
    n = 0
    rows = []
    for b in bs:
        rows.append(b.residual_rows + n)
        n += b.graph.n_nodes
    return {
        "laplacian": block_diag([b.ops.laplacian for b in bs], format="csr"),
        "upwind": block_diag([b.ops.upwind for b in bs], format="csr"),
        "upwind_t": block_diag([b.upwind_t for b in bs], format="csr"),
        "residual_rows": np.concatenate(rows),
    }


def _forward_batch_taped(model, ds, bundles, agg_cache, idx):
    feats = np.concatenate([ds.features[si] for si in idx])
    agg = np.concatenate([agg_cache[si] for si in idx])
    keep = np.ones((len(feats), 1))
    dir_vals = np.zeros((len(feats), 2))
    lo = 0
    for si in idx:
        inlet = bundles[int(ds.graph_ids[si])].inlet_rows
        rows = lo + inlet
        keep[rows] = 0.0
        dir_vals[rows, 0] = ds.c_in[si]
        dir_vals[rows, 1] = ds.lambda_in * ds.c_in[si]
        lo += len(ds.features[si])
    raw = model.forward_taped(Tensor(feats), Tensor(agg))
    return raw * Tensor(keep) + Tensor(dir_vals)


def _precompute_agg(ds: SimulatorDataset, bundles: dict) -> list[np.ndarray]:
    out = []
    for s in range(ds.n_samples):
        aggr = bundles[int(ds.graph_ids[s])].aggregator
        out.append(aggr.aggregate(ds.features[s][:, 10], ds.features[s][:, 11]))
    return out


def evaluate_mre(
    model: SimulatorModel, ds: SimulatorDataset, idx, bundles, agg_cache
) -> float:
    """Mean over samples of RMS error normalised by the truth range (%)."""
    from .evaluation import mae

    total = 0.0
    for si in idx:
        g = bundles[int(ds.graph_ids[si])]
        pred = model.forward_arrays(ds.features[si], agg_cache[si])
        inlet = g.inlet_rows
        pred[inlet, 0] = ds.c_in[si]
        pred[inlet, 1] = ds.lambda_in * ds.c_in[si]
        t = ds.truth[si]
        rng_t = t.max() - t.min()
        total += 100.0 * mae(pred.ravel(), t.ravel()) / rng_t
    return total / len(idx)


def _eval_loss(model, ds, bundles, agg_cache, idx, cfg: TrainConfig) -> float:
    total = 0.0
    for si in idx:
        b = bundles[int(ds.graph_ids[si])]
        n = len(ds.features[si])
        pred = model.forward_arrays(ds.features[si], agg_cache[si])
        pred[b.inlet_rows, 0] = ds.c_in[si]
        pred[b.inlet_rows, 1] = ds.lambda_in * ds.c_in[si]
        err = pred - ds.truth[si]
        loss = np.sum(err * err) / n
        if cfg.loss.residual_weight > 0:
            p = ds.params
            prev = ds.prev_state(si)
            rows = b.residual_rows
            r0 = (
                (pred[:, 0] - prev[:, 0]) / p.dt
                - p.D * (b.ops.laplacian @ pred[:, 0])
                + p.k_plus * pred[:, 0]
                - p.kp_plus * pred[:, 1]
            )
            rp = (
                (pred[:, 1] - prev[:, 1]) / p.dt
                + (b.ops.upwind @ pred[:, 1])
                - p.k_plus * pred[:, 0]
                + p.kp_plus * pred[:, 1]
            )
            m = max(len(rows), 1)
            loss += cfg.loss.residual_weight * (
                np.sum(r0[rows] ** 2) / m + np.sum(rp[rows] ** 2) / m
            )
        total += loss
    return total / len(idx)


def train_simulator(ds: SimulatorDataset, cfg: TrainConfig) -> TrainResult:
    """75/25 geometry-split training with Adam and step lr decay.

    Keeps the best-test-loss parameters; per-epoch history records
    (epoch, lr, train_loss, test_loss, test_mre).
    """
    if ds.n_samples == 0:
        raise EmptyDataset("simulator dataset has no samples")
    rng = np.random.default_rng(cfg.seed)
    model = SimulatorModel.create(ds.kind, rng)
    if cfg.init_arrays is not None:
        model.load_arrays(cfg.init_arrays)

    bundles = {
        gid: GraphBundle.from_graph(g) for gid, g in ds.graphs.items()
    }
    agg_cache = _precompute_agg(ds, bundles)

    train_g, test_g = _split_geometries(ds.geometry_ids, cfg.split, rng)
    train_idx = np.nonzero(np.isin(ds.geometry_ids, train_g))[0]
    test_idx = np.nonzero(np.isin(ds.geometry_ids, test_g))[0]

    params = model.parameters()
    state = nn.AdamState.for_params(params)

    history = []
    best_loss = math.inf
    best_epoch = -1
    best_arrays = None
    for epoch in range(cfg.epochs):
        lr = cfg.schedule.lr(epoch)
        order = rng.permutation(train_idx)
        epoch_loss = 0.0
        for lo in range(0, len(order), cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            pred = _forward_batch_taped(model, ds, bundles, agg_cache, idx)
            ops = _batch_ops(bundles, ds.graph_ids[idx])
            truth = np.concatenate([ds.truth[si] for si in idx])
            prev = np.concatenate([ds.prev_state(si) for si in idx])
            loss = simulator_loss(pred, truth, prev, ops, ds.params, cfg.loss)
            for p in params:
                p.grad = None
            loss.backward()
            nn.adam_step(params, [p.grad for p in params], state, lr)
            epoch_loss += float(loss.data) * len(idx)
        epoch_loss /= max(len(order), 1)
        test_loss = _eval_loss(model, ds, bundles, agg_cache, test_idx, cfg)
        test_mre = evaluate_mre(model, ds, test_idx, bundles, agg_cache)
        history.append(
            {"epoch": epoch, "lr": lr, "train_loss": epoch_loss,
             "test_loss": test_loss, "test_mre": test_mre}
        )
        if test_loss < best_loss:
            best_loss = test_loss
            best_epoch = epoch
            best_arrays = [a.copy() for a in model.to_arrays()]

    final_arrays = [a.copy() for a in model.to_arrays()]
    if best_arrays is not None:
        model.load_arrays(best_arrays)
    return TrainResult(
        model=model,
        history=history,
        best_epoch=best_epoch,
        best_test_loss=best_loss,
        train_geometries=train_g,
        test_geometries=test_g,
        final_arrays=final_arrays,
    )
