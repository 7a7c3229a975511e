"""Synthetic geometries, solver-generated datasets, splits and storage.

Geometry ranges (documented, recorded in every manifest): section radius
0.5-3 μm, section spacing 0.5-2 μm, pipe taper ratio 0.5-1, daughter
radius ratio 0.6-0.9 of the parent, branch angle 20°-70°.  Boundary
values are the inlet concentrations; the attachment degree λ is fixed per
dataset.  Everything is driven by explicit seeds and regenerates
bit-identically.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .assembly import AssemblyDataset, AssemblyPairSamples, build_bindings
from .decomposition import (
    BIFURCATION,
    PIPE,
    BranchSite,
    Interface,
    NeuriteUnit,
    UnitGraph,
    sites_from_polyline,
    unit_graph_from_dict,
    unit_graph_to_dict,
)
from .errors import NotConverged, TooFewGeometries
from .graphs import (
    BoundaryCondition,
    SimParams,
    build_network_graph,
    build_unit_graph,
    node_features,
    unit_boundary_roles,
)
from .simulator import EdgeAggregator, SimulatorDataset, predict_step
from .solver import build_operators, run_to_steady

__all__ = [
    "GeometryRanges",
    "Geometry",
    "DatasetManifest",
    "generate_geometries",
    "generate_dataset",
    "generate_pair_geometries",
    "generate_assembly_dataset",
    "generate_tree_swc",
    "kfold",
    "dataset_hash",
    "save_dataset",
    "load_dataset",
    "NEAR_ZERO_FILTER",
]

NEAR_ZERO_FILTER = 1e-12


@dataclass(frozen=True)
class GeometryRanges:
    radius: tuple[float, float] = (0.5, 3.0)
    spacing: tuple[float, float] = (0.5, 2.0)
    taper: tuple[float, float] = (0.5, 1.0)
    daughter_ratio: tuple[float, float] = (0.6, 0.9)
    branch_angle_deg: tuple[float, float] = (20.0, 70.0)
    max_turn_rad: float = 0.15  # per-section heading wobble for pipes


@dataclass
class Geometry:
    id: int
    kind: str
    unit: NeuriteUnit


def _unit_vector(rng: np.random.Generator) -> np.ndarray:
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)


def _perp_vector(rng: np.random.Generator, axis: np.ndarray) -> np.ndarray:
    v = rng.normal(size=3)
    v -= np.dot(v, axis) * axis
    n = np.linalg.norm(v)
    if n < 1e-9:
        return _perp_vector(rng, axis)
    return v / n


def _rotate(v: np.ndarray, axis: np.ndarray, angle: float) -> np.ndarray:
    # Rodrigues rotation
    return (
        v * math.cos(angle)
        + np.cross(axis, v) * math.sin(angle)
        + axis * np.dot(axis, v) * (1.0 - math.cos(angle))
    )


def generate_pipe(
    rng: np.random.Generator,
    ranges: GeometryRanges,
    sections_per_pipe: int = 8,
) -> NeuriteUnit:
    """Random pipe: 2 to sections_per_pipe+1 sections (the sizes the
    decomposition produces), tapered radius, mild curvature."""
    n = int(rng.integers(2, sections_per_pipe + 2))
    r0 = rng.uniform(*ranges.radius)
    taper = rng.uniform(*ranges.taper)
    radii = np.linspace(r0, taper * r0, n)
    heading = _unit_vector(rng)
    centers = [np.zeros(3)]
    for _ in range(n - 1):
        turn = rng.uniform(0.0, ranges.max_turn_rad)
        heading = _rotate(heading, _perp_vector(rng, heading), turn)
        centers.append(centers[-1] + heading * rng.uniform(*ranges.spacing))
    sites = sites_from_polyline(np.array(centers), radii)
    return NeuriteUnit(kind=PIPE, sites=sites)


def _daughter_dirs(rng, ranges, axis, e1, e2):
    th1 = math.radians(rng.uniform(*ranges.branch_angle_deg))
    th2 = math.radians(rng.uniform(*ranges.branch_angle_deg))
    phi = rng.uniform(0.0, 2.0 * math.pi)
    dphi = math.pi + rng.uniform(-math.pi / 3, math.pi / 3)
    m1 = math.cos(phi) * e1 + math.sin(phi) * e2
    m2 = math.cos(phi + dphi) * e1 + math.sin(phi + dphi) * e2
    d1 = math.cos(th1) * axis + math.sin(th1) * m1
    d2 = math.cos(th2) * axis + math.sin(th2) * m2
    return d1 / np.linalg.norm(d1), d2 / np.linalg.norm(d2)


def _branch_chain(rng, ranges, start, direction, radius, n_new, start_id, seed_frame):
    centers = [start]
    for _ in range(n_new):
        centers.append(centers[-1] + direction * rng.uniform(*ranges.spacing))
    sites = sites_from_polyline(
        np.array(centers), np.full(n_new + 1, radius), start_id=start_id - 1,
        seed_frame=seed_frame,
    )
    return sites[1:]  # drop the seed point, keep transported frames


def generate_bifurcation(
    rng: np.random.Generator, ranges: GeometryRanges
) -> NeuriteUnit:
    """Random degree-3 junction: a 4-section parent chain ending at the
    branch point plus two 3-section daughter stubs."""
    r_parent = rng.uniform(*ranges.radius)
    axis = _unit_vector(rng)
    centers = [np.zeros(3)]
    for _ in range(3):
        centers.append(centers[-1] + axis * rng.uniform(*ranges.spacing))
    parent_sites = sites_from_polyline(
        np.array(centers), np.full(4, r_parent), start_id=0
    )
    bp = parent_sites[3]
    d1, d2 = _daughter_dirs(rng, ranges, bp.axis, bp.e1, bp.e2)
    branch_site = BranchSite(
        id=bp.id, center=bp.center, radius=bp.radius, axis=bp.axis,
        e1=bp.e1, e2=bp.e2, d1=d1, d2=d2,
    )
    branches = [[parent_sites[2], parent_sites[1], parent_sites[0]]]
    next_id = 4
    for d in (d1, d2):
        ratio = rng.uniform(*ranges.daughter_ratio)
        chain = _branch_chain(
            rng, ranges, bp.center, d, ratio * r_parent, 3, next_id,
            (bp.e1, bp.e2),
        )
        branches.append(chain)
        next_id += 3
    return NeuriteUnit(kind=BIFURCATION, branch_site=branch_site, branches=branches)


def generate_geometries(
    seed: int,
    n_pipes: int,
    n_bifurcations: int,
    sections_per_pipe: int = 8,
    ranges: GeometryRanges = GeometryRanges(),
) -> list[Geometry]:
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n_pipes):
        out.append(Geometry(id=i, kind=PIPE,
                            unit=generate_pipe(rng, ranges, sections_per_pipe)))
    for j in range(n_bifurcations):
        out.append(Geometry(id=n_pipes + j, kind=BIFURCATION,
                            unit=generate_bifurcation(rng, ranges)))
    return out


def _sample_indices(n_pairs: int, cap: int) -> np.ndarray:
    if n_pairs <= 0:
        return np.empty(0, dtype=int)
    take = min(cap, n_pairs)
    return np.unique(np.round(np.linspace(0, n_pairs - 1, take)).astype(int))


@dataclass
class DatasetManifest:
    """Everything needed to regenerate or verify a dataset."""

    seed: int
    settings: dict
    boundary_values: list[float]
    params: dict
    counts: dict = field(default_factory=dict)
    hashes: dict = field(default_factory=dict)
    geometries: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetManifest":
        return cls(**d)


def generate_dataset(
    geometries: list[Geometry],
    boundary_values: list[float],
    params: SimParams,
    seed: int = 0,
    tol: float = 1e-4,
    max_time: float = 600.0,
    samples_per_run: int = 2,
    lambda_in: float = 1.0,
    settings: dict | None = None,
) -> tuple[dict[str, SimulatorDataset], DatasetManifest]:
    """Run the solver over every (geometry, boundary value) pair and
    window output pairs into one-step samples.

    The stored pairs are thinned deterministically to at most
    ``samples_per_run`` per run; all-zero samples (truth below 1e-12) are
    dropped.  A non-converged run raises NotConverged with the geometry id.
    """
    buckets: dict[str, dict] = {
        kind: {"features": [], "truth": [], "graph_ids": [], "geometry_ids": [],
               "c_in": [], "graphs": {}}
        for kind in (PIPE, BIFURCATION)
    }
    for geo in geometries:
        g = build_unit_graph(geo.unit, params)
        ops = build_operators(g)
        bucket = buckets[geo.kind]
        bucket["graphs"][geo.id] = g
        for c_in in boundary_values:
            bc = BoundaryCondition(c_in=float(c_in), lambda_in=lambda_in)
            series = run_to_steady(
                g, params, bc, tol=tol, max_time=max_time, ops=ops
            )
            if not series.converged:
                raise NotConverged(
                    f"geometry {geo.id} did not reach steady state in "
                    f"{max_time} s",
                    geometry_id=geo.id,
                )
            for k in _sample_indices(series.n_outputs - 1, samples_per_run):
                truth = np.stack(series.state_at(k + 1), axis=1)
                if truth.max() < NEAR_ZERO_FILTER:
                    continue
                c0, cp = series.state_at(k)
                bucket["features"].append(node_features(g, params, c0, cp))
                bucket["truth"].append(truth)
                bucket["graph_ids"].append(geo.id)
                bucket["geometry_ids"].append(geo.id)
                bucket["c_in"].append(c_in)

    datasets = {}
    for kind, b in buckets.items():
        if not b["features"]:
            continue
        datasets[kind] = SimulatorDataset(
            kind=kind,
            features=b["features"],
            truth=b["truth"],
            graph_ids=np.array(b["graph_ids"], dtype=int),
            geometry_ids=np.array(b["geometry_ids"], dtype=int),
            c_in=np.array(b["c_in"], dtype=float),
            lambda_in=lambda_in,
            graphs=b["graphs"],
            params=params,
        )

    manifest = DatasetManifest(
        seed=seed,
        settings=dict(settings or {}, tol=tol, max_time=max_time,
                      samples_per_run=samples_per_run, lambda_in=lambda_in),
        boundary_values=[float(v) for v in boundary_values],
        params=asdict(params),
        counts={k: ds.n_samples for k, ds in datasets.items()},
        hashes={k: dataset_hash(ds) for k, ds in datasets.items()},
        geometries=[
            {"id": geo.id, "kind": geo.kind,
             "unit": _unit_to_dict(geo.unit)}
            for geo in geometries
        ],
    )
    return datasets, manifest


def _unit_to_dict(unit: NeuriteUnit) -> dict:
    wrapper = UnitGraph(
        units=[unit], interfaces=[],
        inlet_unit=0, inlet_section=unit.upstream_section,
        outlet_sections=unit.downstream_sections,
    )
    return unit_graph_to_dict(wrapper)["units"][0]


def _unit_from_dict(d: dict) -> NeuriteUnit:
    wrapper = unit_graph_from_dict(
        {"units": [d], "interfaces": [], "inlet_unit": 0,
         "inlet_section": 0, "outlet_sections": []}
    )
    return wrapper.units[0]


def dataset_hash(ds: SimulatorDataset) -> str:
    h = hashlib.sha256()
    for f, t in zip(ds.features, ds.truth):
        h.update(np.ascontiguousarray(f, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(t, dtype="<f8").tobytes())
    h.update(np.ascontiguousarray(ds.graph_ids).tobytes())
    h.update(np.ascontiguousarray(ds.c_in, dtype="<f8").tobytes())
    return h.hexdigest()


def kfold(ds: SimulatorDataset, k: int = 4, seed: int = 0):
    """Geometry-level folds: no geometry appears in both train and test.

    Returns per-fold (train_geometry_ids, test_geometry_ids); fold sizes
    differ by at most one geometry.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    unique = np.unique(ds.geometry_ids)
    if len(unique) < k:
        raise TooFewGeometries(
            f"need at least {k} geometries for {k}-fold CV, have {len(unique)}"
        )
    rng = np.random.default_rng(seed)
    order = rng.permutation(unique)
    folds = []
    for i in range(k):
        test = np.sort(order[i::k])
        train = np.sort(np.setdiff1d(unique, test))
        folds.append((train, test))
    return folds


# --- assembly pair geometries --------------------------------------------------

def _pair_pp(rng, ranges, k) -> UnitGraph:
    n = 2 * k - 1  # two k-section pipes sharing one section
    r0 = rng.uniform(*ranges.radius)
    taper = rng.uniform(*ranges.taper)
    radii = np.linspace(r0, taper * r0, n)
    heading = _unit_vector(rng)
    centers = [np.zeros(3)]
    for _ in range(n - 1):
        heading = _rotate(heading, _perp_vector(rng, heading),
                          rng.uniform(0.0, ranges.max_turn_rad))
        centers.append(centers[-1] + heading * rng.uniform(*ranges.spacing))
    sites = sites_from_polyline(np.array(centers), radii)
    u1 = NeuriteUnit(kind=PIPE, sites=sites[:k])
    u2 = NeuriteUnit(kind=PIPE, sites=sites[k - 1:])
    return UnitGraph(
        units=[u1, u2],
        interfaces=[Interface(0, 1, "p-p", sites[k - 1].id)],
        inlet_unit=0,
        inlet_section=sites[0].id,
        outlet_sections=[sites[-1].id],
    )


def _make_branch_site(site, d1, d2) -> BranchSite:
    return BranchSite(
        id=site.id, center=site.center, radius=site.radius, axis=site.axis,
        e1=site.e1, e2=site.e2, d1=d1, d2=d2,
    )


def _pair_pb(rng, ranges, k) -> UnitGraph:
    n = k + 3  # pipe sections + p2, p1, branch point
    r0 = rng.uniform(*ranges.radius)
    radii = np.full(n, r0)
    heading = _unit_vector(rng)
    centers = [np.zeros(3)]
    for _ in range(n - 1):
        centers.append(centers[-1] + heading * rng.uniform(*ranges.spacing))
    sites = sites_from_polyline(np.array(centers), radii)
    pipe = NeuriteUnit(kind=PIPE, sites=sites[:k])
    bp = sites[-1]
    d1, d2 = _daughter_dirs(rng, ranges, bp.axis, bp.e1, bp.e2)
    branch_site = _make_branch_site(bp, d1, d2)
    branches = [[sites[-2], sites[-3], sites[-4]]]
    next_id = n
    outlets = []
    for d in (d1, d2):
        ratio = rng.uniform(*ranges.daughter_ratio)
        chain = _branch_chain(rng, ranges, bp.center, d, ratio * r0, 3,
                              next_id, (bp.e1, bp.e2))
        branches.append(chain)
        outlets.append(chain[2].id)
        next_id += 3
    bif = NeuriteUnit(kind=BIFURCATION, branch_site=branch_site, branches=branches)
    return UnitGraph(
        units=[pipe, bif],
        interfaces=[Interface(0, 1, "p-b", sites[k - 1].id)],
        inlet_unit=0,
        inlet_section=sites[0].id,
        outlet_sections=sorted(outlets),
    )


def _pair_bb(rng, ranges) -> UnitGraph:
    r0 = rng.uniform(*ranges.radius)
    axis = _unit_vector(rng)
    centers = [np.zeros(3)]
    for _ in range(3):
        centers.append(centers[-1] + axis * rng.uniform(*ranges.spacing))
    parent_sites = sites_from_polyline(np.array(centers), np.full(4, r0))
    bp1 = parent_sites[3]
    d1, d2 = _daughter_dirs(rng, ranges, bp1.axis, bp1.e1, bp1.e2)
    branch1 = _make_branch_site(bp1, d1, d2)
    r_d1 = rng.uniform(*ranges.daughter_ratio) * r0
    r_d2 = rng.uniform(*ranges.daughter_ratio) * r0
    chain1 = _branch_chain(rng, ranges, bp1.center, d1, r_d1, 3, 4,
                           (bp1.e1, bp1.e2))
    chain2 = _branch_chain(rng, ranges, bp1.center, d2, r_d2, 3, 7,
                           (bp1.e1, bp1.e2))
    bif1 = NeuriteUnit(
        kind=BIFURCATION, branch_site=branch1,
        branches=[[parent_sites[2], parent_sites[1], parent_sites[0]],
                  chain1, chain2],
    )
    # second junction grows off the first daughter's outermost section
    shared = chain1[2]
    cont = _branch_chain(rng, ranges, shared.center, d1, r_d1, 3, 10,
                         (shared.e1, shared.e2))
    bp2 = cont[2]
    d3, d4 = _daughter_dirs(rng, ranges, bp2.axis, bp2.e1, bp2.e2)
    branch2 = _make_branch_site(bp2, d3, d4)
    chain3 = _branch_chain(rng, ranges, bp2.center, d3,
                           rng.uniform(*ranges.daughter_ratio) * r_d1, 3, 13,
                           (bp2.e1, bp2.e2))
    chain4 = _branch_chain(rng, ranges, bp2.center, d4,
                           rng.uniform(*ranges.daughter_ratio) * r_d1, 3, 16,
                           (bp2.e1, bp2.e2))
    bif2 = NeuriteUnit(
        kind=BIFURCATION, branch_site=branch2,
        branches=[[cont[1], cont[0], shared], chain3, chain4],
    )
    return UnitGraph(
        units=[bif1, bif2],
        interfaces=[Interface(0, 1, "b-b", shared.id)],
        inlet_unit=0,
        inlet_section=parent_sites[0].id,
        outlet_sections=sorted([chain2[2].id, chain3[2].id, chain4[2].id]),
    )


def generate_pair_geometries(
    seed: int,
    n_per_kind: int,
    sections_per_pipe: int = 8,
    ranges: GeometryRanges = GeometryRanges(),
) -> list[tuple[int, str, UnitGraph]]:
    """Adjacent-unit pairs for assembly training, n per interface kind."""
    rng = np.random.default_rng(seed)
    out = []
    pid = 0
    for kind in ("p-p", "p-b", "b-b"):
        for _ in range(n_per_kind):
            if kind == "p-p":
                ug = _pair_pp(rng, ranges, sections_per_pipe)
            elif kind == "p-b":
                ug = _pair_pb(rng, ranges, sections_per_pipe)
            else:
                ug = _pair_bb(rng, ranges)
            ug.validate()
            out.append((pid, kind, ug))
            pid += 1
    return out


def generate_assembly_dataset(
    pairs: list[tuple[int, str, UnitGraph]],
    boundary_values: list[float],
    params: SimParams,
    simulators: dict,
    tol: float = 1e-4,
    max_time: float = 600.0,
    samples_per_run: int = 2,
    lambda_in: float = 1.0,
) -> AssemblyDataset:
    """Solver truth on merged pair graphs plus intermediate simulator
    predictions for every sampled step."""
    buckets: dict[str, dict] = {}
    for pid, kind, ug in pairs:
        unit_graphs = {
            i: build_unit_graph(u, params, unit_boundary_roles(u, ug))
            for i, u in enumerate(ug.units)
        }
        net = build_network_graph(ug, params)
        ops = build_operators(net)
        binding = build_bindings(ug, unit_graphs)[0]
        rows = {
            uid: np.array([net.node_index[(int(s), int(t))]
                           for s, t in zip(g.node_section, g.slot)])
            for uid, g in unit_graphs.items()
        }
        aggs = {uid: EdgeAggregator(g) for uid, g in unit_graphs.items()}
        bucket = buckets.setdefault(kind, {
            "x_mid": ([], []), "truth": ([], []),
            "ia": [], "aa": [], "ib": [], "ab": [],
            "sa": [], "sb": [], "geometry_ids": [],
        })
        for c_in in boundary_values:
            bc = BoundaryCondition(c_in=float(c_in), lambda_in=lambda_in)
            series = run_to_steady(net, params, bc, tol=tol, max_time=max_time,
                                   ops=ops)
            if not series.converged:
                raise NotConverged(
                    f"pair {pid} did not reach steady state", geometry_id=pid
                )
            for k in _sample_indices(series.n_outputs - 1, samples_per_run):
                truth = np.stack(series.state_at(k + 1), axis=1)
                if truth.max() < NEAR_ZERO_FILTER:
                    continue
                c0, cp = series.state_at(k)
                for side, uid in ((0, 0), (1, 1)):
                    g_u = unit_graphs[uid]
                    feats = node_features(
                        g_u, params, c0[rows[uid]], cp[rows[uid]]
                    )
                    model = simulators[ug.units[uid].kind]
                    x_mid = predict_step(model, g_u, feats, bc, aggs[uid])
                    bucket["x_mid"][side].append(x_mid)
                    bucket["truth"][side].append(truth[rows[uid]])
                bucket["ia"].append(binding.side_a.iface_nodes)
                bucket["aa"].append(binding.side_a.adj_nodes)
                bucket["ib"].append(binding.side_b.iface_nodes)
                bucket["ab"].append(binding.side_b.adj_nodes)
                bucket["sa"].append(binding.scalars_a)
                bucket["sb"].append(binding.scalars_b)
                bucket["geometry_ids"].append(pid)

    groups = {}
    for kind, b in buckets.items():
        if not b["geometry_ids"]:
            continue
        groups[kind] = AssemblyPairSamples(
            kind=kind,
            x_mid_a=np.stack(b["x_mid"][0]),
            x_mid_b=np.stack(b["x_mid"][1]),
            truth_a=np.stack(b["truth"][0]),
            truth_b=np.stack(b["truth"][1]),
            ia_nodes=np.stack(b["ia"]),
            ab_adj_nodes_a=np.stack(b["aa"]),
            ib_nodes=np.stack(b["ib"]),
            ab_adj_nodes_b=np.stack(b["ab"]),
            scalars_a=np.stack(b["sa"]),
            scalars_b=np.stack(b["sb"]),
            geometry_ids=np.array(b["geometry_ids"], dtype=int),
        )
    return AssemblyDataset(groups=groups)


# --- random tree morphologies ----------------------------------------------------

def generate_tree_swc(
    seed: int,
    n_bifurcations: int,
    root_radius: tuple[float, float] = (1.2, 2.2),
    radius_floor: float = 0.5,
) -> str:
    """Random binary-tree morphology as SWC text.

    Segment lengths and branch angles are sized so the decomposition's
    junction claims always fit; radii stay inside the training ranges.
    """
    rng = np.random.default_rng(seed)
    lines = ["# synthetic binary tree"]
    rec_id = 1
    root_r = rng.uniform(*root_radius)
    lines.append(f"1 1 0.0 0.0 0.0 {root_r:.4f} -1")

    def grow_segment(parent_id, start, direction, radius, n_records):
        nonlocal rec_id
        pos = start.copy()
        d = direction.copy()
        pid = parent_id
        for _ in range(n_records):
            d = _rotate(d, _perp_vector(rng, d), rng.uniform(0.0, 0.08))
            pos = pos + d * rng.uniform(0.85, 1.15)
            rec_id += 1
            lines.append(
                f"{rec_id} 3 {pos[0]:.5f} {pos[1]:.5f} {pos[2]:.5f} "
                f"{radius:.4f} {pid}"
            )
            pid = rec_id
        return pid, pos, d

    trunk_dir = _unit_vector(rng)
    tip_id, tip_pos, tip_dir = grow_segment(
        1, np.zeros(3), trunk_dir, root_r, int(rng.integers(8, 13))
    )
    queue = [(tip_id, tip_pos, tip_dir, root_r)]
    made = 0
    while queue and made < n_bifurcations:
        pid, pos, d, r = queue.pop(0)
        made += 1
        split_axis = _perp_vector(rng, d)
        for sign in (1.0, -1.0):
            angle = sign * math.radians(rng.uniform(20.0, 50.0))
            child_dir = _rotate(d, split_axis, angle)
            child_r = max(radius_floor, r * rng.uniform(0.65, 0.85))
            cid, cpos, cdir = grow_segment(
                pid, pos, child_dir, child_r, int(rng.integers(7, 12))
            )
            queue.append((cid, cpos, cdir, child_r))
    return "\n".join(lines) + "\n"


# --- on-disk format ----------------------------------------------------------

def save_dataset(path, datasets: dict[str, SimulatorDataset],
                 manifest: DatasetManifest) -> None:
    """Directory layout: manifest.json plus, per kind, an index file and
    flat little-endian float64 arrays."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    for kind, ds in datasets.items():
        feat_blob = b"".join(
            np.ascontiguousarray(f, dtype="<f8").tobytes() for f in ds.features
        )
        truth_blob = b"".join(
            np.ascontiguousarray(t, dtype="<f8").tobytes() for t in ds.truth
        )
        (root / f"{kind}_features.bin").write_bytes(feat_blob)
        (root / f"{kind}_truth.bin").write_bytes(truth_blob)
        index = {
            "kind": kind,
            "lambda_in": ds.lambda_in,
            "samples": [
                {
                    "n_nodes": int(len(ds.features[s])),
                    "graph_id": int(ds.graph_ids[s]),
                    "geometry_id": int(ds.geometry_ids[s]),
                    "c_in": float(ds.c_in[s]),
                }
                for s in range(ds.n_samples)
            ],
            "features_sha256": hashlib.sha256(feat_blob).hexdigest(),
            "truth_sha256": hashlib.sha256(truth_blob).hexdigest(),
        }
        (root / f"{kind}_index.json").write_text(json.dumps(index, sort_keys=True))
    (root / "manifest.json").write_text(
        json.dumps(manifest.to_dict(), sort_keys=True)
    )


def load_dataset(path) -> tuple[dict[str, SimulatorDataset], DatasetManifest]:
    from .errors import HashMismatch
    from .graphs import N_FEATURES

    root = Path(path)
    manifest = DatasetManifest.from_dict(
        json.loads((root / "manifest.json").read_text())
    )
    params = SimParams(**manifest.params)
    units = {g["id"]: _unit_from_dict(g["unit"]) for g in manifest.geometries}

    datasets = {}
    for kind in (PIPE, BIFURCATION):
        index_path = root / f"{kind}_index.json"
        if not index_path.exists():
            continue
        index = json.loads(index_path.read_text())
        feat_blob = (root / f"{kind}_features.bin").read_bytes()
        truth_blob = (root / f"{kind}_truth.bin").read_bytes()
        if hashlib.sha256(feat_blob).hexdigest() != index["features_sha256"]:
            raise HashMismatch(f"{kind}_features.bin does not match its index")
        if hashlib.sha256(truth_blob).hexdigest() != index["truth_sha256"]:
            raise HashMismatch(f"{kind}_truth.bin does not match its index")
        feats = np.frombuffer(feat_blob, dtype="<f8")
        truths = np.frombuffer(truth_blob, dtype="<f8")
        features, truth = [], []
        fo = to = 0
        for rec in index["samples"]:
            n = rec["n_nodes"]
            features.append(feats[fo:fo + n * N_FEATURES].reshape(n, N_FEATURES).copy())
            truth.append(truths[to:to + n * 2].reshape(n, 2).copy())
            fo += n * N_FEATURES
            to += n * 2
        graphs = {}
        for rec in index["samples"]:
            gid = rec["graph_id"]
            if gid not in graphs:
                graphs[gid] = build_unit_graph(units[gid], params)
        datasets[kind] = SimulatorDataset(
            kind=kind,
            features=features,
            truth=truth,
            graph_ids=np.array([r["graph_id"] for r in index["samples"]], dtype=int),
            geometry_ids=np.array(
                [r["geometry_id"] for r in index["samples"]], dtype=int
            ),
            c_in=np.array([r["c_in"] for r in index["samples"]]),
            lambda_in=float(index["lambda_in"]),
            graphs=graphs,
            params=params,
        )
    return datasets, manifest
