"""Decompose a skeleton into pipe and bifurcation units.

Every skeleton vertex hosts one cross-section site; section ids equal
skeleton vertex indices.  A bifurcation unit claims its branch point plus
three sections down each of the three incident paths.  Remaining path
sections are partitioned into pipe units: the first unit on a run takes
``sections_per_pipe`` sections, each later unit starts at the previous
unit's last section (shared) and adds up to ``sections_per_pipe`` new
ones.  Shared sections are the interfaces between units.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import (
    HighOrderBranch,
    NotAdjacent,
    PathTooShort,
    UnsupportedMorphology,
)
from .morphology import Skeleton

__all__ = [
    "SectionSite",
    "BranchSite",
    "NeuriteUnit",
    "Interface",
    "UnitGraph",
    "decompose",
    "interface_kind",
    "unit_graph_to_dict",
    "unit_graph_from_dict",
]

PIPE = "pipe"
BIFURCATION = "bifurcation"


@dataclass
class SectionSite:
    """A circular cross-section: centre, radius and an orthonormal frame.

    ``axis`` points in the flow direction (root to tips); ``e1``/``e2``
    span the section plane and are parallel-transported along the skeleton
    so template slots line up between consecutive sections.
    """

    id: int
    center: np.ndarray
    radius: float
    axis: np.ndarray
    e1: np.ndarray
    e2: np.ndarray


@dataclass
class BranchSite(SectionSite):
    """Branch-point cross-section; also records the daughter directions."""

    d1: np.ndarray = None
    d2: np.ndarray = None


@dataclass
class NeuriteUnit:
    """Pipe or bifurcation unit.

    Pipes store their sections upstream→downstream in ``sites``.
    Bifurcations store the branch section plus three branches
    (parent, daughter1, daughter2), each branch ordered outward from the
    branch point.
    """

    kind: str
    sites: list[SectionSite] = field(default_factory=list)
    branch_site: Optional[BranchSite] = None
    branches: Optional[list[list[SectionSite]]] = None

    def __post_init__(self):
        if self.kind == PIPE:
            if len(self.sites) < 2:
                raise ValueError("pipe unit needs at least 2 sections")
        elif self.kind == BIFURCATION:
            if self.branch_site is None or self.branches is None:
                raise ValueError("bifurcation unit needs branch data")
            if len(self.branches) != 3 or any(len(b) != 3 for b in self.branches):
                raise ValueError("bifurcation needs 3 branches of 3 sections")
        else:
            raise ValueError(f"unknown unit kind {self.kind!r}")
        for s in self.all_sites():
            if not s.radius > 0:
                raise ValueError(f"section {s.id} has non-positive radius")

    def all_sites(self) -> list[SectionSite]:
        if self.kind == PIPE:
            return list(self.sites)
        parent, d1, d2 = self.branches
        # canonical order: parent outermost first, then branch point, then
        # the daughters outward
        return [parent[2], parent[1], parent[0], self.branch_site,
                d1[0], d1[1], d1[2], d2[0], d2[1], d2[2]]

    @property
    def section_ids(self) -> list[int]:
        return [s.id for s in self.all_sites()]

    @property
    def upstream_section(self) -> int:
        if self.kind == PIPE:
            return self.sites[0].id
        return self.branches[0][2].id

    @property
    def downstream_sections(self) -> list[int]:
        if self.kind == PIPE:
            return [self.sites[-1].id]
        return [self.branches[1][2].id, self.branches[2][2].id]

    def axial_chains(self) -> list[list[int]]:
        """Consecutive section-id runs, upstream→downstream."""
        if self.kind == PIPE:
            return [[s.id for s in self.sites]]
        parent, d1, d2 = self.branches
        bp = self.branch_site.id
        return [
            [parent[2].id, parent[1].id, parent[0].id, bp],
            [bp, d1[0].id, d1[1].id, d1[2].id],
            [bp, d2[0].id, d2[1].id, d2[2].id],
        ]


@dataclass(frozen=True)
class Interface:
    unit_a: int
    unit_b: int
    kind: str  # "p-p" | "p-b" | "b-b"
    section_id: int


@dataclass
class UnitGraph:
    """Unit-level view of a decomposed network.

    The interface graph over units is a connected tree mirroring the
    skeleton's coarse topology.
    """

    units: list[NeuriteUnit]
    interfaces: list[Interface]
    inlet_unit: int
    inlet_section: int
    outlet_sections: list[int]

    def __post_init__(self):
        self.sections: dict[int, SectionSite] = {}
        for u in self.units:
            for s in u.all_sites():
                self.sections.setdefault(s.id, s)

    def validate(self) -> None:
        n = len(self.units)
        if len(self.interfaces) != n - 1:
            raise ValueError(
                f"interface graph is not a tree: {n} units, "
                f"{len(self.interfaces)} interfaces"
            )
        adj = [[] for _ in range(n)]
        for itf in self.interfaces:
            adj[itf.unit_a].append(itf.unit_b)
            adj[itf.unit_b].append(itf.unit_a)
            expected = interface_kind(self.units[itf.unit_a], self.units[itf.unit_b])
            if expected != itf.kind:
                raise ValueError(f"interface kind mismatch at section {itf.section_id}")
        seen = {0}
        stack = [0]
        while stack:
            for nb in adj[stack.pop()]:
                if nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
        if len(seen) != n:
            raise ValueError("interface graph is disconnected")
        # every unit boundary section belongs to at most one interface
        counts: dict[int, int] = {}
        for itf in self.interfaces:
            counts[itf.section_id] = counts.get(itf.section_id, 0) + 1
        if counts and max(counts.values()) > 1:
            raise ValueError("a section appears in more than one interface")


def interface_kind(a: NeuriteUnit, b: NeuriteUnit) -> str:
    """Pair kind of two units sharing a section, order-insensitive."""
    shared = set(a.section_ids) & set(b.section_ids)
    if not shared:
        raise NotAdjacent("units share no section")
    kinds = sorted([a.kind, b.kind])
    if kinds == [PIPE, PIPE]:
        return "p-p"
    if kinds == [BIFURCATION, PIPE]:
        return "p-b"
    return "b-b"


def sites_from_polyline(
    centers: np.ndarray,
    radii: np.ndarray,
    start_id: int = 0,
    seed_frame: tuple[np.ndarray, np.ndarray] | None = None,
) -> list[SectionSite]:
    """Section sites along a polyline with parallel-transported frames.

    Tangents are central differences (one-sided at the ends).  The first
    frame comes from ``seed_frame`` when given (e.g. to continue another
    chain), otherwise from a fixed global reference.
    """
    centers = np.asarray(centers, dtype=float)
    n = len(centers)
    tang = np.empty((n, 3))
    for i in range(n):
        lo = max(i - 1, 0)
        hi = min(i + 1, n - 1)
        d = centers[hi] - centers[lo]
        tang[i] = d / np.linalg.norm(d)
    if seed_frame is None:
        ref = np.array([1.0, 0.0, 0.0])
        if abs(np.dot(tang[0], ref)) > 0.9:
            ref = np.array([0.0, 1.0, 0.0])
        e1 = _perp(tang[0], ref)
    else:
        e1 = _perp(tang[0], seed_frame[0])
        if e1 is None:
            e1 = _perp(tang[0], seed_frame[1])
    sites = []
    for i in range(n):
        if i > 0:
            cand = _perp(tang[i], e1)
            e1 = cand if cand is not None else _perp(tang[i], np.cross(tang[i - 1], e1))
        sites.append(
            SectionSite(
                id=start_id + i,
                center=centers[i],
                radius=float(radii[i]),
                axis=tang[i],
                e1=e1,
                e2=np.cross(tang[i], e1),
            )
        )
    return sites


def _tangents(skel: Skeleton) -> np.ndarray:
    t = np.zeros((skel.n_vertices, 3))
    for v in range(skel.n_vertices):
        parent = skel.parent(v)
        children = skel.children(v)
        if parent == -1:
            d = skel.vertices[children[0]] - skel.vertices[v]
        elif len(children) == 1:
            a = skel.vertices[v] - skel.vertices[parent]
            b = skel.vertices[children[0]] - skel.vertices[v]
            d = a / np.linalg.norm(a) + b / np.linalg.norm(b)
            if np.linalg.norm(d) < 1e-12:  # hairpin; fall back to incoming
                d = a
        else:
            # tips and branch points use the parent-side tangent
            d = skel.vertices[v] - skel.vertices[parent]
        t[v] = d / np.linalg.norm(d)
    return t


def _perp(axis: np.ndarray, ref: np.ndarray) -> np.ndarray | None:
    p = ref - np.dot(ref, axis) * axis
    n = np.linalg.norm(p)
    if n < 1e-9:
        return None
    return p / n


def _frames(skel: Skeleton, tangents: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Parallel-transport an in-plane frame from the root outward."""
    e1 = np.zeros((skel.n_vertices, 3))
    e2 = np.zeros((skel.n_vertices, 3))
    a0 = tangents[0]
    ref = np.array([1.0, 0.0, 0.0])
    if abs(np.dot(a0, ref)) > 0.9:
        ref = np.array([0.0, 1.0, 0.0])
    e1[0] = _perp(a0, ref)
    e2[0] = np.cross(a0, e1[0])
    order = [0]
    stack = [0]
    while stack:
        v = stack.pop()
        for c in reversed(skel.children(v)):
            stack.append(c)
            order.append(c)
    for v in order[1:]:
        p = skel.parent(v)
        a = tangents[v]
        cand = _perp(a, e1[p])
        if cand is None:
            cand = _perp(a, e2[p])
        e1[v] = cand
        e2[v] = np.cross(a, e1[v])
    return e1, e2


def _skeleton_paths(skel: Skeleton) -> list[list[int]]:
    junctions = {0} | set(skel.branch_points) | set(skel.tips)
    paths: list[list[int]] = []
    pending = [0]
    while pending:
        start = pending.pop()
        child_paths = []
        for c in skel.children(start):
            path = [start, c]
            while path[-1] not in junctions:
                path.append(skel.children(path[-1])[0])
            child_paths.append(path)
        paths.extend(child_paths)
        for p in reversed(child_paths):
            pending.append(p[-1])
    return paths


def decompose(skel: Skeleton, sections_per_pipe: int = 8) -> UnitGraph:
    """Partition a skeleton into pipe and bifurcation units.

    Raises :class:`HighOrderBranch` for junctions with three or more
    children and :class:`PathTooShort` when an inter-junction path cannot
    accommodate the bifurcation claims on its ends.
    """
    if sections_per_pipe < 2:
        raise ValueError("sections_per_pipe must be >= 2")
    for v in range(skel.n_vertices):
        if len(skel.children(v)) >= 3:
            raise HighOrderBranch(
                f"vertex {v} has {len(skel.children(v))} children; "
                "only degree-3 junctions are supported"
            )
    if len(skel.children(0)) != 1:
        raise UnsupportedMorphology(
            "root must be a single-child inlet tip; soma-side junctions "
            "are not supported"
        )

    tangents = _tangents(skel)
    e1s, e2s = _frames(skel, tangents)
    branch_vertices = set(skel.branch_points)

    sites: dict[int, SectionSite] = {}

    def site(v: int) -> SectionSite:
        if v not in sites:
            if v in branch_vertices:
                c1, c2 = skel.children(v)
                sites[v] = BranchSite(
                    id=v, center=skel.vertices[v], radius=float(skel.radii[v]),
                    axis=tangents[v], e1=e1s[v], e2=e2s[v],
                    d1=tangents[c1], d2=tangents[c2],
                )
            else:
                sites[v] = SectionSite(
                    id=v, center=skel.vertices[v], radius=float(skel.radii[v]),
                    axis=tangents[v], e1=e1s[v], e2=e2s[v],
                )
        return sites[v]

    paths = _skeleton_paths(skel)
    parent_path_of = {p[-1]: p for p in paths if p[-1] in branch_vertices}
    child_paths_of: dict[int, list[list[int]]] = {}
    for p in paths:
        child_paths_of.setdefault(p[0], []).append(p)

    units: list[NeuriteUnit] = []
    interfaces: list[tuple[int, int, int]] = []  # unit_a, unit_b, section
    bif_index: dict[int, int] = {}  # branch vertex -> unit index
    # interface endpoints discovered before both units exist are parked on
    # the section id until the second unit claims it
    pending_iface: dict[int, int] = {}

    def make_bif(v: int) -> int:
        if v in bif_index:
            return bif_index[v]
        ppath = parent_path_of[v]
        cpaths = child_paths_of[v]
        for cp in cpaths:
            if len(cp) < 4:
                raise PathTooShort(
                    f"path {cp[0]}..{cp[-1]} ({len(cp) - 1} edges) cannot fit "
                    "the bifurcation claim at its start"
                )
        parent_sites = [site(ppath[-2]), site(ppath[-3]), site(ppath[-4])]
        d_sites = [[site(cp[1]), site(cp[2]), site(cp[3])] for cp in cpaths]
        unit = NeuriteUnit(
            kind=BIFURCATION,
            branch_site=site(v),
            branches=[parent_sites, d_sites[0], d_sites[1]],
        )
        units.append(unit)
        bif_index[v] = len(units) - 1
        return bif_index[v]

    def connect(section_id: int, unit_idx: int) -> None:
        other = pending_iface.pop(section_id, None)
        if other is None:
            pending_iface[section_id] = unit_idx
        else:
            interfaces.append((other, unit_idx, section_id))

    k = sections_per_pipe
    for path in paths:
        m_last = len(path) - 1
        up_branch = path[0] in branch_vertices
        dn_branch = path[-1] in branch_vertices
        a = 3 if up_branch else 0
        b = m_last - 3 if dn_branch else m_last
        if a > b:
            raise PathTooShort(
                f"path {path[0]}..{path[-1]} ({m_last} edges) cannot fit the "
                "bifurcation claims on its ends"
            )
        up_idx = make_bif(path[0]) if up_branch else None
        dn_idx = make_bif(path[-1]) if dn_branch else None
        if a == b:
            if up_branch and dn_branch:
                # junction claims abut: direct b-b interface
                connect(path[a], up_idx)
                connect(path[a], dn_idx)
            # otherwise the claim reaches the root (inlet) or a tip (outlet)
            continue
        if up_branch:
            connect(path[a], up_idx)
        if dn_branch:
            connect(path[b], dn_idx)
        start = a
        first = True
        while start < b:
            if first and not up_branch:
                end = min(start + k - 1, b)
            else:
                end = min(start + k, b)
            unit = NeuriteUnit(
                kind=PIPE, sites=[site(path[i]) for i in range(start, end + 1)]
            )
            units.append(unit)
            idx = len(units) - 1
            if start > a or (start == a and up_branch):
                connect(path[start], idx)
            if end < b or (end == b and dn_branch):
                connect(path[end], idx)
            start = end
            first = False

    if pending_iface:
        raise RuntimeError(f"unpaired interface sections: {sorted(pending_iface)}")

    # resolve inlet
    inlet_section = 0
    inlet_unit = None
    for i, u in enumerate(units):
        if u.upstream_section == inlet_section:
            inlet_unit = i
            break
    if inlet_unit is None:
        raise UnsupportedMorphology("no unit claims the root section")

    ifaces = [
        Interface(ua, ub, interface_kind(units[ua], units[ub]), sec)
        for ua, ub, sec in interfaces
    ]
    ug = UnitGraph(
        units=units,
        interfaces=ifaces,
        inlet_unit=inlet_unit,
        inlet_section=inlet_section,
        outlet_sections=sorted(set(skel.tips)),
    )
    ug.validate()
    return ug


def _site_to_dict(s: SectionSite) -> dict:
    d = {
        "id": s.id,
        "center": s.center.tolist(),
        "radius": s.radius,
        "axis": s.axis.tolist(),
        "e1": s.e1.tolist(),
        "e2": s.e2.tolist(),
    }
    if isinstance(s, BranchSite):
        d["d1"] = s.d1.tolist()
        d["d2"] = s.d2.tolist()
    return d


def _site_from_dict(d: dict) -> SectionSite:
    kwargs = dict(
        id=int(d["id"]),
        center=np.array(d["center"], dtype=float),
        radius=float(d["radius"]),
        axis=np.array(d["axis"], dtype=float),
        e1=np.array(d["e1"], dtype=float),
        e2=np.array(d["e2"], dtype=float),
    )
    if "d1" in d:
        return BranchSite(
            d1=np.array(d["d1"], dtype=float),
            d2=np.array(d["d2"], dtype=float),
            **kwargs,
        )
    return SectionSite(**kwargs)


def unit_graph_to_dict(ug: UnitGraph) -> dict:
    units = []
    for u in ug.units:
        if u.kind == PIPE:
            units.append({"kind": PIPE, "sites": [_site_to_dict(s) for s in u.sites]})
        else:
            units.append({
                "kind": BIFURCATION,
                "branch_site": _site_to_dict(u.branch_site),
                "branches": [[_site_to_dict(s) for s in br] for br in u.branches],
            })
    return {
        "units": units,
        "interfaces": [
            {"unit_a": i.unit_a, "unit_b": i.unit_b, "kind": i.kind,
             "section_id": i.section_id}
            for i in ug.interfaces
        ],
        "inlet_unit": ug.inlet_unit,
        "inlet_section": ug.inlet_section,
        "outlet_sections": list(ug.outlet_sections),
    }


def unit_graph_from_dict(d: dict) -> UnitGraph:
    site_cache: dict[int, SectionSite] = {}

    def cached(sd: dict) -> SectionSite:
        s = _site_from_dict(sd)
        return site_cache.setdefault(s.id, s)

    units = []
    for ud in d["units"]:
        if ud["kind"] == PIPE:
            units.append(NeuriteUnit(kind=PIPE,
                                     sites=[cached(s) for s in ud["sites"]]))
        else:
            units.append(NeuriteUnit(
                kind=BIFURCATION,
                branch_site=cached(ud["branch_site"]),
                branches=[[cached(s) for s in br] for br in ud["branches"]],
            ))
    return UnitGraph(
        units=units,
        interfaces=[Interface(i["unit_a"], i["unit_b"], i["kind"], i["section_id"])
                    for i in d["interfaces"]],
        inlet_unit=int(d["inlet_unit"]),
        inlet_section=int(d["inlet_section"]),
        outlet_sections=[int(x) for x in d["outlet_sections"]],
    )
