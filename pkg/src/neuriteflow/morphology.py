"""SWC morphology parsing, validation and skeleton resampling.

The SWC convention used here is the de facto NeuroMorpho one: seven
whitespace-separated fields per line, ``id type x y z radius parent``,
with ``#`` comments.  The radius field is the cross-section radius in
micrometres, not a diameter.  Records may appear in any order; links are
resolved in a second pass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .errors import (
    CycleDetected,
    DanglingParent,
    DegenerateSegment,
    DuplicateId,
    MalformedLine,
    MultipleRoots,
    NonPositiveRadius,
)

__all__ = [
    "SwcRecord",
    "Morphology",
    "Skeleton",
    "parse_swc",
    "serialize_swc",
    "resample",
    "total_arc_length",
]


@dataclass(frozen=True)
class SwcRecord:
    """One SWC sample point.

    Positions and radii are in micrometres.  ``parent_id`` is -1 for the
    root record.
    """

    id: int
    structure_type: int
    position: np.ndarray  # (3,)
    radius: float
    parent_id: int


@dataclass
class Morphology:
    """Validated SWC record tree.

    ``records`` preserves file order.  ``children_index`` maps each record
    id to its child record ids (sorted).
    """

    records: list[SwcRecord]
    children_index: dict[int, list[int]] = field(init=False)
    _by_id: dict[int, SwcRecord] = field(init=False, repr=False)

    def __post_init__(self):
        self._by_id = {}
        for rec in self.records:
            if rec.id in self._by_id:
                raise DuplicateId(f"record id {rec.id} appears more than once")
            if not rec.radius > 0:
                raise NonPositiveRadius(
                    f"record {rec.id} has radius {rec.radius}; must be > 0"
                )
            self._by_id[rec.id] = rec

        roots = [r.id for r in self.records if r.parent_id == -1]
        if len(roots) != 1:
            raise MultipleRoots(
                f"expected exactly one root record, found {len(roots)}"
            )

        children: dict[int, list[int]] = {r.id: [] for r in self.records}
        for rec in self.records:
            if rec.parent_id == -1:
                continue
            if rec.parent_id not in self._by_id:
                raise DanglingParent(
                    f"record {rec.id} references missing parent {rec.parent_id}"
                )
            children[rec.parent_id].append(rec.id)
        for ids in children.values():
            ids.sort()
        self.children_index = children

        self._check_acyclic(roots[0])

    def _check_acyclic(self, root_id: int) -> None:
        # Every parent chain must terminate at the root without revisits.
        state: dict[int, int] = {}  # 0 = in progress, 1 = done
        for rec in self.records:
            chain = []
            cur = rec.id
            while cur != -1 and cur not in state:
                chain.append(cur)
                state[cur] = 0
                cur = self._by_id[cur].parent_id
            if cur != -1 and state[cur] == 0:
                raise CycleDetected(f"record {cur} is its own ancestor")
            for cid in chain:
                state[cid] = 1

    @property
    def root(self) -> SwcRecord:
        return next(r for r in self.records if r.parent_id == -1)

    def record(self, rec_id: int) -> SwcRecord:
        return self._by_id[rec_id]

    def children(self, rec_id: int) -> list[int]:
        return self.children_index[rec_id]


def _parse_line(line_number: int, line: str) -> SwcRecord:
    parts = line.split()
    if len(parts) != 7:
        raise MalformedLine(
            line_number, f"expected 7 fields, got {len(parts)}"
        )
    try:
        rec_id = int(parts[0])
        struct = int(parts[1])
        x, y, z = float(parts[2]), float(parts[3]), float(parts[4])
        radius = float(parts[5])
        parent = int(parts[6])
    except ValueError as exc:
        raise MalformedLine(line_number, f"non-numeric field ({exc})") from None
    if rec_id <= 0:
        raise MalformedLine(line_number, f"record id must be positive, got {rec_id}")
    return SwcRecord(rec_id, struct, np.array([x, y, z], dtype=float), radius, parent)


def parse_swc(text: str | Iterable[str]) -> Morphology:
    """Parse SWC text into a validated :class:`Morphology`.

    ``text`` may be a string or any iterable of lines.  Comment lines
    (leading ``#``) and blank lines are skipped.
    """
    lines = text.splitlines() if isinstance(text, str) else text
    records = []
    for i, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        records.append(_parse_line(i, line))
    return Morphology(records)


def serialize_swc(m: Morphology) -> str:
    """Render a Morphology back to SWC text (field-for-field round trip)."""
    lines = []
    for rec in m.records:
        x, y, z = rec.position
        lines.append(
            f"{rec.id} {rec.structure_type} {x!r} {y!r} {z!r} "
            f"{rec.radius!r} {rec.parent_id}"
        )
    return "\n".join(lines) + "\n"


@dataclass
class Skeleton:
    """Uniformly resampled centreline tree.

    ``vertices`` are 3D positions (μm), ``radii`` per-vertex cross-section
    radii, ``edges`` parent→child oriented vertex-index pairs.
    ``edge_lengths`` are arc-length distances measured along the source
    polyline, so total tree length is preserved exactly by resampling.
    Vertex 0 is the root.
    """

    vertices: np.ndarray  # (V, 3)
    radii: np.ndarray  # (V,)
    edges: np.ndarray  # (E, 2) int
    edge_lengths: np.ndarray  # (E,)

    def __post_init__(self):
        if np.any(self.radii <= 0):
            raise NonPositiveRadius("skeleton radii must be positive")
        self._children = [[] for _ in range(len(self.vertices))]
        self._parent = np.full(len(self.vertices), -1, dtype=int)
        for a, b in self.edges:
            self._children[a].append(int(b))
            self._parent[b] = a
        for ch in self._children:
            ch.sort()

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    def children(self, v: int) -> list[int]:
        return self._children[v]

    def parent(self, v: int) -> int:
        return int(self._parent[v])

    @property
    def branch_points(self) -> list[int]:
        return [v for v in range(self.n_vertices) if len(self._children[v]) >= 2]

    @property
    def tips(self) -> list[int]:
        return [v for v in range(self.n_vertices) if not self._children[v]]

    @property
    def root(self) -> int:
        return 0


def total_arc_length(s: Skeleton) -> float:
    return float(np.sum(s.edge_lengths))


def _junctions(m: Morphology) -> set[int]:
    out = {m.root.id}
    for rec in m.records:
        n = len(m.children(rec.id))
        if n == 0 or n >= 2:
            out.add(rec.id)
    return out


def _paths(m: Morphology) -> list[list[int]]:
    """Junction-to-junction record paths, depth-first from the root,
    children in sorted id order."""
    junctions = _junctions(m)
    paths: list[list[int]] = []
    pending = [m.root.id]
    while pending:
        start = pending.pop()
        child_paths = []
        for child in m.children(start):
            path = [start, child]
            while path[-1] not in junctions:
                path.append(m.children(path[-1])[0])
            child_paths.append(path)
        paths.extend(child_paths)
        for p in reversed(child_paths):
            pending.append(p[-1])
    return paths


def resample(m: Morphology, h: float) -> Skeleton:
    """Resample a morphology at target vertex spacing ``h`` (μm).

    Junction records (root, branch points, tips) are preserved exactly.
    Interior vertices are placed at uniform arc-length intervals along each
    junction-to-junction path; positions and radii are interpolated
    linearly in arc length.  The per-path spacing L/n stays within
    [0.5h, 1.5h] whenever the path is at least 0.5h long; shorter paths
    keep only their endpoints.
    """
    if not h > 0:
        raise ValueError(f"resample spacing must be positive, got {h}")

    vertex_of_record: dict[int, int] = {}
    vertices: list[np.ndarray] = []
    radii: list[float] = []
    edges: list[tuple[int, int]] = []
    lengths: list[float] = []

    def add_vertex(pos, radius) -> int:
        vertices.append(np.asarray(pos, dtype=float))
        radii.append(float(radius))
        return len(vertices) - 1

    root = m.root
    vertex_of_record[root.id] = add_vertex(root.position, root.radius)

    for path in _paths(m):
        recs = [m.record(rid) for rid in path]
        seg = np.array([np.linalg.norm(b.position - a.position)
                        for a, b in zip(recs[:-1], recs[1:])])
        if np.any(seg == 0):
            i = int(np.argmin(seg))
            raise DegenerateSegment(
                f"records {recs[i].id} and {recs[i + 1].id} share a position"
            )
        arc = np.concatenate([[0.0], np.cumsum(seg)])
        total = float(arc[-1])
        n = max(1, round(total / h))
        step = total / n

        prev_vertex = vertex_of_record[path[0]]
        positions = np.array([r.position for r in recs])
        rads = np.array([r.radius for r in recs])
        for j in range(1, n + 1):
            if j == n:
                vid = add_vertex(recs[-1].position, recs[-1].radius)
                vertex_of_record[path[-1]] = vid
            else:
                s = j * step
                pos = np.array([np.interp(s, arc, positions[:, k]) for k in range(3)])
                vid = add_vertex(pos, np.interp(s, arc, rads))
            edges.append((prev_vertex, vid))
            lengths.append(step)
            prev_vertex = vid

    return Skeleton(
        vertices=np.array(vertices),
        radii=np.array(radii),
        edges=np.array(edges, dtype=int).reshape(-1, 2),
        edge_lengths=np.array(lengths),
    )
