"""Coarsened camera-junction graph: super-edges, flow allocation, congestion.

The road network is only partially observed (roughly 100 of 250+ junctions
carry cameras in the shipped neighborhood scenario). Forecasting operates on
a coarse graph whose vertices are the camera-equipped junctions and whose
super-edges collapse chains of camera-less junctions between them.

Collapse rule: a path contributes a super-edge iff its endpoints are camera
vertices and every interior vertex is camera-less with degree exactly 2.
Camera-less vertices of any other degree terminate collapse paths, and a
branch ending at one contributes nothing (this forbids ambiguous
many-to-many super-edges; it is an interpretation, documented here).
Parallel collapsed paths between the same endpoints merge into a single
super-edge whose weight is the path multiplicity and whose hop_length is the
shortest collapsed path.
"""

from __future__ import annotations

import enum
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Mapping

from .errors import IsolatedCameraVertex


@dataclass(frozen=True)
class RoadVertex:
    vertex_id: str
    camera: bool = False
    x: float | None = None  # optional layout hint for the dashboard
    y: float | None = None


@dataclass(frozen=True)
class RoadGraph:
    """Undirected road network; parallel edges allowed, self-loops are not."""

    vertices: tuple[RoadVertex, ...]
    edges: tuple[tuple[str, str], ...]

    def __post_init__(self):
        known = {v.vertex_id for v in self.vertices}
        for u, v in self.edges:
            if u == v:
                raise ValueError(f"self-loop on {u!r}")
            if u not in known or v not in known:
                raise ValueError(f"edge ({u!r}, {v!r}) references unknown vertex")

    @property
    def vertex_ids(self) -> frozenset[str]:
        return frozenset(v.vertex_id for v in self.vertices)

    def vertex(self, vertex_id: str) -> RoadVertex:
        for v in self.vertices:
            if v.vertex_id == vertex_id:
                return v
        raise KeyError(vertex_id)

    def adjacency(self) -> dict[str, list[str]]:
        adj: dict[str, list[str]] = {v.vertex_id: [] for v in self.vertices}
        for u, v in self.edges:
            adj[u].append(v)
            adj[v].append(u)
        return adj


@dataclass(frozen=True)
class SuperEdge:
    """Coarse edge between two camera junctions.

    weight counts the distinct collapsed segment-paths merged into this edge;
    hop_length is the number of road segments along the shortest of them.
    """

    u: str
    v: str
    weight: int
    hop_length: int

    def __post_init__(self):
        if self.weight < 1 or self.hop_length < 1:
            raise ValueError("weight and hop_length must be >= 1")

    @property
    def key(self) -> tuple[str, str]:
        return (self.u, self.v) if self.u <= self.v else (self.v, self.u)


@dataclass(frozen=True)
class CoarseGraph:
    vertices: tuple[RoadVertex, ...]  # all camera-equipped
    super_edges: tuple[SuperEdge, ...]

    @property
    def vertex_ids(self) -> tuple[str, ...]:
        return tuple(v.vertex_id for v in self.vertices)

    def incident(self) -> dict[str, list[SuperEdge]]:
        inc: dict[str, list[SuperEdge]] = {v.vertex_id: [] for v in self.vertices}
        for e in self.super_edges:
            inc[e.u].append(e)
            inc[e.v].append(e)
        return inc


class CongestionState(enum.IntEnum):
    # Order matters: discretization is monotone in flow.
    FREE_FLOW = 0
    MODERATE = 1
    HEAVY = 2


def coarsen(g: RoadGraph) -> CoarseGraph:
    """Collapse camera-less degree-2 chains into super-edges.

    Raises :class:`IsolatedCameraVertex` if a camera vertex ends up with no
    incident super-edge (unreachable from every other camera).
    """
    adj = g.adjacency()
    degree = {vid: len(ns) for vid, ns in adj.items()}
    camera = {v.vertex_id: v.camera for v in g.vertices}
    cam_vertices = [v for v in g.vertices if v.camera]

    # Walk outward from each camera vertex along each incident segment,
    # passing only through camera-less degree-2 vertices. Each path is found
    # twice (once from each endpoint); keep paths from the lexically smaller
    # start, or from both when u == v would make a self-loop (dropped).
    paths: dict[tuple[str, str], list[int]] = defaultdict(list)
    for start in cam_vertices:
        for first in adj[start.vertex_id]:
            prev = start.vertex_id
            cur = first
            hops = 1
            while not camera[cur] and degree[cur] == 2:
                a, b = adj[cur]
                nxt = b if a == prev else a
                prev, cur = cur, nxt
                hops += 1
            if not camera[cur]:
                continue  # terminated at a camera-less branch/dead-end: no super-edge
            if cur == start.vertex_id:
                continue  # path returned to its origin: would be a self-loop
            if start.vertex_id < cur:
                paths[(start.vertex_id, cur)].append(hops)

    edges = [
        SuperEdge(u=u, v=v, weight=len(hop_list), hop_length=min(hop_list))
        for (u, v), hop_list in sorted(paths.items())
    ]

    covered = {e.u for e in edges} | {e.v for e in edges}
    for v in cam_vertices:
        if v.vertex_id not in covered:
            raise IsolatedCameraVertex(v.vertex_id)

    return CoarseGraph(vertices=tuple(cam_vertices), super_edges=tuple(edges))


def expand_to_road_graph(cg: CoarseGraph) -> RoadGraph:
    """Inverse of :func:`coarsen` up to interior vertex names.

    Each super-edge becomes `weight` parallel chains of `hop_length` segments
    through fresh camera-less vertices, so coarsen(expand(cg)) == cg.
    """
    vertices = list(cg.vertices)
    edges: list[tuple[str, str]] = []
    n = 0
    for e in cg.super_edges:
        for k in range(e.weight):
            prev = e.u
            for h in range(e.hop_length - 1):
                vid = f"__x{n}"
                n += 1
                vertices.append(RoadVertex(vertex_id=vid, camera=False))
                edges.append((prev, vid))
                prev = vid
            edges.append((prev, e.v))
    return RoadGraph(vertices=tuple(vertices), edges=tuple(edges))


@dataclass
class EdgeFlows:
    """Result of mass-conserving allocation.

    flows maps super-edge key (sorted endpoint pair) to allocated flow;
    residue holds counts from vertices with no incident super-edge, keyed by
    vertex id (flagged rather than silently dropped).
    """

    flows: dict[tuple[str, str], float]
    residue: dict[str, float] = field(default_factory=dict)

    @property
    def total(self) -> float:
        return sum(self.flows.values()) + sum(self.residue.values())


def _edge_weight(e: SuperEdge, weighting: str) -> float:
    if weighting == "multiplicity":
        return float(e.weight)
    if weighting == "inverse_length":
        # connectivity per unit collapsed length; multiplicity still counts
        return e.weight / e.hop_length
    raise ValueError(f"unknown weighting {weighting!r}")


def allocate_edge_flows(
    vertex_counts: Mapping[str, float],
    cg: CoarseGraph,
    weighting: str = "multiplicity",
    aggregation: str = "sum",
) -> EdgeFlows:
    """Distribute vertex counts across incident super-edges by connectivity.

    Each vertex v splits its count c_v across incident edges e proportionally
    to the edge weight; an edge's flow aggregates both endpoint shares
    (``sum``, the default, conserves mass exactly; ``mean`` halves shared
    contributions and does not).
    """
    if aggregation not in ("sum", "mean"):
        raise ValueError(f"unknown aggregation {aggregation!r}")
    inc = cg.incident()
    flows: dict[tuple[str, str], float] = {e.key: 0.0 for e in cg.super_edges}
    residue: dict[str, float] = {}
    for vid in cg.vertex_ids:
        c_v = float(vertex_counts.get(vid, 0.0))
        edges = inc[vid]
        if not edges:
            if c_v > 0:
                residue[vid] = c_v
            continue
        weights = [_edge_weight(e, weighting) for e in edges]
        total_w = sum(weights)
        for e, w in zip(edges, weights):
            flows[e.key] += c_v * (w / total_w)
    if aggregation == "mean":
        flows = {k: f / 2.0 for k, f in flows.items()}
    return EdgeFlows(flows=flows, residue=residue)


def discretize(flow: float, thresholds: tuple[float, float]) -> CongestionState:
    """Map a per-interval vehicle flow to a congestion state.

    Boundary values map upward: flow == t1 is MODERATE, flow == t2 is HEAVY.
    """
    t1, t2 = thresholds
    if not (0 < t1 < t2):
        raise ValueError(f"thresholds must satisfy 0 < t1 < t2, got ({t1}, {t2})")
    if flow < 0:
        raise ValueError(f"flow must be non-negative, got {flow}")
    if flow < t1:
        return CongestionState.FREE_FLOW
    if flow < t2:
        return CongestionState.MODERATE
    return CongestionState.HEAVY


def components(g: RoadGraph) -> list[set[str]]:
    """Connected components of the road graph (declared-component check)."""
    adj = g.adjacency()
    seen: set[str] = set()
    out = []
    for v in g.vertices:
        if v.vertex_id in seen:
            continue
        comp = {v.vertex_id}
        stack = [v.vertex_id]
        while stack:
            cur = stack.pop()
            for n in adj[cur]:
                if n not in comp:
                    comp.add(n)
                    stack.append(n)
        seen |= comp
        out.append(comp)
    return out


def coarse_graph_to_dict(cg: CoarseGraph) -> dict:
    """JSON-friendly export with weights, for the dashboard overlay."""
    return {
        "vertices": [
            {
                "id": v.vertex_id,
                **({"x": v.x} if v.x is not None else {}),
                **({"y": v.y} if v.y is not None else {}),
            }
            for v in cg.vertices
        ],
        "super_edges": [
            {"u": e.u, "v": e.v, "weight": e.weight, "hop_length": e.hop_length}
            for e in cg.super_edges
        ],
    }
