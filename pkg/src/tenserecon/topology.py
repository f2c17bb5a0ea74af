"""Six-strut tensegrity graph: canonical geometry, validation, edge lengths.

The canonical structure is the expanded octahedron (Jessen-type): 12 nodes,
6 rigid struts in three orthogonal parallel pairs, 24 tendons, and a surface
of 8 equilateral plus 12 isosceles triangles.  Three base nodes form an
anchored tendon triangle in the z = 0 plane and serve as the fixed reference
frame for state reconstruction.

Node labeling convention (canonical build):
  0, 1, 2       anchored base triangle
  3, 6, 9       strut partners of nodes 0, 1, 2
  4/5, 7/8, 10/11  the three fully free struts
Struts are (0,3), (4,5), (1,6), (7,8), (2,9), (10,11).  Tendon indices 0..2
are the base triangle edges (0,1), (1,2), (0,2); indices 3..23 are the
remaining pairs in lexicographic node order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .errors import TopologyError

SQRT6_OVER_4 = np.sqrt(6.0) / 4.0


@dataclass(frozen=True)
class Tendon:
    """One tension member: tendon index, endpoint node ids, rest length in m."""

    k: int
    i: int
    j: int
    rest_length: float


@dataclass(frozen=True)
class Topology:
    """Immutable description of the 12-node, 6-strut, 24-tendon structure."""

    strut_length: float
    struts: tuple[tuple[int, int], ...]
    tendons: tuple[Tendon, ...]
    anchored: frozenset[int]
    nominal_coords: np.ndarray = field(repr=False)

    def __post_init__(self):
        coords = np.asarray(self.nominal_coords, dtype=float)
        coords.flags.writeable = False
        object.__setattr__(self, "nominal_coords", coords)

    @property
    def nodes(self) -> tuple[int, ...]:
        return tuple(range(len(self.nominal_coords)))

    @property
    def free_nodes(self) -> tuple[int, ...]:
        return tuple(n for n in self.nodes if n not in self.anchored)

    def rest_lengths(self) -> np.ndarray:
        """Tendon rest lengths in tendon-index order, shape (24,)."""
        return np.array([t.rest_length for t in self.tendons])

    def tendon_pairs(self) -> tuple[tuple[int, int], ...]:
        return tuple((t.i, t.j) for t in self.tendons)


def build_canonical(strut_length: float = 0.30,
                    rest_lengths: dict[int, float] | None = None) -> Topology:
    """Build the canonical expanded-octahedron topology.

    Nodes sit at the 12 cyclic permutations of (0, +-1, +-2) scaled by
    strut_length / 4, rigidly transformed so one equilateral tendon triangle
    (the anchored base) lies in the z = 0 plane with its centroid at the
    origin and node 0 on the +x axis.  Each strut joins the two nodes that
    differ only in the sign of their largest-magnitude coordinate; the 24
    tendons are the node pairs at distance strut_length * sqrt(6) / 4.

    Args:
        strut_length: rigid strut length in meters, > 0.
        rest_lengths: optional per-tendon overrides {tendon index: meters}
            for pre-strained tendons; default is the geometric nominal
            strut_length * sqrt(6) / 4 for every tendon.
    """
    if not np.isfinite(strut_length) or strut_length <= 0:
        raise TopologyError(f"strut_length must be > 0, got {strut_length}")

    s = strut_length / 4.0
    raw = []
    for a in (1.0, -1.0):
        for b in (2.0, -2.0):
            raw.append((0.0, a, b))
            raw.append((b, 0.0, a))
            raw.append((a, b, 0.0))
    raw = np.array(raw)

    def locate(v) -> int:
        return int(np.argmin(np.linalg.norm(raw - np.array(v, dtype=float), axis=1)))

    # Fixed labeling: anchors 0..2 on the (-,-,-) octant face, partners 3/6/9,
    # free struts (4,5), (7,8), (10,11).
    label_to_raw = {
        0: locate((-2, 0, -1)), 1: locate((0, -1, -2)), 2: locate((-1, -2, 0)),
        3: locate((2, 0, -1)), 6: locate((0, -1, 2)), 9: locate((-1, 2, 0)),
        4: locate((2, 0, 1)), 5: locate((-2, 0, 1)),
        7: locate((0, 1, -2)), 8: locate((0, 1, 2)),
        10: locate((1, -2, 0)), 11: locate((1, 2, 0)),
    }
    pts = raw[[label_to_raw[k] for k in range(12)]] * s

    # Rigid transform: anchored face -> z = 0 plane, centroid -> origin,
    # node 0 -> +x axis.  The face normal (1,1,1)/sqrt(3) maps to +z.
    centroid = pts[[0, 1, 2]].mean(axis=0)
    e3 = np.full(3, 1.0) / np.sqrt(3.0)
    e1 = pts[0] - centroid
    e1 = e1 / np.linalg.norm(e1)
    e2 = np.cross(e3, e1)
    basis = np.vstack([e1, e2, e3])
    coords = (pts - centroid) @ basis.T

    struts = ((0, 3), (4, 5), (1, 6), (7, 8), (2, 9), (10, 11))

    tendon_nominal = strut_length * SQRT6_OVER_4
    pairs = [
        (i, j) for i, j in combinations(range(12), 2)
        if abs(np.linalg.norm(coords[i] - coords[j]) - tendon_nominal) < 1e-9 * max(1.0, strut_length)
    ]
    anchor_edges = [(0, 1), (1, 2), (0, 2)]
    others = sorted(p for p in pairs if p not in anchor_edges)
    ordered = anchor_edges + others
    if len(ordered) != 24:
        raise TopologyError(f"canonical construction produced {len(ordered)} tendons")

    overrides = rest_lengths or {}
    tendons = tuple(
        Tendon(k=k, i=i, j=j, rest_length=float(overrides.get(k, tendon_nominal)))
        for k, (i, j) in enumerate(ordered)
    )
    return Topology(
        strut_length=float(strut_length),
        struts=struts,
        tendons=tendons,
        anchored=frozenset((0, 1, 2)),
        nominal_coords=coords,
    )


def validate(t: Topology) -> list[str]:
    """Check every topology invariant; return the complete violation list.

    An empty list means the topology is valid.  Violations are data, not
    exceptions: callers decide how to react.
    """
    out: list[str] = []
    n = len(t.nominal_coords)
    if n != 12:
        out.append(f"expected 12 nodes, found {n}")
    if len(t.struts) != 6:
        out.append(f"expected 6 struts, found {len(t.struts)}")
    if len(t.tendons) != 24:
        out.append(f"expected 24 tendons, found {len(t.tendons)}")
    if not np.all(np.isfinite(t.nominal_coords)):
        out.append("nominal coordinates contain non-finite values")
    if not np.isfinite(t.strut_length) or t.strut_length <= 0:
        out.append(f"strut_length must be > 0, got {t.strut_length}")

    strut_nodes = [n for pair in t.struts for n in pair]
    if len(set(strut_nodes)) != len(strut_nodes):
        out.append("struts do not partition the node set (shared node)")
    elif set(strut_nodes) != set(range(n)):
        out.append("struts do not partition the node set (uncovered node)")

    strut_set = {tuple(sorted(p)) for p in t.struts}
    tendon_set = set()
    for td in t.tendons:
        pair = tuple(sorted((td.i, td.j)))
        if pair in strut_set:
            out.append(f"tendon {td.k} duplicates strut pair {pair}")
        if pair in tendon_set:
            out.append(f"duplicate tendon pair {pair}")
        tendon_set.add(pair)
        if not np.isfinite(td.rest_length) or td.rest_length <= 0:
            out.append(f"tendon {td.k} rest length must be > 0, got {td.rest_length}")

    degree = {i: 0 for i in range(n)}
    for td in t.tendons:
        degree[td.i] = degree.get(td.i, 0) + 1
        degree[td.j] = degree.get(td.j, 0) + 1
    for node, d in degree.items():
        if d != 4:
            out.append(f"node {node} tendon degree is {d}, expected 4")

    anchored = sorted(t.anchored)
    if len(anchored) != 3:
        out.append(f"expected exactly 3 anchored nodes, found {len(anchored)}")
    else:
        for i, j in combinations(anchored, 2):
            if tuple(sorted((i, j))) not in tendon_set:
                out.append(f"anchored nodes {i},{j} are not joined by a tendon")
        for node in anchored:
            if node < n and abs(t.nominal_coords[node, 2]) > 1e-9 * max(1.0, t.strut_length):
                out.append(f"anchored node {node} off ground plane (z = {t.nominal_coords[node, 2]:.3e})")
    return out


def edge_lengths(t: Topology, state) -> np.ndarray:
    """Euclidean tendon lengths in tendon-index order.

    Accepts a 12x3 coordinate array or any object with a .coords attribute.
    """
    coords = np.asarray(getattr(state, "coords", state), dtype=float)
    if coords.shape != (len(t.nominal_coords), 3):
        raise TopologyError(f"state must be {len(t.nominal_coords)}x3, got {coords.shape}")
    i = np.array([td.i for td in t.tendons])
    j = np.array([td.j for td in t.tendons])
    return np.linalg.norm(coords[i] - coords[j], axis=1)


def tendon_triangles(t: Topology) -> list[tuple[int, int, int]]:
    """All closed 3-cycles of tendons (the equilateral faces; 8 for canonical)."""
    adj = {n: set() for n in t.nodes}
    for td in t.tendons:
        adj[td.i].add(td.j)
        adj[td.j].add(td.i)
    tris = []
    for a in t.nodes:
        for b in adj[a]:
            if b <= a:
                continue
            for c in adj[a] & adj[b]:
                if c > b:
                    tris.append((a, b, c))
    return tris


def to_json_dict(t: Topology) -> dict:
    return {
        "strut_length_m": t.strut_length,
        "struts": [list(p) for p in t.struts],
        "tendons": [
            {"k": td.k, "i": td.i, "j": td.j, "rest_length_m": td.rest_length}
            for td in t.tendons
        ],
        "anchored": sorted(t.anchored),
        "nominal_coords_m": [[float(x) for x in row] for row in t.nominal_coords],
    }


def from_json_dict(d: dict) -> Topology:
    try:
        tendons = tuple(
            Tendon(k=int(r["k"]), i=int(r["i"]), j=int(r["j"]),
                   rest_length=float(r["rest_length_m"]))
            for r in d["tendons"]
        )
        topo = Topology(
            strut_length=float(d["strut_length_m"]),
            struts=tuple((int(a), int(b)) for a, b in d["struts"]),
            tendons=tuple(sorted(tendons, key=lambda td: td.k)),
            anchored=frozenset(int(x) for x in d["anchored"]),
            nominal_coords=np.array(d["nominal_coords_m"], dtype=float),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise TopologyError(f"malformed topology JSON: {exc}") from exc
    return topo


def save_topology(t: Topology, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(to_json_dict(t), fh, indent=1)
        fh.write("\n")


def load_topology(path) -> Topology:
    with open(path, encoding="utf-8") as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise TopologyError(f"unparseable topology file {path}: {exc}") from exc
    return from_json_dict(d)
