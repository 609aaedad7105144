"""Target wireframe model: vertices, edges, faces, and high-level feature annotations.

Annotations map a feature kind name to groups of edge indices; they are
precomputed on the model so that image-to-model feature matching is a lookup.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

KIND_TETRAD = "PolygonalTetrad"
KIND_TRIAD = "PolygonalTriad"
KIND_PARALLEL_TRIAD = "ParallelTriad"
KIND_PARALLEL_PAIR = "ParallelPair"
KIND_PROXIMITY_PAIR = "ProximityPair"
KIND_ANTENNA = "Antenna"

ALL_KINDS = (
    KIND_TETRAD,
    KIND_TRIAD,
    KIND_PARALLEL_TRIAD,
    KIND_PARALLEL_PAIR,
    KIND_PROXIMITY_PAIR,
    KIND_ANTENNA,
)


@dataclass(frozen=True)
class WireframeModel:
    vertices: np.ndarray  # (V, 3) mm, target frame
    edges: tuple  # of (i, j) vertex index pairs
    faces: tuple  # of (i, j, k) vertex index triples
    feature_annotations: dict  # kind name -> tuple of edge-index tuples

    def __post_init__(self):
        verts = np.asarray(self.vertices, dtype=float)
        verts.flags.writeable = False
        object.__setattr__(self, "vertices", verts)
        edges = tuple(tuple(int(i) for i in e) for e in self.edges)
        faces = tuple(tuple(int(i) for i in f) for f in self.faces)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "faces", faces)
        ann = {k: tuple(tuple(int(i) for i in g) for g in v) for k, v in self.feature_annotations.items()}
        object.__setattr__(self, "feature_annotations", ann)
        nv, ne = len(verts), len(edges)
        for i, j in edges:
            if not (0 <= i < nv and 0 <= j < nv) or i == j:
                raise ValueError("edge index out of range")
        for f in faces:
            if any(not 0 <= i < nv for i in f):
                raise ValueError("face index out of range")
        for k, groups in ann.items():
            for g in groups:
                if any(not 0 <= e < ne for e in g):
                    raise ValueError(f"annotation edge index out of range in {k}")
            if len(set(frozenset(g) for g in groups)) != len(groups):
                raise ValueError(f"duplicate annotation edge sets in {k}")
        for i, j in edges:
            if sum(1 for f in faces if i in f and j in f) > 2:
                raise ValueError("an edge belongs to more than 2 faces")

    def centroid(self) -> np.ndarray:
        return self.vertices.mean(axis=0)

    def extent(self) -> float:
        """Largest pairwise vertex distance, mm."""
        d = self.vertices[:, None, :] - self.vertices[None, :, :]
        return float(np.sqrt((d * d).sum(axis=2)).max())

    def edge_face_adjacency(self):
        """For each edge, the indices of faces containing both endpoints."""
        adj = []
        for i, j in self.edges:
            adj.append(tuple(k for k, f in enumerate(self.faces) if i in f and j in f))
        return adj

    def edge_vector(self, edge_index: int) -> np.ndarray:
        i, j = self.edges[edge_index]
        return self.vertices[j] - self.vertices[i]

    def annotation_vertex_chain(self, edge_group):
        """Ordered vertex path of a chained edge group.

        Returns (vertex_indices, closed). For a closed k-cycle the list has k
        vertices; for an open chain of k edges it has k + 1. Raises ValueError
        when the edges do not form a simple chain or cycle.
        """
        if len(edge_group) == 1:
            return list(self.edges[edge_group[0]]), False
        incident = {}
        for e in edge_group:
            for v in self.edges[e]:
                incident.setdefault(v, []).append(e)
        degrees = sorted(len(v) for v in incident.values())
        ends = [v for v, es in incident.items() if len(es) == 1]
        if any(d > 2 for d in degrees):
            raise ValueError("edge group is not a simple chain")
        if len(ends) == 0:
            closed = True
            start = min(incident)
        elif len(ends) == 2:
            closed = False
            start = min(ends)
        else:
            raise ValueError("edge group is not connected as a chain")
        path = [start]
        used = set()
        cur = start
        while len(used) < len(edge_group):
            nxt_edge = next(e for e in incident[cur] if e not in used)
            used.add(nxt_edge)
            a, b = self.edges[nxt_edge]
            cur = b if a == cur else a
            path.append(cur)
        if closed:
            path = path[:-1]
        return path, closed

    def visible_edge_indices(self, verts_cam: np.ndarray):
        """Edges to expect in an image given camera-frame vertices.

        An edge is visible when at least one adjacent face is front-facing;
        edges with no adjacent faces (antenna lines) are always visible.
        """
        vis = []
        for e, adj in enumerate(self.edge_face_adjacency()):
            if not adj:
                vis.append(e)
                continue
            for k in adj:
                p = verts_cam[list(self.faces[k])]
                n = np.cross(p[1] - p[0], p[2] - p[0])
                c = p.mean(axis=0)
                scale = np.linalg.norm(n) * np.linalg.norm(c) + 1e-30
                if float(np.dot(n, c)) < -1e-9 * scale:
                    vis.append(e)
                    break
        return vis

    def to_json(self) -> str:
        return json.dumps(
            {
                "vertices": [[float(x) for x in v] for v in self.vertices],
                "edges": [list(e) for e in self.edges],
                "faces": [list(f) for f in self.faces],
                "annotations": {k: [list(g) for g in v] for k, v in self.feature_annotations.items()},
            },
            sort_keys=True,
        )

    @staticmethod
    def from_json(text: str) -> "WireframeModel":
        d = json.loads(text)
        return WireframeModel(
            vertices=np.array(d["vertices"], dtype=float),
            edges=tuple(tuple(e) for e in d["edges"]),
            faces=tuple(tuple(f) for f in d["faces"]),
            feature_annotations={k: tuple(tuple(g) for g in v) for k, v in d.get("annotations", {}).items()},
        )

    def content_hash(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())

    @staticmethod
    def load(path) -> "WireframeModel":
        with open(path, "r", encoding="utf-8") as fh:
            return WireframeModel.from_json(fh.read())
