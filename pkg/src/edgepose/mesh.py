"""Triangle meshes: STL I/O, wire-edge extraction, and simple primitives.

A mesh is loaded with exact vertex deduplication and zero-area triangles
dropped, then reduced to a wireframe: edges bordering a single face are
boundary edges, edges whose adjacent faces meet at a dihedral angle at or
above a threshold are sharp, everything else (coplanar seams, tessellation
diagonals) is discarded. Consistent outward winding is assumed, as STL
requires.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import EmptyMeshError, MeshParseError
from .geometry import Pose

# Triangles below this area (m^2) are tessellation junk and get dropped.
DEGENERATE_AREA = 1e-16


@dataclass(frozen=True)
class TriMesh:
    """Deduplicated vertices (V, 3) and triangle vertex indices (T, 3)."""

    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        self.vertices.flags.writeable = False
        self.triangles.flags.writeable = False

    def face_normals(self) -> np.ndarray:
        v = self.vertices
        t = self.triangles
        n = np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]])
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    def edge_map(self) -> dict[tuple[int, int], list[int]]:
        """Undirected edge (i < j) to list of adjacent triangle indices."""
        edges: dict[tuple[int, int], list[int]] = {}
        for f, (a, b, c) in enumerate(self.triangles):
            for i, j in ((a, b), (b, c), (c, a)):
                key = (int(min(i, j)), int(max(i, j)))
                edges.setdefault(key, []).append(f)
        return edges

    def aabb(self, pose: Pose | None = None) -> tuple[np.ndarray, np.ndarray]:
        pts = self.vertices if pose is None else pose.transform(self.vertices)
        return pts.min(axis=0), pts.max(axis=0)


@dataclass(frozen=True)
class WireEdge:
    """A model edge kept for rendering: endpoints, kind, and dihedral angle."""

    p0: np.ndarray
    p1: np.ndarray
    kind: str  # "sharp" | "boundary"
    dihedral: float | None = None


def _build_mesh(raw_vertices: np.ndarray) -> TriMesh:
    """Deduplicate exact coordinates and drop degenerate triangles."""
    raw_vertices = raw_vertices.reshape(-1, 3)
    seen: dict[tuple[float, float, float], int] = {}
    index = np.empty(raw_vertices.shape[0], dtype=int)
    vertices = []
    for i, v in enumerate(raw_vertices):
        key = (float(v[0]), float(v[1]), float(v[2]))
        if key not in seen:
            seen[key] = len(vertices)
            vertices.append(key)
        index[i] = seen[key]
    tris = index.reshape(-1, 3)
    verts = np.array(vertices)
    keep = []
    for t in tris:
        if t[0] == t[1] or t[1] == t[2] or t[0] == t[2]:
            continue
        area = 0.5 * np.linalg.norm(
            np.cross(verts[t[1]] - verts[t[0]], verts[t[2]] - verts[t[0]])
        )
        if area > DEGENERATE_AREA:
            keep.append(t)
    if not keep:
        raise EmptyMeshError("no non-degenerate triangle in mesh")
    return TriMesh(vertices=verts, triangles=np.array(keep, dtype=int))


def load_stl(data: bytes) -> TriMesh:
    """Parse an STL stream, binary or ASCII, into a deduplicated mesh."""
    if len(data) < 15:
        raise MeshParseError("stream too short for STL", offset=len(data))
    # A binary file is exactly 84 + 50*n bytes; the 'solid' prefix alone is
    # not conclusive because binary headers may start with it too.
    if len(data) >= 84:
        (count,) = struct.unpack_from("<I", data, 80)
        if len(data) == 84 + 50 * count:
            return _parse_binary_stl(data, count)
    head = data[:512].lstrip()
    if head.startswith(b"solid") and b"facet" in data:
        return _parse_ascii_stl(data)
    if len(data) >= 84:
        (count,) = struct.unpack_from("<I", data, 80)
        raise MeshParseError(
            f"binary STL size mismatch: {len(data)} bytes for {count} facets",
            offset=min(len(data), 84 + 50 * count),
        )
    raise MeshParseError("unrecognized STL stream", offset=0)


def _parse_binary_stl(data: bytes, count: int) -> TriMesh:
    if count == 0:
        raise EmptyMeshError("binary STL declares zero facets")
    raw = np.frombuffer(data, dtype=np.uint8, count=50 * count, offset=84)
    rec = raw.reshape(count, 50)
    floats = rec[:, :48].copy().view("<f4").reshape(count, 12)
    return _build_mesh(floats[:, 3:].astype(float))


def _parse_ascii_stl(data: bytes) -> TriMesh:
    verts: list[list[float]] = []
    facet_verts = 0
    offset = 0
    for line in data.splitlines(keepends=True):
        stripped = line.strip().lower()
        if stripped.startswith(b"vertex"):
            parts = stripped.split()
            if len(parts) != 4:
                raise MeshParseError("malformed vertex line", offset=offset)
            try:
                verts.append([float(p) for p in parts[1:]])
            except ValueError:
                raise MeshParseError("non-numeric vertex coordinate", offset=offset)
            facet_verts += 1
        elif stripped.startswith(b"endfacet"):
            if facet_verts != 3:
                raise MeshParseError(
                    f"facet closed with {facet_verts} vertices", offset=offset
                )
            facet_verts = 0
        offset += len(line)
    if facet_verts != 0:
        raise MeshParseError("truncated facet at end of stream", offset=offset)
    if not verts or len(verts) % 3 != 0:
        raise MeshParseError(f"vertex count {len(verts)} not a multiple of 3", offset=offset)
    return _build_mesh(np.array(verts))


def save_stl(mesh: TriMesh, binary: bool = True, name: str = "mesh") -> bytes:
    """Serialize a mesh to STL bytes (normals recomputed from winding)."""
    normals = mesh.face_normals()
    tris = mesh.vertices[mesh.triangles]
    if binary:
        out = bytearray()
        out += struct.pack("<80sI", name.encode()[:80], len(tris))
        for n, t in zip(normals, tris):
            out += struct.pack("<12f", *n, *t[0], *t[1], *t[2])
            out += struct.pack("<H", 0)
        return bytes(out)
    lines = [f"solid {name}"]
    for n, t in zip(normals, tris):
        lines.append(f"  facet normal {n[0]:.9e} {n[1]:.9e} {n[2]:.9e}")
        lines.append("    outer loop")
        for v in t:
            lines.append(f"      vertex {v[0]:.9e} {v[1]:.9e} {v[2]:.9e}")
        lines.append("    endloop")
        lines.append("  endfacet")
    lines.append(f"endsolid {name}")
    return ("\n".join(lines) + "\n").encode()


def extract_wire_edges(mesh: TriMesh, dihedral_threshold: float = 0.52) -> list[WireEdge]:
    """Keep boundary edges and edges meeting at >= dihedral_threshold radians."""
    normals = mesh.face_normals()
    wires = []
    for (i, j), faces in mesh.edge_map().items():
        p0, p1 = mesh.vertices[i], mesh.vertices[j]
        if len(faces) == 1:
            wires.append(WireEdge(p0=p0, p1=p1, kind="boundary"))
            continue
        angle = 0.0
        for a in range(len(faces)):
            for b in range(a + 1, len(faces)):
                dot = np.clip(np.dot(normals[faces[a]], normals[faces[b]]), -1.0, 1.0)
                angle = max(angle, float(np.arccos(dot)))
        if angle >= dihedral_threshold:
            wires.append(WireEdge(p0=p0, p1=p1, kind="sharp", dihedral=angle))
    return wires


# ---------------------------------------------------------------------------
# Primitive meshes for simulation and tests
# ---------------------------------------------------------------------------


def make_box(size=(0.06, 0.04, 0.03)) -> TriMesh:
    """Axis-aligned box centered at the origin."""
    sx, sy, sz = np.asarray(size, dtype=float) / 2.0
    v = np.array(
        [
            [-sx, -sy, -sz], [sx, -sy, -sz], [sx, sy, -sz], [-sx, sy, -sz],
            [-sx, -sy, sz], [sx, -sy, sz], [sx, sy, sz], [-sx, sy, sz],
        ]
    )
    faces = [
        (0, 2, 1), (0, 3, 2),  # bottom (-z)
        (4, 5, 6), (4, 6, 7),  # top (+z)
        (0, 1, 5), (0, 5, 4),  # -y
        (2, 3, 7), (2, 7, 6),  # +y
        (1, 2, 6), (1, 6, 5),  # +x
        (3, 0, 4), (3, 4, 7),  # -x
    ]
    return TriMesh(vertices=v, triangles=np.array(faces, dtype=int))


def make_cylinder(radius=0.02, height=0.05, segments=32) -> TriMesh:
    """Closed cylinder along z, centered at the origin."""
    ang = np.linspace(0, 2 * np.pi, segments, endpoint=False)
    ring = np.column_stack([radius * np.cos(ang), radius * np.sin(ang)])
    bot = np.column_stack([ring, np.full(segments, -height / 2)])
    top = np.column_stack([ring, np.full(segments, height / 2)])
    verts = np.vstack([bot, top, [[0, 0, -height / 2]], [[0, 0, height / 2]]])
    cb, ct = 2 * segments, 2 * segments + 1
    faces = []
    for k in range(segments):
        k2 = (k + 1) % segments
        faces.append((k, k2, segments + k))
        faces.append((k2, segments + k2, segments + k))
        faces.append((cb, k2, k))  # bottom cap, normal -z
        faces.append((ct, segments + k, segments + k2))  # top cap, normal +z
    return TriMesh(vertices=verts, triangles=np.array(faces, dtype=int))


def make_lbracket(width=0.06, height=0.06, thickness=0.02, depth=0.03) -> TriMesh:
    """L-shaped prism extruded along z, resting corner at the origin corner."""
    w, h, t = float(width), float(height), float(thickness)
    outline = np.array(
        [[0, 0], [w, 0], [w, t], [t, t], [t, h], [0, h]], dtype=float
    )
    outline -= [w / 2, h / 2]
    lo, hi = -depth / 2, depth / 2
    bottom = np.column_stack([outline, np.full(6, lo)])
    top = np.column_stack([outline, np.full(6, hi)])
    verts = np.vstack([bottom, top])
    # the hexagon splits into two rectangles: (0,1,2,3) and (0,3,4,5)
    quads = [(0, 1, 2, 3), (0, 3, 4, 5)]
    faces = []
    for a, b, c, d in quads:
        faces += [(a, c, b), (a, d, c)]  # bottom, normal -z
        faces += [(6 + a, 6 + b, 6 + c), (6 + a, 6 + c, 6 + d)]  # top, +z
    for k in range(6):
        k2 = (k + 1) % 6
        faces += [(k, k2, 6 + k2), (k, 6 + k2, 6 + k)]
    return TriMesh(vertices=verts, triangles=np.array(faces, dtype=int))


_PRIMITIVES = {
    "box": make_box,
    "cylinder": make_cylinder,
    "lbracket": make_lbracket,
}


def make_primitive(kind: str, **kwargs) -> TriMesh:
    if kind not in _PRIMITIVES:
        raise MeshParseError(f"unknown primitive kind {kind!r}")
    return _PRIMITIVES[kind](**kwargs)
