"""Triangular meshes of a disk with grouped boundary elements.

A :class:`Mesh` carries the vertices and triangles of a polygonal disk
together with its boundary loop, where each boundary edge is tagged with the
id of the boundary element (``1..L``) it belongs to, or ``0`` for the
insulated gaps between elements.

Per-triangle coefficient fields are plain 1-D float arrays indexed like
``Mesh.triangles``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

__all__ = [
    "Mesh",
    "MeshError",
    "MeshParseError",
    "generate_disk_mesh",
    "read_mesh",
    "write_mesh",
    "mesh_io",
    "project_field",
    "check_admissible",
    "AdmissibilityError",
]

DEGENERATE_AREA_RATIO = 1e-14


class MeshError(ValueError):
    """Raised when a mesh violates one of its structural invariants."""


class MeshParseError(MeshError):
    """Raised when a mesh file cannot be parsed."""


class AdmissibilityError(ValueError):
    """Raised when a coefficient field is not strictly positive and bounded."""


def check_admissible(values, lower=0.0, upper=np.inf, name="field"):
    """Return ``values`` as a float array after checking ``lower < v <= upper``.

    ``lower`` is exclusive so the default rejects zero and negative entries.
    """
    v = np.asarray(values, dtype=float)
    if v.ndim != 1:
        raise AdmissibilityError(f"{name} must be one value per triangle")
    if not np.all(np.isfinite(v)):
        raise AdmissibilityError(f"{name} has non-finite entries")
    if np.any(v <= lower) or np.any(v > upper):
        raise AdmissibilityError(
            f"{name} outside admissible range ({lower}, {upper}]: "
            f"min={v.min():.6g}, max={v.max():.6g}"
        )
    return v


def _readonly(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable triangulation of a disk with ``num_elements`` boundary elements.

    Parameters
    ----------
    vertices : (n, 2) array
    triangles : (m, 3) int array
        Vertex indices, counter-clockwise.
    boundary_edges : (e, 2) int array
        Boundary edges forming one closed loop.
    edge_element : (e,) int array
        Boundary element id of each boundary edge, ``0`` for gap edges.
    validate : bool
        Check every invariant on construction (default).
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    edge_element: np.ndarray
    validate: bool = field(default=True, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "vertices", _readonly(self.vertices, float))
        object.__setattr__(self, "triangles", _readonly(self.triangles, np.int64))
        object.__setattr__(
            self, "boundary_edges", _readonly(self.boundary_edges, np.int64)
        )
        object.__setattr__(self, "edge_element", _readonly(self.edge_element, np.int64))
        if self.validate:
            self.check()

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def num_triangles(self) -> int:
        return self.triangles.shape[0]

    @cached_property
    def num_elements(self) -> int:
        ids = self.edge_element[self.edge_element > 0]
        return int(ids.max()) if ids.size else 0

    @cached_property
    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    @property
    def areas(self) -> np.ndarray:
        return self.signed_areas

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    @cached_property
    def edge_lengths(self) -> np.ndarray:
        d = self.vertices[self.boundary_edges[:, 1]] - self.vertices[self.boundary_edges[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    @cached_property
    def element_measures(self) -> np.ndarray:
        """Surface measure ``|O_l|`` of each boundary element, ``l = 1..L``."""
        return np.bincount(
            self.edge_element, weights=self.edge_lengths, minlength=self.num_elements + 1
        )[1:]

    def boundary_polygon_area(self) -> float:
        """Shoelace area enclosed by the ordered boundary loop."""
        x, y = self.vertices[self._boundary_loop()].T
        return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))

    def _boundary_loop(self) -> np.ndarray:
        nxt = dict(zip(self.boundary_edges[:, 0].tolist(), self.boundary_edges[:, 1].tolist()))
        start = int(self.boundary_edges[0, 0])
        loop = [start]
        node = nxt[start]
        while node != start:
            loop.append(node)
            node = nxt[node]
        return np.array(loop)

    def check(self) -> None:
        """Raise :class:`MeshError` unless every mesh invariant holds."""
        v, t, be, ee = self.vertices, self.triangles, self.boundary_edges, self.edge_element
        if v.ndim != 2 or v.shape[1] != 2 or v.shape[0] < 3:
            raise MeshError("vertices must be an (n, 2) array with n >= 3")
        if t.ndim != 2 or t.shape[1] != 3 or t.shape[0] < 1:
            raise MeshError("triangles must be an (m, 3) array with m >= 1")
        if be.ndim != 2 or be.shape[1] != 2 or ee.shape != (be.shape[0],):
            raise MeshError("boundary_edges must be (e, 2) with one element id per edge")
        if not np.all(np.isfinite(v)):
            raise MeshError("non-finite vertex coordinates")
        if t.min() < 0 or t.max() >= v.shape[0] or be.min() < 0 or be.max() >= v.shape[0]:
            raise MeshError("vertex index out of range")

        a = self.signed_areas
        amax = np.abs(a).max()
        bad = np.flatnonzero(a <= DEGENERATE_AREA_RATIO * amax)
        if bad.size:
            raise MeshError(
                f"triangle {bad[0]} is degenerate or clockwise (area {a[bad[0]]:.3g})"
            )

        # boundary edges must be exactly the edges used by a single triangle
        edges = np.sort(t[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
        uniq, counts = np.unique(edges, axis=0, return_counts=True)
        if np.any(counts > 2):
            raise MeshError("an edge is shared by more than two triangles")
        derived = {tuple(e) for e in uniq[counts == 1].tolist()}
        given = {tuple(sorted(e)) for e in be.tolist()}
        if derived != given or len(given) != be.shape[0]:
            raise MeshError("boundary edges do not match the triangulation boundary")

        heads = be[:, 0]
        if np.unique(heads).size != heads.size or np.unique(be[:, 1]).size != heads.size:
            raise MeshError("boundary edges do not form a simple loop")
        loop = self._boundary_loop()
        if loop.size != be.shape[0]:
            raise MeshError("boundary edges form more than one loop")

        total = a.sum()
        poly = abs(self.boundary_polygon_area())
        if abs(total - poly) > 1e-12 * poly:
            raise MeshError(f"triangle areas sum to {total!r}, boundary encloses {poly!r}")

        if ee.min() < 0:
            raise MeshError("negative boundary element id")
        L = int(ee.max())
        if L < 1:
            raise MeshError("mesh has no boundary elements")
        # walk the loop in order and check each element id is one contiguous run
        pos = {int(h): i for i, h in enumerate(heads.tolist())}
        ordered = ee[[pos[int(n)] for n in loop]]
        runs = ordered[np.flatnonzero(ordered != np.roll(ordered, 1))] if np.any(
            ordered != ordered[0]
        ) else ordered[:1]
        runs = runs[runs > 0]
        if sorted(runs.tolist()) != list(range(1, L + 1)):
            raise MeshError(
                f"boundary elements must be {L} contiguous, distinct arcs numbered 1..{L}"
            )
        if np.any(self.element_measures <= 0):
            raise MeshError("boundary element with zero surface measure")


# -- generation -----------------------------------------------------------


def _ring_minimum(k):
    """Fewest nodes on ring ``k`` (radius ``k``) whose chords clear ring ``k - 1``."""
    return max(3, math.ceil(math.pi / math.acos((k - 1) / k) + 1e-9)) if k > 1 else 3


def _ring_layout(target, L, gap_fraction):
    """Choose boundary split (ne, ng) per element and ring counts for a target size."""
    best = None
    for ne in range(1, 40):
        ng_range = [0] if gap_fraction == 0 else range(1, 40)
        for ng in ng_range:
            B = L * (ne + ng)
            if B < 4 or B > max(4 * math.sqrt(2 * math.pi * target), 2 * L):
                continue
            period = 2 * math.pi / L
            widest = max((1 - gap_fraction) * period / ne, gap_fraction * period / max(ng, 1))
            if ng:
                spread = abs(math.log((1 - gap_fraction) / ne) - math.log(gap_fraction / ng))
            else:
                spread = 0.0
            for R in range(1, int(2 * math.sqrt(target)) + 3):
                # boundary chords must clear the outermost interior ring
                if R > 1 and (R - 1) / R >= math.cos(widest / 2):
                    break
                # T = B + 2 * (sum of interior ring sizes); pick the closest
                # achievable count with the parity of B
                S = round((target - B) / 2)
                lo = sum(_ring_minimum(k) for k in range(1, R))
                hi = B * (R - 1)
                if lo > hi:
                    break
                S = min(max(S, lo), hi)
                T = B + 2 * S
                miss = abs(T - target) / target
                aspect = abs(math.log(B / (2 * math.pi * R)))
                grading = abs(math.log(max(S, 1) / max(B * (R - 1) / 2, 1))) if R > 1 else 0.0
                score = 50 * miss + aspect + 0.5 * spread + 0.5 * grading
                if best is None or score < best[0]:
                    best = (score, ne, ng, R, S, T)
    return best


def _split_counts(total, weights, minimum):
    """Integer counts proportional to ``weights`` summing to ``total``, each >= ``minimum``."""
    w = np.asarray(weights, dtype=float)
    low = np.asarray(minimum, dtype=int)
    raw = total * w / w.sum()
    n = np.maximum(np.floor(raw).astype(int), low)
    while n.sum() > total:
        n[int(np.argmax(np.where(n > low, n - raw, -np.inf)))] -= 1
    while n.sum() < total:
        n[int(np.argmax(raw - n))] += 1
    return n


def _clockwise(xy, i, j, k):
    (x1, y1), (x2, y2), (x3, y3) = xy[i], xy[j], xy[k]
    return (x2 - x1) * (y3 - y1) - (x3 - x1) * (y2 - y1) < 0


def _zip_rings(inner_ids, inner_ang, outer_ids, outer_ang, xy):
    """Triangulate the annulus between two closed rings of nodes sorted by angle.

    Walks both rings by angle; a step that would fold a triangle over (wrong
    orientation in ``xy``) is swapped for the step on the other ring.
    """
    ni, no = len(inner_ids), len(outer_ids)
    two_pi = 2 * np.pi
    # start the outer walk at the node angularly closest to inner node 0
    diff = np.angle(np.exp(1j * (outer_ang - inner_ang[0])))
    j0 = int(np.argmin(np.abs(diff)))
    oa = np.concatenate([outer_ang[j0:], outer_ang[:j0] + two_pi])
    oa = inner_ang[0] + np.mod(oa - inner_ang[0] + np.pi, two_pi) - np.pi
    oa = oa[0] + np.concatenate([[0.0], np.cumsum(np.mod(np.diff(oa), two_pi))])
    oa = np.append(oa, oa[0] + two_pi)
    ia = np.append(inner_ang, inner_ang[0] + two_pi)
    oid = np.concatenate([outer_ids[j0:], outer_ids[:j0]])
    oid = np.append(oid, oid[0])
    iid = np.append(inner_ids, inner_ids[0])
    tris = []
    i = j = 0
    while i < ni or j < no:
        advance_inner = j == no or (i < ni and ia[i + 1] <= oa[j + 1])
        if i < ni and j < no:
            # both triangles of the strip run clockwise as built here
            inner_ok = _clockwise(xy, iid[i], iid[i + 1], oid[j])
            outer_ok = _clockwise(xy, iid[i], oid[j + 1], oid[j])
            if advance_inner and not inner_ok and outer_ok:
                advance_inner = False
            elif not advance_inner and not outer_ok and inner_ok:
                advance_inner = True
        if advance_inner:
            tris.append((iid[i], iid[i + 1], oid[j]))
            i += 1
        else:
            tris.append((iid[i], oid[j + 1], oid[j]))
            j += 1
    return tris


def generate_disk_mesh(radius=1.0, target_elements=549, num_boundary_elements=16,
                       gap_fraction=0.25) -> Mesh:
    """Fan/ring triangulation of a disk with ``L`` equal boundary elements.

    The boundary circle is split into ``L`` periods; each period holds one
    element arc covering ``1 - gap_fraction`` of it followed by an insulated
    gap. Interior nodes sit on concentric rings whose sizes are chosen so the
    triangle count lands on (or one away from) ``target_elements``.
    Deterministic in its arguments.
    """
    if not radius > 0:
        raise MeshError("radius must be positive")
    L = int(num_boundary_elements)
    if L < 2:
        raise MeshError("need at least two boundary elements")
    if not 0 <= gap_fraction < 1:
        raise MeshError("gap_fraction must lie in [0, 1)")
    if 0 < gap_fraction < 1e-6:
        raise MeshError("gap_fraction too small to resolve; use 0 for no gaps")
    target = int(target_elements)
    if target < 8:
        raise MeshError("target_elements must be at least 8")
    layout = _ring_layout(target, L, gap_fraction)
    if layout is None or abs(layout[5] - target) > 0.25 * target:
        raise MeshError(
            f"cannot build about {target} triangles with {L} boundary elements"
        )
    _, ne, ng, R, S, _ = layout

    # boundary node angles: ne element edges then ng gap edges per period
    period = 2 * np.pi / L
    elem_arc = (1 - gap_fraction) * period
    ang = []
    tags = []
    for l in range(L):
        start = l * period
        ang.extend(start + elem_arc * np.arange(ne) / ne)
        tags.extend([l + 1] * ne)
        if ng:
            ang.extend(start + elem_arc + (period - elem_arc) * np.arange(ng) / ng)
            tags.extend([0] * ng)
    bnd_ang = np.asarray(ang)
    B = bnd_ang.size

    if R > 1:
        ks = np.arange(1, R)
        ring_sizes = _split_counts(S, ks, [_ring_minimum(k) for k in ks])
    else:
        ring_sizes = np.array([], int)
    verts = [np.zeros(2)]
    rings = []
    nid = 1
    for k, n in enumerate(ring_sizes, start=1):
        a = 2 * np.pi * (np.arange(n) + 0.5 * (k % 2)) / n
        r = radius * k / R
        verts.append(np.column_stack([r * np.cos(a), r * np.sin(a)]))
        rings.append((np.arange(nid, nid + n), a))
        nid += n
    verts.append(np.column_stack([radius * np.cos(bnd_ang), radius * np.sin(bnd_ang)]))
    bnd_ids = np.arange(nid, nid + B)
    rings.append((bnd_ids, bnd_ang))
    vertices = np.vstack([v.reshape(-1, 2) for v in verts])

    first_ids, first_ang = rings[0]
    tris = [(0, first_ids[i], first_ids[(i + 1) % len(first_ids)]) for i in range(len(first_ids))]
    for (iid, ia), (oid, oa) in zip(rings[:-1], rings[1:]):
        tris.extend(_zip_rings(iid, ia, oid, oa, vertices))
    triangles = np.asarray(tris, dtype=np.int64)

    # orient counter-clockwise
    p = vertices[triangles]
    cross = (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1]) - (
        p[:, 1, 1] - p[:, 0, 1]
    ) * (p[:, 2, 0] - p[:, 0, 0])
    flip = cross < 0
    triangles[flip] = triangles[flip][:, [0, 2, 1]]

    boundary_edges = np.column_stack([bnd_ids, np.roll(bnd_ids, -1)])
    return Mesh(vertices, triangles, boundary_edges, np.asarray(tags))


# -- text I/O -------------------------------------------------------------


def write_mesh(path, mesh: Mesh) -> None:
    """Write ``mesh`` in the line-oriented ``NODES/TRIANGLES/BOUNDARY`` format."""
    mesh.check()
    lines = [f"# disk mesh: {mesh.num_triangles} triangles, {mesh.num_elements} elements"]
    lines.append(f"NODES {mesh.num_vertices}")
    lines.extend(f"{x!r} {y!r}" for x, y in mesh.vertices.tolist())
    lines.append(f"TRIANGLES {mesh.num_triangles}")
    lines.extend(f"{i} {j} {k}" for i, j, k in mesh.triangles.tolist())
    lines.append(f"BOUNDARY {mesh.boundary_edges.shape[0]}")
    lines.extend(
        f"{i} {j} {e}" for (i, j), e in zip(mesh.boundary_edges.tolist(), mesh.edge_element.tolist())
    )
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path) -> Mesh:
    """Parse a mesh file; raises :class:`MeshParseError` naming the bad line."""
    sections = {"NODES": (2, float), "TRIANGLES": (3, int), "BOUNDARY": (3, int)}
    data = {}
    current = None
    remaining = 0
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        if remaining == 0:
            if tok[0] not in sections or len(tok) != 2:
                raise MeshParseError(f"line {lineno}: expected a section header, got {raw!r}")
            if tok[0] in data:
                raise MeshParseError(f"line {lineno}: duplicate section {tok[0]}")
            try:
                remaining = int(tok[1])
            except ValueError:
                raise MeshParseError(f"line {lineno}: bad count {tok[1]!r}") from None
            if remaining < 0:
                raise MeshParseError(f"line {lineno}: negative count")
            current = tok[0]
            data[current] = []
            continue
        width, kind = sections[current]
        if len(tok) != width:
            raise MeshParseError(f"line {lineno}: expected {width} values in {current}")
        try:
            data[current].append([kind(x) for x in tok])
        except ValueError:
            raise MeshParseError(f"line {lineno}: cannot parse {raw!r}") from None
        remaining -= 1
    if remaining:
        raise MeshParseError(f"end of file inside {current} ({remaining} rows missing)")
    missing = set(sections) - set(data)
    if missing:
        raise MeshParseError(f"missing section(s): {', '.join(sorted(missing))}")
    bnd = np.asarray(data["BOUNDARY"], dtype=np.int64).reshape(-1, 3)
    return Mesh(
        np.asarray(data["NODES"], dtype=float).reshape(-1, 2),
        np.asarray(data["TRIANGLES"], dtype=np.int64).reshape(-1, 3),
        bnd[:, :2],
        bnd[:, 2],
    )


def mesh_io(path, mode="read", mesh=None) -> Mesh:
    """Read or write a mesh file; returns the mesh in both modes."""
    if mode == "read":
        return read_mesh(path)
    if mode == "write":
        if mesh is None:
            raise ValueError("write mode needs a mesh")
        write_mesh(path, mesh)
        return mesh
    raise ValueError(f"mode must be 'read' or 'write', not {mode!r}")


# -- field transfer -------------------------------------------------------


def locate_points(mesh: Mesh, points, tol=1e-12) -> np.ndarray:
    """Index of a triangle containing each point, ``-1`` if none does."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    p = mesh.vertices[mesh.triangles]
    x0 = p[:, 0]
    e1 = p[:, 1] - x0
    e2 = p[:, 2] - x0
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    out = np.full(len(pts), -1, dtype=np.int64)
    chunk = max(1, 2_000_000 // max(mesh.num_triangles, 1))
    for s in range(0, len(pts), chunk):
        q = pts[s:s + chunk, None, :] - x0[None]
        l1 = (q[..., 0] * e2[:, 1] - q[..., 1] * e2[:, 0]) / det
        l2 = (e1[:, 0] * q[..., 1] - e1[:, 1] * q[..., 0]) / det
        inside = (l1 >= -tol) & (l2 >= -tol) & (l1 + l2 <= 1 + tol)
        hit = inside.any(axis=1)
        out[s:s + chunk] = np.where(hit, inside.argmax(axis=1), -1)
    return out


def project_field(src: Mesh, values, dst: Mesh) -> np.ndarray:
    """Transfer a per-triangle field by sampling ``src`` at ``dst`` centroids.

    Centroids falling outside ``src`` (the polygonal boundaries differ) take
    the value of the nearest ``src`` centroid.
    """
    values = np.asarray(values, dtype=float)
    if src.num_triangles == 0 or dst.num_triangles == 0:
        raise MeshError("empty mesh")
    if values.shape != (src.num_triangles,):
        raise ValueError("field must have one value per source triangle")
    if src is dst:
        return values.copy()
    idx = locate_points(src, dst.centroids)
    miss = idx < 0
    if miss.any():
        _, near = cKDTree(src.centroids).query(dst.centroids[miss])
        idx[miss] = near
    return values[idx]
