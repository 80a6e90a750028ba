"""Rasterization charts and cubical complexes from membership masks.

A chart carries a tensor grid (optionally graded toward prescribed
coordinates, so exponentially thin semi-flow structures stay resolvable),
maps grid geometry onto the manifold, and turns membership oracles into
cubical chain complexes for the exact homology backend.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .homology import ChainComplex


# ---------------------------------------------------------------------------
# graded 1-D partitions


def graded_partition(lo, hi, n, refine_at=(), h_min=None, ratio=1.7, periodic=False):
    """Edges of a partition of [lo, hi] with ~n cells.

    Near each coordinate in `refine_at` the spacing shrinks geometrically to
    h_min, so features of width >= h_min are resolved regardless of how thin
    they are compared to the uniform spacing.
    """
    length = hi - lo
    h_uniform = length / n
    if h_min is None:
        h_min = min(h_uniform, 1e-8 * length)
    h_min = min(h_min, h_uniform)

    special = set()
    for p in refine_at:
        q = p
        if periodic:
            q = lo + (p - lo) % length
        if not periodic:
            q = min(max(q, lo), hi)
        special.add(q)
        d = h_min
        while d < 3.0 * h_uniform:
            for s in (q - d, q + d):
                v = s
                if periodic:
                    v = lo + (v - lo) % length
                    special.add(v)
                elif lo < v < hi:
                    special.add(v)
            d *= ratio

    edges = set(np.linspace(lo, hi, n + 1)) | special
    edges = sorted(edges)
    if periodic:
        edges = [e for e in edges if e < hi - 1e-15 * max(1.0, abs(hi))]
    # drop near-duplicate edges (closer than h_min/4), keep endpoints
    out = [edges[0]]
    for e in edges[1:]:
        if e - out[-1] >= 0.20 * h_min:
            out.append(e)
    if not periodic and out[-1] != hi:
        if hi - out[-1] < 0.20 * h_min:
            out[-1] = hi
        else:
            out.append(hi)
    arr = np.asarray(out, dtype=float)
    if periodic:
        arr = np.append(arr, arr[0] + length)
    return arr


@dataclass
class Axis:
    edges: np.ndarray  # length n_cells + 1; for periodic, edges[-1]=edges[0]+L
    periodic: bool

    @property
    def n_cells(self):
        return len(self.edges) - 1

    @property
    def n_vertices(self):
        return self.n_cells if self.periodic else self.n_cells + 1

    def vertex_coord(self, i):
        return self.edges[i % self.n_cells] if self.periodic else self.edges[i]


# ---------------------------------------------------------------------------
# charts


class BoxChart:
    """Tensor-product chart on a box, axes optionally periodic.

    `embed` maps an (m, dim) array of chart coordinates to manifold points
    (defaults to the identity for flat quotient systems).
    """

    def __init__(self, axes, embed=None, pullback=None, name="box"):
        self.axes = list(axes)
        self.dim = len(self.axes)
        self.embed = embed if embed is not None else (lambda X: X)
        self.pullback = pullback if pullback is not None else (lambda P: P)
        self.name = name

    def contains(self, X):
        ok = np.ones(len(X), dtype=bool)
        for d, ax in enumerate(self.axes):
            if not ax.periodic:
                ok &= (X[:, d] >= ax.edges[0]) & (X[:, d] <= ax.edges[-1])
        return ok

    # -- lattice enumeration ------------------------------------------------

    def top_cells(self):
        ranges = [range(ax.n_cells) for ax in self.axes]
        ext = (1,) * self.dim
        return [(idx, ext) for idx in itertools.product(*ranges)]

    def cell_faces(self, key):
        """Faces with incidence signs: standard tensor-product boundary."""
        idx, ext = key
        faces = []
        pos = 0
        for d in range(self.dim):
            if ext[d] == 0:
                continue
            sign = (-1) ** pos
            pos += 1
            low = (idx, ext[:d] + (0,) + ext[d + 1 :])
            up_idx = list(idx)
            up_idx[d] += 1
            ax = self.axes[d]
            if ax.periodic:
                up_idx[d] %= ax.n_cells
            up = (tuple(up_idx), low[1])
            faces.append((up, sign))
            faces.append((low, -sign))
        return faces

    def cell_degree(self, key):
        return sum(key[1])

    def vertex_points(self, keys):
        pts = np.empty((len(keys), self.dim))
        for r, (idx, _) in enumerate(keys):
            for d, ax in enumerate(self.axes):
                pts[r, d] = ax.vertex_coord(idx[d])
        return pts

    def cell_centers(self, keys):
        pts = np.empty((len(keys), self.dim))
        for r, (idx, ext) in enumerate(keys):
            for d, ax in enumerate(self.axes):
                lo = ax.edges[idx[d]]
                hi = ax.edges[idx[d] + ext[d]]
                pts[r, d] = 0.5 * (lo + hi)
        return pts

    def cell_corners(self, key):
        idx, ext = key
        corners = []
        offsets = [range(e + 1) for e in ext]
        for off in itertools.product(*offsets):
            v_idx = list(idx)
            for d in range(self.dim):
                v_idx[d] += off[d]
                ax = self.axes[d]
                if ax.periodic:
                    v_idx[d] %= ax.n_cells
            corners.append((tuple(v_idx), (0,) * self.dim))
        return corners

    def orientation_sign(self, key):
        """Sign of the cell's canonical orientation; +1 for box charts."""
        return 1

    # -- geometry -----------------------------------------------------------

    def locate_vertex(self, x):
        """Nearest lattice vertex key to chart point x."""
        idx = []
        for d, ax in enumerate(self.axes):
            e = ax.edges
            if ax.periodic:
                L = e[-1] - e[0]
                xd = e[0] + (x[d] - e[0]) % L
            else:
                xd = np.clip(x[d], e[0], e[-1])
            i = int(np.argmin(np.abs(e - xd)))
            if ax.periodic:
                i %= ax.n_cells
            idx.append(i)
        return (tuple(idx), (0,) * self.dim)

    def vertex_neighbors(self, vkey):
        idx, _ = vkey
        out = []
        for d, ax in enumerate(self.axes):
            for step in (-1, 1):
                j = list(idx)
                j[d] += step
                if ax.periodic:
                    j[d] %= ax.n_cells
                elif not (0 <= j[d] <= ax.n_cells):
                    continue
                # the edge cell between the two vertices, with +1 when the
                # traversal follows the edge's own orientation
                e_idx = list(idx)
                ext = [0] * self.dim
                ext[d] = 1
                if step == 1:
                    sign = 1
                else:
                    e_idx[d] -= 1
                    if ax.periodic:
                        e_idx[d] %= ax.n_cells
                    sign = -1
                out.append(((tuple(j), (0,) * self.dim), (tuple(e_idx), tuple(ext)), sign))
        return out

    def walk_distance(self, vkey, target):
        """Distance from a vertex to target chart coordinates, periodic-aware."""
        p = self.vertex_points([vkey])[0]
        d = p - np.asarray(target, dtype=float)
        for a, ax in enumerate(self.axes):
            if ax.periodic:
                L = ax.edges[-1] - ax.edges[0]
                d[a] -= L * np.round(d[a] / L)
        return float(np.linalg.norm(d))


class SphereCubeChart:
    """Cubical model of the unit 2-sphere: boundary cells of an axis box.

    Vertices of the lattice boundary of [-1,1]^3 are radially projected onto
    the sphere; the 2-cells of the six faces give an exact cubical S^2.
    """

    dim = 3

    def __init__(self, axes):
        assert len(axes) == 3 and not any(ax.periodic for ax in axes)
        self.axes = list(axes)
        self.name = "sphere-cube"

    def _on_boundary(self, key):
        idx, ext = key
        for d, ax in enumerate(self.axes):
            if ext[d] == 0 and (idx[d] == 0 or idx[d] == ax.n_cells):
                return True
        return False

    def top_cells(self):
        cells = []
        for d in range(3):
            a, b = [e for e in range(3) if e != d]
            for side in (0, self.axes[d].n_cells):
                for ia in range(self.axes[a].n_cells):
                    for ib in range(self.axes[b].n_cells):
                        idx = [0, 0, 0]
                        idx[d] = side
                        idx[a] = ia
                        idx[b] = ib
                        ext = [1, 1, 1]
                        ext[d] = 0
                        cells.append((tuple(idx), tuple(ext)))
        return cells

    def cell_faces(self, key):
        idx, ext = key
        faces = []
        pos = 0
        for d in range(3):
            if ext[d] == 0:
                continue
            sign = (-1) ** pos
            pos += 1
            low = (idx, ext[:d] + (0,) + ext[d + 1 :])
            up_idx = list(idx)
            up_idx[d] += 1
            up = (tuple(up_idx), low[1])
            faces.append((up, sign))
            faces.append((low, -sign))
        return faces

    def cell_degree(self, key):
        return sum(key[1])

    def _raw_vertex(self, idx):
        return np.array([self.axes[d].edges[idx[d]] for d in range(3)])

    def vertex_points(self, keys):
        pts = np.array([self._raw_vertex(idx) for idx, _ in keys])
        return pts / np.linalg.norm(pts, axis=1, keepdims=True)

    def cell_centers(self, keys):
        pts = np.empty((len(keys), 3))
        for r, (idx, ext) in enumerate(keys):
            for d in range(3):
                lo = self.axes[d].edges[idx[d]]
                hi = self.axes[d].edges[idx[d] + ext[d]]
                pts[r, d] = 0.5 * (lo + hi)
        return pts / np.linalg.norm(pts, axis=1, keepdims=True)

    def cell_corners(self, key):
        idx, ext = key
        corners = []
        offsets = [range(e + 1) for e in ext]
        for off in itertools.product(*offsets):
            v_idx = tuple(idx[d] + off[d] for d in range(3))
            corners.append((v_idx, (0, 0, 0)))
        return corners

    def embed(self, X):
        return X / np.linalg.norm(X, axis=1, keepdims=True)

    def orientation_sign(self, key):
        """+1 when the cell's axis orientation agrees with the outward one."""
        idx, ext = key
        d = ext.index(0)
        a, b = [e for e in range(3) if e != d]
        outward = 1 if idx[d] == self.axes[d].n_cells else -1
        # parity of (a, b, d) as a permutation of (0, 1, 2)
        perm = {(0, 1, 2): 1, (1, 2, 0): 1, (2, 0, 1): 1}
        eps = perm.get((a, b, d), -1)
        return eps * outward

    def locate_vertex(self, p):
        """Nearest boundary vertex to unit vector p (radial projection)."""
        q = np.asarray(p, dtype=float)
        q = q / np.linalg.norm(q)
        d = int(np.argmax(np.abs(q)))
        side_hi = q[d] > 0
        scale = 1.0 / abs(q[d])
        face_pt = q * scale  # on the cube surface
        idx = [0, 0, 0]
        for e in range(3):
            ax = self.axes[e]
            if e == d:
                idx[e] = ax.n_cells if side_hi else 0
            else:
                idx[e] = int(np.argmin(np.abs(ax.edges - face_pt[e])))
        return (tuple(idx), (0, 0, 0))

    def vertex_neighbors(self, vkey):
        idx, _ = vkey
        out = []
        for d in range(3):
            ax = self.axes[d]
            for step in (-1, 1):
                j = list(idx)
                j[d] += step
                if not (0 <= j[d] <= ax.n_cells):
                    continue
                e_idx = list(idx)
                ext = [0, 0, 0]
                ext[d] = 1
                sign = 1
                if step == -1:
                    e_idx[d] -= 1
                    sign = -1
                ekey = (tuple(e_idx), tuple(ext))
                if self._on_boundary(ekey) and self._on_boundary((tuple(j), (0, 0, 0))):
                    out.append(((tuple(j), (0, 0, 0)), ekey, sign))
        return out

    def walk_distance(self, vkey, target):
        p = self.vertex_points([vkey])[0]
        return float(np.linalg.norm(p - np.asarray(target, dtype=float)))


# ---------------------------------------------------------------------------
# masks and complexes


class Raster:
    """Membership masks for several nested sets over one chart."""

    def __init__(self, chart, margin_fns, closed_flags=None, band=0.0):
        self.chart = chart
        self.tops = chart.top_cells()
        self.masks = []
        closed_flags = closed_flags or [False] * len(margin_fns)

        corner_keys = {}
        for cell in self.tops:
            for v in chart.cell_corners(cell):
                corner_keys.setdefault(v, len(corner_keys))
        keys = list(corner_keys)
        vpts = chart.embed(chart.vertex_points(keys))
        cpts = chart.embed(chart.cell_centers(self.tops))

        for fn, closed in zip(margin_fns, closed_flags):
            vm = np.asarray(fn(vpts))
            cm = np.asarray(fn(cpts))
            if closed:
                v_in = vm >= -band
                c_in = cm >= -band
            else:
                v_in = vm > band
                c_in = cm > band
            mask = set()
            for i, cell in enumerate(self.tops):
                if not c_in[i]:
                    continue
                if all(v_in[corner_keys[v]] for v in chart.cell_corners(cell)):
                    mask.add(cell)
            self.masks.append(mask)

    def nested_masks(self):
        """Force inclusion order mask[i+1] subset of mask[i]."""
        for i in range(len(self.masks) - 1):
            self.masks[i + 1] &= self.masks[i]
        return self.masks


def closure_cells(chart, top_keys):
    """All cells of the closure of a set of top cells, by degree."""
    out = {}
    seen = set()
    stack = list(top_keys)
    while stack:
        key = stack.pop()
        if key in seen:
            continue
        seen.add(key)
        out.setdefault(chart.cell_degree(key), set()).add(key)
        for face, _ in chart.cell_faces(key):
            if face not in seen:
                stack.append(face)
    return out


def complex_from_cells(chart, cells_by_degree):
    cx = ChainComplex()
    for q in sorted(cells_by_degree):
        lower = cells_by_degree.get(q - 1, set())
        for cell in cells_by_degree[q]:
            bnd = {}
            for face, sign in chart.cell_faces(cell):
                if q - 1 >= 0 and face in lower:
                    bnd[face] = bnd.get(face, 0) + sign
            cx.add_cell(q, cell, bnd)
    return cx


def full_complex(chart):
    return complex_from_cells(chart, closure_cells(chart, chart.top_cells()))


# ---------------------------------------------------------------------------
# chains from geometric data


def path_chain(chart, samples, locate=None):
    """Oriented 1-chain along a sampled curve, snapped to lattice vertices.

    Consecutive snapped vertices are joined by greedy walks through lattice
    edges; the chain's boundary is (last vertex) - (first vertex).
    """
    locate = locate or chart.locate_vertex
    verts = []
    for p in samples:
        v = locate(p)
        if not verts or v != verts[-1]:
            verts.append(v)
    chain = {}

    for (u, v), target in zip(zip(verts, verts[1:]), samples[1:]):
        cur = u
        guard = 0
        while cur != v:
            best = None
            for (nv, edge, sign) in chart.vertex_neighbors(cur):
                d = chart.walk_distance(nv, target)
                if best is None or d < best[0]:
                    best = (d, nv, edge, sign)
            _, nv, edge, sign = best
            chain[edge] = chain.get(edge, 0) + sign
            if chain[edge] == 0:
                del chain[edge]
            cur = nv
            guard += 1
            if guard > 10000:
                raise RuntimeError("path snapping failed to reach target vertex")
    return chain, verts[0], verts[-1]


def area_chain(chart, margin_fn, sign=1, band=0.0):
    """Oriented 2-chain of all top cells strictly inside a membership margin."""
    tops = chart.top_cells()
    corner_keys = {}
    for cell in tops:
        for v in chart.cell_corners(cell):
            corner_keys.setdefault(v, len(corner_keys))
    keys = list(corner_keys)
    vm = np.asarray(margin_fn(chart.embed(chart.vertex_points(keys))))
    cm = np.asarray(margin_fn(chart.embed(chart.cell_centers(tops))))
    chain = {}
    for i, cell in enumerate(tops):
        if cm[i] <= band:
            continue
        if all(vm[corner_keys[v]] > band for v in chart.cell_corners(cell)):
            chain[cell] = sign * chart.orientation_sign(cell)
    return chain
