"""Integer Morse chain complex from oriented generators and connection signs.

One representative generator per critical point (the +1 orientation relative
to its stored eigenframe); the opposite orientation acts as the negative, so
the sign relation is built into the coefficient arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, VerificationError
from .homology import ChainComplex, HomologyGroup, HomologySolver, mat_mul, zeros


@dataclass
class OrientedChainComplex:
    level: float
    generators_by_degree: dict  # k -> ordered list of critical ids
    boundary: dict  # k -> integer matrix, rows = degree k-1, cols = degree k
    system_name: str = ""
    flips: frozenset = frozenset()

    def degrees(self):
        return sorted(self.generators_by_degree)

    @property
    def max_degree(self):
        return max(self.generators_by_degree, default=0)

    def generator_count(self, k):
        return len(self.generators_by_degree.get(k, ()))

    def to_chain_complex(self):
        cx = ChainComplex()
        for k in self.degrees():
            gens = self.generators_by_degree[k]
            below = self.generators_by_degree.get(k - 1, [])
            mat = self.boundary.get(k)
            for j, cid in enumerate(gens):
                bnd = {}
                if mat is not None and below:
                    for i, rid in enumerate(below):
                        if mat[i][j]:
                            bnd[rid] = mat[i][j]
                cx.add_cell(k, cid, bnd)
        return cx


def build_complex(registry, connections, level=None, flips=()):
    """Assemble boundary matrices from a registry and transported signs.

    `flips` lists critical ids whose default orientation is reversed, which
    conjugates the matrices by a diagonal +-1 change of basis.  Verifies
    d o d = 0 in exact arithmetic.
    """
    level = registry.level if level is None else level
    pts = [c for c in registry.points if c.value <= level]
    ids = {c.id for c in pts}
    flips = frozenset(flips)

    for c in pts:
        if c.index >= 1 and c.id not in connections.mesh_stats:
            raise InputError(f"no connection data for source {c.id}")

    gens = {}
    for c in sorted(pts, key=lambda c: (c.index, c.value, c.id)):
        gens.setdefault(c.index, []).append(c.id)

    def osign(cid):
        return -1 if cid in flips else 1

    boundary = {}
    for k in sorted(gens):
        if k == 0:
            continue
        rows = gens.get(k - 1, [])
        cols = gens[k]
        mat = zeros(len(rows), len(cols))
        row_of = {cid: i for i, cid in enumerate(rows)}
        for j, cid in enumerate(cols):
            for (src, tgt), conns in connections.by_pair.items():
                if src != cid or tgt not in ids:
                    continue
                for conn in conns:
                    mat[row_of[tgt]][j] += conn.sign * osign(src) * osign(tgt)
        boundary[k] = mat

    cx = OrientedChainComplex(
        level=level,
        generators_by_degree=gens,
        boundary=boundary,
        system_name=registry.system_name,
        flips=flips,
    )
    verify_dd_zero(cx)
    return cx


def verify_dd_zero(cx):
    """Exact integer check of the square-zero identity in every degree."""
    for k in cx.degrees():
        if k - 1 in cx.boundary and k in cx.boundary:
            prod = mat_mul(cx.boundary[k - 1], cx.boundary[k])
            if any(any(v != 0 for v in row) for row in prod):
                raise VerificationError(
                    f"boundary composition is nonzero in degree {k} of "
                    f"{cx.system_name}: {prod}"
                )
    return True


def homology(cx):
    """Betti numbers and torsion per degree (Smith normal form over Z)."""
    solver = HomologySolver(cx.to_chain_complex())
    out = []
    for k in range(cx.max_degree + 1):
        g = solver.group(k)
        out.append(HomologyGroup(k, g.betti, list(g.torsion)))
    return out


def homology_solver(cx):
    return HomologySolver(cx.to_chain_complex())


def sublevel_inclusion(cx_b, cx_a):
    """Chain inclusion of the sublevel subcomplex and the induced maps.

    Returns (inclusion matrices per degree, induced homology matrices per
    degree); generators of the lower complex must be a subset of the upper
    one, and the inclusion must be a chain map in exact arithmetic.
    """
    if cx_b.level > cx_a.level:
        raise InputError("sublevel inclusion requires level_b <= level_a")
    incl = {}
    for k in cx_b.degrees():
        sub = cx_b.generators_by_degree[k]
        sup = cx_a.generators_by_degree.get(k, [])
        if not set(sub) <= set(sup):
            raise InputError(f"degree-{k} generators of the sublevel complex "
                             "are not a subset of the upper complex")
        mat = zeros(len(sup), len(sub))
        pos = {cid: i for i, cid in enumerate(sup)}
        for j, cid in enumerate(sub):
            mat[pos[cid]][j] = 1
        incl[k] = mat

    # chain map: incl_{k-1} d^b_k = d^a_k incl_k
    for k in cx_b.degrees():
        if k == 0:
            continue
        lhs = mat_mul(incl.get(k - 1, []), cx_b.boundary.get(k, []))
        rhs = mat_mul(cx_a.boundary.get(k, []), incl.get(k, []))
        if lhs != rhs:
            raise InputError(f"inclusion is not a chain map in degree {k}")

    solver_b = homology_solver(cx_b)
    solver_a = homology_solver(cx_a)
    induced = {}
    for k in range(cx_b.max_degree + 1):
        cols = []
        for rep, _ in solver_b.basis(k):
            cols.append(solver_a.express(k, dict(rep)))
        rows = solver_a.group(k).betti + len(solver_a.group(k).torsion)
        induced[k] = [[cols[j][i] for j in range(len(cols))] for i in range(rows)]
    return incl, induced
