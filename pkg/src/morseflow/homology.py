"""Exact integer homology backend.

Chain complexes with integer coefficients, Smith normal form with unimodular
transforms, elementary-pair reduction with a replay log (so homology classes
of arbitrary cycles can be expressed in the computed bases), and the
connecting / induced map machinery used by the cellular-filtration checks.

All arithmetic is on Python ints, so there is no overflow anywhere.
"""

from __future__ import annotations

from dataclasses import dataclass, field


# ---------------------------------------------------------------------------
# dense integer matrices (lists of lists of python ints)


def zeros(m, n):
    return [[0] * n for _ in range(m)]


def eye(n):
    return [[1 if i == j else 0 for j in range(n)] for i in range(n)]


def mat_mul(A, B):
    m, k = len(A), len(B)
    n = len(B[0]) if B else 0
    out = zeros(m, n)
    for i in range(m):
        Ai = A[i]
        oi = out[i]
        for l in range(k):
            a = Ai[l]
            if a:
                Bl = B[l]
                for j in range(n):
                    if Bl[j]:
                        oi[j] += a * Bl[j]
    return out


def mat_vec(A, v):
    return [sum(a * x for a, x in zip(row, v) if a and x) for row in A]


def transpose(A):
    return [list(col) for col in zip(*A)] if A else []


def det_bareiss(A):
    """Exact determinant via fraction-free Gaussian elimination."""
    n = len(A)
    if n == 0:
        return 1
    M = [row[:] for row in A]
    sign = 1
    prev = 1
    for k in range(n - 1):
        if M[k][k] == 0:
            for i in range(k + 1, n):
                if M[i][k]:
                    M[k], M[i] = M[i], M[k]
                    sign = -sign
                    break
            else:
                return 0
        for i in range(k + 1, n):
            for j in range(k + 1, n):
                M[i][j] = (M[i][j] * M[k][k] - M[i][k] * M[k][j]) // prev
        prev = M[k][k]
    return sign * M[n - 1][n - 1]


# ---------------------------------------------------------------------------
# Smith normal form


@dataclass
class SNFResult:
    """U @ A @ V = D with U, V unimodular; D diagonal, factors divide."""

    D: list
    U: list
    V: list
    Uinv: list
    Vinv: list
    rank: int

    @property
    def invariant_factors(self):
        return [self.D[i][i] for i in range(self.rank)]


def smith_normal_form(A):
    """Exact Smith normal form of an integer matrix (list of rows).

    Returns an SNFResult; smallest-pivot selection keeps intermediate entry
    growth in check.  Raises nothing: Python ints never overflow.
    """
    m = len(A)
    n = len(A[0]) if m else 0
    M = [[int(x) for x in row] for row in A]
    U, Uinv = eye(m), eye(m)
    V, Vinv = eye(n), eye(n)

    def row_swap(i, j):
        M[i], M[j] = M[j], M[i]
        U[i], U[j] = U[j], U[i]
        for r in Uinv:
            r[i], r[j] = r[j], r[i]

    def col_swap(i, j):
        for r in M:
            r[i], r[j] = r[j], r[i]
        for r in V:
            r[i], r[j] = r[j], r[i]
        Vinv[i], Vinv[j] = Vinv[j], Vinv[i]

    def row_add(i, j, q):
        # row i += q * row j
        if q == 0:
            return
        M[i] = [a + q * b for a, b in zip(M[i], M[j])]
        U[i] = [a + q * b for a, b in zip(U[i], U[j])]
        for r in Uinv:
            r[j] -= q * r[i]

    def col_add(i, j, q):
        # col i += q * col j
        if q == 0:
            return
        for r in M:
            r[i] += q * r[j]
        for r in V:
            r[i] += q * r[j]
        Vinv[j] = [a - q * b for a, b in zip(Vinv[j], Vinv[i])]

    def row_negate(i):
        M[i] = [-a for a in M[i]]
        U[i] = [-a for a in U[i]]
        for r in Uinv:
            r[i] = -r[i]

    t = 0
    while True:
        # smallest nonzero entry in the trailing block
        pivot = None
        best = None
        for i in range(t, m):
            for j in range(t, n):
                a = M[i][j]
                if a and (best is None or abs(a) < best):
                    best = abs(a)
                    pivot = (i, j)
                    if best == 1:
                        break
            if best == 1:
                break
        if pivot is None:
            break
        i, j = pivot
        if i != t:
            row_swap(t, i)
        if j != t:
            col_swap(t, j)
        if M[t][t] < 0:
            row_negate(t)

        clean = True
        for i in range(t + 1, m):
            if M[i][t]:
                q = M[i][t] // M[t][t]
                row_add(i, t, -q)
                if M[i][t]:
                    clean = False
        for j in range(t + 1, n):
            if M[t][j]:
                q = M[t][j] // M[t][t]
                col_add(j, t, -q)
                if M[t][j]:
                    clean = False
        if not clean:
            continue

        # divisibility: pivot must divide the trailing block
        p = M[t][t]
        offender = None
        for i in range(t + 1, m):
            for j in range(t + 1, n):
                if M[i][j] % p:
                    offender = i
                    break
            if offender is not None:
                break
        if offender is not None:
            row_add(t, offender, 1)
            continue
        t += 1

    return SNFResult(D=M, U=U, V=V, Uinv=Uinv, Vinv=Vinv, rank=t)


def integer_kernel(A):
    """Basis (as columns) of the integer kernel lattice of A."""
    m = len(A)
    n = len(A[0]) if m else 0
    if n == 0:
        return [], smith_normal_form(A)
    snf = smith_normal_form(A)
    cols = []
    for j in range(snf.rank, n):
        cols.append([snf.V[i][j] for i in range(n)])
    return cols, snf


# ---------------------------------------------------------------------------
# sparse chain complexes and reduction


class ChainComplex:
    """Free chain complex over Z with hashable cell labels per degree.

    Boundary stored column-wise (cell -> faces) and row-wise (cell -> cofaces).
    """

    def __init__(self):
        self.cells = {}  # degree -> set of cells
        self.bnd = {}  # degree -> {cell: {face: coeff}}
        self.cob = {}  # degree -> {cell: {coface: coeff}}

    def add_cell(self, q, cell, boundary=None):
        self.cells.setdefault(q, set()).add(cell)
        self.bnd.setdefault(q, {})[cell] = {}
        self.cob.setdefault(q, {}).setdefault(cell, {})
        if boundary:
            for face, coeff in boundary.items():
                if coeff:
                    self.bnd[q][cell][face] = int(coeff)
                    self.cob.setdefault(q - 1, {}).setdefault(face, {})[cell] = int(coeff)

    def degrees(self):
        return sorted(d for d, cs in self.cells.items() if cs)

    def size(self, q):
        return len(self.cells.get(q, ()))

    def boundary_of_chain(self, q, chain):
        out = {}
        bq = self.bnd.get(q, {})
        for cell, coeff in chain.items():
            for face, inc in bq.get(cell, {}).items():
                v = out.get(face, 0) + coeff * inc
                if v:
                    out[face] = v
                else:
                    out.pop(face, None)
        return out

    def check_dd_zero(self):
        for q in self.degrees():
            for cell in self.cells[q]:
                dd = self.boundary_of_chain(q - 1, self.bnd[q][cell])
                if dd:
                    return False
        return True

    def copy(self):
        other = ChainComplex()
        other.cells = {q: set(cs) for q, cs in self.cells.items()}
        other.bnd = {q: {c: dict(b) for c, b in bb.items()} for q, bb in self.bnd.items()}
        other.cob = {q: {c: dict(b) for c, b in bb.items()} for q, bb in self.cob.items()}
        return other


@dataclass
class ReductionEvent:
    q: int  # degree of the removed face cell a
    a: object
    b: object
    lam: int  # incidence <db, a> = +-1
    row_a: dict  # cofaces of a at removal time (degree q+1 -> coeff)
    col_b: dict  # boundary of b at removal time (degree q -> coeff)


def _remove_cell(cx, q, cell):
    cx.cells[q].discard(cell)
    for face, _ in cx.bnd[q].pop(cell, {}).items():
        row = cx.cob.get(q - 1, {}).get(face)
        if row is not None:
            row.pop(cell, None)
    for cof, _ in cx.cob[q].pop(cell, {}).items():
        col = cx.bnd.get(q + 1, {}).get(cof)
        if col is not None:
            col.pop(cell, None)


def reduce_complex(cx, log=None):
    """Cancel +-1 incident cell pairs in place until none remain.

    Appends ReductionEvents to `log` (if given) so cycles can later be
    projected to the reduced core (or lifted back).  Homology is preserved
    exactly over Z.  Free-face pairs are cancelled first (no fill-in), then
    remaining pairs by lowest fill cost.
    """
    events = log if log is not None else []

    def unit_coface(a, q):
        row = cx.cob.get(q, {}).get(a, {})
        if len(row) == 1:
            (b, lam), = row.items()
            if lam in (1, -1):
                return b, lam
        return None

    def cancel(q, a, b, lam):
        row_a = dict(cx.cob[q][a])
        col_b = dict(cx.bnd[q + 1][b])
        events.append(ReductionEvent(q, a, b, lam, row_a, col_b))
        for c, mu in row_a.items():
            if c == b:
                continue
            coef = mu * lam
            col_c = cx.bnd[q + 1][c]
            for r, nu in col_b.items():
                v = col_c.get(r, 0) - coef * nu
                row_r = cx.cob[q][r]
                if v:
                    col_c[r] = v
                    row_r[c] = v
                else:
                    col_c.pop(r, None)
                    row_r.pop(c, None)
        _remove_cell(cx, q + 1, b)
        _remove_cell(cx, q, a)

    # phase 1: free faces (a has exactly one coface), cascading
    queue = []
    for q in list(cx.cells):
        for a in cx.cells[q]:
            if unit_coface(a, q):
                queue.append((q, a))
    while queue:
        q, a = queue.pop()
        if a not in cx.cells.get(q, ()):
            continue
        hit = unit_coface(a, q)
        if hit is None:
            continue
        b, lam = hit
        neighbors = set()
        for r in cx.bnd[q + 1][b]:
            if r != a:
                neighbors.add((q, r))
        for face in cx.bnd[q][a]:
            neighbors.add((q - 1, face))
        cancel(q, a, b, lam)
        for item in neighbors:
            qq, cell = item
            if cell in cx.cells.get(qq, ()) and unit_coface(cell, qq):
                queue.append(item)

    # phase 2: general +-1 cancellation, cheapest (least fill) first
    import heapq

    heap = []
    for q in list(cx.cells):
        for b in cx.cells[q]:
            col = cx.bnd[q].get(b, {})
            for a, lam in col.items():
                if lam in (1, -1):
                    cost = (len(cx.cob[q - 1][a]) - 1) * (len(col) - 1)
                    heapq.heappush(heap, (cost, q - 1, id(a), id(b), a, b))
    while heap:
        cost, q, _, _, a, b = heapq.heappop(heap)
        if a not in cx.cells.get(q, ()) or b not in cx.cells.get(q + 1, ()):
            continue
        lam = cx.bnd[q + 1][b].get(a, 0)
        if lam not in (1, -1):
            continue
        now = (len(cx.cob[q][a]) - 1) * (len(cx.bnd[q + 1][b]) - 1)
        if now > cost:
            heapq.heappush(heap, (now, q, id(a), id(b), a, b))
            continue
        touched_cols = [c for c in cx.cob[q][a] if c != b]
        cancel(q, a, b, lam)
        for c in touched_cols:
            if c not in cx.cells.get(q + 1, ()):
                continue
            for r, lam2 in cx.bnd[q + 1][c].items():
                if lam2 in (1, -1):
                    cst = (len(cx.cob[q][r]) - 1) * (len(cx.bnd[q + 1][c]) - 1)
                    heapq.heappush(heap, (cst, q, id(r), id(c), r, c))
    return events


def project_cycle(events, deg, chain):
    """Push a cycle of the original complex down to the reduced core."""
    z = dict(chain)
    for ev in events:
        if deg == ev.q:
            mu = z.get(ev.a)
            if mu:
                coef = mu * ev.lam
                for r, nu in ev.col_b.items():
                    v = z.get(r, 0) - coef * nu
                    if v:
                        z[r] = v
                    else:
                        z.pop(r, None)
        elif deg == ev.q + 1:
            z.pop(ev.b, None)
    return z


def lift_cycle(events, deg, chain):
    """Lift a cycle of the reduced core back to the original complex."""
    z = dict(chain)
    for ev in reversed(events):
        if deg == ev.q + 1:
            beta = -ev.lam * sum(z[c] * ev.row_a.get(c, 0) for c in z)
            if beta:
                z[ev.b] = z.get(ev.b, 0) + beta
    return z


# ---------------------------------------------------------------------------
# homology with representatives and class coordinates


@dataclass
class HomologyGroup:
    degree: int
    betti: int
    torsion: list = field(default_factory=list)

    def __eq__(self, other):
        return (self.degree, self.betti, self.torsion) == (
            other.degree,
            other.betti,
            other.torsion,
        )

    def __repr__(self):
        if self.betti == 0 and not self.torsion:
            return f"H_{self.degree} = 0"
        parts = []
        if self.betti:
            parts.append("Z" if self.betti == 1 else f"Z^{self.betti}")
        parts += [f"Z/{d}" for d in self.torsion]
        return f"H_{self.degree} = " + " + ".join(parts)


class _DegreeData:
    def __init__(self, cells, kernel_cols, snf_bnd, snf_img, img_rank):
        self.cells = cells  # ordered core cells of this degree
        self.index = {c: i for i, c in enumerate(cells)}
        self.kernel_cols = kernel_cols  # integer kernel basis of d_k (columns)
        self.snf_bnd = snf_bnd  # SNF of d_k (for kernel coordinates)
        self.snf_img = snf_img  # SNF of image-in-kernel-coords matrix
        self.img_rank = img_rank


class HomologySolver:
    """Homology of a ChainComplex over Z, with class coordinates.

    Reduces the complex once (keeping the replay log), runs exact SNF on the
    small core, and exposes:
      - homology(): betti numbers and torsion per degree
      - basis(k): representative cycles on the original cells
      - express(k, chain): coordinates of a cycle's class in that basis
    """

    def __init__(self, cx):
        self.original = cx
        self.core = cx.copy()
        self.events = reduce_complex(self.core)
        self._data = {}
        self._groups = {}
        degs = set(self.core.cells) | {0}
        self.max_degree = max(degs) if degs else 0
        for q in sorted(self.core.cells):
            if self.core.cells[q]:
                self._build_degree(q)

    def _matrix(self, q, row_cells, col_cells):
        rows = {c: i for i, c in enumerate(row_cells)}
        A = zeros(len(row_cells), len(col_cells))
        for j, c in enumerate(col_cells):
            for face, coeff in self.core.bnd.get(q, {}).get(c, {}).items():
                A[rows[face]][j] = coeff
        return A

    def _build_degree(self, k):
        cells = sorted(self.core.cells.get(k, ()), key=repr)
        below = sorted(self.core.cells.get(k - 1, ()), key=repr)
        above = sorted(self.core.cells.get(k + 1, ()), key=repr)
        d_k = self._matrix(k, below, cells)
        if not below:
            d_k = [[0] * len(cells)]  # zero map with explicit column count
        kernel_cols, snf_bnd = integer_kernel(d_k)
        z = len(kernel_cols)
        d_k1 = self._matrix(k + 1, cells, above)
        # image of d_{k+1} in kernel coordinates: first rank rows of Vinv@col vanish
        Y = zeros(z, len(above))
        if above and z:
            r = snf_bnd.rank
            for j in range(len(above)):
                col = [d_k1[i][j] for i in range(len(cells))]
                y = mat_vec(snf_bnd.Vinv, col)
                for i in range(r):
                    if y[i] != 0:
                        raise ArithmeticError("boundary column is not a cycle")
                for i in range(z):
                    Y[i][j] = y[r + i]
        snf_img = smith_normal_form(Y) if z else None
        img_rank = snf_img.rank if snf_img else 0
        self._data[k] = _DegreeData(cells, kernel_cols, snf_bnd, snf_img, img_rank)

        torsion = []
        if snf_img:
            for i in range(img_rank):
                d = abs(snf_img.D[i][i])
                if d > 1:
                    torsion.append(d)
        self._groups[k] = HomologyGroup(k, betti=z - img_rank, torsion=torsion)

    def homology(self):
        out = []
        for k in range(0, self.max_degree + 1):
            out.append(self._groups.get(k, HomologyGroup(k, 0)))
        return out

    def group(self, k):
        return self._groups.get(k, HomologyGroup(k, 0))

    def _core_basis_chains(self, k):
        """Generator chains on core cells: torsion generators then free."""
        data = self._data.get(k)
        if data is None:
            return [], []
        z = len(data.kernel_cols)
        # columns of K @ Uinv_img span the kernel adapted to the image lattice
        gens = []
        factors = []
        for i in range(z):
            if i < data.img_rank:
                d = abs(data.snf_img.D[i][i])
                if d <= 1:
                    continue
                factors.append(d)
            else:
                factors.append(0)
            coeffs = [
                sum(
                    data.kernel_cols[l][row] * data.snf_img.Uinv[l][i]
                    for l in range(z)
                )
                if data.snf_img
                else data.kernel_cols[i][row]
                for row in range(len(data.cells))
            ]
            chain = {c: v for c, v in zip(data.cells, coeffs) if v}
            gens.append(chain)
        # order: torsion (by factor) first, then free
        order = sorted(range(len(gens)), key=lambda i: (factors[i] == 0, factors[i], i))
        return [gens[i] for i in order], [factors[i] for i in order]

    def basis(self, k):
        """Representative cycles (original cells) with their invariant factors.

        Factor 0 marks a free generator.
        """
        gens, factors = self._core_basis_chains(k)
        return [(lift_cycle(self.events, k, g), f) for g, f in zip(gens, factors)]

    def express(self, k, chain):
        """Coordinates of a cycle's homology class in the basis(k) order.

        Free coordinates are exact integers; torsion coordinates are reduced
        modulo their factor.  Returns a list aligned with basis(k).
        """
        data = self._data.get(k)
        core_chain = project_cycle(self.events, k, chain)
        if data is None:
            if core_chain:
                raise ArithmeticError("nonzero chain in an empty degree")
            return []
        vec = [0] * len(data.cells)
        for c, v in core_chain.items():
            vec[data.index[c]] = v
        y = mat_vec(data.snf_bnd.Vinv, vec)
        r = data.snf_bnd.rank
        for i in range(r):
            if y[i] != 0:
                raise ArithmeticError("chain is not a cycle")
        kercoords = y[r:]
        z = len(kercoords)
        if data.snf_img:
            w = mat_vec(data.snf_img.U, kercoords)
        else:
            w = kercoords
        coords = []
        factors = []
        for i in range(z):
            if i < data.img_rank:
                d = abs(data.snf_img.D[i][i])
                if d <= 1:
                    continue
                coords.append(w[i] % d)
                factors.append(d)
            else:
                coords.append(w[i])
                factors.append(0)
        order = sorted(range(len(coords)), key=lambda i: (factors[i] == 0, factors[i], i))
        return [coords[i] for i in order]


# ---------------------------------------------------------------------------
# relative complexes and the maps of the long exact sequence


def quotient_complex(cx, subcells):
    """Chain complex of the pair: cells of cx not in `subcells` per degree.

    `subcells` maps degree -> set of cells; it must be a subcomplex.
    """
    out = ChainComplex()
    dropped = {q: set(cs) for q, cs in subcells.items()}
    for q in sorted(cx.cells):
        drop_q = dropped.get(q, set())
        drop_f = dropped.get(q - 1, set())
        for cell in cx.cells[q]:
            if cell in drop_q:
                continue
            bnd = {
                f: c
                for f, c in cx.bnd[q][cell].items()
                if f not in drop_f
            }
            out.add_cell(q, cell, bnd)
    return out


def restrict_complex(cx, keep):
    """Subcomplex on the cells in `keep` (degree -> set); must be closed."""
    out = ChainComplex()
    for q in sorted(cx.cells):
        keep_q = keep.get(q, set())
        for cell in cx.cells[q]:
            if cell not in keep_q:
                continue
            for f in cx.bnd[q][cell]:
                if f not in keep.get(q - 1, set()):
                    raise ValueError("keep set is not a subcomplex")
            out.add_cell(q, cell, cx.bnd[q][cell])
    return out


def connecting_and_induced_maps(cx, a_cells, b_cells, k):
    """Maps of the homology sequence of the triple (X, A, B) in degree k.

    Returns (bnd_matrix, j_matrix, solver_XA, solver_A, solver_AB) where
    bnd: H_k(X,A) -> H_{k-1}(A) is the connecting homomorphism and
    j: H_{k-1}(A) -> H_{k-1}(A,B) is induced by the quotient.  Matrices are
    column-per-generator in the solvers' basis orders.
    """
    solver_xa = HomologySolver(quotient_complex(cx, a_cells))
    cx_a = restrict_complex(cx, a_cells)
    solver_a = HomologySolver(cx_a)
    solver_ab = HomologySolver(quotient_complex(cx_a, b_cells))

    bnd_cols = []
    for rep, _ in solver_xa.basis(k):
        dz = cx.boundary_of_chain(k, rep)
        for cell in dz:
            if cell not in a_cells.get(k - 1, set()):
                raise ArithmeticError("relative cycle boundary escapes the subcomplex")
        bnd_cols.append(solver_a.express(k - 1, dz))
    j_cols = []
    for rep, _ in solver_a.basis(k - 1):
        chain = {c: v for c, v in rep.items() if c not in b_cells.get(k - 1, set())}
        j_cols.append(solver_ab.express(k - 1, chain))

    bnd = transpose(bnd_cols) if bnd_cols else []
    j = transpose(j_cols) if j_cols else []
    return bnd, j, solver_xa, solver_a, solver_ab
