"""Semi-flow invariant Morse filtrations and the cellular comparison.

F_{-1} = empty, F_k = preimage under the time-T_{k+1} map of (N_k union
F_{k-1}), with T_{k+1} a sampled uniform entrance time for the exit sets
L_{k+1}.  The cellular machinery rasterizes the pairs (F_k, F_{k-1}),
computes relative homology, realizes each generator as the class of an
oriented unstable disk, and compares the triple boundary operator with the
Morse boundary operator through the disk isomorphism.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .charts import Raster, area_chain, closure_cells, complex_from_cells, path_chain
from .conley import du_disk_membership, sample_block, unit_sphere_mesh
from .connections import descend_to_level, launch_points
from .errors import (
    BasisError,
    ConfigurationError,
    CoverageError,
    InputError,
    RasterizationError,
    ResolutionError,
    VerificationError,
)
from .homology import (
    HomologySolver,
    connecting_and_induced_maps,
    mat_mul,
    quotient_complex,
    restrict_complex,
    transpose,
    zeros,
)
from .semiflow import (
    FlowParams,
    SetOracle,
    empty_set,
    entrance_time_batch,
    flow_batch,
    preimage_oracle,
    record_trajectory,
    whole_space,
)


@dataclass
class Filtration:
    level: float
    F: list  # F[0] = F_{-1} = empty, F[k+1] = F_k, last = whole sublevel
    times: list  # T_1 ... T_{m+1}
    N_by_degree: dict
    L_by_degree: dict
    pairs: dict  # crit id -> ConleyPair
    max_index: int

    def F_k(self, k):
        """F_k with the convention F_{-1} empty and F_l = F_m for l > m."""
        if k < 0:
            return self.F[0]
        return self.F[min(k + 1, len(self.F) - 1)]


@dataclass
class CellularComplex:
    degrees: dict  # k -> list of (betti, torsion tuple) per ell (raw groups)
    generator_counts: dict  # k -> |Crit_k|
    triple_boundary: dict  # k -> integer matrix
    theta: dict  # k -> integer matrix (columns indexed by Morse generators)
    morse_generators: dict  # k -> list of crit ids (Morse complex order)
    verdict: bool = False
    total_homology: list = field(default_factory=list)


def uniform_time(system, A, L_samples, fp=None, safety=1.5):
    """Safety-scaled maximum sampled entrance time of L into A.

    A must be open and semi-flow invariant (membership is absorbing, so
    coarse strides cannot lose an entry event).  A sampled infinite entrance
    time raises CoverageError.
    """
    fp = fp or FlowParams()
    if L_samples is None or len(L_samples) == 0:
        return 0.0, np.zeros(0)
    t = entrance_time_batch(system, A, L_samples, fp, monotone=True)
    if not np.all(np.isfinite(t)):
        bad = int(np.flatnonzero(~np.isfinite(t))[0])
        raise CoverageError(
            f"sampled entrance time into {A.description} is infinite at "
            f"{L_samples[bad]}"
        )
    return safety * float(t.max()), t


def sublevel_space_oracle(system, level):
    if np.isinf(level):
        return whole_space(f"{system.name} (full)")
    return SetOracle(lambda X: level - system.objective(X),
                     f"{{S <= {level:.6g}}}", closed=True)


def _union(oracles, name):
    live = [o for o in oracles if o is not None]
    if not live:
        return empty_set(name)
    out = live[0]
    for o in live[1:]:
        out = out.union(o)
    out.description = name
    return out


def separatrix_adjacent_bank(system, registry, pairs, connections, fp=None,
                             n_offsets=10):
    """Exit-set samples hugging the separatrix directions of each source.

    Uniform-time estimation by plain sampling misses the exponentially thin
    wedges along stable manifolds; entrance times only decrease along
    orbits, so descending-sphere points at geometrically graded offsets from
    each basin-boundary parameter (and their backward images inside the exit
    set) dominate the entrance times of the whole wedge.
    """
    from .semiflow import backward_flow_unstable

    fp = fp or FlowParams()
    sphere_bank = []
    exit_bank = {}
    if connections is None:
        return sphere_bank, exit_bank
    for (src, _tgt), conns in connections.by_pair.items():
        x = registry.by_id(src)
        if x.index < 2:
            continue
        pair = pairs[x.id]
        tau = pair.params.tau
        offs = np.geomspace(1e-12, 5e-2, n_offsets)
        for conn in conns:
            alpha = float(np.arctan2(conn.crossing_param[1], conn.crossing_param[0]))
            als = np.concatenate([alpha + offs, alpha - offs])
            dirs = np.stack([np.cos(als), np.sin(als)], axis=1)
            seeds = launch_points(system, x, dirs, 1e-3)
            sphere, _ = descend_to_level(system, x, seeds, pair.params.epsilon, fp)
            sphere_bank.append(sphere)
            back = np.array(
                [backward_flow_unstable(system, x, q, 1.5 * tau, fp, flow_tol=1e-4)
                 for q in sphere]
            )
            keep = pair.L.contains(back)
            if keep.any():
                exit_bank.setdefault(x.id, []).append(back[keep])
    sphere_bank = np.vstack(sphere_bank) if sphere_bank else np.zeros((0, system.ambient_dim))
    exit_bank = {k: np.vstack(v) for k, v in exit_bank.items()}
    return sphere_bank, exit_bank


def build_filtration(system, registry, pairs, connections=None, fp=None,
                     n_samples=160, seed=0, times=None):
    """Nested open semi-flow-invariant sets by iterated preimages.

    `pairs` maps critical id -> ConleyPair; blocks of distinct points must be
    disjoint (guaranteed by isolation at the chosen radii).  Passing `times`
    reuses previously computed uniform times (the sublevel-compatible
    construction).  Connection data sharpens the uniform-time certificates
    with separatrix-adjacent exit samples.
    """
    fp = fp or FlowParams()
    rng = np.random.default_rng(seed)
    m = registry.max_index
    if m < 0:
        raise InputError("empty registry")
    sphere_bank, exit_bank = separatrix_adjacent_bank(
        system, registry, pairs, connections, fp
    )

    N_by, L_by = {}, {}
    for k in range(m + 1):
        crits = registry.of_index(k)
        N_by[k] = _union([pairs[c.id].N for c in crits], f"N_{k}")
        L_by[k] = _union(
            [pairs[c.id].L for c in crits if c.index > 0], f"L_{k}"
        )
        if k == 0:
            L_by[k] = empty_set("L_0")

    def sample_exit(k, n):
        crits = registry.of_index(k)
        if not crits or k == 0:
            return np.zeros((0, system.ambient_dim))
        out = []
        for c in crits:
            pair = pairs[c.id]
            block = sample_block(system, pair, 6 * n, rng)
            inL = pair.L.contains(block)
            pts = block[inL]
            if len(pts) < n // 2:
                raise CoverageError(f"exit-set sampling starved for {c.id}")
            out.append(pts[:n])
            if c.id in exit_bank:
                out.append(exit_bank[c.id])
        return np.vstack(out)

    F = [empty_set("F_-1")]
    computed_times = []
    current = None  # oracle for F_{k-1}
    for k in range(m + 1):
        A = N_by[k] if current is None else _union([N_by[k], current], f"A_{k}")
        if k < m:
            L_next = sample_exit(k + 1, n_samples)
            if times is not None:
                T = times[k]
            else:
                T, _ = uniform_time(system, A, L_next, fp)
        else:
            if np.isinf(registry.level):
                samples = system.random_points(rng, n_samples)
            else:
                samples = []
                while len(samples) < n_samples:
                    X = system.random_points(rng, 4 * n_samples)
                    X = X[system.objective(X) <= registry.level]
                    samples.extend(X)
                samples = np.array(samples[:n_samples])
            if len(sphere_bank):
                keep = system.objective(sphere_bank) <= registry.level
                samples = np.vstack([samples, sphere_bank[keep]])
            if times is not None:
                T = times[k]
            else:
                T, _ = uniform_time(system, A, samples, fp)
        Fk = preimage_oracle(system, A, T, fp)
        Fk.description = f"F_{k} = preimage(T={T:.4g}, {A.description})"
        F.append(Fk)
        computed_times.append(T)
        current = Fk

    filt = Filtration(
        level=registry.level,
        F=F,
        times=computed_times,
        N_by_degree=N_by,
        L_by_degree=L_by,
        pairs=pairs,
        max_index=m,
    )
    verify_filtration(system, registry, filt, fp, n_samples=n_samples, seed=seed + 1)
    return filt


def verify_filtration(system, registry, filt, fp=None, n_samples=200, seed=1,
                      flow_times=(0.05, 0.2, 0.8, 2.0, 5.0)):
    """Sampled certificates: nesting, invariance, exit-set containment,
    critical-point membership.  Raises VerificationError on any violation."""
    fp = fp or FlowParams()
    rng = np.random.default_rng(seed)
    m = filt.max_index
    if np.isinf(registry.level):
        X = system.random_points(rng, n_samples)
    else:
        X = []
        while len(X) < n_samples:
            P = system.random_points(rng, 4 * n_samples)
            X.extend(P[system.objective(P) <= registry.level])
        X = np.array(X[:n_samples])

    # nesting on samples
    for k in range(0, m + 1):
        lo = filt.F_k(k - 1).contains(X)
        hi = filt.F_k(k).contains(X)
        if np.any(lo & ~hi):
            raise VerificationError(f"nesting violated: F_{k-1} not inside F_{k}")

    # semi-flow invariance on samples
    for k in range(0, m + 1):
        inside = X[filt.F_k(k).contains(X)]
        for s in flow_times:
            if len(inside) == 0:
                break
            Y, _, _ = flow_batch(system, inside, s, fp)
            if not filt.F_k(k).contains(Y).all():
                raise VerificationError(
                    f"semi-flow invariance violated for F_{k} at s={s}"
                )

    # L_{k+1} inside F_k
    for k in range(0, m):
        crits = registry.of_index(k + 1)
        for c in crits:
            pair = filt.pairs[c.id]
            block = sample_block(system, pair, 200, rng)
            pts = block[pair.L.contains(block)]
            if len(pts) and not filt.F_k(k).contains(pts).all():
                raise VerificationError(f"exit set of {c.id} escapes F_{k}")

    # critical points: F_k contains exactly Crit_{<= k}
    for k in range(0, m + 1):
        for c in registry.points:
            inside = filt.F_k(k).contains(c.location[None])[0]
            if c.index <= k and not inside:
                raise VerificationError(f"{c.id} missing from F_{k}")
            if c.index > k and inside:
                raise VerificationError(f"{c.id} of index {c.index} inside F_{k}")
    return True


# ---------------------------------------------------------------------------
# rasterization hints and the cellular complex


def raster_hints(system, registry):
    """Per-axis refinement coordinates for the thin preimage structures.

    Thin wedges hug the stable manifolds of positive-index points; for
    axis-aligned unstable eigenvectors those are coordinate lines, so the
    transverse axis is graded at the critical coordinate.
    """
    hints = {}
    if system.name.startswith("sphere2"):
        for c in registry.points:
            if c.index == 0:
                continue
            p = c.location
            dmax = int(np.argmax(np.abs(p)))
            q = p / np.abs(p[dmax])
            for d in range(3):
                if d != dmax:
                    hints.setdefault(d, []).append(float(q[d]))
        return hints
    for c in registry.points:
        if c.index == 0:
            continue
        for v in c.neg_frame:
            d = int(np.argmax(np.abs(v)))
            if abs(v[d]) > 0.99 * np.linalg.norm(v):
                hints.setdefault(d, []).append(float(c.location[d]))
    return hints


def _disk_curve_samples(system, x, pair, fp, n=400):
    """Ordered samples of the 1-disk D^u_x from one backward end to the other.

    Traverses in the direction of the stored unstable eigenvector, which is
    the +1 orientation of the generator.
    """
    from .semiflow import backward_flow_unstable

    eps, tau = pair.params.epsilon, pair.params.tau
    seeds = launch_points(system, x, np.array([[1.0], [-1.0]]), 1e-3)
    sphere, _ = descend_to_level(system, x, seeds, eps, fp)
    ends = [backward_flow_unstable(system, x, q, 2 * tau, fp) for q in sphere]
    vals = system.objective(np.array(ends))

    def branch(i):
        stopv = vals[i]

        def stop(X):
            return system.objective(X) < stopv

        traj = record_trajectory(system, seeds[i][None], fp, t_end=fp.max_time,
                                 stop_fn=stop)
        pts = traj.points
        keep = system.objective(pts) >= stopv
        pts = pts[keep]
        return np.vstack([pts, ends[i][None]])

    plus = branch(0)
    minus = branch(1)
    return np.vstack([minus[::-1], x.location[None], plus])


def _orientation_sign_at(system, chart, x):
    """Sign of det(neg_frame) against the chart/outward orientation at x."""
    if x.index == 0:
        return 1
    if x.index == 1:
        return 1  # traversal direction already encodes the orientation
    v1, v2 = x.neg_frame[0], x.neg_frame[1]
    if system.name.startswith("sphere2"):
        n_out = x.location
        return 1 if np.linalg.det(np.vstack([v1, v2, n_out])) > 0 else -1
    return 1 if np.linalg.det(np.vstack([v1, v2])) > 0 else -1


def cellular_homology(system, registry, filt, connections=None, grid_n=128,
                      fp=None, check_concentration=True):
    """Rasterized cellular complex of the filtration with disk generators.

    Computes H_ell(F_k, F_{k-1}) for all ell, the triple boundary operator
    via the connecting homomorphism of the rasterized triples, and the theta
    matrices expressing each oriented disk class in the computed bases.
    """
    if system.dim > 2:
        raise ConfigurationError("cubical backend is gated to manifold dimension <= 2")
    fp = fp or FlowParams()
    m = filt.max_index
    hints = raster_hints(system, registry)
    chart = system.global_chart(grid_n, refine_axes=hints)

    margins = [filt.F_k(k).margin for k in range(m, -1, -1)]
    raster = Raster(chart, margins)
    masks = raster.nested_masks()[::-1]  # masks[k] = top cells of F_k

    cell_sets = [closure_cells(chart, mk) for mk in masks]
    full_cx = complex_from_cells(chart, cell_sets[-1])

    pair_solvers = {}
    abs_solvers = {}
    groups = {}
    for k in range(0, m + 1):
        below = cell_sets[k - 1] if k >= 1 else {}
        cx_k = restrict_complex(full_cx, cell_sets[k]) if k < m else full_cx
        solver = HomologySolver(quotient_complex(cx_k, below))
        pair_solvers[k] = (solver, cx_k, below)
        groups[k] = [(g.betti, tuple(g.torsion)) for g in solver.homology()]
        if check_concentration:
            want = len(registry.of_index(k))
            for ell, (betti, torsion) in enumerate(groups[k]):
                expect = want if ell == k else 0
                if betti != expect or torsion:
                    raise ResolutionError(
                        f"relative homology of (F_{k}, F_{k-1}) has rank "
                        f"{betti} torsion {list(torsion)} in degree {ell}; "
                        f"expected {expect}"
                    )

    # triple boundary via connecting homomorphism then quotient projection
    triple = {}
    for k in range(0, m + 1):
        solver_k, cx_k, below_k = pair_solvers[k]
        nk = solver_k.group(k).betti
        if k == 0 or nk == 0:
            triple[k] = zeros(
                pair_solvers[k - 1][0].group(k - 1).betti if k >= 1 else 0, nk
            )
            continue
        cx_below = restrict_complex(full_cx, cell_sets[k - 1])
        solver_abs = HomologySolver(cx_below)
        abs_solvers[k - 1] = solver_abs
        below_2 = cell_sets[k - 2] if k >= 2 else {}
        solver_rel, _, _ = pair_solvers[k - 1]
        cols = []
        for rep, _f in solver_k.basis(k):
            dz = cx_k.boundary_of_chain(k, rep)
            coords_abs = solver_abs.express(k - 1, dz)
            # j_*: push each absolute basis rep into the pair complex
            total = [0] * (solver_rel.group(k - 1).betti + len(solver_rel.group(k - 1).torsion))
            for coef, (arep, _fac) in zip(coords_abs, solver_abs.basis(k - 1)):
                if coef == 0:
                    continue
                chain = {c: v for c, v in arep.items()
                         if c not in below_2.get(k - 1, set())}
                expr = solver_rel.express(k - 1, chain)
                total = [t + coef * e for t, e in zip(total, expr)]
            cols.append(total)
        triple[k] = transpose(cols) if cols else []

    # theta: disk classes in the pair bases
    theta = {}
    morse_gens = {}
    for k in range(0, m + 1):
        crits = sorted(registry.of_index(k), key=lambda c: (c.value, c.id))
        morse_gens[k] = [c.id for c in crits]
        solver_k, cx_k, below_k = pair_solvers[k]
        cols = []
        for x in crits:
            pair = filt.pairs[x.id]
            chain = _disk_chain(system, chart, x, pair, cell_sets, k, fp)
            # quotient map: drop the F_{k-1} part of the chain
            chain = {c: v for c, v in chain.items()
                     if c not in below_k.get(k, set())}
            try:
                expr = solver_k.express(k, chain)
            except ArithmeticError as e:
                raise RasterizationError(
                    f"disk class of {x.id} is not a relative cycle on the "
                    f"grid: {e}"
                ) from e
            if all(v == 0 for v in expr):
                raise RasterizationError(f"disk class of {x.id} pairs to zero")
            cols.append(expr)
        theta[k] = transpose(cols) if cols else zeros(solver_k.group(k).betti, 0)

    cellx = CellularComplex(
        degrees=groups,
        generator_counts={k: len(registry.of_index(k)) for k in range(m + 1)},
        triple_boundary=triple,
        theta=theta,
        morse_generators=morse_gens,
    )

    # total cellular homology (of the triple-boundary complex)
    from .homology import ChainComplex

    cw = ChainComplex()
    for k in range(0, m + 1):
        nk = len(morse_gens[k])
        below = morse_gens.get(k - 1, [])
        for j in range(nk):
            bnd = {}
            if k >= 1 and below:
                for i in range(len(below)):
                    v = triple[k][i][j] if triple[k] else 0
                    if v:
                        bnd[("cw", k - 1, i)] = v
            cw.add_cell(k, ("cw", k, j), bnd)
    cellx.total_homology = HomologySolver(cw).homology()
    return cellx


def _disk_chain(system, chart, x, pair, cell_sets, k, fp):
    """Integer chain of the oriented disk D^u_x on the rasterized complex."""
    sign = _orientation_sign_at(system, chart, x)
    if k == 0:
        u = chart.pullback(x.location[None])[0] if hasattr(chart, "pullback") else x.location
        v = chart.locate_vertex(u if hasattr(chart, "pullback") else x.location)
        if v not in cell_sets[0].get(0, set()):
            raise RasterizationError(f"vertex of {x.id} is outside the F_0 mask")
        return {v: sign}
    if k == 1:
        samples = _disk_curve_samples(system, x, pair, fp)
        if hasattr(chart, "pullback"):
            coords = chart.pullback(samples)
        else:
            coords = samples
        chain, v0, v1 = path_chain(chart, coords)
        edges = cell_sets[1].get(1, set())
        missing = [c for c in chain if c not in edges]
        if missing:
            raise RasterizationError(
                f"disk path of {x.id} uses {len(missing)} edges outside F_1"
            )
        for v in (v0, v1):
            if v not in cell_sets[0].get(0, set()):
                raise RasterizationError(
                    f"disk path endpoint of {x.id} is outside F_0"
                )
        return {c: sign * v for c, v in chain.items()}
    if k == 2:
        margin = du_disk_membership(system, x, pair, fp)
        chain = area_chain(chart, margin, sign=sign)
        if not chain:
            raise RasterizationError(f"empty rasterized disk for {x.id}")
        cells2 = cell_sets[2].get(2, set())
        chain = {c: v for c, v in chain.items() if c in cells2}
        return chain
    raise ConfigurationError("disk chains implemented for indices <= 2")


def theta_map(system, registry, cellx, morse_cx):
    """Intertwining verdict: triple-boundary conjugated by theta equals the
    Morse boundary, as exact integer matrices; also checks the per-target
    splitting of each boundary class."""
    m = max(cellx.generator_counts)
    for k in range(m + 1):
        if cellx.morse_generators.get(k, []) != morse_cx.generators_by_degree.get(k, []):
            raise InputError("generator order mismatch between complexes")
    verdict = True
    for k in range(1, m + 1):
        th_k = cellx.theta.get(k, [])
        th_km1 = cellx.theta.get(k - 1, [])
        dtrip = cellx.triple_boundary.get(k, [])
        dmorse = morse_cx.boundary.get(k, [])
        if not th_k or not cellx.morse_generators.get(k):
            continue
        lhs = mat_mul(dtrip, th_k) if dtrip and th_k else []
        rhs = mat_mul(th_km1, dmorse) if th_km1 and dmorse else []
        if lhs != rhs:
            verdict = False
    # theta must be invertible degreewise (square, determinant +-1)
    from .homology import det_bareiss

    for k in range(m + 1):
        th = cellx.theta.get(k, [])
        nk = len(cellx.morse_generators.get(k, []))
        if nk == 0:
            continue
        if len(th) != nk or any(len(r) != nk for r in th):
            raise BasisError(f"theta_{k} is not square")
        if abs(det_bareiss(th)) != 1:
            raise BasisError(f"theta_{k} has determinant != +-1: {th}")
    cellx.verdict = verdict
    return verdict


def splitting_decomposition(cellx, morse_cx, k):
    """Coefficients per target of the boundary class of each degree-k disk.

    Solves theta_{k-1} * c = dtrip * theta_k column-by-column over Z and
    returns the coefficient matrix, which must equal the Morse boundary.
    """
    from .homology import smith_normal_form, mat_vec

    th_km1 = cellx.theta.get(k - 1, [])
    dtrip = cellx.triple_boundary.get(k, [])
    th_k = cellx.theta.get(k, [])
    if not th_km1 or not th_k:
        return []
    rhs = mat_mul(dtrip, th_k)
    snf = smith_normal_form(th_km1)
    n = len(th_km1)
    cols_out = []
    for j in range(len(rhs[0])):
        b = [rhs[i][j] for i in range(len(rhs))]
        y = mat_vec(snf.U, b)
        sol = [0] * n
        for i in range(snf.rank):
            d = snf.D[i][i]
            if y[i] % d:
                raise BasisError("boundary class not in the theta lattice")
            sol[i] = y[i] // d
        cols_out.append(mat_vec(snf.V, sol))
    return transpose(cols_out)
