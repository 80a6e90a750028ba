"""Conley pairs (N_x, L_x), isolating blocks, disks, and pair homology.

N_x is the path component at x of { S < c+eps } intersected with the time-tau
preimage of { S > c-eps }; the exit set L_x collects the points of N_x whose
2*tau image has dropped to level c-eps.  Everything is represented through
vectorized membership margins so the filtration can compose preimages of
these sets without further geometry.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import (
    ConfigurationError,
    NumericalError,
    ResolutionError,
    ShootingError,
)
from .connections import default_epsilon, descend_to_level, launch_points
from .homology import HomologySolver, quotient_complex
from .charts import Raster, closure_cells, complex_from_cells
from .semiflow import (
    FlowParams,
    SetOracle,
    backward_flow_unstable,
    empty_set,
    flow_batch,
)
from .systems import hessian_spectrum


@dataclass
class ConleyParams:
    epsilon: float
    tau: float
    crit: str

    def __post_init__(self):
        assert self.epsilon > 0 and self.tau > 0


@dataclass
class ConleyPair:
    params: ConleyParams
    c: float  # critical value
    x: object  # CriticalPoint
    N: SetOracle
    L: SetOracle
    frame: np.ndarray  # eigenvector rows: unstable first, then stable
    n_extent: np.ndarray  # per frame axis, half extents of N
    core_extent: np.ndarray  # per frame axis, half extents of N \ L
    single_component: bool = True
    isolation_checked: bool = True


@dataclass
class AxiomReport:
    n_samples: int
    violations: dict
    params: ConleyParams

    @property
    def ok(self):
        return all(v == 0 for v in self.violations.values())


@dataclass
class DiskSample:
    kind: str  # descending_disk | descending_sphere | ascending_disk | du_disk | du_sphere
    points: np.ndarray
    sphere_params: np.ndarray | None
    crit: str


# ---------------------------------------------------------------------------
# membership margins


def _pair_margins(system, x, eps, tau, fp):
    c = x.value

    def n_margin(X):
        X = np.atleast_2d(X)
        m1 = (c + eps) - system.objective(X)
        if x.index == 0:
            return m1
        Y, _, _ = flow_batch(system, X, tau, fp)
        m2 = system.objective(Y) - (c - eps)
        return np.minimum(m1, m2)

    def l_margin(X):
        X = np.atleast_2d(X)
        if x.index == 0:
            return np.full(len(X), -np.inf)
        mN = n_margin(X)
        Y, _, _ = flow_batch(system, X, 2 * tau, fp)
        m3 = (c - eps) - system.objective(Y)
        return np.minimum(mN, m3)

    def core_margin(X):
        # N minus L: still above level c-eps after time 2*tau
        X = np.atleast_2d(X)
        mN = n_margin(X)
        if x.index == 0:
            return mN
        Y, _, _ = flow_batch(system, X, 2 * tau, fp)
        m3 = system.objective(Y) - (c - eps)
        return np.minimum(mN, m3)

    return n_margin, l_margin, core_margin


def _full_frame(system, x):
    spec = hessian_spectrum(system, system.point(x.location))
    return np.array([t.components for _, t in spec])


def _ray_extent(system, x0, frame_dir, margin, s_hint, s_cap):
    """Half extent of {margin > 0} from x0 along +-frame_dir (max of sides)."""
    best = 0.0
    for sgn in (1.0, -1.0):
        s = s_hint
        last_in = 0.0
        while s <= s_cap:
            p = system.retract_array((x0 + sgn * s * frame_dir)[None])
            if margin(p)[0] <= 0:
                break
            last_in = s
            s *= 2.0
        else:
            best = max(best, s_cap)
            continue
        lo, hi = last_in, s
        for _ in range(40):
            mid = 0.5 * (lo + hi)
            p = system.retract_array((x0 + sgn * mid * frame_dir)[None])
            if margin(p)[0] > 0:
                lo = mid
            else:
                hi = mid
        best = max(best, hi)
    return best


def _component_check(system, pair_margin, x, registry, frame, halfwidths, n=96):
    """Flood-fill the local chart; x's component must contain no other point.

    Returns (single_component, labels, chart) for an optional lookup oracle.
    """
    chart = system.local_chart(
        x.location, 1.3 * halfwidths, n,
        refine_axes={d: (0.0,) for d in range(system.dim)}, frame=frame,
    )
    tops = chart.top_cells()
    centers = chart.embed(chart.cell_centers(tops))
    inside = pair_margin(centers) > 0
    shape = tuple(ax.n_cells for ax in chart.axes)
    grid = np.zeros(shape, dtype=bool)
    for cell, val in zip(tops, inside):
        grid[cell[0]] = val
    labels, n_comp = ndimage.label(grid)
    # locate x's cell
    x_cell = chart.locate_vertex(chart.pullback(x.location[None])[0])[0]
    x_idx = tuple(min(i, s - 1) for i, s in zip(x_cell, shape))
    x_label = labels[x_idx]
    if x_label == 0:
        # x sits on a cell boundary; use any neighboring filled cell
        region = labels[
            tuple(slice(max(0, i - 1), min(s, i + 2)) for i, s in zip(x_idx, shape))
        ]
        nz = region[region > 0]
        if nz.size == 0:
            raise NumericalError("component grid too coarse around the critical point")
        x_label = int(nz[0])

    others_inside_component = []
    for y in registry.points:
        if y.id == x.id:
            continue
        u = chart.pullback(y.location[None])
        # charts with non-global pullbacks (central projection) need a
        # round-trip check before the coordinates mean anything
        if system.distance(chart.embed(u), y.location[None])[0] > 1e-8:
            continue
        u = u[0]
        if np.all(np.abs(u) < 1.3 * halfwidths):
            cell = chart.locate_vertex(u)[0]
            idx = tuple(min(i, s - 1) for i, s in zip(cell, shape))
            if labels[idx] == x_label:
                others_inside_component.append(y.id)
    single = n_comp <= 1
    return single, others_inside_component, labels, chart, x_label


def build_conley_pair(system, x, registry, params=None, fp=None,
                      max_tau_doublings=6):
    """Conley pair for a nondegenerate critical point.

    Parameters default to eps = (min action gap)/4 and a tau search doubling
    from 4/spectral_gap until the block isolates x; raises ConfigurationError
    when another critical point persists in the closure of N_x.
    """
    fp = fp or FlowParams()
    eps = params.epsilon if params else default_epsilon(registry)
    tau = params.tau if params else 4.0 / x.spectral_gap
    frame = _full_frame(system, x)
    attempts = 1 if params is not None else max_tau_doublings + 1

    for attempt in range(attempts):
        n_margin, l_margin, core_margin = _pair_margins(system, x, eps, tau, fp)
        scale = 1e-4
        cap = 2.0 * max(getattr(system, "periods", [1.0, 1.0])[0] if system.periods is not None else 2.0, 1.0)
        n_extent = np.array(
            [
                _ray_extent(system, x.location, frame[d], n_margin, scale * 1e-4, cap)
                for d in range(system.dim)
            ]
        )
        core_extent = np.array(
            [
                _ray_extent(system, x.location, frame[d], core_margin, scale * 1e-4, cap)
                for d in range(system.dim)
            ]
        )
        # no other critical point may satisfy the block conditions at all
        others = np.array([y.location for y in registry.points if y.id != x.id])
        if len(others) and np.any(n_margin(others) > 0):
            tau *= 2.0
            continue
        if system.dim <= 2:
            single, intruders, labels, chart, x_label = _component_check(
                system, n_margin, x, registry, frame, n_extent
            )
            if intruders:
                tau *= 2.0
                continue
        else:
            single, labels, chart, x_label = True, None, None, None

        if single or labels is None:
            N = SetOracle(n_margin, f"N[{x.id}](eps={eps:.4g},tau={tau:.4g})")
        else:
            def restricted(X, _nm=n_margin, _chart=chart, _labels=labels,
                           _xl=x_label):
                m = _nm(X)
                U = _chart.pullback(np.atleast_2d(X))
                shape = _labels.shape
                for r in range(len(U)):
                    if m[r] <= 0:
                        continue
                    cell = _chart.locate_vertex(U[r])[0]
                    idx = tuple(min(i, s - 1) for i, s in zip(cell, shape))
                    if _labels[idx] != _xl:
                        m[r] = -abs(m[r]) - 1e-12
                return m

            N = SetOracle(restricted, f"N[{x.id}](eps={eps:.4g},tau={tau:.4g})")

        if x.index == 0:
            L = empty_set(f"L[{x.id}] (empty exit set)")
        else:
            # closed set: boundary-band points (the backward-flowed descending
            # sphere sits exactly on the level) count as members
            L = SetOracle(
                lambda X, _nm=N.margin, _lm=l_margin: np.minimum(_nm(X), _lm(X)),
                f"L[{x.id}](eps={eps:.4g},tau={tau:.4g})",
                closed=True,
                band=1e-3 * eps,
            )
        return ConleyPair(
            params=ConleyParams(eps, tau, x.id),
            c=x.value,
            x=x,
            N=N,
            L=L,
            frame=frame,
            n_extent=n_extent,
            core_extent=core_extent,
            single_component=single,
        )
    raise ConfigurationError(
        f"isolation of {x.id} failed up to tau={tau:.4g}; parameters too coarse"
    )


# ---------------------------------------------------------------------------
# axiom verification


def sample_block(system, pair, n, rng, spread=1.3):
    """Rejection-sample points of N_x from its bounding box."""
    dim = system.dim
    out = []
    cap = 40 * n
    draws = 0
    while len(out) < n and draws < cap:
        take = max(n, 256)
        U = rng.uniform(-1.0, 1.0, size=(take, dim)) * (spread * pair.n_extent)
        X = system.retract_array(pair.x.location[None] + U @ pair.frame)
        keep = pair.N.contains(X)
        out.extend(X[keep])
        draws += take
    if len(out) < n:
        raise NumericalError(f"block sampling starved for {pair.x.id}")
    return np.array(out[:n])


def verify_axioms(system, pair, registry, n_samples=1000, seed=0, fp=None):
    """Counterexample counts for the four Conley pair axioms on samples."""
    fp = fp or FlowParams()
    rng = np.random.default_rng(seed)
    tau = pair.params.tau
    x = pair.x
    violations = {"i": 0, "ii": 0, "iii": 0, "iv": 0}

    # (i) x in N \ L
    if not pair.N.contains(x.location[None])[0] or pair.L.contains(x.location[None])[0]:
        violations["i"] += 1

    # (ii) closure of N contains no other critical point
    for y in registry.points:
        if y.id != x.id and pair.N.margin(y.location[None])[0] > -1e-12:
            violations["ii"] += 1
    if not pair.isolation_checked:
        violations["ii"] += 1

    X = sample_block(system, pair, n_samples, rng)
    dt = tau / 8.0
    n_steps = 40
    inN = np.ones((len(X), n_steps + 1), dtype=bool)
    inL = np.zeros((len(X), n_steps + 1), dtype=bool)
    inN[:, 0] = pair.N.contains(X)
    inL[:, 0] = pair.L.contains(X)
    Y = X.copy()
    for s in range(1, n_steps + 1):
        Y, _, _ = flow_batch(system, Y, dt, fp)
        inN[:, s] = pair.N.contains(Y)
        inL[:, s] = pair.L.contains(Y)

    for i in range(len(X)):
        # first departure from N
        offs = np.flatnonzero(~inN[i])
        exit_at = offs[0] if offs.size else None
        upto = exit_at if exit_at is not None else n_steps + 1
        # (iii) positive invariance of L inside N
        seenL = False
        for s in range(upto):
            if inL[i, s]:
                seenL = True
            elif seenL:
                violations["iii"] += 1
                break
        # (iv) exit only through L
        if exit_at is not None:
            before = inL[i, :exit_at]
            if exit_at == 0 or not before.any():
                violations["iv"] += 1

    return AxiomReport(n_samples=len(X), violations=violations, params=pair.params)


# ---------------------------------------------------------------------------
# disks


def unit_sphere_mesh(k, n):
    """n points on the unit sphere of R^k (k = 1 gives the 0-sphere)."""
    if k == 1:
        return np.array([[1.0], [-1.0]])
    if k == 2:
        a = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
        return np.stack([np.cos(a), np.sin(a)], axis=1)
    raise NotImplementedError("disk sampling implemented for indices <= 2")


def sample_disks(system, x, epsilon, n=64, registry=None, fp=None, seed_r=1e-3):
    """Sampled descending sphere/disk and ascending disk around x."""
    fp = fp or FlowParams()
    out = {}
    k = x.index
    if k == 0:
        out["descending_sphere"] = DiskSample("descending_sphere", np.zeros((0, system.ambient_dim)), None, x.id)
        out["descending_disk"] = DiskSample("descending_disk", x.location[None].copy(), None, x.id)
    else:
        dirs = unit_sphere_mesh(k, n)
        seeds = launch_points(system, x, dirs, seed_r)
        sphere, t_hit = descend_to_level(system, x, seeds, epsilon, fp)
        lv = system.objective(sphere)
        if np.abs(lv - (x.value - epsilon)).max() > 1e-6:
            raise ShootingError(f"descending sphere of {x.id} off level by "
                                f"{np.abs(lv - (x.value - epsilon)).max():.2e}")
        out["descending_sphere"] = DiskSample("descending_sphere", sphere, dirs, x.id)
        # disk: flow each seed by fractions of its hitting time
        fracs = np.linspace(0.0, 1.0, 9)[1:-1]
        disk_pts = [x.location[None], sphere]
        for f in fracs:
            P, _, _ = flow_batch(system, seeds, f * t_hit, fp)
            disk_pts.append(P)
        out["descending_disk"] = DiskSample("descending_disk", np.vstack(disk_pts), None, x.id)

    # ascending disk
    if k == system.dim:
        asc = x.location[None].copy()
    elif k == 0:
        rng = np.random.default_rng(1)
        pair_m, _, _ = _pair_margins(system, x, epsilon, 1.0, fp)
        pts = []
        take = 4096
        while len(pts) < n:
            U = rng.normal(size=(take, system.ambient_dim))
            U = system.project_tangent(np.repeat(x.location[None], take, axis=0), U)
            r = rng.uniform(0, 1, size=take) ** (1.0 / max(system.dim, 1))
            X = system.retract_array(
                x.location[None] + (U / np.linalg.norm(U, axis=1, keepdims=True))
                * r[:, None] * 0.5
            )
            X = X[pair_m(X) > 0]
            pts.extend(X)
        asc = np.array(pts[:n])
    else:
        asc = _march_stable_curve(system, x, registry, epsilon, n, fp)
    out["ascending_disk"] = DiskSample("ascending_disk", asc, None, x.id)
    return out


def _march_stable_curve(system, x, registry, epsilon, n, fp):
    """Sample the 1-D stable curve of an index-(dim-1) point by bisection.

    Points straddling the stable manifold exit along opposite unstable
    branches; bisecting the exit side transverse to the curve locates it.
    """
    assert x.index == system.dim - 1 and registry is not None
    spec = hessian_spectrum(system, system.point(x.location))
    v_u = spec[0][1].components
    v_s = spec[-1][1].components
    lam_s = spec[-1][0]

    level = x.value - 0.5 * epsilon
    from .semiflow import entrance_time_batch, sublevel_oracle

    A = sublevel_oracle(system, level)
    branch_pts = launch_points(system, x, np.array([[1.0], [-1.0]]), 1e-3)
    tb = entrance_time_batch(system, A, branch_pts, fp, monotone=True)
    B, _, _ = flow_batch(system, branch_pts, tb, fp)

    def exit_side(P):
        """True/False for the exit branch; None for separatrix-grade points."""
        t = entrance_time_batch(system, A, P, fp, monotone=True)
        out = [None] * len(P)
        finite = np.flatnonzero(np.isfinite(t))
        if finite.size:
            Q, _, _ = flow_batch(system, P[finite], t[finite], fp)
            d0 = system.distance(Q, np.repeat(B[0][None], len(Q), axis=0))
            d1 = system.distance(Q, np.repeat(B[1][None], len(Q), axis=0))
            for i, r in enumerate(finite):
                out[r] = bool(d0[i] < d1[i])
        return out

    pts = [x.location.copy()]
    for sgn in (1.0, -1.0):
        s_max = _ray_extent(
            system, x.location, sgn * v_s,
            lambda X: (x.value + epsilon) - system.objective(np.atleast_2d(X)),
            1e-4, 2.0,
        )
        h0 = 2e-3 * s_max
        svals = np.geomspace(h0, s_max * 0.995, max(4, n // 2))
        bases = system.retract_array(x.location[None] + sgn * svals[:, None] * v_s[None])
        w = 0.2 * svals + 1e-6
        lo, hi = -w.copy(), w.copy()
        sides = exit_side(
            np.vstack([
                system.retract_array(bases + lo[:, None] * v_u[None]),
                system.retract_array(bases + hi[:, None] * v_u[None]),
            ])
        )
        m = len(svals)
        side_lo = sides[:m]
        ok = np.array(
            [a is not None and b is not None and a != b
             for a, b in zip(sides[:m], sides[m:])]
        )
        live = ok.copy()
        for _ in range(44):
            if not live.any():
                break
            rows = np.flatnonzero(live)
            mid = 0.5 * (lo[rows] + hi[rows])
            pm = system.retract_array(bases[rows] + mid[:, None] * v_u[None])
            sm = exit_side(pm)
            for i, r in enumerate(rows):
                if sm[i] is None:
                    lo[r] = hi[r] = mid[i]
                    live[r] = False
                elif sm[i] == side_lo[r]:
                    lo[r] = mid[i]
                else:
                    hi[r] = mid[i]
        for r in np.flatnonzero(ok):
            pts.append(
                system.retract_array(
                    (bases[r] + 0.5 * (lo[r] + hi[r]) * v_u)[None]
                )[0]
            )
    return np.array(pts)


def du_disk_membership(system, x, pair, fp=None):
    """Margin for the backward image of the closed descending disk.

    Valid for index equal to the manifold dimension, where the disk has full
    dimension; its interior is { S(flow_{2 tau}) > c - eps } near x.
    """
    fp = fp or FlowParams()
    _, _, core = _pair_margins(system, x, pair.params.epsilon, pair.params.tau, fp)
    return core


def du_sphere_samples(system, x, pair, n=64, fp=None):
    """Backward-flowed descending sphere bounding the disk D^u_x."""
    fp = fp or FlowParams()
    eps, tau = pair.params.epsilon, pair.params.tau
    if x.index == 0:
        return np.zeros((0, system.ambient_dim))
    dirs = unit_sphere_mesh(x.index, n)
    seeds = launch_points(system, x, dirs, 1e-3)
    sphere, _ = descend_to_level(system, x, seeds, eps, fp)
    out = np.empty_like(sphere)
    for i, q in enumerate(sphere):
        out[i] = backward_flow_unstable(system, x, q, 2 * tau, fp)
    return out


# ---------------------------------------------------------------------------
# pair homology


def conley_pair_homology(system, pair, registry, grid_n=128, fp=None,
                         refine_check=True):
    """Relative cubical homology of the rasterized pair (N_x, L_x).

    Rasterized on a local eigenframe chart bounding N \\ L plus a collar
    inside L (an excision of the far part of L); gated on manifold
    dimension <= 2 and on stability under grid doubling.
    """
    if system.dim > 2:
        raise ConfigurationError("cubical backend is gated to manifold dimension <= 2")
    fp = fp or FlowParams()
    x = pair.x

    halfwidths = np.minimum(1.15 * pair.n_extent, 4.0 * pair.core_extent)
    halfwidths = np.maximum(halfwidths, 1e-12)

    def ranks_at(n):
        refine = {d: (0.0,) for d in range(system.dim)}
        chart = system.local_chart(x.location, halfwidths, n,
                                   refine_axes=refine, frame=pair.frame)
        raster = Raster(chart, [pair.N.margin, pair.L.margin],
                        closed_flags=[False, True])
        n_mask, l_mask = raster.nested_masks()
        x_cells = closure_cells(chart, n_mask)
        a_cells = closure_cells(chart, l_mask)
        cx = complex_from_cells(chart, x_cells)
        solver = HomologySolver(quotient_complex(cx, a_cells))
        groups = solver.homology()
        return [(g.betti, tuple(g.torsion)) for g in groups], solver

    ranks, solver = ranks_at(grid_n)
    if refine_check:
        ranks2, _ = ranks_at(2 * grid_n)
        la, lb = len(ranks), len(ranks2)
        pad = [(0, ())] * abs(la - lb)
        if ranks + pad[: lb - la] != ranks2 + pad[: la - lb]:
            raise ResolutionError(
                f"pair homology of {x.id} unstable under grid doubling: "
                f"{ranks} vs {ranks2}"
            )
    return ranks, solver


# ---------------------------------------------------------------------------
# leaf convergence


def leaf_convergence_probe(system, x, gamma, T_list, pair, registry,
                           fp=None, n_leaf=24, r_disk=None):
    """Max distance from sampled preimage leaves to the ascending disk.

    For each T the leaf over the backward point flow_{-T}(gamma) is sampled
    as { z : flow_T(z) lands in a small disk around gamma, S(z) < c+eps }.
    Returns a list of (T, distance) pairs.
    """
    fp = fp or FlowParams()
    eps = pair.params.epsilon
    if r_disk is None:
        r_disk = 0.2 * float(np.max(pair.n_extent))
    asc = sample_disks(system, x, eps, n=96, registry=registry, fp=fp)[
        "ascending_disk"
    ].points

    rng = np.random.default_rng(5)
    rows = []
    for T in T_list:
        anchor = backward_flow_unstable(system, x, gamma, T, fp, flow_tol=1e-4)
        # transverse sampling around the anchor
        spread = 0.5 * float(np.max(pair.n_extent))
        U = rng.normal(size=(8 * n_leaf, system.ambient_dim))
        U = system.project_tangent(np.repeat(anchor[None], len(U), axis=0), U)
        U /= np.linalg.norm(U, axis=1, keepdims=True)
        radii = rng.uniform(0, spread, size=len(U))[:, None]
        Z = system.retract_array(anchor[None] + radii * U)
        Z = np.vstack([anchor[None], Z])
        img, _, _ = flow_batch(system, Z, T, fp)
        on_leaf = (
            (system.distance(img, np.repeat(gamma[None], len(img), axis=0)) < r_disk)
            & (system.objective(Z) < x.value + eps)
        )
        leaf = Z[on_leaf][:n_leaf]
        if len(leaf) == 0:
            raise NumericalError(f"empty leaf sample at T={T}")
        dmax = 0.0
        for z in leaf:
            d = system.distance(np.repeat(z[None], len(asc), axis=0), asc).min()
            dmax = max(dmax, float(d))
        rows.append((float(T), dmax))
    return rows
