"""Connecting trajectories between index-difference-1 critical points.

Shooting from a mesh on the descending sphere classifies basins of forward
limits; separatrix directions (isolated parameters whose trajectories hang
at an index-(k-1) point) are bracketed by bisection.  Orientation transport
pushes the unstable eigenframe along the representative trajectory with the
linearized flow and reads the sign off the oriented splitting

    T W^u(x)  =  (flow direction)  (+)  (complement of T W^s_eps(y)).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    MorseSmaleViolation,
    NumericalError,
    ResolutionError,
    TransportError,
)
from .critical import choose_rho
from .semiflow import (
    FlowParams,
    _DP_A,
    _DP_B4,
    _DP_B5,
    asymptotic_limit_batch,
    entrance_time_batch,
    flow_batch,
    metric_grad_norm,
    sublevel_oracle,
)


@dataclass
class Connection:
    source: str
    target: str
    sign: int = 0  # coefficient of the push-forward of <x> on <y>
    crossing_param: np.ndarray | None = None  # direction on the unit sphere in E_x
    launch_point: np.ndarray | None = None
    arrival_time: float = np.nan


@dataclass
class ConnectionSet:
    by_pair: dict = field(default_factory=dict)  # (x_id, y_id) -> [Connection]
    mesh_stats: dict = field(default_factory=dict)

    def add(self, conn):
        self.by_pair.setdefault((conn.source, conn.target), []).append(conn)

    def for_source(self, x_id):
        return {
            pair: conns for pair, conns in self.by_pair.items() if pair[0] == x_id
        }


@dataclass
class ShootingConfig:
    epsilon: float | None = None  # level offset for the descending sphere
    delta_frac: float = 0.5  # crossing level at S(y) + delta_frac * epsilon
    seed_r: float = 1e-3
    n_mesh: int = 256
    max_depth: int = 40
    jump_tol: float | None = None  # default 0.3 * separation radius


def action_gaps(registry):
    vals = sorted(set(round(c.value, 12) for c in registry.points))
    if len(vals) < 2:
        return np.inf
    return min(b - a for a, b in zip(vals, vals[1:]))


def default_epsilon(registry):
    gap = action_gaps(registry)
    return 0.25 * gap if np.isfinite(gap) else 0.25


def launch_points(system, crit, dirs, seed_r):
    """Seeds just off the critical point along unit directions in E_x."""
    D = dirs @ crit.neg_frame  # (m, ambient)
    X = np.repeat(crit.location[None], len(dirs), axis=0) + seed_r * D
    return system.retract_array(X)


def descend_to_level(system, crit, X0, epsilon, params):
    """Flow seeds down to the level value(x) - epsilon; returns points, times."""
    level = crit.value - epsilon
    A = sublevel_oracle(system, level)
    params = FlowParams(step_ctrl=min(params.step_ctrl, 1e-12),
                        max_time=params.max_time, min_step=1e-15)
    t = entrance_time_batch(system, A, X0, params, time_tol=1e-10, monotone=True)
    if not np.all(np.isfinite(t)):
        raise NumericalError(
            f"descending sphere shot from {crit.id} never reached level {level}"
        )
    X, _, _ = flow_batch(system, X0, t, params)
    return X, t


def _classify(system, registry, X, params):
    ids, _ = asymptotic_limit_batch(system, X, registry, params)
    return ids


def _crossing_points(system, registry, X, ids, delta_by_id, params):
    """First crossing of the level value(target) + delta, per point."""
    out = np.empty_like(X)
    ids = np.asarray(ids)
    for cid in set(ids.tolist()):
        mask = ids == cid
        c = registry.by_id(cid)
        A = sublevel_oracle(system, c.value + delta_by_id[cid])
        t = entrance_time_batch(system, A, X[mask], params, time_tol=1e-4, monotone=True)
        if not np.all(np.isfinite(t)):
            raise NumericalError("crossing level not reached during classification")
        Y, _, _ = flow_batch(system, X[mask], t, params)
        out[mask] = Y
    return out


def _near_approach_target(system, registry, x, p0, k, rho, params):
    """Which index-(k-1) point does the trajectory from p0 pass closest to?"""
    from .semiflow import record_trajectory

    saddles = [c for c in registry.points if c.index == k - 1]
    if not saddles:
        return None
    locs = np.array([c.location for c in registry.points])

    def stop(X):
        D = np.empty((len(X), len(locs)))
        for j in range(len(locs)):
            D[:, j] = system.distance(X, np.repeat(locs[j][None], len(X), axis=0))
        return D.min(axis=1) < 1e-6

    traj = record_trajectory(system, p0[None], params, t_end=params.max_time, stop_fn=stop)
    best_d, best = np.inf, None
    for sad in saddles:
        pts = traj.points
        d = system.distance(pts, np.repeat(sad.location[None], len(pts), axis=0)).min()
        if d < best_d:
            best_d, best = d, sad
    if best is not None and best_d < 0.5 * rho:
        if system.objective(p0[None])[0] > best.value:
            return best
    return None


def enumerate_connections(system, registry, x, params=None, cfg=None):
    """All connections from source x to targets of index ind(x) - 1.

    Counts are resolution-stable: rerun with doubled n_mesh to certify.
    Raises MorseSmaleViolation when a limit of index >= ind(x) shows up.
    """
    params = params or FlowParams()
    cfg = cfg or ShootingConfig()
    k = x.index
    cset = ConnectionSet()
    if k == 0:
        return cset
    if registry.separation is None:
        choose_rho(registry, system, params)
    rho = registry.separation
    eps = cfg.epsilon if cfg.epsilon is not None else default_epsilon(registry)
    delta_by_id = {c.id: cfg.delta_frac * eps for c in registry.points}

    if k == 1:
        dirs = np.array([[1.0], [-1.0]])
        seeds = launch_points(system, x, dirs, cfg.seed_r)
        sphere_pts, _ = descend_to_level(system, x, seeds, eps, params)
        ids = _classify(system, registry, sphere_pts, params)
        for d, p, cid in zip(dirs, sphere_pts, ids):
            y = registry.by_id(cid)
            if y.index >= k:
                raise MorseSmaleViolation(
                    f"trajectory from {x.id} limits to {cid} of index {y.index}"
                )
            if y.index == k - 1:
                cset.add(
                    Connection(source=x.id, target=cid, crossing_param=d, launch_point=p)
                )
        cset.mesh_stats = {"n_mesh": 2, "refined": 0}
        return cset

    if k != 2:
        raise NotImplementedError("connection meshes are implemented for indices 1 and 2")

    n = cfg.n_mesh
    alphas = np.linspace(0.0, 2 * np.pi, n, endpoint=False)

    def shoot(als):
        dirs = np.stack([np.cos(als), np.sin(als)], axis=1)
        seeds = launch_points(system, x, dirs, cfg.seed_r)
        pts, _ = descend_to_level(system, x, seeds, eps, params)
        ids = _classify(system, registry, pts, params)
        for cid in ids:
            if registry.by_id(cid).index >= k:
                raise MorseSmaleViolation(
                    f"trajectory from {x.id} limits to {cid} of index >= {k}"
                )
        cross = _crossing_points(system, registry, pts, ids, delta_by_id, params)
        return np.asarray(ids), cross, pts

    ids, cross, pts = shoot(alphas)
    jump_tol = cfg.jump_tol if cfg.jump_tol is not None else 0.3 * rho

    # suspects: adjacent mesh directions with a target change or a crossing
    # jump; each is a bracket [lo, hi] around a basin boundary
    suspects = []
    for i in range(n):
        j = (i + 1) % n
        a_lo, a_hi = alphas[i], alphas[i] + 2 * np.pi / n
        jump = system.distance(cross[i][None], cross[j][None])[0]
        if ids[i] != ids[j] or jump > jump_tol:
            suspects.append(
                {"lo": a_lo, "hi": a_hi, "il": ids[i], "ih": ids[j],
                 "ql": cross[i], "qh": cross[j], "open": True, "hit": False}
            )

    refined = 0
    for depth in range(cfg.max_depth):
        live = [s for s in suspects if s["open"]]
        if not live:
            break
        mids = np.array([0.5 * (s["lo"] + s["hi"]) for s in live])
        mid_ids, mid_cross, _ = shoot(mids)
        refined += len(live)
        for s, im, qm in zip(live, mid_ids, mid_cross):
            mid = 0.5 * (s["lo"] + s["hi"])
            if registry.by_id(im).index == k - 1:
                s["open"] = False
                s["hit"] = True
                s["alpha"] = mid
                continue
            jl = system.distance(qm[None], s["ql"][None])[0]
            jh = system.distance(qm[None], s["qh"][None])[0]
            side_lo = (im != s["il"]) or (jl > jump_tol)
            side_hi = (im != s["ih"]) or (jh > jump_tol)
            if side_lo and not side_hi:
                s["hi"], s["qh"], s["ih"] = mid, qm, im
            elif side_hi and not side_lo:
                s["lo"], s["ql"], s["il"] = mid, qm, im
            elif side_lo and side_hi:
                s["hi"], s["qh"], s["ih"] = mid, qm, im
            else:
                s["open"] = False  # discontinuity resolved away
    found = [s["alpha"] if s["hit"] else 0.5 * (s["lo"] + s["hi"])
             for s in suspects if s["hit"] or s["open"]]

    # rare direct hits of a mesh direction on a saddle basin
    for i in range(n):
        if registry.by_id(ids[i]).index == k - 1:
            found.append(alphas[i])

    # cluster: brackets flanking the same boundary collapse to one connection
    found = sorted(a % (2 * np.pi) for a in found)
    clusters = []
    gap = 1.5 * (2 * np.pi / n)
    for a in found:
        if clusters and a - clusters[-1][-1] < gap:
            clusters[-1].append(a)
        else:
            clusters.append([a])
    if len(clusters) > 1 and (clusters[0][0] + 2 * np.pi) - clusters[-1][-1] < gap:
        clusters[0] = clusters.pop() + [a + 2 * np.pi for a in clusters[0]]

    for cluster in sorted(clusters, key=min):
        alpha = float(np.mean(cluster)) % (2 * np.pi)
        d = np.array([np.cos(alpha), np.sin(alpha)])
        seed = launch_points(system, x, d[None], cfg.seed_r)[0]
        target = _near_approach_target(system, registry, x, seed, k, rho, params)
        if target is None:
            raise ResolutionError(
                f"basin boundary near alpha={alpha:.6f} from {x.id} could not be "
                "attributed to an index-(k-1) point"
            )
        cset.add(
            Connection(
                source=x.id,
                target=target.id,
                crossing_param=d,
                launch_point=seed,
            )
        )
    cset.mesh_stats = {"n_mesh": n, "refined": refined}
    return cset


# ---------------------------------------------------------------------------
# orientation transport


def _qr_positive(F):
    """Orthonormalize rows keeping order and orientation."""
    Q, R = np.linalg.qr(F.T)
    signs = np.sign(np.diag(R))
    signs[signs == 0] = 1.0
    return (Q * signs[None, :]).T


def _transport_frame(system, x0, frame, stop_fn, params, t_max):
    """Integrate the trajectory together with its linearized frame."""
    amb = system.ambient_dim
    k = len(frame)
    x = x0.copy()
    F = frame.copy()
    t = 0.0
    h = 1e-4
    tol = params.step_ctrl

    def rhs(xv, Fv):
        f = -system.gradient_field(xv[None])[0]
        J = system.field_jacobian(xv[None])[0]
        return f, Fv @ J.T

    while t < t_max:
        hi = min(h, t_max - t)
        kx = np.empty((7, amb))
        kf = np.empty((7, k, amb))
        kx[0], kf[0] = rhs(x, F)
        for s in range(1, 7):
            ax = sum(a * kx[j] for j, a in enumerate(_DP_A[s]) if a)
            af = sum(a * kf[j] for j, a in enumerate(_DP_A[s]) if a)
            kx[s], kf[s] = rhs(x + hi * ax, F + hi * af)
        x5 = x + hi * np.tensordot(_DP_B5, kx, axes=(0, 0))
        x4 = x + hi * np.tensordot(_DP_B4, kx, axes=(0, 0))
        F5 = F + hi * np.tensordot(_DP_B5, kf, axes=(0, 0))
        F4 = F + hi * np.tensordot(_DP_B4, kf, axes=(0, 0))
        scale = tol + tol * max(1.0, np.abs(x5).max(), np.abs(F5).max())
        err = max(np.abs(x5 - x4).max(), np.abs(F5 - F4).max()) / scale
        if err <= 1.0:
            x = system.retract_array(x5[None])[0]
            F = system.project_tangent(np.repeat(x[None], k, axis=0), F5)
            F = _qr_positive(F)
            t += hi
            if stop_fn(x):
                return x, F, t
        h = hi * min(5.0, max(0.2, 0.9 * err ** (-0.2) if err > 0 else 5.0))
        if h < params.min_step:
            raise TransportError(f"frame transport step underflow at t={t:.4g}")
    raise TransportError("frame transport never reached the arrival region")


def transport_orientation(system, conn, registry, params=None, epsilon=None,
                          orientation=1, frame_cond_max=1e8):
    """Sign of the push-forward of <x> along a connection, times `orientation`.

    The unstable eigenframe of the source rides the linearized flow to a
    late-time point inside the target's ascending disk; there the ordered
    basis [flow direction, transported reference frame of the target] is
    compared with the transported source frame.
    """
    params = params or FlowParams()
    x = registry.by_id(conn.source)
    y = registry.by_id(conn.target)
    if registry.separation is None:
        choose_rho(registry, system, params)
    rho = registry.separation
    eps = epsilon if epsilon is not None else default_epsilon(registry)
    k = x.index
    assert k == y.index + 1

    p0 = conn.launch_point
    if p0 is None:
        p0 = launch_points(system, x, conn.crossing_param[None], 1e-3)[0]
    F0 = system.project_tangent(np.repeat(p0[None], k, axis=0), x.neg_frame.copy())
    F0 = _qr_positive(F0)

    y_loc = y.location

    def arrived(p):
        return (
            system.distance(p[None], y_loc[None])[0] < 0.5 * rho
            and system.objective(p[None])[0] < y.value + eps
        )

    p_l, F, _ = _transport_frame(system, p0, F0, arrived, params, params.max_time)

    g = system.gradient_field(p_l[None])[0]
    gnorm = np.sqrt(system.metric_inner(p_l[None], g[None], g[None])[0])
    if gnorm < 1e-13:
        raise TransportError("arrival point is numerically critical; cannot orient flow")
    w = -g / gnorm

    ref = []
    if y.index:
        G = system.project_tangent(np.repeat(p_l[None], y.index, axis=0), y.neg_frame.copy())
        G = _qr_positive(G)
        ref = list(G)
    B = np.vstack([w[None]] + [r[None] for r in ref])

    gram = np.empty((k, k))
    for i in range(k):
        for j in range(k):
            gram[i, j] = system.metric_inner(p_l[None], B[i][None], F[j][None])[0]
    sign_det, logdet = np.linalg.slogdet(gram)
    if sign_det == 0 or abs(logdet) > np.log(frame_cond_max):
        raise TransportError(
            f"degenerate frame comparison along {conn.source}->{conn.target}"
        )
    return int(sign_det) * int(orientation)


def all_connections(system, registry, params=None, cfg=None):
    """Connection sets with transported signs for every source point."""
    out = ConnectionSet()
    for x in registry.points:
        if x.index == 0:
            continue
        cset = enumerate_connections(system, registry, x, params, cfg)
        for pair, conns in cset.by_pair.items():
            for conn in conns:
                conn.sign = transport_orientation(
                    system, conn, registry, params,
                    epsilon=(cfg.epsilon if cfg and cfg.epsilon is not None else None),
                )
                out.add(conn)
        out.mesh_stats[x.id] = cset.mesh_stats
    return out
