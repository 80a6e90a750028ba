"""Negative-gradient semi-flow: integration, oracles, entrance times.

The integrator is an adaptive Dormand-Prince 5(4) scheme, vectorized over
batches of initial conditions with per-point step sizes, and projects back
onto the manifold after every accepted step.  Membership oracles compose
sublevel tests with time-T preimages, which is how all Conley/filtration
sets are represented.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceTimeout, IntegratorError, NumericalError
from .systems import Point

# Dormand-Prince 5(4) tableau
_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_DP_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_DP_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_DP_B4 = np.array(
    [5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40]
)


@dataclass
class FlowParams:
    step_ctrl: float = 1e-8  # local error tolerance (abs and rel)
    max_time: float = 1e3
    integrator_order: int = 5
    max_step: float = np.inf
    min_step: float = 1e-13
    freeze_grad: float = 1e-12  # points with smaller field sup-norm stop moving

    def __post_init__(self):
        assert self.step_ctrl > 0 and self.max_time > 0


@dataclass
class Trajectory:
    times: np.ndarray
    points: np.ndarray
    objective: np.ndarray
    grad_norm: np.ndarray
    dissipation: float  # integral of |grad|^2 ds along the path
    terminal: str  # 'reached_time' | 'converged_to' | 'left_domain'
    terminal_id: str | None = None


def _rhs(system, X):
    return -system.gradient_field(X)


def metric_grad_norm(system, X):
    g = system.gradient_field(X)
    return np.sqrt(np.maximum(system.metric_inner(X, g, g), 0.0))


def flow_batch(system, X0, T, params=None, stop_fn=None):
    """Time-T map applied to a batch of points (per-point T allowed).

    stop_fn(X) -> bool array may freeze points early (used for asymptotic
    limits); returns (X_final, t_reached, stopped_mask).
    """
    params = params or FlowParams()
    X = np.array(X0, dtype=float)
    m = len(X)
    T = np.broadcast_to(np.asarray(T, dtype=float), (m,)).copy()
    if np.any(T < 0) or not np.all(np.isfinite(T)):
        raise ValueError("flow requires finite T >= 0")
    t = np.zeros(m)
    stopped = np.zeros(m, dtype=bool)
    active = t < T
    f = np.zeros_like(X)
    if active.any():
        f[active] = _rhs(system, X[active])
    sup = np.abs(f).max(axis=1, initial=0.0)
    h = np.minimum(np.where(sup > 0, 0.05 / (1.0 + sup), 1e-2), params.max_step)
    h = np.minimum(h, np.maximum(T, 1e-30))
    tol = params.step_ctrl

    while True:
        frozen = active & (np.abs(f).max(axis=1, initial=0.0) < params.freeze_grad)
        if frozen.any():
            t[frozen] = T[frozen]
            active &= ~frozen
        if stop_fn is not None and active.any():
            hit = np.zeros(m, dtype=bool)
            hit[active] = stop_fn(X[active])
            stopped |= hit & active
            active &= ~hit
        if not active.any():
            break
        idx = np.flatnonzero(active)
        hi = np.minimum(h[idx], T[idx] - t[idx])
        Y = X[idx]
        K = np.empty((7,) + Y.shape)
        K[0] = f[idx]
        for s in range(1, 7):
            acc = sum(a * K[j] for j, a in enumerate(_DP_A[s]) if a)
            K[s] = _rhs(system, Y + hi[:, None] * acc)
        y5 = Y + hi[:, None] * np.tensordot(_DP_B5, K, axes=(0, 0))
        y4 = Y + hi[:, None] * np.tensordot(_DP_B4, K, axes=(0, 0))
        scale = tol + tol * np.maximum(np.abs(Y), np.abs(y5)).max(axis=1)
        err = np.abs(y5 - y4).max(axis=1) / scale
        accept = err <= 1.0
        if accept.any():
            ia = idx[accept]
            Xa = system.retract_array(y5[accept])
            X[ia] = Xa
            t[ia] += hi[accept]
            f[ia] = _rhs(system, Xa)
        fac = 0.9 * np.power(np.maximum(err, 1e-16), -0.2)
        h[idx] = hi * np.clip(fac, 0.2, 5.0)
        h[idx] = np.minimum(h[idx], params.max_step)
        if np.any(h[idx] < params.min_step):
            bad = idx[h[idx] < params.min_step][0]
            raise IntegratorError(
                f"step underflow at t={t[bad]:.6g}, point={X[bad]}, err={err.max():.3g}"
            )
        done = idx[t[idx] >= T[idx] - 1e-15]
        if done.size:
            active[done] = False
    return X, t, stopped


def flow(system, p, T, params=None):
    """Public time-T map; accepts a Point or a coordinate array."""
    if isinstance(p, Point):
        X = system.check_point(p)
        out, _, _ = flow_batch(system, X, T, params)
        return system.point(out[0])
    X = np.asarray(p, dtype=float)
    single = X.ndim == 1
    out, _, _ = flow_batch(system, np.atleast_2d(X), T, params)
    return out[0] if single else out


def record_trajectory(system, p, params=None, t_end=None, stop_fn=None):
    """Integrate a single trajectory, recording accepted steps.

    The dissipation integral of |grad|^2 is carried as an augmented state so
    the discrete energy identity can be tested at integrator accuracy.
    """
    params = params or FlowParams()
    t_end = params.max_time if t_end is None else t_end
    x = system.check_point(p)[0]
    amb = len(x)

    def rhs_aug(Y):
        X = Y[:, :amb]
        g = system.gradient_field(X)
        out = np.empty_like(Y)
        out[:, :amb] = -g
        out[:, amb] = np.maximum(system.metric_inner(X, g, g), 0.0)
        return out

    y = np.concatenate([x, [0.0]])
    t = 0.0
    h = 1e-3
    tol = params.step_ctrl
    times = [0.0]
    pts = [x.copy()]
    diss = [0.0]
    terminal = "reached_time"
    while t < t_end - 1e-15:
        hi = min(h, t_end - t, params.max_step)
        K = np.empty((7, 1, amb + 1))
        K[0] = rhs_aug(y[None])
        for s in range(1, 7):
            acc = sum(a * K[j] for j, a in enumerate(_DP_A[s]) if a)
            K[s] = rhs_aug(y[None] + hi * acc)
        y5 = y + hi * np.tensordot(_DP_B5, K[:, 0], axes=(0, 0))
        y4 = y + hi * np.tensordot(_DP_B4, K[:, 0], axes=(0, 0))
        scale = tol + tol * max(np.abs(y).max(), np.abs(y5).max())
        err = np.abs(y5 - y4).max() / scale
        if err <= 1.0:
            y = y5
            y[:amb] = system.retract_array(y[None, :amb])[0]
            t += hi
            times.append(t)
            pts.append(y[:amb].copy())
            diss.append(y[amb])
            if stop_fn is not None and stop_fn(y[None, :amb])[0]:
                terminal = "converged_to"
                break
            if np.abs(system.gradient_field(y[None, :amb])).max() < params.freeze_grad:
                terminal = "converged_to"
                break
        h = hi * min(5.0, max(0.2, 0.9 * err ** (-0.2) if err > 0 else 5.0))
        if h < params.min_step:
            raise IntegratorError(f"step underflow at t={t:.6g} in trajectory recording")
    P = np.array(pts)
    return Trajectory(
        times=np.array(times),
        points=P,
        objective=system.objective(P),
        grad_norm=metric_grad_norm(system, P),
        dissipation=float(diss[-1]),
        terminal=terminal,
    )


# ---------------------------------------------------------------------------
# membership oracles


class SetOracle:
    """Set described by a signed margin function (positive inside).

    `closed` fixes the boundary-band convention: open sets exclude the band,
    closed sets include it.
    """

    def __init__(self, margin_fn, description, closed=False, band=0.0):
        self._margin = margin_fn
        self.description = description
        self.closed = closed
        self.band = band

    def margin(self, X):
        return np.asarray(self._margin(np.atleast_2d(X)), dtype=float)

    def contains(self, X):
        m = self.margin(X)
        return m >= -self.band if self.closed else m > self.band

    def classify(self, X):
        """+1 inside, 0 in the boundary band, -1 outside."""
        m = self.margin(X)
        out = np.where(m > self.band, 1, -1)
        out[np.abs(m) <= self.band] = 0
        return out

    # -- combinators --------------------------------------------------------

    def union(self, other):
        return SetOracle(
            lambda X: np.maximum(self.margin(X), other.margin(X)),
            f"union({self.description}, {other.description})",
            closed=self.closed and other.closed,
            band=max(self.band, other.band),
        )

    def intersect(self, other):
        return SetOracle(
            lambda X: np.minimum(self.margin(X), other.margin(X)),
            f"intersection({self.description}, {other.description})",
            closed=self.closed and other.closed,
            band=max(self.band, other.band),
        )


def whole_space(name="all"):
    return SetOracle(lambda X: np.full(len(X), np.inf), name)


def empty_set(name="empty"):
    return SetOracle(lambda X: np.full(len(X), -np.inf), name, closed=True)


def sublevel_oracle(system, c, strict=True):
    return SetOracle(
        lambda X: c - system.objective(X),
        f"{{S < {c:.6g}}}" if strict else f"{{S <= {c:.6g}}}",
        closed=not strict,
    )


def preimage_oracle(system, A, T, params=None):
    """Membership in the time-T preimage of A, decided by forward flow."""
    if T < 0:
        raise ValueError("preimage time must be >= 0")
    params = params or FlowParams()
    if T == 0:
        return SetOracle(A.margin, A.description, closed=A.closed, band=A.band)

    def margin(X):
        Y, _, _ = flow_batch(system, X, T, params)
        return A.margin(Y)

    return SetOracle(
        margin,
        f"preimage(T={T:.6g}, {A.description})",
        closed=A.closed,
        band=max(A.band, 1e-9),
    )


# ---------------------------------------------------------------------------
# asymptotic limits


def asymptotic_limit_batch(system, X0, registry, params=None, basin_tol=1e-4,
                           grad_stop_tol=1e-10, capture_tol=1e-6):
    """Forward limit of each point: registry ids and convergence-time estimates.

    Integration stops once the metric gradient norm falls below grad_stop_tol
    or the point comes within capture_tol of a registry entry (the hyperbolic
    contraction makes the nearest entry the limit for all but separatrix-grade
    initial conditions, which is the wanted attribution during bisection).
    """
    params = params or FlowParams()
    X0 = np.atleast_2d(np.asarray(X0, dtype=float))
    locs = np.array([c.location for c in registry.points])

    def min_crit_dist(X):
        D = np.empty((len(X), len(locs)))
        for j in range(len(locs)):
            D[:, j] = system.distance(X, np.repeat(locs[j][None], len(X), axis=0))
        return D.min(axis=1)

    def stop(X):
        return (metric_grad_norm(system, X) < grad_stop_tol) | (
            min_crit_dist(X) < capture_tol
        )

    X, t, stopped = flow_batch(system, X0, params.max_time, params, stop_fn=stop)
    finished = stopped | stop(X)
    if not finished.all():
        bad = np.flatnonzero(~finished)[0]
        raise ConvergenceTimeout(
            f"no convergence within max_time={params.max_time} for point {X0[bad]}"
        )
    ids = []
    for i in range(len(X)):
        d = system.distance(np.repeat(X[i][None], len(locs), axis=0), locs)
        j = int(np.argmin(d))
        if d[j] > 10 * basin_tol:
            raise ConvergenceTimeout(
                f"terminal point {X[i]} is {d[j]:.3g} away from every registry entry"
            )
        ids.append(registry.points[j].id)
    return ids, t


def asymptotic_limit(system, p, registry, params=None, **kw):
    X = system.check_point(p)
    ids, t = asymptotic_limit_batch(system, X, registry, params, **kw)
    return ids[0], float(t[0])


def backward_flow_unstable(system, crit, q, s, params=None, flow_tol=1e-6):
    """Backward flow for time s of a point certified on W^u(crit).

    The unstable manifold carries a genuine backward flow; numerically it is
    the forward flow of the reversed field, stable here because the orbit
    converges to crit in reverse time.  The forward/backward round trip is
    verified to flow_tol.
    """
    params = params or FlowParams()
    # reversed-time deviations grow like exp(lambda * s); a tight local error
    # keeps the round-trip within flow_tol for the 2*tau horizons used here
    params = FlowParams(
        step_ctrl=min(params.step_ctrl, 1e-12),
        max_time=params.max_time,
        min_step=1e-15,
    )
    X = np.atleast_2d(np.asarray(q.coords if isinstance(q, Point) else q, dtype=float))

    class _Reversed:
        def __init__(self, sys):
            self._s = sys

        def gradient_field(self, Y):
            return -self._s.gradient_field(Y)

        def retract_array(self, Y):
            return self._s.retract_array(Y)

        def metric_inner(self, Y, U, V):
            return self._s.metric_inner(Y, U, V)

        def objective(self, Y):
            return self._s.objective(Y)

    back, _, _ = flow_batch(_Reversed(system), X, s, params)
    fwd, _, _ = flow_batch(system, back, s, params)
    err = float(system.distance(fwd, X)[0])
    if err > flow_tol:
        raise NumericalError(
            f"backward flow round trip error {err:.3e} > {flow_tol}; "
            f"point not certified on the unstable manifold of {crit.id}"
        )
    out = back[0]
    return system.point(out) if isinstance(q, Point) else out


# ---------------------------------------------------------------------------
# entrance times


def entrance_time_batch(system, A, X0, params=None, time_tol=1e-8, max_step=0.05,
                        monotone=False):
    """inf{s >= 0 : flow_s(p) in A} per point, inf -> np.inf.

    Event detection: sign change of the membership margin between accepted
    steps, then bisection in time down to time_tol.  With monotone=True the
    margin is known non-decreasing along trajectories (sublevel sets of the
    objective), so coarse stepping cannot miss a crossing.
    """
    params = params or FlowParams()
    X0 = np.atleast_2d(np.asarray(X0, dtype=float))
    m = len(X0)
    out = np.full(m, np.inf)
    inside0 = A.contains(X0)
    out[inside0] = 0.0
    todo = np.flatnonzero(~inside0)
    if todo.size == 0:
        return out

    stride = 1.0 if monotone else max_step
    step_params = FlowParams(
        step_ctrl=params.step_ctrl,
        max_time=params.max_time,
        max_step=params.max_step,
        min_step=params.min_step,
        freeze_grad=1e-13,
    )
    X = X0[todo].copy()
    t = np.zeros(len(todo))
    lo_t = t.copy()
    lo_X = X.copy()
    hit = np.zeros(len(todo), dtype=bool)
    active = np.ones(len(todo), dtype=bool)
    while active.any():
        idx = np.flatnonzero(active)
        dt = np.minimum(stride, params.max_time - t[idx])
        Y, _, _ = flow_batch(system, X[idx], dt, step_params)
        isin = A.contains(Y)
        ent = idx[isin]
        if ent.size:
            hit[ent] = True
            lo_t[ent] = t[ent]
            lo_X[ent] = X[ent]
            active[ent] = False
        X[idx] = Y
        t[idx] = t[idx] + dt
        frozen = idx[metric_grad_norm(system, Y) < 1e-11]
        if frozen.size:
            active[frozen] = False  # parked at a critical point outside A
        timeout = idx[t[idx] >= params.max_time - 1e-12]
        active[timeout] = False

    rows = np.flatnonzero(hit)
    if rows.size:
        # moving-base bisection: advance the stored state whenever the probe
        # stays outside, so total re-integrated time is ~2x the bracket
        base = lo_X[rows].copy()
        a_t = np.zeros(len(rows))
        b_t = np.minimum(stride, params.max_time - lo_t[rows])
        while np.max(b_t - a_t) > time_tol:
            dt = 0.5 * (b_t - a_t)
            Y, _, _ = flow_batch(system, base, dt, step_params)
            isin = A.contains(Y)
            b_t = np.where(isin, a_t + dt, b_t)
            outm = ~isin
            a_t = np.where(outm, a_t + dt, a_t)
            base[outm] = Y[outm]
        out[todo[rows]] = lo_t[rows] + b_t
    return out


def entrance_time(system, A, p, params=None, **kw):
    X = np.atleast_2d(np.asarray(p.coords if isinstance(p, Point) else p, dtype=float))
    return float(entrance_time_batch(system, A, X, params, **kw)[0])
