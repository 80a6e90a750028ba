"""Critical point location, certification, and orientations.

Seeds on a dense grid (or structured loop seeds) are refined by damped
Newton iteration on the constrained gradient; every accepted point is
certified nondegenerate and carries its Morse index, an orthonormal negative
eigenframe with deterministic signs, and spectral gap data.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DegeneracyError, RegularValueError
from .semiflow import FlowParams, flow_batch, metric_grad_norm
from .systems import LoopSpace, hessian_spectrum

CRIT_TOL = 1e-9
MERGE_TOL = 1e-6
DEGENERACY_REL = 1e-6


@dataclass
class CriticalPoint:
    id: str
    location: np.ndarray
    value: float
    index: int
    neg_frame: np.ndarray  # (index, ambient) metric-orthonormal eigenvectors
    eigenvalues: np.ndarray  # full ascending spectrum
    spectral_gap: float  # min |eigenvalue|
    pos_min_eig: float  # smallest positive eigenvalue


@dataclass(frozen=True)
class OrientedCriticalPoint:
    crit: str
    orientation: int  # +1 or -1 relative to the stored neg_frame order

    def __neg__(self):
        return OrientedCriticalPoint(self.crit, -self.orientation)


@dataclass
class CritRegistry:
    system_name: str
    level: float
    points: list = field(default_factory=list)
    separation: float | None = None

    def by_id(self, cid):
        for c in self.points:
            if c.id == cid:
                return c
        raise KeyError(cid)

    def of_index(self, k):
        return [c for c in self.points if c.index == k]

    @property
    def max_index(self):
        return max((c.index for c in self.points), default=-1)

    def euler_characteristic(self):
        return sum((-1) ** c.index for c in self.points)


@dataclass
class SearchConfig:
    seeds_per_dim: int = 24
    n_random: int = 256
    newton_steps: int = 80
    seed: int = 0
    grad_tol: float = CRIT_TOL
    merge_tol: float = MERGE_TOL


def _seed_points(system, cfg):
    rng = np.random.default_rng(cfg.seed)
    if isinstance(system, LoopSpace):
        base = np.linspace(0.0, 1.0, 4 * cfg.seeds_per_dim, endpoint=False)
        seeds = [system.winding_loop(q) for q in base]
        rnd = system.random_points(rng, cfg.n_random, sigma=0.12)
        return np.vstack([np.array(seeds), rnd])
    if system.periods is not None:
        grids = [
            np.linspace(0.0, p, cfg.seeds_per_dim, endpoint=False)
            for p in system.periods
        ]
        mesh = np.meshgrid(*grids, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)
    # embedded sphere: random cover plus the coordinate poles
    pts = system.random_points(rng, max(cfg.n_random, 20 * cfg.seeds_per_dim**2 // 10))
    poles = np.vstack([np.eye(3), -np.eye(3)])
    return np.vstack([pts, poles])


def _newton_refine(system, X, cfg):
    """Batched damped Newton on the (constrained) gradient field."""
    X = system.retract_array(np.array(X, dtype=float))
    for _ in range(cfg.newton_steps):
        g = system.gradient_field(X)
        gn = metric_grad_norm(system, X)
        live = gn > cfg.grad_tol * 0.1
        if not live.any():
            break
        B = system.tangent_basis_batch(X[live])  # (m, dim, amb)
        J = -system.field_jacobian(X[live])  # Jacobian of the gradient field
        M = np.einsum("mia,mab,mjb->mij", B, J, B)
        rhs = -np.einsum("mia,ma->mi", B, g[live])
        try:
            delta = np.linalg.solve(M, rhs[..., None])[..., 0]
        except np.linalg.LinAlgError:
            reg = M + 1e-12 * np.eye(M.shape[1])[None]
            delta = np.linalg.solve(reg, rhs[..., None])[..., 0]
        step = np.einsum("mi,mia->ma", delta, B)
        # damped update: halve the step while the residual grows
        trial = system.retract_array(X[live] + step)
        worse = metric_grad_norm(system, trial) > gn[live]
        for _ in range(8):
            if not worse.any():
                break
            step[worse] *= 0.5
            trial[worse] = system.retract_array(X[live][worse] + step[worse])
            worse = metric_grad_norm(system, trial) > gn[live]
        X[live] = trial
    return X


def _dedupe(system, X, tol):
    out = []
    for x in X:
        dup = False
        for y in out:
            if system.distance(x[None], y[None])[0] < tol:
                dup = True
                break
        if not dup:
            out.append(x)
    return out


def find_critical_points(system, level=np.inf, cfg=None):
    """Locate and certify every critical point with value <= level.

    Raises DegeneracyError if any certified point has an eigenvalue inside
    the degeneracy band, and RegularValueError if the level itself sits on a
    critical value.
    """
    cfg = cfg or SearchConfig()
    X = _newton_refine(system, _seed_points(system, cfg), cfg)
    good = metric_grad_norm(system, X) < cfg.grad_tol
    X = X[good]
    X = system.wrap(X)
    if isinstance(system, LoopSpace):
        w = system.winding_class(X)
        X = X[np.all(w == system.winding, axis=1)]
    candidates = _dedupe(system, X, cfg.merge_tol)

    entries = []
    for x in candidates:
        value = float(system.objective(x[None])[0])
        if value > level:
            continue
        spec = hessian_spectrum(system, system.point(x))
        eigs = np.array([v for v, _ in spec])
        scale = np.abs(eigs).max()
        if np.abs(eigs).min() < DEGENERACY_REL * scale:
            raise DegeneracyError(
                f"critical point at {x} of {system.name} has eigenvalue "
                f"{eigs[np.abs(eigs).argmin()]:.3e} inside the degeneracy band"
            )
        index = int(np.sum(eigs < 0))
        frame = []
        for v, t in spec[:index]:
            vec = t.components.copy()
            nz = np.flatnonzero(np.abs(vec) > 1e-8 * np.abs(vec).max())
            if vec[nz[0]] < 0:
                vec = -vec
            frame.append(vec)
        neg_frame = np.array(frame) if frame else np.zeros((0, system.ambient_dim))
        pos = eigs[eigs > 0]
        entries.append(
            CriticalPoint(
                id="",
                location=x,
                value=value,
                index=index,
                neg_frame=neg_frame,
                eigenvalues=eigs,
                spectral_gap=float(np.abs(eigs).min()),
                pos_min_eig=float(pos.min()) if pos.size else np.inf,
            )
        )

    entries.sort(key=lambda c: (c.value, tuple(np.round(c.location, 9))))
    for i, c in enumerate(entries):
        c.id = f"c{i}"

    if np.isfinite(level):
        vals = np.array([c.value for c in entries])
        if vals.size and np.abs(vals - level).min() < 1e-6:
            raise RegularValueError(f"level {level} is a critical value of {system.name}")

    return CritRegistry(system_name=system.name, level=float(level), points=entries)


def choose_rho(registry, system, params=None, n_shots=200, horizon=None, rng_seed=0):
    """Largest radius from a halving schedule with a clean shooting certificate.

    For every ordered pair (x, y) with ind(x) <= ind(y), x != y, Monte-Carlo
    trajectories started on the radius-rho sphere around x must never enter
    the radius-rho ball around y.
    """
    params = params or FlowParams()
    pts = registry.points
    if len(pts) < 2:
        registry.separation = 0.25
        return registry.separation
    min_sep = min(
        system.distance(a.location[None], b.location[None])[0]
        for i, a in enumerate(pts)
        for b in pts[i + 1 :]
    )
    rng = np.random.default_rng(rng_seed)
    rho = 0.45 * min_sep
    lam = min(c.spectral_gap for c in pts)
    horizon = horizon or max(20.0 / lam, 5.0)
    n_checks = 25

    for _ in range(8):
        ok = True
        for x in pts:
            targets = [
                y for y in pts if y.id != x.id and x.index <= y.index
            ]
            if not targets:
                continue
            V = rng.normal(size=(n_shots, system.ambient_dim))
            V = system.project_tangent(np.repeat(x.location[None], n_shots, axis=0), V)
            V /= np.linalg.norm(V, axis=1, keepdims=True)
            X = system.retract_array(x.location[None] + rho * V)
            dt = horizon / n_checks
            for _ in range(n_checks):
                X, _, _ = flow_batch(system, X, dt, params)
                for y in targets:
                    d = system.distance(X, np.repeat(y.location[None], len(X), axis=0))
                    if np.any(d < rho):
                        ok = False
                        break
                if not ok:
                    break
            if not ok:
                break
        if ok:
            registry.separation = rho
            return rho
        rho *= 0.5
    raise ConfigurationError(
        "no admissible separation radius found; system parameters look non-generic"
    )


def orient(crit, sign=1):
    """Oriented generator handle; orient(x,+1) and orient(x,-1) are negatives."""
    assert sign in (1, -1)
    return OrientedCriticalPoint(crit.id if isinstance(crit, CriticalPoint) else crit, sign)


def chain_vector(generators, oriented_points):
    """Integer coefficient vector of a formal sum of oriented points.

    `generators` fixes the column order (one representative per critical
    point); opposite orientations contribute opposite signs, so
    o_x + (-o_x) = 0 holds by construction.
    """
    index = {cid: i for i, cid in enumerate(generators)}
    vec = [0] * len(generators)
    for op in oriented_points:
        vec[index[op.crit]] += op.orientation
    return vec
