"""Configuration spaces and objective functions.

Each system bundles a manifold representation (ambient embedding for the
sphere, flat quotient coordinates for circle/torus/loop spaces), a smooth
objective, the metric, and the analytic ingredients the flow integrator and
frame transport need (gradient field and its Jacobian).

Batched conventions: points are arrays of shape (m, ambient_dim); all core
callables are vectorized over the first axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .charts import Axis, BoxChart, SphereCubeChart, graded_partition
from .errors import InvalidPointError, NumericalError

CONSTRAINT_TOL = 1e-10
SYMMETRY_TOL = 1e-7
CRIT_TOL = 1e-9

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class Point:
    coords: np.ndarray
    system: str

    def __post_init__(self):
        object.__setattr__(self, "coords", np.asarray(self.coords, dtype=float))


@dataclass(frozen=True)
class TangentVector:
    base: Point
    components: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "components", np.asarray(self.components, dtype=float))

    def norm(self, system):
        return float(
            np.sqrt(system.metric_inner(self.base.coords[None], self.components[None], self.components[None])[0])
        )


class RiemannianSystem:
    """Base class; subclasses fill in the geometry and the objective."""

    name = "abstract"
    dim = 0
    ambient_dim = 0
    periods = None  # per-ambient-coordinate period or None

    # -- objective and derivatives (batched) --------------------------------

    def objective(self, X):
        raise NotImplementedError

    def euclidean_gradient(self, X):
        raise NotImplementedError

    def gradient_field(self, X):
        """Metric gradient of the objective, tangent to the manifold."""
        raise NotImplementedError

    def field_jacobian(self, X):
        """Jacobian of -gradient_field (the flow right-hand side)."""
        raise NotImplementedError

    # -- geometry ------------------------------------------------------------

    def metric_inner(self, X, U, V):
        return np.einsum("ij,ij->i", U, V)

    def project_tangent(self, X, V):
        return V

    def retract_array(self, X):
        """Project coordinates back onto the manifold (batched)."""
        return X

    def wrap(self, X):
        """Canonical coordinate representative."""
        if self.periods is None:
            return X
        return np.mod(X, self.periods)

    def constraint_violation(self, X):
        return np.zeros(len(X))

    def distance(self, X, Y):
        """Metric-consistent distance between coordinate batches."""
        D = X - Y
        if self.periods is not None:
            D = D - self.periods * np.round(D / self.periods)
        return np.sqrt(self.metric_inner(X, D, D))

    def tangent_basis(self, x):
        """Metric-orthonormal basis of the tangent space at a single point."""
        raise NotImplementedError

    def tangent_basis_batch(self, X):
        return np.stack([self.tangent_basis(x) for x in X])

    def random_points(self, rng, m):
        raise NotImplementedError

    # -- charts ---------------------------------------------------------------

    def global_chart(self, n, refine_axes=None, h_min=None):
        raise NotImplementedError

    def local_chart(self, center, halfwidths, n, refine_axes=None, h_min=None):
        raise NotImplementedError

    # -- conveniences ----------------------------------------------------------

    def point(self, coords):
        return Point(np.asarray(coords, dtype=float), self.name)

    def check_point(self, p):
        X = np.atleast_2d(np.asarray(p.coords if isinstance(p, Point) else p, dtype=float))
        if float(self.constraint_violation(X).max()) > CONSTRAINT_TOL:
            raise InvalidPointError(
                f"point violates the {self.name} constraint beyond {CONSTRAINT_TOL}"
            )
        return X


class FlatSystem(RiemannianSystem):
    """Common machinery for flat quotient coordinate systems."""

    def gradient_field(self, X):
        return self.euclidean_gradient(X)

    def tangent_basis(self, x):
        return np.eye(self.ambient_dim)

    def random_points(self, rng, m):
        return rng.uniform(0.0, 1.0, size=(m, self.ambient_dim)) * self.periods

    def global_chart(self, n, refine_axes=None, h_min=None):
        axes = []
        for d in range(self.ambient_dim):
            refine = (refine_axes or {}).get(d, ())
            edges = graded_partition(
                0.0, self.periods[d], n, refine_at=refine, h_min=h_min, periodic=True
            )
            axes.append(Axis(edges, periodic=True))
        return BoxChart(axes, name=f"{self.name}-global")

    def local_chart(self, center, halfwidths, n, refine_axes=None, h_min=None,
                    frame=None):
        center = np.asarray(center, dtype=float)
        if frame is None:
            frame = np.eye(self.ambient_dim)

        def embed(U):
            return center[None, :] + U @ frame

        def pullback(P):
            D = P - center[None, :]
            if self.periods is not None:
                D = D - self.periods * np.round(D / self.periods)
            return D @ frame.T

        axes = []
        for d in range(self.dim):
            refine = (refine_axes or {}).get(d, ())
            edges = graded_partition(
                -halfwidths[d], halfwidths[d], n, refine_at=refine, h_min=h_min
            )
            axes.append(Axis(edges, periodic=False))
        chart = BoxChart(axes, embed=embed, pullback=pullback, name=f"{self.name}-local")
        chart.frame = frame
        chart.center = center
        return chart


class Circle(FlatSystem):
    """Quotient coordinate circle with objective amp*cos(2 pi theta)."""

    dim = 1
    ambient_dim = 1

    def __init__(self, amplitude=1.0):
        self.amplitude = float(amplitude)
        self.name = "circle"
        self.periods = np.array([1.0])

    def objective(self, X):
        return self.amplitude * np.cos(TWO_PI * X[:, 0])

    def euclidean_gradient(self, X):
        return (-self.amplitude * TWO_PI * np.sin(TWO_PI * X))

    def field_jacobian(self, X):
        # RHS = -grad; d(RHS)/dtheta = amp*(2 pi)^2 cos(2 pi theta)... sign:
        # grad' = -amp (2pi)^2 cos -> J = +amp (2pi)^2 cos
        return (self.amplitude * TWO_PI**2 * np.cos(TWO_PI * X))[:, :, None]


class FlatTorus(FlatSystem):
    """Flat 2-torus with a tilted double-cosine height.

    Unequal amplitudes keep the four critical values distinct; the gradient
    flow has one minimum, two saddles, one maximum.
    """

    dim = 2
    ambient_dim = 2

    def __init__(self, a1=1.0, a2=0.8):
        self.a = np.array([float(a1), float(a2)])
        self.name = "torus2"
        self.periods = np.array([1.0, 1.0])

    def objective(self, X):
        return np.cos(TWO_PI * X) @ self.a

    def euclidean_gradient(self, X):
        return -self.a * TWO_PI * np.sin(TWO_PI * X)

    def field_jacobian(self, X):
        m = len(X)
        J = np.zeros((m, 2, 2))
        diag = self.a * TWO_PI**2 * np.cos(TWO_PI * X)
        J[:, 0, 0] = diag[:, 0]
        J[:, 1, 1] = diag[:, 1]
        return J


class EmbeddedSphere(RiemannianSystem):
    """Unit sphere in R^3 with height objective z + beta*x^2.

    beta = 0 is the round height function (two critical points); beta > 1/2
    splits the top into two maxima and a saddle while keeping the south pole
    the unique minimum.
    """

    dim = 2
    ambient_dim = 3
    periods = None

    def __init__(self, beta=0.0):
        self.beta = float(beta)
        self.name = "sphere2" if beta == 0.0 else "sphere2_bump"

    def objective(self, X):
        return X[:, 2] + self.beta * X[:, 0] ** 2

    def euclidean_gradient(self, X):
        G = np.zeros_like(X)
        G[:, 0] = 2.0 * self.beta * X[:, 0]
        G[:, 2] = 1.0
        return G

    def _hess_ambient(self):
        H = np.zeros((3, 3))
        H[0, 0] = 2.0 * self.beta
        return H

    def gradient_field(self, X):
        G = self.euclidean_gradient(X)
        lam = np.einsum("ij,ij->i", X, G)
        return G - lam[:, None] * X

    def field_jacobian(self, X):
        # v(p) = -grad f + (p . grad f) p; J = dv/dp
        m = len(X)
        G = self.euclidean_gradient(X)
        H = self._hess_ambient()
        lam = np.einsum("ij,ij->i", X, G)
        J = np.empty((m, 3, 3))
        HP = X @ H.T
        for i in range(m):
            J[i] = -H + np.outer(X[i], G[i] + HP[i]) + lam[i] * np.eye(3)
        return J

    def project_tangent(self, X, V):
        return V - np.einsum("ij,ij->i", X, V)[:, None] * X

    def retract_array(self, X):
        return X / np.linalg.norm(X, axis=1, keepdims=True)

    def constraint_violation(self, X):
        return np.abs(np.linalg.norm(X, axis=1) - 1.0)

    def distance(self, X, Y):
        return np.linalg.norm(X - Y, axis=1)

    def tangent_basis(self, x):
        x = np.asarray(x, dtype=float)
        e = np.eye(3)
        k = int(np.argmin(np.abs(x)))
        t1 = e[k] - x[k] * x
        t1 /= np.linalg.norm(t1)
        t2 = np.cross(x, t1)
        return np.vstack([t1, t2])

    def random_points(self, rng, m):
        X = rng.normal(size=(m, 3))
        return X / np.linalg.norm(X, axis=1, keepdims=True)

    def global_chart(self, n, refine_axes=None, h_min=None):
        axes = []
        for d in range(3):
            refine = (refine_axes or {}).get(d, ())
            edges = graded_partition(-1.0, 1.0, n, refine_at=refine, h_min=h_min)
            axes.append(Axis(edges, periodic=False))
        return SphereCubeChart(axes)

    def local_chart(self, center, halfwidths, n, refine_axes=None, h_min=None,
                    frame=None):
        c = np.asarray(center, dtype=float)
        c = c / np.linalg.norm(c)
        if frame is None:
            frame = self.tangent_basis(c)

        def embed(UV):
            P = c[None, :] + UV @ frame
            return P / np.linalg.norm(P, axis=1, keepdims=True)

        def pullback(P):
            # central projection back to the tangent plane at c
            scale = P @ c
            return (P / scale[:, None] - c[None, :]) @ frame.T

        axes = []
        for d in range(2):
            refine = (refine_axes or {}).get(d, ())
            edges = graded_partition(
                -halfwidths[d], halfwidths[d], n, refine_at=refine, h_min=h_min
            )
            axes.append(Axis(edges, periodic=False))
        chart = BoxChart(axes, embed=embed, pullback=pullback, name=f"{self.name}-cap")
        chart.frame = frame
        chart.center = c
        return chart


class CosinePotential:
    """V(t, q) = sum_d amp_d cos(2 pi (q_d - speed_d t))."""

    def __init__(self, amplitude, speed=0.0, dim=1):
        self.amp = np.broadcast_to(np.asarray(amplitude, dtype=float), (dim,)).copy()
        self.speed = np.broadcast_to(np.asarray(speed, dtype=float), (dim,)).copy()
        self.dim = dim

    def value(self, t, Q):
        # t: (N,) time fractions; Q: (m, N, d)
        phase = TWO_PI * (Q - self.speed * t[None, :, None])
        return np.sum(self.amp * np.cos(phase), axis=(1, 2))

    def grad(self, t, Q):
        phase = TWO_PI * (Q - self.speed * t[None, :, None])
        return -self.amp * TWO_PI * np.sin(phase)

    def hess_diag(self, t, Q):
        phase = TWO_PI * (Q - self.speed * t[None, :, None])
        return -self.amp * TWO_PI**2 * np.cos(phase)


class LoopSpace(FlatSystem):
    """Polygonal free loop space of a flat torus T^d with N vertices.

    Coordinates are the stacked loop vertices (q_0, ..., q_{N-1}), each in
    [0,1)^d with minimal-image differences, so every winding class lives in
    the same coordinate torus.  The objective is the discrete classical
    action; with the (1/N)-scaled metric its negative gradient flow is the
    semi-discretized heat flow.
    """

    def __init__(self, base_dim=1, num_points=16, amplitude=0.4, speed=0.0, winding=0):
        assert num_points >= 3
        self.base_dim = int(base_dim)
        self.num_points = int(num_points)
        self.potential = CosinePotential(amplitude, speed, dim=self.base_dim)
        self.winding = np.broadcast_to(np.asarray(winding, dtype=int), (self.base_dim,)).copy()
        self.dim = self.base_dim * self.num_points
        self.ambient_dim = self.dim
        self.name = f"loopspace{self.num_points}"
        self.periods = np.ones(self.ambient_dim)
        self.t_frac = np.arange(self.num_points) / self.num_points

    def _loops(self, X):
        return X.reshape(len(X), self.num_points, self.base_dim)

    @staticmethod
    def _wrap_diff(D):
        return D - np.round(D)

    def winding_class(self, X):
        Q = self._loops(np.atleast_2d(X))
        D = self._wrap_diff(np.roll(Q, -1, axis=1) - Q)
        return np.rint(np.sum(D, axis=1)).astype(int)

    def objective(self, X):
        Q = self._loops(X)
        D = self._wrap_diff(np.roll(Q, -1, axis=1) - Q)
        kinetic = 0.5 * self.num_points * np.sum(D * D, axis=(1, 2))
        pot = self.potential.value(self.t_frac, Q) / self.num_points
        return kinetic - pot

    def euclidean_gradient(self, X):
        Q = self._loops(X)
        D = self._wrap_diff(np.roll(Q, -1, axis=1) - Q)
        lap = D - np.roll(D, 1, axis=1)  # q_{i+1} - 2 q_i + q_{i-1}
        dV = self.potential.grad(self.t_frac, Q)
        G = -self.num_points * lap - dV / self.num_points
        return G.reshape(len(X), self.ambient_dim)

    def metric_inner(self, X, U, V):
        return np.einsum("ij,ij->i", U, V) / self.num_points

    def gradient_field(self, X):
        # metric (1/N) I  =>  metric gradient = N * euclidean gradient
        return self.num_points * self.euclidean_gradient(X)

    def field_jacobian(self, X):
        m = len(X)
        N, d = self.num_points, self.base_dim
        Q = self._loops(X)
        hd = self.potential.hess_diag(self.t_frac, Q)  # (m, N, d)
        J = np.zeros((m, self.ambient_dim, self.ambient_dim))
        idx = np.arange(N)
        for dd in range(d):
            rows = idx * d + dd
            J[:, rows, rows] = -2.0 * N * N + hd[:, :, dd]
            J[:, rows, np.roll(rows, -1)] += N * N
            J[:, rows, np.roll(rows, 1)] += N * N
        return J

    def tangent_basis(self, x):
        return np.sqrt(self.num_points) * np.eye(self.ambient_dim)

    def distance(self, X, Y):
        D = X - Y
        D = D - np.round(D)
        return np.sqrt(np.einsum("ij,ij->i", D, D) / self.num_points)

    def constant_loop(self, q):
        q = np.atleast_1d(np.asarray(q, dtype=float))
        return np.tile(q, self.num_points)

    def winding_loop(self, q0=0.0):
        """A smooth representative of the configured winding class."""
        tt = self.t_frac[:, None]
        Q = q0 + tt * self.winding[None, :]
        return Q.reshape(self.ambient_dim)

    def random_points(self, rng, m, sigma=0.08):
        base = rng.uniform(0.0, 1.0, size=(m, 1, self.base_dim))
        spec = rng.normal(size=(m, self.num_points, self.base_dim))
        spec = np.fft.rfft(spec, axis=1)
        k = np.arange(spec.shape[1])[None, :, None]
        spec = spec / (1.0 + k**2)
        noise = np.fft.irfft(spec, n=self.num_points, axis=1).real
        Q = base + self.winding_loop(0.0).reshape(1, self.num_points, self.base_dim) + sigma * noise
        return Q.reshape(m, self.ambient_dim)

    def global_chart(self, n, refine_axes=None, h_min=None):
        raise NotImplementedError("cubical backend is gated to 2-D manifolds")

    def local_chart(self, *a, **k):
        raise NotImplementedError("cubical backend is gated to 2-D manifolds")


# ---------------------------------------------------------------------------
# public operations


def gradient(system, p):
    """Metric gradient of the objective at a point, as a TangentVector."""
    X = system.check_point(p)
    g = system.gradient_field(X)[0]
    return TangentVector(p if isinstance(p, Point) else system.point(X[0]), g)


def hessian_spectrum(system, p, h=1e-5):
    """Full tangent-space spectrum at a point, eigenvalues ascending.

    The Hessian operator is differenced from the gradient field along a
    metric-orthonormal tangent basis (retraction steps); away from critical
    points the result is chart-dependent through the chosen retraction.
    """
    X = system.check_point(p)[0]
    basis = system.tangent_basis(X)
    k = len(basis)
    H = np.zeros((k, k))
    cols = np.zeros((k, system.ambient_dim))
    for j in range(k):
        plus = system.retract_array((X + h * basis[j])[None])
        minus = system.retract_array((X - h * basis[j])[None])
        dg = (system.gradient_field(plus)[0] - system.gradient_field(minus)[0]) / (2 * h)
        cols[j] = dg
    for i in range(k):
        for j in range(k):
            H[i, j] = system.metric_inner(X[None], basis[i][None], cols[j][None])[0]
    asym = np.max(np.abs(H - H.T))
    scale = max(1.0, np.max(np.abs(H)))
    if asym > SYMMETRY_TOL * scale:
        raise NumericalError(
            f"numerical Hessian asymmetry {asym:.3e} exceeds tolerance at {X}"
        )
    H = 0.5 * (H + H.T)
    w, U = np.linalg.eigh(H)
    base = p if isinstance(p, Point) else system.point(X)
    out = []
    for i in range(k):
        vec = U[:, i] @ basis
        out.append((float(w[i]), TangentVector(base, vec)))
    return out


def finite_difference_check(system, p, h=1e-5):
    """Max relative error of the analytic directional derivative vs central
    differences over a tangent basis; the test harness for gradients."""
    assert 1e-8 <= h <= 1e-2
    X = system.check_point(p)[0]
    basis = system.tangent_basis(X)
    g = system.gradient_field(X[None])[0]
    worst = 0.0
    scale = max(1.0, float(np.abs(system.objective(X[None]))[0]))
    for v in basis:
        plus = system.retract_array((X + h * v)[None])
        minus = system.retract_array((X - h * v)[None])
        fd = (system.objective(plus)[0] - system.objective(minus)[0]) / (2 * h)
        analytic = system.metric_inner(X[None], g[None], v[None])[0]
        worst = max(worst, abs(fd - analytic) / scale)
    return worst


# ---------------------------------------------------------------------------
# registry of built-in systems


def make_system(name, **params):
    if name == "circle":
        return Circle(**params)
    if name == "sphere2":
        return EmbeddedSphere(beta=0.0)
    if name == "sphere2_bump":
        params.setdefault("beta", 0.8)
        return EmbeddedSphere(**params)
    if name == "torus2":
        return FlatTorus(**params)
    if name == "loopspace":
        return LoopSpace(**params)
    raise KeyError(f"unknown system '{name}'")


BUILTIN_SYSTEMS = ("circle", "sphere2", "sphere2_bump", "torus2", "loopspace")
