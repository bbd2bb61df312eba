"""Closed Riemannian manifolds of the model catalog and their isometries.

Every model uses a single global chart: points are stored as ambient
coordinate vectors (unit-radius vectors in R^3 for the sphere, reduced
lattice coordinates in R^2 for flat tori, and so on). All geometric
operations are vectorised over leading axes, so that an array of shape
``(k, ambient_dim)`` is a batch of ``k`` points.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ode
from .errors import PreconditionViolation, OdeDivergence

_EPS = 1e-15


def _norm(v):
    return np.sqrt(np.sum(v * v, axis=-1))


def _dot(u, w):
    return np.sum(u * w, axis=-1)


# ----------------------------------------------------------------------------
# Isometries
# ----------------------------------------------------------------------------


def rotation_matrix(axis, angle):
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    x, y, z = axis
    c, s = np.cos(angle), np.sin(angle)
    C = 1.0 - c
    return np.array(
        [
            [c + x * x * C, x * y * C - z * s, x * z * C + y * s],
            [y * x * C + z * s, c + y * y * C, y * z * C - x * s],
            [z * x * C - y * s, z * y * C + x * s, c + z * z * C],
        ]
    )


@dataclass(frozen=True)
class IsometryDescriptor:
    """An isometry acting on ambient coordinates as ``x -> A x + b``.

    ``kind`` is one of ``identity``, ``translation``, ``rotation`` or
    ``product``; ``params`` records the defining parameters for reports.
    Reduction to the fundamental domain (tori) is done by the manifold.
    """

    kind: str
    params: tuple
    matrix: np.ndarray = field(repr=False, compare=False)
    offset: np.ndarray = field(repr=False, compare=False)

    @property
    def is_identity(self):
        return bool(np.allclose(self.matrix, np.eye(len(self.offset)), atol=1e-15)
                    and np.allclose(self.offset, 0.0, atol=1e-15))

    def apply(self, x):
        return x @ self.matrix.T + self.offset

    def differential(self, v):
        return v @ self.matrix.T

    def inverse(self):
        A_inv = self.matrix.T
        return IsometryDescriptor(f"inverse({self.kind})", self.params, A_inv, -A_inv @ self.offset)

    def compose(self, other):
        """``self o other``."""
        return IsometryDescriptor(
            f"{self.kind}*{other.kind}",
            self.params + other.params,
            self.matrix @ other.matrix,
            self.matrix @ other.offset + self.offset,
        )

    def power(self, n):
        result = identity(len(self.offset))
        base = self if n >= 0 else self.inverse()
        for _ in range(abs(n)):
            result = base.compose(result)
        return result

    def to_dict(self):
        return {"kind": self.kind, "params": [float(p) if np.isscalar(p) else list(map(float, p))
                                               for p in self.params]}


def identity(ambient_dim):
    return IsometryDescriptor("identity", (), np.eye(ambient_dim), np.zeros(ambient_dim))


def translation(vector):
    v = np.asarray(vector, dtype=float)
    return IsometryDescriptor("translation", (tuple(v),), np.eye(len(v)), v)


def rotation(axis, angle):
    axis = np.asarray(axis, dtype=float)
    return IsometryDescriptor("rotation", (tuple(axis), float(angle)),
                              rotation_matrix(axis, angle), np.zeros(3))


def product(first, second):
    """Block product isometry of ``first`` (leading coordinates) and ``second``."""
    n1, n2 = len(first.offset), len(second.offset)
    A = np.zeros((n1 + n2, n1 + n2))
    A[:n1, :n1] = first.matrix
    A[n1:, n1:] = second.matrix
    b = np.concatenate([first.offset, second.offset])
    return IsometryDescriptor("product", first.params + second.params, A, b)


# ----------------------------------------------------------------------------
# Models
# ----------------------------------------------------------------------------


class ManifoldModel:
    """Base class of the catalog.

    Subclasses provide ``reduce``, ``proj_tangent``, ``log``, ``exp`` and
    the declared constants ``injrad`` and ``convexity_radius``.
    """

    name = "abstract"
    chart_id = "ambient"
    dim = 0
    ambient_dim = 0
    injrad = 0.0
    convexity_radius = 0.0

    # -- geometry ---------------------------------------------------------
    def reduce(self, x):
        return np.asarray(x, dtype=float)

    def proj_tangent(self, x, v):
        return v

    def inner(self, x, u, w):
        return _dot(u, w)

    def norm(self, x, v):
        return _norm(v)

    def dist(self, x, y):
        return _norm(self.log(x, y, check=False))

    def log(self, x, y, check=True):
        raise NotImplementedError

    def log_pair(self, x, y, check=True):
        """Return ``(log_x y, log_y x)``."""
        return self.log(x, y, check=check), self.log(y, x, check=check)

    def exp(self, x, v, t=1.0):
        raise NotImplementedError

    def geodesic_between(self, x, y, s):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return self.exp(x, s * self.log(x, y))

    def tangent_basis(self, x):
        """Orthonormal tangent frame, shape ``(..., dim, ambient_dim)``."""
        raise NotImplementedError

    def random_point(self, rng, n=None):
        raise NotImplementedError

    def random_tangent(self, rng, x, scale=1.0):
        v = rng.normal(size=np.shape(x))
        return scale * self.proj_tangent(x, v)

    # -- isometries ---------------------------------------------------------
    def apply_isometry(self, iso, x):
        return self.reduce(iso.apply(np.asarray(x, dtype=float)))

    def isometry_differential(self, iso, v):
        return iso.differential(np.asarray(v, dtype=float))

    def fixed_tangent_projection(self, iso, x, v):
        """Project ``v`` onto the tangent space of ``fix(iso)`` at ``x``."""
        if iso.is_identity:
            return v
        # fix(I) is totally geodesic; its tangent space is ker(dI - 1)
        basis = self.tangent_basis(x)
        out = np.zeros_like(v)
        for idx in np.ndindex(*np.shape(x)[:-1]):
            B = basis[idx]
            M = B @ (iso.matrix - np.eye(len(iso.offset))) @ B.T
            _, s, vt = np.linalg.svd(M)
            null = vt[s < 1e-10]
            coeffs = B @ v[idx]
            out[idx] = (null.T @ (null @ coeffs)) @ B
        return out

    def check_isometry(self, iso, rng, n=100, tol=1e-10):
        """Pullback metric check on ``n`` random points; returns max defect."""
        x = self.random_point(rng, n)
        u = self.random_tangent(rng, x)
        w = self.random_tangent(rng, x)
        Ix = self.apply_isometry(iso, x)
        du, dw = iso.differential(u), iso.differential(w)
        defect = np.abs(self.inner(Ix, du, dw) - self.inner(x, u, w))
        # the image tangents must be tangent at I(x)
        defect = np.maximum(defect, _norm(self.proj_tangent(Ix, du) - du))
        return float(np.max(defect))

    def describe(self):
        return {"model": self.name}

    def _check_range(self, length, check):
        if check and np.any(length >= self.injrad):
            raise PreconditionViolation(
                f"points at distance {float(np.max(length)):.4g} >= injectivity radius "
                f"bound {self.injrad:.4g}; refine the grid")


class RoundSphere(ManifoldModel):
    """Round 2-sphere of radius ``radius`` embedded in R^3."""

    name = "sphere"
    dim = 2
    ambient_dim = 3

    def __init__(self, radius=1.0):
        self.radius = float(radius)
        self.injrad = np.pi * self.radius
        self.convexity_radius = self.injrad / 3.0

    def describe(self):
        return {"model": self.name, "radius": self.radius}

    def reduce(self, x):
        x = np.asarray(x, dtype=float)
        return self.radius * x / _norm(x)[..., None]

    def proj_tangent(self, x, v):
        n = x / self.radius
        return v - _dot(v, n)[..., None] * n

    def _angle(self, x, y):
        return np.arctan2(_norm(np.cross(x, y)), _dot(x, y))

    def dist(self, x, y):
        return self.radius * self._angle(np.asarray(x, float), np.asarray(y, float))

    def log(self, x, y, check=True):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        theta = self._angle(x, y)
        self._check_range(self.radius * theta, check)
        u = y - (_dot(x, y) / self.radius ** 2)[..., None] * x
        nu = _norm(u)
        # theta/sin(theta) scaling, stable near zero
        small = nu < 1e-300
        factor = np.where(small, 1.0, self.radius * theta / np.where(small, 1.0, nu))
        return factor[..., None] * u

    def exp(self, x, v, t=1.0):
        x = np.asarray(x, dtype=float)
        v = t * np.asarray(v, dtype=float)
        nv = _norm(v)
        a = nv / self.radius
        sinc = np.where(a < 1e-8, 1.0 - a * a / 6.0, np.sin(a) / np.where(a < 1e-8, 1.0, a))
        out = np.cos(a)[..., None] * x + (sinc / 1.0)[..., None] * v
        return self.reduce(out)

    def tangent_basis(self, x):
        x = np.asarray(x, dtype=float)
        n = x / _norm(x)[..., None]
        ref = np.where((np.abs(n[..., 0]) < 0.9)[..., None], np.array([1.0, 0, 0]), np.array([0, 1.0, 0]))
        e1 = ref - _dot(ref, n)[..., None] * n
        e1 /= _norm(e1)[..., None]
        e2 = np.cross(n, e1)
        return np.stack([e1, e2], axis=-2)

    def random_point(self, rng, n=None):
        shape = (3,) if n is None else (n, 3)
        return self.reduce(rng.normal(size=shape))

    def curvature(self, x):
        return np.full(np.shape(x)[:-1], 1.0 / self.radius ** 2)


class FlatTorus(ManifoldModel):
    """Flat torus R^2 / L for the lattice spanned by the columns of ``basis``."""

    name = "torus"
    dim = 2
    ambient_dim = 2

    def __init__(self, basis=None):
        B = np.eye(2) if basis is None else np.asarray(basis, dtype=float)
        self.basis = B
        self.basis_inv = np.linalg.inv(B)
        shifts = np.array([[i, j] for i in range(-2, 3) for j in range(-2, 3) if (i, j) != (0, 0)])
        shortest = float(np.min(_norm(shifts @ B.T)))
        self.injrad = shortest / 2.0
        self.convexity_radius = self.injrad / 3.0
        self._shifts = np.array([[i, j] for i in range(-2, 3) for j in range(-2, 3)], dtype=float)

    def describe(self):
        return {"model": self.name, "basis": self.basis.tolist()}

    def reduce(self, x):
        x = np.asarray(x, dtype=float)
        c = x @ self.basis_inv.T
        c = c - np.floor(c)
        c = np.where(c >= 1.0, c - 1.0, c)
        return c @ self.basis.T

    def log(self, x, y, check=True):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        c = (y - x) @ self.basis_inv.T
        c = c - np.round(c)
        # minimum over lattice representatives with |shift components| <= 2
        cands = (c[..., None, :] + self._shifts) @ self.basis.T
        sq = np.sum(cands * cands, axis=-1)
        best = np.argmin(sq, axis=-1)
        v = np.take_along_axis(cands, best[..., None, None], axis=-2)[..., 0, :]
        if check:
            # flat metric: the shortest geodesic is unique unless two representatives tie
            two = np.sort(sq, axis=-1)[..., :2]
            tie = two[..., 1] - two[..., 0] <= 1e-12 * np.maximum(two[..., 1], 1.0)
            if np.any(tie):
                raise PreconditionViolation("points on each other's cut locus: the shortest geodesic "
                                            "is not unique")
        return v

    def exp(self, x, v, t=1.0):
        return self.reduce(np.asarray(x, dtype=float) + t * np.asarray(v, dtype=float))

    def tangent_basis(self, x):
        shape = np.shape(x)[:-1]
        return np.broadcast_to(np.eye(2), shape + (2, 2)).copy()

    def random_point(self, rng, n=None):
        shape = (2,) if n is None else (n, 2)
        return rng.random(shape) @ self.basis.T

    def curvature(self, x):
        return np.zeros(np.shape(x)[:-1])


def _level_set_rhs(inv_sq):
    """Geodesic equation on the quadric ``sum x_i^2 inv_sq_i = 1``."""

    def rhs(y):
        x, v = y[:, :3], y[:, 3:]
        xn = x * inv_sq
        mu = np.sum(v * v * inv_sq, axis=1) / np.sum(xn * xn, axis=1)
        return np.concatenate([v, -mu[:, None] * xn], axis=1)

    return rhs


class TriaxialEllipsoid(ManifoldModel):
    """Ellipsoid ``x^2/a^2 + y^2/b^2 + z^2/c^2 = 1`` with the induced metric.

    Geodesics are integrated numerically; ``log`` is computed by shooting
    (Gauss-Newton on the initial velocity, chord initialisation).
    """

    name = "ellipsoid"
    dim = 2
    ambient_dim = 3
    ode_atol = 1e-10
    newton_max_iter = 50

    def __init__(self, a=1.0, b=1.1, c=1.2):
        self.axes = np.array([a, b, c], dtype=float)
        self.inv_sq = 1.0 / self.axes ** 2
        s = np.sort(self.axes)
        k_max = s[2] ** 2 / (s[0] ** 2 * s[1] ** 2)
        # conjugate radius bound pi/sqrt(K_max); closed geodesics are longer than twice this
        self.injrad = float(np.pi / np.sqrt(k_max))
        self.convexity_radius = self.injrad / 3.0
        self._rhs = _level_set_rhs(self.inv_sq)

    def describe(self):
        return {"model": self.name, "axes": self.axes.tolist()}

    def _normal(self, x):
        n = x * self.inv_sq
        return n / _norm(n)[..., None]

    def reduce(self, x):
        x = np.asarray(x, dtype=float)
        return x / np.sqrt(np.sum(x * x * self.inv_sq, axis=-1))[..., None]

    def proj_tangent(self, x, v):
        n = self._normal(x)
        return v - _dot(v, n)[..., None] * n

    def tangent_basis(self, x):
        x = np.asarray(x, dtype=float)
        n = self._normal(x)
        ref = np.where((np.abs(n[..., 0]) < 0.9)[..., None], np.array([1.0, 0, 0]), np.array([0, 1.0, 0]))
        e1 = ref - _dot(ref, n)[..., None] * n
        e1 /= _norm(e1)[..., None]
        e2 = np.cross(n, e1)
        return np.stack([e1, e2], axis=-2)

    def shoot(self, x, v, t=1.0, t_eval=None):
        """Integrate the geodesic from ``x`` with velocity ``v`` up to time ``t``.

        Returns the end point, the end velocity and (optionally) samples.
        """
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        shape = x.shape
        y0 = np.concatenate([x.reshape(-1, 3), v.reshape(-1, 3)], axis=1)
        if y0.shape[0] == 0:
            return x.copy(), v.copy(), []
        speed = _norm(y0[:, 3:])
        h0 = np.minimum(t, 0.05 / np.maximum(speed, 1e-300))
        y1, samples = ode.integrate(self._rhs, y0, t, atol=self.ode_atol, rtol=0.0,
                                    t_eval=t_eval, h0=h0)
        drift = np.abs(np.sum(y1[:, :3] ** 2 * self.inv_sq, axis=1) - 1.0)
        if np.any(drift > 1e-7):
            raise OdeDivergence(f"geodesic left the ellipsoid (drift {float(drift.max()):.2e})")
        xe = self.reduce(y1[:, :3]).reshape(shape)
        ve = self.proj_tangent(xe, y1[:, 3:].reshape(shape))
        return xe, ve, [s[:, :3].reshape(shape) for s in samples]

    def exp(self, x, v, t=1.0):
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        x, v = np.broadcast_arrays(x, v)
        return self.shoot(x, t * v)[0]

    def _solve_log(self, x, y):
        """Shooting for the initial velocity; flattened inputs (N, 3)."""
        n = x.shape[0]
        basis = self.tangent_basis(x)  # (N, 2, 3)
        chord = self.proj_tangent(x, y - x)
        w = np.einsum("nij,nj->ni", basis, chord)
        # rescale the projected chord to the chord length
        cn = _norm(chord)
        scale = np.where(cn > 1e-300, _norm(y - x) / np.where(cn > 1e-300, cn, 1.0), 1.0)
        w = w * scale[:, None]
        active = _norm(y - x) > 1e-14
        w[~active] = 0.0
        end_vel = np.zeros_like(x)
        for _ in range(self.newton_max_iter):
            idx = np.nonzero(active)[0]
            if idx.size == 0:
                break
            B = basis[idx]
            wi = w[idx]
            h = 1e-7 * np.maximum(_norm(wi), 1e-3)
            v0 = np.einsum("ni,nij->nj", wi, B)
            v1 = v0 + h[:, None] * B[:, 0]
            v2 = v0 + h[:, None] * B[:, 1]
            xs = np.concatenate([x[idx]] * 3)
            ends, vels, _ = self.shoot(xs, np.concatenate([v0, v1, v2]))
            m = idx.size
            e0, e1, e2 = ends[:m], ends[m:2 * m], ends[2 * m:]
            r = e0 - y[idx]
            end_vel[idx] = vels[:m]
            J = np.stack([(e1 - e0) / h[:, None], (e2 - e0) / h[:, None]], axis=-1)  # (m,3,2)
            JtJ = np.einsum("nki,nkj->nij", J, J)
            Jtr = np.einsum("nki,nk->ni", J, r)
            step = np.linalg.solve(JtJ, Jtr[..., None])[..., 0]
            res = _norm(r)
            done = res < 1e-14 * max(1.0, float(np.max(self.axes)))
            w[idx[~done]] -= step[~done]
            active[idx[done]] = False
        else:
            if np.any(active) and np.max(res) > 1e-11:
                raise OdeDivergence("log shooting did not converge")
        v = np.einsum("ni,nij->nj", w, basis)
        return v, -end_vel

    def log_pair(self, x, y, check=True):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        x, y = np.broadcast_arrays(x, y)
        shape = x.shape
        v, back = self._solve_log(x.reshape(-1, 3), y.reshape(-1, 3))
        v = v.reshape(shape)
        back = back.reshape(shape)
        zero = _norm(x - y) <= 1e-14
        back[zero] = 0.0
        self._check_range(_norm(v), check)
        return v, back

    def log(self, x, y, check=True):
        return self.log_pair(x, y, check=check)[0]

    def random_point(self, rng, n=None):
        shape = (3,) if n is None else (n, 3)
        return self.reduce(rng.normal(size=shape))

    def curvature(self, x):
        x = np.asarray(x, dtype=float)
        s = np.sum(x * x * self.inv_sq ** 2, axis=-1)
        return 1.0 / (np.prod(self.axes) ** 2 * s ** 2)


class CircleTimesSphere(ManifoldModel):
    """Product S^1(length) x S^2(radius); coordinates ``(theta, x, y, z)``."""

    name = "circle_sphere"
    dim = 3
    ambient_dim = 4

    def __init__(self, length=2 * np.pi, radius=1.0):
        self.length = float(length)
        self.sphere = RoundSphere(radius)
        self.injrad = min(self.length / 2.0, self.sphere.injrad)
        self.convexity_radius = self.injrad / 3.0

    def describe(self):
        return {"model": self.name, "length": self.length, "radius": self.sphere.radius}

    def reduce(self, x):
        x = np.asarray(x, dtype=float)
        th = np.mod(x[..., :1], self.length)
        return np.concatenate([th, self.sphere.reduce(x[..., 1:])], axis=-1)

    def proj_tangent(self, x, v):
        return np.concatenate([v[..., :1], self.sphere.proj_tangent(x[..., 1:], v[..., 1:])], axis=-1)

    def log(self, x, y, check=True):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        d = y[..., :1] - x[..., :1]
        d = d - self.length * np.round(d / self.length)
        v = np.concatenate([d, self.sphere.log(x[..., 1:], y[..., 1:], check=False)], axis=-1)
        self._check_range(_norm(v), check)
        return v

    def exp(self, x, v, t=1.0):
        x = np.asarray(x, dtype=float)
        v = t * np.asarray(v, dtype=float)
        th = x[..., :1] + v[..., :1]
        return self.reduce(np.concatenate([th, self.sphere.exp(x[..., 1:], v[..., 1:])], axis=-1))

    def tangent_basis(self, x):
        x = np.asarray(x, dtype=float)
        sb = self.sphere.tangent_basis(x[..., 1:])
        shape = x.shape[:-1]
        out = np.zeros(shape + (3, 4))
        out[..., 0, 0] = 1.0
        out[..., 1:, 1:] = sb
        return out

    def random_point(self, rng, n=None):
        th = rng.random(() if n is None else (n,)) * self.length
        sp = self.sphere.random_point(rng, n)
        return np.concatenate([np.atleast_1d(th)[..., None] if n is not None else np.array([th]), sp],
                              axis=-1)


def make_model(spec):
    """Build a catalog model from a mapping such as ``{"model": "sphere", "radius": 1}``."""
    kind = spec.get("model")
    if kind == "sphere":
        return RoundSphere(spec.get("radius", 1.0))
    if kind == "torus":
        return FlatTorus(spec.get("basis"))
    if kind == "ellipsoid":
        a, b, c = spec.get("axes", (1.0, 1.1, 1.2))
        return TriaxialEllipsoid(a, b, c)
    if kind == "circle_sphere":
        return CircleTimesSphere(spec.get("length", 2 * np.pi), spec.get("radius", 1.0))
    raise ValueError(f"unknown model {kind!r}")


def make_isometry(model, spec):
    """Build an isometry from ``{"kind": ..., ...}`` for the given model."""
    kind = (spec or {}).get("kind", "identity")
    if kind == "identity":
        return identity(model.ambient_dim)
    if kind == "translation":
        if not isinstance(model, (FlatTorus, CircleTimesSphere)):
            raise ValueError(f"translations are not isometries of the {model.name}")
        if spec.get("vector") is None:
            raise ValueError("translation needs 'vector'")
        v = np.asarray(spec["vector"], dtype=float)
        if isinstance(model, CircleTimesSphere):
            return product(translation(v[:1]), identity(3))
        if v.shape != (model.ambient_dim,):
            raise ValueError(f"translation vector must have {model.ambient_dim} entries")
        return translation(v)
    if isinstance(model, FlatTorus):
        raise ValueError(f"{kind} isometries need a sphere factor")
    if kind == "rotation":
        axis = spec.get("axis", (0.0, 0.0, 1.0))
        iso = rotation(axis, spec["angle"])
        if isinstance(model, CircleTimesSphere):
            return product(identity(1), iso)
        return iso
    if kind == "product":
        return product(translation([spec["shift"]]), rotation(spec.get("axis", (0, 0, 1)), spec["angle"]))
    raise ValueError(f"unknown isometry kind {kind!r}")


# module-level spellings of the geometric primitives


def dist(M, x, y):
    return M.dist(x, y)


def geodesic_between(M, x, y, s):
    return M.geodesic_between(x, y, s)


def exp_map(M, v_base, v, t=1.0):
    return M.exp(v_base, v, t)


def log_map(M, x, y):
    return M.log(x, y)


def apply_isometry(M, iso, x):
    return M.apply_isometry(iso, x)


def isometry_differential(M, iso, v):
    return M.isometry_differential(iso, v)
