"""Broken invariant loops: grids, energies, distances and iteration.

A :class:`BrokenLoop` stores the node points ``zeta(tau_0), ..., zeta(tau_{k-1})``;
between consecutive nodes the curve is the unique shortest geodesic. The
end point ``zeta(tau_k)`` is fixed by the closure rule:

``periodic``
    ``zeta(tau_k) = zeta(0)``, together with the invariance constraint
    ``I(zeta(0)) = zeta(tau_{k'})`` (``zeta(0)`` in ``fix(I)`` when ``k' = 0``).
``invariant``
    ``zeta(tau_k) = I(zeta(0))``, i.e. an invariant curve of period ``tau_k``.

With the identity isometry and ``k' = 0`` the two rules coincide.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np

from .errors import (GridMismatch, InconsistentPeriods, NotMultiple, PreconditionViolation,
                     RadiusTooLarge)
from .manifold import IsometryDescriptor, ManifoldModel, identity, make_isometry, make_model

CONSTRAINT_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class TimeGrid:
    taus: np.ndarray
    k_prime: int = 0

    def __post_init__(self):
        taus = np.asarray(self.taus, dtype=float)
        object.__setattr__(self, "taus", taus)
        if taus.ndim != 1 or len(taus) < 2:
            raise ValueError("a grid needs at least two times")
        if taus[0] != 0.0:
            raise ValueError("grid must start at tau_0 = 0")
        if np.any(np.diff(taus) <= 0):
            raise ValueError("grid times must be strictly increasing")
        if not 0 <= self.k_prime < len(taus) - 1:
            raise ValueError("k_prime must lie in {0, ..., k-1}")

    @property
    def k(self):
        return len(self.taus) - 1

    @property
    def q(self):
        return float(self.taus[-1])

    @property
    def q_prime(self):
        return float(self.taus[self.k_prime])

    @property
    def steps(self):
        return np.diff(self.taus)

    def same_as(self, other):
        return (self.k_prime == other.k_prime and len(self.taus) == len(other.taus)
                and np.array_equal(self.taus, other.taus))

    def spacing_bound(self, injrad, b):
        """Largest admissible step ``injrad^2 / (9 q b)`` for the energy bound ``b``."""
        return injrad ** 2 / (9.0 * self.q * b)

    def satisfies_spacing(self, injrad, b):
        return bool(np.max(self.steps) < self.spacing_bound(injrad, b))

    @classmethod
    def uniform(cls, k, q=1.0, q_prime=0.0):
        """Uniform grid of ``k`` steps on ``[0, q]`` with one node pinned at ``q'``."""
        q, q_prime = float(q), float(q_prime)
        if not 0.0 <= q_prime < q:
            raise ValueError("q' must lie in [0, q)")
        taus = np.linspace(0.0, q, k + 1)
        taus[-1] = q
        k_prime = int(round(q_prime / q * k))
        if q_prime > 0.0:
            k_prime = min(max(k_prime, 1), k - 1)
            taus[k_prime] = q_prime
        else:
            k_prime = 0
        return cls(taus, k_prime)

    @classmethod
    def auto(cls, q, q_prime, injrad, b, margin=0.2):
        """Smallest even ``k`` whose uniform grid satisfies the spacing bound with margin."""
        q, q_prime = float(q), float(q_prime)
        bound = injrad ** 2 / (9.0 * q * b) / (1.0 + margin)
        k = max(2, 2 * math.ceil(q / bound / 2))
        while True:
            grid = cls.uniform(k, q, q_prime)
            if np.max(grid.steps) < bound:
                return grid
            k += 2

    def to_dict(self):
        return {"grid": self.taus.tolist(), "k_prime": self.k_prime}


@dataclass(frozen=True, eq=False)
class BrokenLoop:
    model: ManifoldModel
    grid: TimeGrid
    nodes: np.ndarray
    isometry: IsometryDescriptor = None
    closure: str = "periodic"

    def __post_init__(self):
        nodes = np.array(self.nodes, dtype=float)
        if nodes.shape != (self.grid.k, self.model.ambient_dim):
            raise ValueError(f"expected nodes of shape {(self.grid.k, self.model.ambient_dim)}, "
                             f"got {nodes.shape}")
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        if self.isometry is None:
            object.__setattr__(self, "isometry", identity(self.model.ambient_dim))
        if self.closure not in ("periodic", "invariant"):
            raise ValueError("closure must be 'periodic' or 'invariant'")

    @property
    def k(self):
        return self.grid.k

    @property
    def closure_map(self):
        return self.isometry if self.closure == "invariant" else identity(self.model.ambient_dim)

    @property
    def has_constraint(self):
        return self.closure == "periodic" and not self.isometry.is_identity

    def with_nodes(self, nodes):
        return replace(self, nodes=np.asarray(nodes, dtype=float))

    def end_node(self):
        return self.model.apply_isometry(self.closure_map, self.nodes[0])

    def extended_nodes(self):
        """Nodes ``zeta(tau_0), ..., zeta(tau_k)``."""
        return np.vstack([self.nodes, self.end_node()[None]])

    def segment_lengths(self):
        ext = self.extended_nodes()
        return self.model.dist(ext[:-1], ext[1:])

    def constraint_residual(self):
        if self.closure != "periodic":
            return 0.0
        p0 = self.nodes[0]
        return float(self.model.dist(self.model.apply_isometry(self.isometry, p0),
                                     self.nodes[self.grid.k_prime]))

    def project_constraint(self):
        """Re-impose ``zeta(tau_{k'}) = I(zeta(0))`` (periodic loops, ``k' > 0``)."""
        if not self.has_constraint or self.grid.k_prime == 0:
            return self
        nodes = np.array(self.nodes)
        nodes[self.grid.k_prime] = self.model.apply_isometry(self.isometry, nodes[0])
        return self.with_nodes(nodes)

    def check_segments(self, limit=None):
        limit = self.model.injrad if limit is None else limit
        lengths = self.segment_lengths()
        if np.any(lengths >= limit):
            raise PreconditionViolation(
                f"segment of length {float(lengths.max()):.4g} exceeds {limit:.4g}")
        return lengths

    def to_dict(self):
        return {
            **self.grid.to_dict(),
            "nodes": [[self.model.chart_id, *map(float, row)] for row in self.nodes],
            "closure": self.closure,
            "isometry": isometry_to_dict(self.isometry),
            "manifold": self.model.describe(),
        }


def isometry_to_dict(iso):
    return {"kind": iso.kind, "matrix": iso.matrix.tolist(), "offset": iso.offset.tolist()}


def isometry_from_dict(data):
    return IsometryDescriptor(data["kind"], (), np.asarray(data["matrix"], float),
                              np.asarray(data["offset"], float))


def loop_from_dict(data, model=None):
    model = make_model(data["manifold"]) if model is None else model
    grid = TimeGrid(np.asarray(data["grid"], float), int(data["k_prime"]))
    nodes = np.array([row[1:] for row in data["nodes"]], dtype=float)
    iso = isometry_from_dict(data["isometry"]) if "isometry" in data else None
    return BrokenLoop(model, grid, nodes, iso, data.get("closure", "periodic"))


def constant_loop(model, grid, point, isometry=None, closure="periodic"):
    point = model.reduce(np.asarray(point, dtype=float))
    return BrokenLoop(model, grid, np.tile(point, (grid.k, 1)), isometry, closure)


# ----------------------------------------------------------------------------
# Energies and distances
# ----------------------------------------------------------------------------


def _segment_energy_terms(loop):
    lengths = loop.segment_lengths()
    return lengths ** 2 / loop.grid.steps


def energy_Fq(loop):
    """Energy ``(1/q) sum_i dist(p_i, p_{i+1})^2 / (tau_{i+1} - tau_i)``."""
    return float(np.sum(_segment_energy_terms(loop)) / loop.grid.q)


def energy_Fq_prime(loop):
    """Energy of the initial piece ``[0, tau_{k'}]``; zero when ``k' = 0``."""
    kp = loop.grid.k_prime
    if kp == 0:
        return 0.0
    return float(np.sum(_segment_energy_terms(loop)[:kp]) / loop.grid.q_prime)


def energies(loop):
    """Both energies from one evaluation of the segment lengths."""
    terms = _segment_energy_terms(loop)
    kp = loop.grid.k_prime
    fq = float(np.sum(terms) / loop.grid.q)
    fqp = 0.0 if kp == 0 else float(np.sum(terms[:kp]) / loop.grid.q_prime)
    return fq, fqp


def _require_same_grid(a, b):
    if not a.grid.same_as(b.grid) or a.closure != b.closure:
        raise GridMismatch("loops live on different grids")


def node_distances(a, b):
    _require_same_grid(a, b)
    return a.model.dist(a.nodes, b.nodes)


def dist_upsilon(a, b):
    """Maximum over nodes of the distance between corresponding nodes."""
    return float(np.max(node_distances(a, b)))


def in_polydisc(center, r, candidate):
    if r > center.model.convexity_radius * (1 + 1e-12):
        raise RadiusTooLarge(f"radius {r} exceeds the convexity radius {center.model.convexity_radius}")
    return dist_upsilon(center, candidate) < r


def interpolate_loops(a, b, s):
    """Nodewise geodesic interpolation between two loops on the same grid."""
    _require_same_grid(a, b)
    if s == 0.0:
        return a
    if s == 1.0:
        return b
    model = a.model
    nodes = model.geodesic_between(a.nodes, b.nodes, s)
    out = a.with_nodes(nodes)
    if out.has_constraint and out.constraint_residual() > CONSTRAINT_TOL:
        out = out.project_constraint()
    return out


# ----------------------------------------------------------------------------
# Periods and iteration
# ----------------------------------------------------------------------------


def _frac(x):
    return x if isinstance(x, Fraction) else Fraction(x).limit_denominator(10 ** 9)


@dataclass(frozen=True)
class PeriodData:
    """Exact period bookkeeping: minimal period ``p``, basic period ``q``, residue ``q'``, order ``m``."""

    p: Fraction
    q: Fraction
    q_prime: Fraction
    m: int

    def __post_init__(self):
        for name in ("p", "q", "q_prime"):
            object.__setattr__(self, name, _frac(getattr(self, name)))
        if self.p <= 0 or self.q <= 0:
            raise ValueError("periods must be positive")
        if (self.q / self.p).denominator != 1:
            raise NotMultiple(f"q={self.q} is not a multiple of p={self.p}")
        if not 0 <= self.q_prime < self.q:
            raise InconsistentPeriods("q' must lie in [0, q)")
        if self.m < 0:
            raise ValueError("m must be non-negative")

    @classmethod
    def from_m(cls, p, q, m):
        p, q = _frac(p), _frac(q)
        return cls(p, q, (m * p + 1) % q, m)

    @property
    def total(self):
        """The iterated period ``m p + 1``."""
        return self.m * self.p + 1

    @property
    def copies(self):
        return math.floor(self.total / self.q)

    def consistent(self):
        return self.total >= self.q and (self.total - self.q_prime) % self.q == 0


def residue_partition(p, q, m_range):
    """Group ``m`` by the class of ``m p + 1`` modulo ``q``; labels lie in ``[0, q)``."""
    p, q = _frac(p), _frac(q)
    if p <= 0 or q <= 0:
        raise ValueError("periods must be positive")
    if (q / p).denominator != 1:
        raise NotMultiple(f"q={q} is not a multiple of p={p}")
    classes = {}
    for m in m_range:
        classes.setdefault((m * p + 1) % q, []).append(m)
    return classes


def _check_period_grid(loop, pd):
    g = loop.grid
    if loop.closure != "periodic":
        raise InconsistentPeriods("iteration acts on periodic loops")
    if not pd.consistent():
        raise InconsistentPeriods(f"m p + 1 = {pd.total} is not >= q or not congruent to q' mod q")
    if abs(g.q - float(pd.q)) > 1e-12 or abs(g.q_prime - float(pd.q_prime)) > 1e-12:
        raise InconsistentPeriods(
            f"grid has (q, q') = ({g.q}, {g.q_prime}), period data ({pd.q}, {pd.q_prime})")


def iterate_embedding(loop, pd):
    """The iteration map: repeat the loop ``floor((mp+1)/q)`` times, then its first ``k'`` nodes.

    The result is an invariant curve of period ``mp+1`` (closure ``zeta(mp+1) = I(zeta(0))``).
    """
    _check_period_grid(loop, pd)
    g = loop.grid
    n = pd.copies
    kp = g.k_prime
    q = g.q
    taus = [h * q + t for h in range(n) for t in g.taus[:-1]]
    taus += [n * q + t for t in g.taus[: kp + 1]]
    taus[-1] = float(pd.total)
    nodes = np.vstack([np.tile(loop.nodes, (n, 1)), loop.nodes[:kp]])
    return BrokenLoop(loop.model, TimeGrid(np.asarray(taus)), nodes, loop.isometry, "invariant")


def iterated_energy_identity_check(loop, pd):
    """Compare the direct energy of the iterate with ``F^q + q'/(mp+1) (F^{q'} - F^q)``."""
    lhs = energy_Fq(iterate_embedding(loop, pd))
    fq, fqp = energies(loop)
    rhs = fq + float(pd.q_prime) / float(pd.total) * (fqp - fq)
    return lhs, rhs, abs(lhs - rhs)


# ----------------------------------------------------------------------------
# Critical records
# ----------------------------------------------------------------------------


@dataclass
class GeodesicRecord:
    loop: BrokenLoop
    energy: float
    grad_norm: float
    index: int = None
    nullity: int = None
    image_signature: np.ndarray = field(default=None, repr=False)
    period: PeriodData = None
    converged: bool = True
    speed_defect: float = None

    def to_dict(self):
        return {
            "energy": self.energy,
            "grad_norm": self.grad_norm,
            "index": self.index,
            "nullity": self.nullity,
            "converged": self.converged,
            "loop": self.loop.to_dict(),
        }


def record_from_dict(data, model=None):
    loop = loop_from_dict(data["loop"], model)
    return GeodesicRecord(loop, data["energy"], data["grad_norm"], data.get("index"),
                          data.get("nullity"))


__all__ = [
    "TimeGrid", "BrokenLoop", "PeriodData", "GeodesicRecord", "energy_Fq", "energy_Fq_prime",
    "energies", "dist_upsilon", "in_polydisc", "interpolate_loops", "iterate_embedding",
    "iterated_energy_identity_check", "residue_partition", "constant_loop", "loop_from_dict",
    "make_isometry", "random_loop", "PeriodData", "GeodesicRecord",
]


def random_loop(model, grid, rng, isometry=None, closure="periodic", winding=None, amplitude=0.2,
                modes=3, base=None):
    """A random smooth loop on ``grid``.

    The loop is a reference path (the lattice line of class ``winding`` on the
    torus and ``S^1`` factor, otherwise the geodesic from a random base point to
    its image under the closure map) perturbed by a random tangent field made of
    ``modes`` low Fourier modes of size ``amplitude``. Periodic loops are then
    projected onto the invariance constraint.
    """
    iso = identity(model.ambient_dim) if isometry is None else isometry
    tmp = BrokenLoop(model, grid, np.zeros((grid.k, model.ambient_dim)) + model.reduce(
        model.random_point(rng)), iso, closure)
    x0 = model.random_point(rng) if base is None else model.reduce(np.asarray(base, float))
    s = grid.taus[:-1] / grid.q
    if winding is not None:
        w = np.asarray(winding, dtype=float)
        if hasattr(model, "basis"):
            shift = model.basis @ w
        else:
            shift = np.zeros(model.ambient_dim)
            shift[0] = model.length * w[0]
        ref = model.reduce(x0 + s[:, None] * shift)
    elif tmp.has_constraint and grid.k_prime > 0:
        # out to I(x0) over [0, q'], back to x0 over [q', q]
        mid = model.apply_isometry(iso, x0)
        sp = grid.q_prime / grid.q
        out = np.minimum(s / sp, 1.0)
        back = np.clip((s - sp) / (1.0 - sp), 0.0, 1.0)
        first = s < sp
        a = np.where(first[:, None], x0, mid)
        b = np.where(first[:, None], mid, x0)
        ref = model.exp(a, np.where(first, out, back)[:, None] * model.log(a, b, check=False))
    else:
        end = model.apply_isometry(tmp.closure_map, x0)
        ref = model.exp(np.tile(x0, (grid.k, 1)), s[:, None] * model.log(x0[None], end[None], check=False))
    field_ = np.zeros_like(ref)
    for j in range(1, modes + 1):
        a, b = rng.normal(size=(2, model.ambient_dim))
        field_ += (np.outer(np.cos(2 * np.pi * j * s), a) + np.outer(np.sin(2 * np.pi * j * s), b)) / j
    field_ = model.proj_tangent(ref, field_)
    size = np.max(np.linalg.norm(field_, axis=-1))
    if size > 0:
        field_ *= amplitude / size
    loop = BrokenLoop(model, grid, model.exp(ref, field_), iso, closure)
    return loop.project_constraint()
