"""Families of loops: geodesic-join simplices, Bangert homotopies, escape and minimax."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .discrete import LoopChart, classify_spectrum, energy_batch, gradient_batch, gradient_norm, step_nodes
from .errors import (IndexTooSmall, NoConvergence, NotCritical, PeriodMismatch, RadiusTooLarge,
                     VerticesTooFar)
from .flows import FlowConfig, refine_critical
from .loopspace import BrokenLoop, TimeGrid, dist_upsilon, interpolate_loops, iterate_embedding

log = logging.getLogger(__name__)


# ----------------------------------------------------------------------------
# Families
# ----------------------------------------------------------------------------


@dataclass
class LoopFamily:
    """Loops sampled over a parameter domain, all on the grid of ``template``.

    ``params`` has shape ``(n, d)``; ``nodes`` has shape ``(n, k, D)``.
    """

    template: BrokenLoop
    params: np.ndarray
    nodes: np.ndarray
    boundary: np.ndarray = None

    def __post_init__(self):
        self.params = np.asarray(self.params, dtype=float)
        if self.params.ndim == 1:
            self.params = self.params[:, None]
        self.nodes = np.asarray(self.nodes, dtype=float)
        if self.boundary is None:
            self.boundary = np.zeros(len(self.params), dtype=bool)
            if self.dim == 1:
                self.boundary[[0, -1]] = True

    @classmethod
    def from_loops(cls, params, loops, boundary=None):
        return cls(loops[0], params, np.stack([l.nodes for l in loops]), boundary)

    @property
    def dim(self):
        return self.params.shape[1]

    def __len__(self):
        return len(self.params)

    def loop(self, i):
        return self.template.with_nodes(self.nodes[i])

    def loops(self):
        return [self.loop(i) for i in range(len(self))]

    def energies(self):
        return energy_batch(self.template, self.nodes)

    def max_energy(self):
        return float(np.max(self.energies()))

    def boundary_max(self):
        return float(np.max(self.energies()[self.boundary]))

    def at(self, x):
        """Loop at parameter ``x`` of a one-parameter family (geodesic interpolation between samples)."""
        t = self.params[:, 0]
        i = int(np.clip(np.searchsorted(t, x, side="right") - 1, 0, len(t) - 2))
        s = 0.0 if t[i + 1] == t[i] else (x - t[i]) / (t[i + 1] - t[i])
        s = float(np.clip(s, 0.0, 1.0))
        return interpolate_loops(self.loop(i), self.loop(i + 1), s)

    def to_dict(self):
        return {"params": self.params.tolist(),
                "loops": [dict(self.loop(i).to_dict(), param=self.params[i].tolist())
                          for i in range(len(self))]}


# ----------------------------------------------------------------------------
# Simplices
# ----------------------------------------------------------------------------


@dataclass
class LoopSimplex:
    """A simplex of loops spanned by vertices pairwise closer than ``delta``.

    Parameters ``x`` live in ``{x_i >= 0, sum x <= 1}``; vertex 0 sits at the
    origin and vertex ``l`` at the unit vector ``e_l``. Face ``0`` is
    ``sum x = 1`` and face ``l >= 1`` is ``x_l = 0``.
    """

    vertices: list
    delta: float
    params: np.ndarray = None
    samples: list = field(default_factory=list)

    @property
    def dim(self):
        return len(self.vertices) - 1

    def __call__(self, x):
        return simplex_point(self.vertices, np.asarray(x, dtype=float))

    def face(self, l):
        verts = [v for i, v in enumerate(self.vertices) if i != l]
        return LoopSimplex(verts, self.delta)

    @staticmethod
    def face_embedding(l, y, dim):
        """Parameters in the full simplex of the point ``y`` of face ``l``."""
        y = np.asarray(y, dtype=float)
        if l == 0:
            return np.concatenate([[1.0 - np.sum(y)], y])
        return np.insert(y, l - 1, 0.0)


def simplex_point(vertices, x):
    """Value at ``x`` of the simplex built from ``vertices`` by the affine-slope rule.

    Interior points lie on the line ``x + t (1, ..., 1)``; it leaves the simplex
    at ``alpha(x)`` on a face ``x_i = 0`` and at ``omega(x)`` on ``sum x = 1``.
    The loop at ``x`` is the loop-space geodesic between the (inductively
    defined) face values at those two points.
    """
    j = len(vertices) - 1
    if j == 0:
        return vertices[0]
    zero = np.nonzero(x == 0.0)[0]
    if zero.size:
        l = int(zero[0]) + 1
        return simplex_point(vertices[:l] + vertices[l + 1:], np.delete(x, l - 1))
    total = float(np.sum(x))
    if total >= 1.0:
        return simplex_point(vertices[1:], x[1:])
    lo = float(np.min(x))
    hi = (1.0 - total) / j
    alpha = x - lo
    alpha[np.argmin(x)] = 0.0
    omega = x + hi
    a = simplex_point(vertices, alpha)
    b = simplex_point(vertices[1:], omega[1:])
    return interpolate_loops(a, b, lo / (lo + hi))


def barycentric_grid(dim, density):
    """Lattice points ``a / density`` with non-negative integer ``a`` and ``sum a <= density``."""
    if dim == 0:
        return np.zeros((1, 0))
    pts = [np.zeros(0, dtype=int)]
    for _ in range(dim):
        pts = [np.append(p, i) for p in pts for i in range(density + 1 - int(p.sum()))]
    return np.array(pts, dtype=float).reshape(-1, dim) / density


def build_simplex(vertices, delta, density=4):
    """Sampled simplex of loops with the given vertices.

    Raises :class:`VerticesTooFar` if two vertices are ``delta`` or more apart
    and :class:`RadiusTooLarge` if ``delta`` exceeds the convexity radius.
    """
    model = vertices[0].model
    if delta > model.convexity_radius * (1 + 1e-12):
        raise RadiusTooLarge(f"delta {delta} exceeds the convexity radius {model.convexity_radius}")
    for i in range(len(vertices)):
        for j in range(i + 1, len(vertices)):
            d = dist_upsilon(vertices[i], vertices[j])
            if d >= delta:
                raise VerticesTooFar(f"vertices {i} and {j} are {d:.4g} apart (delta {delta})")
    simplex = LoopSimplex(list(vertices), delta)
    dim = simplex.dim
    simplex.params = barycentric_grid(dim, density) if dim else np.zeros((1, 0))
    simplex.samples = [simplex(x) for x in simplex.params]
    return simplex


def continuity_radius(family, eps_fraction=0.01, level=None):
    """Largest sampled ``delta`` such that loops closer than ``delta`` differ in energy by ``< eps``.

    ``eps`` is ``eps_fraction`` times ``level`` (default: the family maximum).
    """
    E = family.energies()
    level = float(np.max(E)) if level is None else level
    eps = eps_fraction * abs(level)
    model = family.template.model
    n = len(family)
    best = model.convexity_radius
    for i in range(n):
        d = np.max(model.dist(family.nodes[i][None], family.nodes), axis=1)
        bad = np.abs(E - E[i]) >= eps
        if np.any(bad):
            best = min(best, float(np.min(d[bad])))
    return best


# ----------------------------------------------------------------------------
# Bangert homotopy
# ----------------------------------------------------------------------------


@dataclass
class BangertHomotopyResult:
    m: int
    s_values: np.ndarray
    x_values: np.ndarray
    energies: np.ndarray  # (n_s, n_x): E^{mq} of theta_s(x)
    theta1: LoopFamily
    boundary_max: float
    gap: float
    base_defect: float = 0.0
    boundary_defect: float = 0.0

    def to_dict(self):
        return {"m": self.m, "gap": self.gap, "m_gap": self.m * self.gap,
                "boundary_max": self.boundary_max, "max_theta1": float(np.max(self.energies[-1])),
                "base_defect": self.base_defect, "boundary_defect": self.boundary_defect}


def slot_parameters(m, s, x):
    """Parameters ``z_l(s, x) = (1-s) x + s clamp(m x - l + 1, 0, 1)`` of the ``m`` slots."""
    l = np.arange(1, m + 1)
    return (1.0 - s) * x + s * np.clip(m * x - l + 1, 0.0, 1.0)


def _check_family(theta0):
    tpl = theta0.template
    if tpl.closure != "periodic" or not tpl.isometry.is_identity:
        raise PeriodMismatch("Bangert homotopies act on closed loops (identity isometry, periodic)")
    if theta0.dim != 1:
        raise PeriodMismatch("only one-parameter families are supported")


def bangert_loop(theta0, m, s, x):
    """The loop ``theta_s(x)`` of period ``m q``: ``m`` slots, slot ``l`` at ``theta0(z_l(s, x))``.

    Slot ``l`` contributes the nodes of its loop; the segment closing one slot
    runs to the first node of the next, so junctions are geodesic.
    """
    tpl = theta0.template
    z = slot_parameters(m, s, x)
    slots = [theta0.at(float(zl)).nodes for zl in z]
    g = tpl.grid
    taus = np.concatenate([h * g.q + g.taus[:-1] for h in range(m)] + [[m * g.q]])
    return BrokenLoop(tpl.model, TimeGrid(taus), np.vstack(slots), tpl.isometry, "periodic"), z


def bangert_homotopy(theta0, m, s_values=None, n_x=None):
    """Deform the ``m``-fold iterate of a one-parameter family by pulling one loop at a time.

    Returns energies of ``theta_s`` on an ``(s, x)`` grid, the end family
    ``theta_1`` and the gap ``max E^{mq}(theta_1) - max_boundary E^q(theta_0)``.
    """
    _check_family(theta0)
    if m < 1:
        raise ValueError("m must be >= 1")
    s_values = np.linspace(0.0, 1.0, 5) if s_values is None else np.asarray(s_values, float)
    n_x = max(len(theta0), 16 * m) + 1 if n_x is None else n_x
    xs = np.linspace(0.0, 1.0, n_x)
    tpl = theta0.template
    E = np.zeros((len(s_values), n_x))
    base_defect = 0.0
    boundary_defect = 0.0
    last = []
    for a, s in enumerate(s_values):
        loops = []
        for b, x in enumerate(xs):
            loop, z = bangert_loop(theta0, m, s, x)
            loops.append(loop)
            # base point tracking: theta_s(x)(0) = theta0(y_s(x))(0) with y_s(x) = z_1(s, x)
            ref = theta0.at(float(z[0])).nodes[0]
            base_defect = max(base_defect, float(tpl.model.dist(loop.nodes[0], ref)))
        nodes = np.stack([l.nodes for l in loops])
        E[a] = energy_batch(loops[0], nodes)
        for b in (0, n_x - 1):
            it = np.tile(theta0.at(xs[b]).nodes, (m, 1))
            boundary_defect = max(boundary_defect, float(np.max(np.abs(nodes[b] - it))))
        last = loops
    theta1 = LoopFamily.from_loops(xs, last)
    bmax = theta0.boundary_max()
    gap = float(np.max(E[-1]) - bmax)
    return BangertHomotopyResult(m, s_values, xs, E, theta1, bmax, gap, base_defect, boundary_defect)


def bangert_decay(theta0, ms=(2, 4, 8, 16), s_values=(0.0, 1.0)):
    """Gaps ``Delta(m)`` over ``ms`` with the fitted law ``Delta ~ C m^p``."""
    rows = []
    for m in ms:
        res = bangert_homotopy(theta0, m, s_values)
        rows.append({"m": m, "gap": res.gap, "m_gap": m * res.gap, "base_defect": res.base_defect,
                     "boundary_defect": res.boundary_defect})
    gaps = np.array([r["gap"] for r in rows])
    ms_arr = np.array(ms, dtype=float)
    if np.all(gaps > 0):
        slope, intercept = np.polyfit(np.log(ms_arr), np.log(gaps), 1)
    else:
        slope, intercept = float("nan"), float("nan")
    return {"rows": rows, "exponent": float(slope), "C": float(np.max(ms_arr * gaps)),
            "C_fit": float(np.exp(intercept))}


# ----------------------------------------------------------------------------
# Escape along negative directions
# ----------------------------------------------------------------------------


def _bump(d, radius):
    """Smooth cutoff: 1 for ``d <= radius/2``, 0 for ``d >= radius``."""
    t = np.clip((d - 0.5 * radius) / (0.5 * radius), 0.0, 1.0)
    return 1.0 - t * t * (3.0 - 2.0 * t)


@dataclass
class EscapeResult:
    family: LoopFamily
    energies: np.ndarray  # (n_s, n) energies along the push
    level: float
    index: int

    @property
    def below_level(self):
        return bool(np.max(self.energies[-1]) < self.level)


def escape_negative_directions(family, record, pd=None, radius=None, rng=None, s_values=None,
                               perturbation=1e-3):
    """Push a family off a critical loop along the negative eigenspace of the Hessian.

    Near the critical loop (``dist < radius``, with a smooth cutoff) the chart
    coordinates are split into null, positive and negative parts; a small
    random negative component is added, then the negative part is scaled by
    ``(1-s) + s * max(1, radius / (2 |x^-|))``. Samples farther than ``radius``
    are unchanged.
    """
    if record.grad_norm is None or record.grad_norm >= 1e-8:
        raise NotCritical("escape needs a critical record")
    center = record.loop if pd is None else iterate_embedding(record.loop, pd)
    chart = LoopChart(center)
    eig, vec = np.linalg.eigh(chart.hessian())
    _, index, _, tol = classify_spectrum(eig)
    if family.dim >= index:
        raise IndexTooSmall(f"family dimension {family.dim} is not below the index {index}")
    neg = vec[:, eig < -tol]
    model = center.model
    radius = model.convexity_radius if radius is None else radius
    rng = np.random.default_rng(rng)
    s_values = np.linspace(0.0, 1.0, 11) if s_values is None else np.asarray(s_values, float)
    frames = [(i, sl, B) for i, sl, B in chart._slices]
    n = len(family)
    dists = np.array([np.max(model.dist(center.nodes, family.nodes[i])) for i in range(n)])
    weight = _bump(dists, radius)
    coords = np.zeros((n, chart.size))
    active = np.nonzero(weight > 0)[0]
    for a in active:
        v = model.log(center.nodes, family.nodes[a], check=False)
        for i, sl, B in frames:
            coords[a, sl] = B @ v[i]
    # transversality: no active sample keeps a vanishing negative component
    noise = neg @ rng.normal(size=(neg.shape[1], n))
    noise *= perturbation * radius / np.maximum(np.linalg.norm(noise, axis=0), 1e-300)
    energies = np.zeros((len(s_values), n))
    out = family.nodes.copy()
    for b, s in enumerate(s_values):
        nodes = family.nodes.copy()
        for a in active:
            w = weight[a]
            xm = neg.T @ coords[a]
            rest = coords[a] - neg @ xm
            xm = xm + min(1.0, s / 0.1) * w * (neg.T @ noise[:, a])
            r = np.linalg.norm(xm)
            factor = (1.0 - s * w) + s * w * max(1.0, 0.5 * radius / max(r, 1e-300))
            nodes[a] = chart.retract_nodes(rest + neg @ (factor * xm))
        energies[b] = energy_batch(center, nodes)
        out = nodes
    pushed = LoopFamily(center, family.params, out, family.boundary)
    return EscapeResult(pushed, energies, record.energy if pd is None else float(energy_batch(
        center, center.nodes[None])[0]), index)


# ----------------------------------------------------------------------------
# Minimax
# ----------------------------------------------------------------------------


@dataclass
class MinimaxConfig:
    rounds: int = 3000
    window: int = 50
    stable_tol: float = 1e-6
    critical_tol: float = 1e-4
    band: float = 0.1
    max_samples: int = 1024
    refine_fraction: float = 0.5


@dataclass
class MinimaxResult:
    c: float
    record: object
    trace: list
    converged: bool
    flag: str = None
    family: LoopFamily = None


def _descend_rows(tpl, nodes, rows, h):
    """One Armijo step for each selected row; returns new nodes, energies and step sizes."""
    X = nodes[rows]
    E = energy_batch(tpl, X)
    G = gradient_batch(tpl, X)
    g2 = np.sum(G * G, axis=(1, 2))
    gmax = np.max(np.linalg.norm(G, axis=-1), axis=1)
    limit = 0.5 * tpl.model.convexity_radius
    h = np.minimum(2.0 * h, limit / np.maximum(gmax, 1e-300))
    todo = np.ones(len(rows), dtype=bool)
    Xn = X.copy()
    En = E.copy()
    for _ in range(60):
        idx = np.nonzero(todo)[0]
        if idx.size == 0:
            break
        cand = step_nodes(tpl, X[idx], G[idx], h[idx][:, None, None])
        ec = energy_batch(tpl, cand)
        ok = ec <= E[idx] - 1e-4 * h[idx] * g2[idx]
        Xn[idx[ok]] = cand[ok]
        En[idx[ok]] = ec[ok]
        todo[idx[ok]] = False
        h[idx[~ok]] *= 0.5
        small = h < 1e-14
        todo &= ~small
    return Xn, En, h, np.sqrt(g2)


def minimax(family, cfg=None, flow=None, escape_index=True, rng=None):
    """Lower the maximum of a one-parameter family by family-wise descent.

    Each round takes one Armijo gradient step on every interior sample whose
    energy lies within ``band`` (relative to the energy range) of the family
    maximum, then inserts loop-space midpoints between samples farther apart
    than ``refine_fraction`` times the convexity radius. The loop stops when
    the maximum moved less than ``stable_tol`` over ``window`` rounds and the
    top sample has gradient norm below ``critical_tol``; the top sample is then
    refined to a critical record.
    """
    cfg = cfg or MinimaxConfig()
    tpl = family.template
    model = tpl.model
    params = family.params[:, 0].copy()
    nodes = family.nodes.copy()
    fixed = family.boundary.copy()
    E = energy_batch(tpl, nodes)
    h = np.full(len(params), 1e-3)
    trace = []
    converged = False
    flag = None
    delta = cfg.refine_fraction * model.convexity_radius
    for rnd in range(cfg.rounds):
        emax = float(np.max(E))
        trace.append(emax)
        emin = float(np.min(E))
        rows = np.nonzero((E >= emax - cfg.band * max(emax - emin, 1e-12)) & ~fixed)[0]
        if rows.size == 0:
            flag = "BOUNDARY_MAXIMUM"
            break
        new, En, hn, gn = _descend_rows(tpl, nodes, rows, h[rows])
        nodes[rows] = new
        E[rows] = En
        h[rows] = hn
        top = int(np.argmax(E))
        top_grad = float(gn[np.searchsorted(rows, top)]) if top in rows else np.inf
        if (rnd >= cfg.window and abs(trace[-1] - trace[-1 - cfg.window]) < cfg.stable_tol
                and top_grad < cfg.critical_tol):
            converged = True
            break
        # refinement where neighbouring samples drifted apart
        if len(params) < cfg.max_samples:
            gaps = np.max(model.dist(nodes[:-1], nodes[1:]), axis=1)
            far = np.nonzero(gaps > delta)[0]
            if far.size:
                for i in far[::-1][: cfg.max_samples - len(params)]:
                    mid = interpolate_loops(tpl.with_nodes(nodes[i]), tpl.with_nodes(nodes[i + 1]), 0.5)
                    params = np.insert(params, i + 1, 0.5 * (params[i] + params[i + 1]))
                    nodes = np.insert(nodes, i + 1, mid.nodes, axis=0)
                    fixed = np.insert(fixed, i + 1, False)
                    h = np.insert(h, i + 1, min(h[i], h[i + 1]))
                    E = np.insert(E, i + 1, energy_batch(tpl, mid.nodes[None])[0])
    else:
        flag = "NO_CONVERGENCE"
    top = int(np.argmax(E))
    out_family = LoopFamily(tpl, params, nodes, fixed)
    record = None
    try:
        record = refine_critical(tpl.with_nodes(nodes[top]), flow or FlowConfig())
    except Exception as exc:  # keep the level even when the polish fails
        log.warning("refinement of the top loop failed: %s", exc)
        flag = flag or getattr(exc, "code", "REFINE_FAILED")
    c = trace[-1]
    if not converged:
        log.warning("minimax did not stabilise; best level %.10g", c)
    return MinimaxResult(c, record, trace, converged, flag, out_family)


__all__ = ["LoopFamily", "LoopSimplex", "build_simplex", "simplex_point", "barycentric_grid",
           "bangert_homotopy", "bangert_loop", "bangert_decay", "BangertHomotopyResult",
           "escape_negative_directions", "EscapeResult", "minimax", "MinimaxConfig", "MinimaxResult",
           "continuity_radius", "slot_parameters", "NoConvergence"]
