"""Morse index and nullity of invariant geodesics and their iterates.

The index comes from the discrete Hessian of the broken-loop energy; an
independent count of conjugate points along the geodesic (Jacobi equation)
serves as the oracle on the catalog surfaces.
"""

from __future__ import annotations

import logging
from fractions import Fraction
from dataclasses import dataclass, field

import numpy as np

from . import ode
from .discrete import LoopChart, classify_spectrum
from .errors import NotCritical
from .loopspace import BrokenLoop, PeriodData, TimeGrid, iterate_embedding, residue_partition
from .manifold import FlatTorus, RoundSphere, TriaxialEllipsoid

log = logging.getLogger(__name__)

CRITICAL_TOL = 1e-8


@dataclass
class SpectrumReport:
    eigenvalues: np.ndarray
    index: int
    nullity: int
    null_tol: float
    m: int = None

    @property
    def positive(self):
        return len(self.eigenvalues) - self.index - self.nullity

    def to_dict(self):
        return {"m": self.m, "eigenvalues": [float(x) for x in self.eigenvalues[:10]],
                "index": self.index, "nullity": self.nullity}


def loop_spectrum(loop, h=1e-5, rel_tol=1e-6):
    """Spectrum of the symmetrised discrete Hessian of ``F^q`` at ``loop``."""
    H = LoopChart(loop).hessian(h)
    eig, index, nullity, tol = classify_spectrum(np.linalg.eigvalsh(H), rel_tol)
    return SpectrumReport(eig, index, nullity, tol)


def _rescaled(loop, factor):
    grid = TimeGrid(loop.grid.taus / factor, loop.grid.k_prime)
    return BrokenLoop(loop.model, grid, loop.nodes, loop.isometry, loop.closure)


def discrete_hessian(record, pd, pulled_back=False):
    """Index and nullity of the iterate of ``record`` described by ``pd``.

    With ``pulled_back`` the Hessian is taken on the iterate rescaled to unit
    period, whose energy is ``(mp+1)^2`` times the iterated one; the index and
    nullity must not change.
    """
    if record.grad_norm is None or record.grad_norm >= CRITICAL_TOL:
        raise NotCritical(f"gradient norm {record.grad_norm} is not below {CRITICAL_TOL}")
    loop = record.loop
    if loop.closure == "invariant" and loop.isometry.is_identity:
        loop = BrokenLoop(loop.model, loop.grid, loop.nodes, loop.isometry, "periodic")
    it = iterate_embedding(loop, pd)
    if pulled_back:
        it = _rescaled(it, float(pd.total))
    rep = loop_spectrum(it)
    rep.m = pd.m
    return rep


# ----------------------------------------------------------------------------
# Jacobi oracle
# ----------------------------------------------------------------------------


def _curvature_fn(model):
    if isinstance(model, FlatTorus):
        return lambda x: np.zeros(x.shape[:-1])
    if isinstance(model, RoundSphere):
        return lambda x: np.full(x.shape[:-1], 1.0 / model.radius ** 2)
    return model.curvature


def jacobi_conjugate_count(model, x, v, T, n_samples=1000):
    """Number of conjugate points of ``x`` in ``(0, T)`` along ``t -> exp_x(t v)``.

    Integrates the geodesic together with the normal Jacobi equation
    ``J'' + K |v|^2 J = 0``, ``J(0) = 0``, ``J'(0) = 1`` (surfaces), and counts
    sign changes of ``J`` on a grid that avoids the end points.
    """
    if model.dim != 2:
        raise ValueError("the Jacobi oracle handles surfaces only")
    x = np.asarray(x, dtype=float)
    v = model.proj_tangent(x, np.asarray(v, dtype=float))
    speed2 = float(np.sum(v * v))
    K = _curvature_fn(model)
    D = model.ambient_dim
    if isinstance(model, TriaxialEllipsoid):
        geo = model._rhs

        def rhs(y):
            kx = K(y[:, :D]) * speed2
            return np.concatenate([geo(y[:, :2 * D]), y[:, 2 * D + 1:], -kx[:, None] * y[:, 2 * D:2 * D + 1]],
                                  axis=1)

        y0 = np.concatenate([x, v, [0.0, 1.0]])[None]
    else:
        # closed-form geodesic: carry time as a state variable
        def rhs(y):
            pts = model.exp(np.broadcast_to(x, (len(y), D)), y[:, :1] * v)
            kx = K(pts) * speed2
            return np.stack([np.ones(len(y)), y[:, 2], -kx * y[:, 1]], axis=1)

        y0 = np.array([[0.0, 0.0, 1.0]])
    times = T * (np.arange(n_samples) + 0.5) / n_samples
    _, samples = ode.integrate(rhs, y0, T, atol=1e-11, t_eval=list(times), max_steps=200000)
    J = np.array([s[0, -2] if isinstance(model, TriaxialEllipsoid) else s[0, 1] for s in samples])
    return int(np.sum(np.sign(J[1:]) != np.sign(J[:-1])))


def loop_conjugate_count(loop, multiplicity=1):
    """Jacobi oracle for a constant-speed broken geodesic loop traversed ``multiplicity`` times."""
    model = loop.model
    x = loop.nodes[0]
    v = model.log(x[None], loop.nodes[1][None])[0] / loop.grid.steps[0]
    return jacobi_conjugate_count(model, x, v, multiplicity * loop.grid.q)


# ----------------------------------------------------------------------------
# Dichotomy scan
# ----------------------------------------------------------------------------


@dataclass
class DichotomyScan:
    geodesic: object
    m_values: list = field(default_factory=list)
    indices: list = field(default_factory=list)
    nullities: list = field(default_factory=list)
    q_prime: object = None
    verdict: str = "INCONCLUSIVE"

    def to_rows(self):
        return [{"m": m, "q_prime": str(self.q_prime), "index": i, "nullity": n, "verdict": self.verdict}
                for m, i, n in zip(self.m_values, self.indices, self.nullities)]


def classify_indices(indices, dim, threshold=None):
    threshold = 2 * dim if threshold is None else threshold
    if all(i == 0 for i in indices):
        return "ALL_ZERO"
    if all(b >= a for a, b in zip(indices, indices[1:])) and indices[-1] > threshold:
        return "GROWING"
    return "INCONCLUSIVE"


def dichotomy_scan(record, p, q, m_max, residue=None, threshold=None):
    """Indices of the iterates ``m p + 1`` for ``m = 0..m_max`` in one residue class modulo ``q``.

    The class is that of the record's grid (its pinned time ``q'``); only
    admissible iterates (``m p + 1 >= q``) are scanned.
    """
    classes = residue_partition(p, q, range(m_max + 1))
    if residue is None:
        residue = Fraction(record.loop.grid.q_prime).limit_denominator(10 ** 9)
    scan = DichotomyScan(record, q_prime=residue)
    for m in classes.get(residue, []):
        pd = PeriodData.from_m(p, q, m)
        if not pd.consistent():
            continue
        rep = discrete_hessian(record, pd)
        log.info("m=%d index=%d nullity=%d", m, rep.index, rep.nullity)
        scan.m_values.append(m)
        scan.indices.append(rep.index)
        scan.nullities.append(rep.nullity)
    if scan.indices:
        scan.verdict = classify_indices(scan.indices, record.loop.model.dim, threshold)
    return scan


__all__ = ["SpectrumReport", "DichotomyScan", "discrete_hessian", "loop_spectrum",
           "jacobi_conjugate_count", "loop_conjugate_count", "dichotomy_scan", "classify_indices"]
