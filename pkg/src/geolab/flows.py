"""Discrete gradient flow of the energy, the shortening homotopy and critical refinement."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .discrete import (LoopChart, classify_spectrum, energy_batch, energy_gradient, gradient_batch,
                       gradient_norm, step_nodes)
from .errors import NewtonStall, NonIsolatedSuspected, SegmentTooLong
from .loopspace import BrokenLoop, GeodesicRecord, TimeGrid, dist_upsilon, energy_Fq
from .records import image_signature

log = logging.getLogger(__name__)


@dataclass
class FlowConfig:
    """Settings of the nodewise gradient descent.

    ``step_rule`` is ``"backtracking"`` (Armijo line search) or ``"fixed"``.
    """

    step_rule: str = "backtracking"
    step: float = 0.01
    armijo: float = 1e-4
    grad_tol: float = 1e-8
    max_iters: int = 5000
    finite_diff_h: float = 1e-6
    # largest nodewise displacement per step, as a fraction of the convexity radius
    max_move: float = 0.5

    def __post_init__(self):
        if self.step_rule not in ("backtracking", "fixed"):
            raise ValueError(f"unknown step rule {self.step_rule!r}")
        if self.grad_tol <= 0 or self.step <= 0 or self.finite_diff_h <= 0:
            raise ValueError("tolerances and steps must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass
class DescentStats:
    iterations: int = 0
    energies: list = field(default_factory=list)
    grad_norms: list = field(default_factory=list)
    converged: bool = False
    flag: str = None

    def log_lines(self):
        return [f"{{iter: {i}, energy: {e:.17g}, grad_norm: {g:.6e}}}"
                for i, (e, g) in enumerate(zip(self.energies, self.grad_norms))]


def _segments_ok(loop, nodes):
    ext = np.concatenate([nodes, loop.model.apply_isometry(loop.closure_map, nodes[:, :1])], axis=1)
    lengths = loop.model.dist(ext[:, :-1], ext[:, 1:])
    return np.all(lengths < loop.model.injrad, axis=1)


def descend(loop, cfg=None, on_step=None):
    """Nodewise gradient descent of ``F^q``.

    Returns the final loop and a :class:`DescentStats`. The energy is
    non-increasing along the iterates; ``flag`` is ``"MAX_ITERS_EXCEEDED"`` if
    the gradient tolerance was not reached.
    """
    cfg = cfg or FlowConfig()
    stats = DescentStats()
    nodes = loop.nodes[None]
    energy = float(energy_batch(loop, nodes)[0])
    grad = gradient_batch(loop, nodes)
    gnorm = float(gradient_norm(grad)[0])
    stats.energies.append(energy)
    stats.grad_norms.append(gnorm)
    h = cfg.step
    limit = cfg.max_move * loop.model.convexity_radius
    while gnorm >= cfg.grad_tol:
        if stats.iterations >= cfg.max_iters:
            stats.flag = "MAX_ITERS_EXCEEDED"
            break
        gmax = float(np.max(np.linalg.norm(grad[0], axis=-1)))
        if cfg.step_rule == "fixed":
            h_try = min(cfg.step, limit / gmax)
            cand = step_nodes(loop, nodes, grad, h_try)
            e_new = float(energy_batch(loop, cand)[0])
            if e_new > energy + 1e-12 * max(1.0, energy):
                stats.flag = "STEP_TOO_LARGE"
                break
        else:
            h_try = min(2.0 * h, limit / gmax)
            # energy differences below this are rounding noise
            noise = 16 * np.finfo(float).eps * max(1.0, abs(energy))
            grad_new = None
            while True:
                cand = step_nodes(loop, nodes, grad, h_try)
                e_new = float(energy_batch(loop, cand)[0])
                if _segments_ok(loop, cand)[0]:
                    if e_new <= energy - cfg.armijo * h_try * gnorm ** 2:
                        break
                    if e_new <= energy + noise and h_try * gnorm ** 2 < 100 * noise:
                        # the decrease is below rounding: ask for a smaller gradient instead
                        grad_new = gradient_batch(loop, cand)
                        if gradient_norm(grad_new)[0] < gnorm:
                            break
                        grad_new = None
                h_try *= 0.5
                if h_try < 1e-16:
                    break
            if h_try < 1e-16:
                stats.flag = "LINE_SEARCH_FAILED"
                break
            h = h_try
        nodes, energy = cand, e_new
        grad = gradient_batch(loop, nodes) if cfg.step_rule == "fixed" or grad_new is None else grad_new
        gnorm = float(gradient_norm(grad)[0])
        stats.iterations += 1
        stats.energies.append(energy)
        stats.grad_norms.append(gnorm)
        if on_step is not None:
            on_step(stats.iterations, loop.with_nodes(nodes[0]), energy, gnorm)
    stats.converged = gnorm < cfg.grad_tol
    log.debug("descent stopped after %d iterations: E=%.12g |grad|=%.3e", stats.iterations, energy, gnorm)
    return loop.with_nodes(nodes[0]), stats


# ----------------------------------------------------------------------------
# Shortening homotopy
# ----------------------------------------------------------------------------


def _check_paired(loop):
    if loop.k % 2 or loop.grid.k_prime % 2:
        raise ValueError("shortening acts on refined grids: k and k' must be even")


def refine_grid(loop):
    """Insert the geodesic midpoint of every segment (the curve is unchanged)."""
    model = loop.model
    ext = loop.extended_nodes()
    mids = model.geodesic_between(ext[:-1], ext[1:], 0.5)
    nodes = np.empty((2 * loop.k, model.ambient_dim))
    nodes[0::2] = loop.nodes
    nodes[1::2] = mids
    taus = loop.grid.taus
    fine = np.empty(2 * loop.k + 1)
    fine[0::2] = taus
    fine[1::2] = 0.5 * (taus[:-1] + taus[1:])
    grid = TimeGrid(fine, 2 * loop.grid.k_prime)
    return BrokenLoop(model, grid, nodes, loop.isometry, loop.closure)


def interval_energies(loop):
    """Energy ``int |zeta'|^2`` over each coarse interval ``[t_{2i}, t_{2i+2}]``."""
    _check_paired(loop)
    terms = loop.segment_lengths() ** 2 / loop.grid.steps
    return terms[0::2] + terms[1::2]


def shorten(loop, s):
    """The shortening homotopy at time ``s`` on a refined loop.

    Coarse intervals are pairs of consecutive segments ``[t_{2i}, t_{2i+2}]``.
    On ``[t_{2i}, (1-s) t_{2i} + s t_{2i+2}]`` the curve is replaced by the
    shortest geodesic joining its end points. The output stores the kink at
    the moving time as its odd node, so its grid depends on ``s``; at ``s = 1``
    each coarse interval is a single geodesic and its midpoint is stored.
    """
    return shorten_path(loop, [s])[0]


def shorten_path(loop, s_values):
    """The shortening homotopy sampled at every ``s`` in ``s_values`` (batched geodesic work)."""
    _check_paired(loop)
    model = loop.model
    lengths = loop.segment_lengths()
    if np.any(lengths >= model.injrad / 3.0):
        raise SegmentTooLong(f"segment of length {float(lengths.max()):.4g} >= injrad/3")
    s_values = np.asarray(s_values, dtype=float)
    if np.any((s_values < 0.0) | (s_values > 1.0)):
        raise ValueError("s must lie in [0, 1]")
    ext = loop.extended_nodes()
    taus = loop.grid.taus
    a, mid, b = ext[0:-1:2], ext[1::2], ext[2::2]
    t0, t1, t2 = taus[0:-1:2], taus[1::2], taus[2::2]
    # the kink moves along the old second half [mid, b], then the chord [a, b] at s = 1
    to_b = model.log(mid, b, check=False)
    chord = model.log(a, b, check=False)
    rows, fracs, kinds = [], [], []
    for j, s in enumerate(s_values):
        sigma = (1.0 - s) * t0 + s * t2
        if s >= 1.0:
            rows.append((j, np.arange(len(t0)), 1))
            fracs.append(np.full(len(t0), 0.5))
        else:
            moved = np.nonzero(sigma > t1)[0]
            rows.append((j, moved, 0))
            fracs.append((sigma[moved] - t1[moved]) / (t2[moved] - t1[moved]))
    base = np.concatenate([a[i] if kind else mid[i] for _, i, kind in rows])
    vel = np.concatenate([chord[i] if kind else to_b[i] for _, i, kind in rows])
    pts = model.exp(base, np.concatenate(fracs)[:, None] * vel) if len(base) else base
    out = []
    pos = 0
    for (j, i, kind), s in zip(rows, s_values):
        nodes = np.array(loop.nodes)
        new_t = np.array(taus)
        odd_nodes = nodes[1::2]
        odd_t = new_t[1::2]
        odd_nodes[i] = pts[pos:pos + len(i)]
        odd_t[i] = 0.5 * (t0[i] + t2[i]) if kind else ((1.0 - s) * t0 + s * t2)[i]
        pos += len(i)
        nodes[1::2] = odd_nodes
        new_t[1::2] = odd_t
        out.append(BrokenLoop(model, TimeGrid(new_t, loop.grid.k_prime), nodes, loop.isometry, loop.closure))
    return out


def interval_energies_batch(loops):
    """:func:`interval_energies` for several refined loops with the same model, in one pass."""
    for loop in loops:
        _check_paired(loop)
    model = loops[0].model
    ext = np.stack([loop.extended_nodes() for loop in loops])
    steps = np.stack([loop.grid.steps for loop in loops])
    terms = model.dist(ext[:, :-1], ext[:, 1:]) ** 2 / steps
    return terms[:, 0::2] + terms[:, 1::2]


# ----------------------------------------------------------------------------
# Critical points
# ----------------------------------------------------------------------------


def _gnorm(loop):
    return float(gradient_norm(energy_gradient(loop)))


def newton_critical(loop, tol=1e-8, max_iter=60, lam0=0.0):
    """Levenberg-Marquardt iteration on the gradient equation in chart coordinates.

    Converges to critical points of any index (saddles included). Returns the
    final loop and the gradient norm reached.
    """
    current = loop
    g = _gnorm(current)
    lam = lam0
    for _ in range(max_iter):
        if g < tol:
            break
        chart = LoopChart(current)
        H = chart.hessian()
        d = chart.derivative_at(current.nodes[None])[0]
        scale = float(np.max(np.abs(H))) if H.size else 1.0
        improved = False
        for _ in range(30):
            if lam == 0.0:
                step = -np.linalg.lstsq(H, d, rcond=1e-10)[0]
            else:
                A = H.T @ H + (lam * scale) ** 2 * np.eye(len(d))
                step = -np.linalg.solve(A, H.T @ d)
            norms = np.linalg.norm(chart.tangent_field(step), axis=-1)
            if np.max(norms) < current.model.convexity_radius:
                cand = chart.retract(step)
                if _segments_ok(cand, cand.nodes[None])[0]:
                    gc = _gnorm(cand)
                    if gc < g:
                        current, g = cand, gc
                        lam = lam / 4.0 if lam > 1e-8 else 0.0
                        improved = True
                        break
            lam = max(1e-8, 4.0 * lam)
        if not improved:
            raise NewtonStall(f"no decrease of the gradient norm below {g:.3e}")
    return current, g


def constant_speed_defect(loop):
    """Relative spread of ``segment length / step``; zero for constant-speed broken geodesics."""
    speed = loop.segment_lengths() / loop.grid.steps
    mean = float(np.mean(speed))
    if mean == 0.0:
        return 0.0
    return float((speed.max() - speed.min()) / mean)


def spectrum(loop, h=1e-5, rel_tol=1e-6):
    """Eigenvalues, index, nullity and null tolerance of the constrained Hessian at ``loop``."""
    H = LoopChart(loop).hessian(h)
    return classify_spectrum(np.linalg.eigvalsh(H), rel_tol)


def refine_critical(loop, cfg=None, period=None):
    """Polish a nearly critical loop to gradient norm ``< cfg.grad_tol`` and build its record.

    Damped Newton runs first; if it stalls, more descent is attempted before
    one more Newton pass. Raises :class:`NewtonStall` on failure.
    """
    cfg = cfg or FlowConfig()
    try:
        current, g = newton_critical(loop, cfg.grad_tol)
    except NewtonStall:
        log.info("Newton stalled, falling back to descent")
        current, _ = descend(loop, FlowConfig(grad_tol=cfg.grad_tol, max_iters=cfg.max_iters))
        current, g = newton_critical(current, cfg.grad_tol)
    _, index, nullity, _ = spectrum(current)
    return GeodesicRecord(current, energy_Fq(current), g, index, nullity, image_signature(current),
                          period, converged=g < cfg.grad_tol,
                          speed_defect=constant_speed_defect(current))


# ----------------------------------------------------------------------------
# Shell diagnostics
# ----------------------------------------------------------------------------


@dataclass
class ShellDiagnostics:
    rho1: float
    rho2: float
    mu: float
    n_samples: int
    trajectories_checked: int = 0
    drop_verified: bool = True

    @property
    def epsilon(self):
        return (self.rho2 - self.rho1) * self.mu


def _slice(record):
    chart = LoopChart(record.loop)
    eig, vec = np.linalg.eigh(chart.hessian())
    _, _, _, tol = classify_spectrum(eig)
    return chart, eig, vec, tol


def _shell_samples(record, sl, rho1, rho2, n, rng, include_null):
    loop = record.loop
    chart, eig, vec, tol = sl
    null = vec[:, np.abs(eig) <= tol]
    normal = vec[:, np.abs(eig) > tol]
    out = []
    attempts = 0
    while len(out) < n and attempts < 100 * n:
        attempts += 1
        use_null = include_null and null.shape[1] > 0 and len(out) % 2 == 0
        basis = null if use_null else normal
        if not use_null and attempts <= normal.shape[1]:
            # one sample along each eigendirection first: soft directions set the infimum
            xi = normal[:, attempts - 1] * rng.choice([-1.0, 1.0])
        else:
            xi = basis @ rng.normal(size=basis.shape[1])
        norms = np.linalg.norm(chart.tangent_field(xi), axis=-1)
        if norms.max() == 0:
            continue
        # the farthest node lands uniformly in the annulus
        xi = xi * rng.uniform(rho1, rho2) / norms.max()
        cand = chart.retract(xi)
        if rho1 < dist_upsilon(loop, cand) < rho2:
            out.append(cand)
    return out


def _drop_check(record, sl, rho1, rho2, eps, n_trajectories, rng, diag):
    """Descent trajectories from inside ``U(rho1)``: energy lost between entering and leaving the shell."""
    chart, eig, vec, tol = sl
    neg = vec[:, eig < -tol]
    if neg.shape[1] == 0 or n_trajectories == 0:
        return
    loop = record.loop
    # small displacements per step so the discrete drop tracks the continuous one
    move = 0.1 * (rho2 - rho1) / loop.model.convexity_radius
    for _ in range(n_trajectories):
        xi = neg @ rng.normal(size=neg.shape[1]) + 0.3 * vec @ rng.normal(size=vec.shape[1])
        xi *= 0.5 * rho1 / np.max(np.linalg.norm(chart.tangent_field(xi), axis=-1))
        start = chart.retract(xi)
        state = {"e_in": energy_Fq(start), "done": False}

        def watch(it, cur, energy, gnorm):
            if not state["done"] and dist_upsilon(loop, cur) > rho2:
                state["done"] = True
                diag.trajectories_checked += 1
                if state["e_in"] - energy < eps - 1e-6:
                    diag.drop_verified = False
                raise _Exited

        try:
            descend(start, FlowConfig(max_iters=20000, grad_tol=1e-12, max_move=move), on_step=watch)
        except _Exited:
            pass


class _Exited(Exception):
    pass


def shell_diagnostics(record, rho1, rho2, n_samples=1000, rng=None, include_null=False,
                      n_trajectories=4):
    """Estimate the smallest gradient norm on the shell ``rho1 < dist < rho2`` around ``record``.

    Samples are nodewise perturbations in the normal slice of the critical
    set (null directions of the Hessian removed): one along each Hessian
    eigendirection, the rest random; ``include_null`` adds pure
    null-direction moves, which detect non-isolated critical sets. For saddles,
    a few small-step descent trajectories started inside ``U(rho1)`` check the
    energy drop ``(rho2 - rho1) * mu`` between the two spheres.
    """
    if not 0 < rho1 < rho2 <= record.loop.model.convexity_radius * (1 + 1e-12):
        raise ValueError("need 0 < rho1 < rho2 <= convexity radius")
    rng = np.random.default_rng(rng)
    sl = _slice(record)
    samples = _shell_samples(record, sl, rho1, rho2, n_samples, rng, include_null)
    loop = record.loop
    nodes = np.stack([s.nodes for s in samples])
    mu = float(np.min(gradient_norm(gradient_batch(loop, nodes))))
    diag = ShellDiagnostics(rho1, rho2, mu, len(samples))
    if mu < 1e-10:
        raise NonIsolatedSuspected(f"gradient norm {mu:.2e} on the shell; critical set not isolated")
    _drop_check(record, sl, rho1, rho2, diag.epsilon, n_trajectories, rng, diag)
    return diag


__all__ = ["FlowConfig", "DescentStats", "descend", "shorten", "shorten_path", "refine_grid", "interval_energies",
           "interval_energies_batch",
           "refine_critical", "newton_critical", "spectrum", "shell_diagnostics", "ShellDiagnostics",
           "energy_gradient", "constant_speed_defect"]
