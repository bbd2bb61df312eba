"""Named one-parameter families of loops used by the minimax and Bangert commands."""

from __future__ import annotations

import math

import numpy as np

from .homotopy import LoopFamily
from .loopspace import BrokenLoop
from .manifold import FlatTorus, RoundSphere, TriaxialEllipsoid, rotation_matrix


def _tau(grid):
    return grid.taus[:-1] / grid.q


def translates(model, grid, isometry, winding=(1, 0), samples=33, amplitude=0.15, closure="periodic"):
    """Torus loops of class ``winding`` translated once around the transverse direction.

    The interior carries a bump ``amplitude * sin(pi x)`` so only the end
    samples are minimal; the two ends coincide.
    """
    if not isinstance(model, FlatTorus):
        raise ValueError("the translate family lives on the flat torus")
    w = model.basis @ np.asarray(winding, dtype=float)
    normal = np.array([-w[1], w[0]]) / np.linalg.norm(w)
    # transverse lattice step closing the family: (c, d) with a d - b c = 1
    a, b = (int(v) for v in winding)
    if math.gcd(a, b) != 1:
        raise ValueError("winding must be a primitive lattice vector")
    c, d = next((c, d) for c in range(-abs(b) - 1, abs(b) + 2) for d in range(-abs(a) - 1, abs(a) + 2)
                if a * d - b * c == 1)
    shift = model.basis @ np.array([c, d], dtype=float)
    t = _tau(grid)
    xs = np.linspace(0.0, 1.0, samples)
    nodes = []
    for x in xs:
        pts = t[:, None] * w + x * shift + amplitude * np.sin(np.pi * x) * np.sin(2 * np.pi * t)[:, None] * normal
        nodes.append(model.reduce(pts))
    nodes = np.stack(nodes)
    return LoopFamily(BrokenLoop(model, grid, nodes[0], isometry, closure), xs, nodes)


def sweep(model, grid, isometry, samples=33, closure=None):
    """Sweep-out from the north pole to the south pole.

    Ellipsoid: level curves ``z = const`` (point loops at both ends).
    Sphere: the curves ``tau -> R(theta tau) p(x)`` through latitudes, where
    ``R`` is the rotation of the isometry about the z axis (invariant
    closure), or full latitude circles for the identity.
    """
    t = _tau(grid)
    xs = np.linspace(0.0, 1.0, samples)
    if isinstance(model, TriaxialEllipsoid):
        a, b, c = model.axes
        rows = []
        for x in xs:
            z = c * np.cos(np.pi * x)
            r = np.sqrt(max(0.0, 1.0 - z * z / (c * c)))
            rows.append(model.reduce(np.stack([a * r * np.cos(2 * np.pi * t), b * r * np.sin(2 * np.pi * t),
                                               np.full(len(t), z)], axis=1)))
        nodes = np.stack(rows)
        return LoopFamily(BrokenLoop(model, grid, nodes[0], isometry, closure or "periodic"), xs, nodes)
    if isinstance(model, RoundSphere):
        if isometry.is_identity:
            angle = 2 * np.pi
            closure = closure or "periodic"
        else:
            A = isometry.matrix
            angle = float(np.arctan2(A[1, 0], A[0, 0]))
            closure = closure or "invariant"
        rows = []
        for x in xs:
            th = np.pi * x
            p = model.radius * np.array([np.sin(th), 0.0, np.cos(th)])
            rows.append(np.stack([rotation_matrix([0, 0, 1], angle * s) @ p for s in t]))
        nodes = model.reduce(np.stack(rows))
        return LoopFamily(BrokenLoop(model, grid, nodes[0], isometry, closure), xs, nodes)
    raise ValueError("sweep families exist for the sphere and the ellipsoid")


def point_circle(model, grid, samples=33, radius=0.12, base=None):
    """Point loop, circles of radius ``radius * sin(pi x)`` through a fixed base point, point loop.

    Torus: flat circles. Sphere: small circles through the north pole (angular radius).
    """
    t = _tau(grid)
    xs = np.linspace(0.0, 1.0, samples)
    rows = []
    if isinstance(model, FlatTorus):
        p = np.array([0.3, 0.3]) if base is None else np.asarray(base, float)
        for x in xs:
            r = radius * np.sin(np.pi * x)
            c = p + np.array([r, 0.0])
            rows.append(model.reduce(np.stack([c[0] - r * np.cos(2 * np.pi * t),
                                               c[1] - r * np.sin(2 * np.pi * t)], axis=1)))
    elif isinstance(model, RoundSphere):
        p = np.array([0.0, 0.0, 1.0])
        for x in xs:
            rho = radius * np.sin(np.pi * x)
            if rho == 0.0:
                rows.append(np.tile(p, (len(t), 1)))
                continue
            c = np.array([np.sin(rho), 0.0, np.cos(rho)])
            e1 = p - (p @ c) * c
            e1 /= np.linalg.norm(e1)
            e2 = np.cross(c, e1)
            ring = np.outer(np.cos(2 * np.pi * t), e1) + np.outer(np.sin(2 * np.pi * t), e2)
            rows.append(np.cos(rho) * c + np.sin(rho) * ring)
        rows = [model.reduce(model.radius * r) for r in rows]
    else:
        raise ValueError("point-circle families exist for the torus and the sphere")
    nodes = np.stack(rows)
    return LoopFamily(BrokenLoop(model, grid, nodes[0]), xs, nodes)


def build_family(model, grid, isometry, spec):
    """Family from a configuration mapping ``{"kind": ..., ...}``."""
    spec = dict(spec)
    kind = spec.pop("kind")
    if kind == "translates":
        return translates(model, grid, isometry, **spec)
    if kind == "sweep":
        return sweep(model, grid, isometry, **spec)
    if kind == "point_circle":
        return point_circle(model, grid, **spec)
    raise ValueError(f"unknown family kind {kind!r}")
