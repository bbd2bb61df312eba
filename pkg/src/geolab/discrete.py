"""Batched energy, gradient and Hessian kernels for broken loops.

The kernels take node arrays of shape ``(B, k, D)`` so that families of
loops sharing one grid are evaluated in a single vectorised pass.
"""

from __future__ import annotations

import numpy as np

from .loopspace import BrokenLoop


def _extended(model, nodes, closure_map):
    end = model.apply_isometry(closure_map, nodes[:, 0])
    return np.concatenate([nodes, end[:, None]], axis=1)


def energy_batch(loop, nodes):
    """``F^q`` for each node array in ``nodes`` (shape ``(B, k, D)``) on ``loop``'s grid."""
    model = loop.model
    ext = _extended(model, nodes, loop.closure_map)
    lengths = model.dist(ext[:, :-1], ext[:, 1:])
    return np.sum(lengths ** 2 / loop.grid.steps, axis=1) / loop.grid.q


def raw_gradient_batch(loop, nodes):
    """Nodewise Riemannian gradient of ``F^q`` ignoring the invariance constraint."""
    model = loop.model
    J = loop.closure_map
    ext = _extended(model, nodes, J)
    fwd, bwd = model.log_pair(ext[:, :-1], ext[:, 1:], check=False)
    w = (2.0 / (loop.grid.q * loop.grid.steps))[None, :, None]
    grad = -w * fwd
    grad[:, 1:] -= w[:, :-1] * bwd[:, :-1]
    # last segment ends at J(p_0): pull its contribution back to p_0
    grad[:, 0] -= w[:, -1] * J.inverse().differential(bwd[:, -1])
    return grad


def project_gradient(loop, nodes, grad):
    """Gradient on the constraint submanifold ``{I(p_0) = p_{k'}}`` (periodic loops)."""
    if not loop.has_constraint:
        return grad
    grad = grad.copy()
    kp = loop.grid.k_prime
    iso = loop.isometry
    if kp == 0:
        flat = grad[:, 0]
        grad[:, 0] = loop.model.fixed_tangent_projection(iso, nodes[:, 0], flat)
        return grad
    u = 0.5 * (grad[:, 0] + iso.inverse().differential(grad[:, kp]))
    grad[:, 0] = u
    grad[:, kp] = iso.differential(u)
    return grad


def gradient_batch(loop, nodes):
    return project_gradient(loop, nodes, raw_gradient_batch(loop, nodes))


def energy_gradient(loop):
    """Constrained nodewise gradient field of ``F^q`` at ``loop``, shape ``(k, D)``."""
    return gradient_batch(loop, loop.nodes[None])[0]


def gradient_norm(grad):
    return np.sqrt(np.sum(grad * grad, axis=(-2, -1)))


def step_nodes(loop, nodes, direction, h):
    """Move every node along ``-h * direction`` by the exponential map, then re-project."""
    model = loop.model
    new = model.exp(nodes, -h * direction)
    if loop.has_constraint and loop.grid.k_prime > 0:
        kp = loop.grid.k_prime
        new[..., kp, :] = model.apply_isometry(loop.isometry, new[..., 0, :])
    return new


class LoopChart:
    """Normal-coordinate chart of the free node variables around a base loop.

    The coordinate vector stacks tangent-frame coefficients of every free
    node. For a periodic loop with ``k' > 0`` the node ``p_{k'}`` is
    eliminated through ``p_{k'} = I(p_0)``; with ``k' = 0`` the node ``p_0`` is
    restricted to the fixed point set of ``I``.
    """

    def __init__(self, loop):
        self.loop = loop
        model = loop.model
        frames = model.tangent_basis(loop.nodes)  # (k, dim, D)
        self.eliminated = None
        blocks = []
        for i in range(loop.k):
            B = frames[i]
            if loop.has_constraint:
                kp = loop.grid.k_prime
                if kp > 0 and i == kp:
                    self.eliminated = kp
                    continue
                if kp == 0 and i == 0:
                    proj = model.fixed_tangent_projection(loop.isometry, loop.nodes[0][None], B[None])[0]
                    u, s, vt = np.linalg.svd(proj, full_matrices=False)
                    B = vt[s > 1e-10]
            blocks.append((i, B))
        self.blocks = blocks
        self.size = sum(B.shape[0] for _, B in blocks)
        self._slices = []
        start = 0
        for i, B in blocks:
            self._slices.append((i, slice(start, start + B.shape[0]), B))
            start += B.shape[0]

    def tangent_field(self, xi):
        """Nodewise tangent vectors for coordinate vectors ``xi`` of shape ``(..., size)``."""
        xi = np.asarray(xi, dtype=float)
        lead = xi.shape[:-1]
        field = np.zeros(lead + self.loop.nodes.shape)
        for i, sl, B in self._slices:
            field[..., i, :] = xi[..., sl] @ B
        return field

    def retract_nodes(self, xi):
        field = self.tangent_field(xi)
        return step_nodes(self.loop, self.loop.nodes, field, -1.0)

    def retract(self, xi):
        return self.loop.with_nodes(self.retract_nodes(xi))

    def coords(self, grad, nodes=None):
        """Derivative of ``F^q`` along the coordinate directions, from a raw gradient field.

        For the eliminated node the chain rule through ``p_{k'} = I(p_0)`` applies.
        """
        grad = np.asarray(grad)
        lead = grad.shape[:-2]
        out = np.zeros(lead + (self.size,))
        iso = self.loop.isometry
        for i, sl, B in self._slices:
            g = grad[..., i, :]
            if self.eliminated is not None and i == 0:
                g = g + iso.inverse().differential(grad[..., self.eliminated, :])
            out[..., sl] = g @ B.T
        return out

    def derivative_at(self, nodes):
        return self.coords(raw_gradient_batch(self.loop, nodes))

    def hessian(self, h=1e-5):
        """Symmetric second-derivative matrix of ``F^q`` in chart coordinates (central differences)."""
        n = self.size
        if n == 0:
            return np.zeros((0, 0))
        eye = np.eye(n)
        xi = np.concatenate([h * eye, -h * eye])
        nodes = self.retract_nodes(xi)
        d = self.derivative_at(nodes)
        H = (d[:n] - d[n:]).T / (2 * h)
        return 0.5 * (H + H.T)


def classify_spectrum(eigenvalues, rel_tol=1e-6):
    """Index / nullity counts with the relative null tolerance ``rel_tol * max|lambda|``."""
    eig = np.sort(np.asarray(eigenvalues, dtype=float))
    scale = float(np.max(np.abs(eig))) if eig.size else 0.0
    null_tol = rel_tol * scale
    index = int(np.sum(eig < -null_tol))
    nullity = int(np.sum(np.abs(eig) <= null_tol))
    return eig, index, nullity, null_tol


def as_loop(template, nodes):
    return BrokenLoop(template.model, template.grid, nodes, template.isometry, template.closure)
