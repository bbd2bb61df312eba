"""Geodesic images: sampling, signatures and deduplication of critical records.

Two records describe the same invariant geodesic when their images coincide,
possibly after an isometry of the model commuting with ``I`` (the continuous
symmetries of the catalog: lattice translations of the torus, rotations of
the sphere about the rotation axis of ``I``). Iterates and time shifts share
one image.
"""

from __future__ import annotations

import numpy as np

from .manifold import CircleTimesSphere, FlatTorus, RoundSphere, rotation_matrix

VOXEL = 0.02


def _sample_curve(loop, resolution):
    model = loop.model
    ext = loop.extended_nodes()
    seg = model.dist(ext[:-1], ext[1:])
    per = max(2, int(np.ceil(float(seg.max(initial=0.0)) / (0.5 * resolution))))
    s = np.arange(per) / per
    a = np.repeat(ext[:-1], per, axis=0)
    b = np.repeat(ext[1:], per, axis=0)
    frac = np.tile(s, loop.k)[:, None]
    return model.geodesic_between(a, b, frac)


def _voxel_unique(model, pts, resolution):
    if isinstance(model, FlatTorus):
        key = model.reduce(pts) @ np.linalg.inv(model.basis).T
    else:
        key = pts
    cells = np.floor(key / resolution).astype(np.int64)
    _, idx = np.unique(cells, axis=0, return_index=True)
    return pts[np.sort(idx)]


def image_points(loop, resolution=VOXEL, n_iter=None, thin=True):
    """Point cloud covering the image of the invariant geodesic through ``loop``.

    The sampled curve is repeated under the powers ``I^j``, ``|j| <= n_iter``
    (``n_iter`` defaults to 24 for non-identity isometries), then thinned to one
    point per voxel of side ``resolution`` unless ``thin`` is false.
    """
    model = loop.model
    pts = _sample_curve(loop, resolution)
    iso = loop.isometry
    if n_iter is None:
        n_iter = 0 if iso.is_identity else 24
    clouds = [pts]
    fwd, bwd = pts, pts
    inv = iso.inverse()
    for _ in range(n_iter):
        fwd = model.apply_isometry(iso, fwd)
        bwd = model.apply_isometry(inv, bwd)
        clouds += [fwd, bwd]
    pts = model.reduce(np.vstack(clouds))
    return _voxel_unique(model, pts, resolution) if thin else pts


def _torus_signature(model, pts):
    coords = model.reduce(pts) @ np.linalg.inv(model.basis).T
    freqs = np.array([[1, 0], [0, 1], [1, 1], [1, -1]])
    phase = np.exp(2j * np.pi * coords @ freqs.T)
    return np.abs(phase.mean(axis=0))


def _moment_signature(pts):
    c = pts - pts.mean(axis=0)
    return np.sort(np.linalg.eigvalsh(c.T @ c / len(pts)))


def image_signature(loop, resolution=VOXEL):
    """Symmetry-invariant descriptor of the image (bucket key after rounding).

    Torus: magnitudes of low lattice Fourier coefficients of the image;
    other models: sorted eigenvalues of the second-moment matrix. Moments use
    the unthinned arc-length samples, since voxel thinning depends on the
    orientation of the curve.
    """
    model = loop.model
    pts = image_points(loop, resolution, thin=False)
    if isinstance(model, FlatTorus):
        return _torus_signature(model, pts)
    if isinstance(model, CircleTimesSphere):
        th = pts[:, 0] * 2 * np.pi / model.length
        circ = np.abs(np.mean(np.exp(1j * th)))
        return np.concatenate([[circ], _moment_signature(pts[:, 1:])])
    return _moment_signature(pts)


def signature_bucket(signature, decimals=2):
    return tuple(np.round(np.asarray(signature), decimals) + 0.0)


def _pair_dist(model, X, Y):
    if isinstance(model, (FlatTorus, CircleTimesSphere)):
        return model.dist(X[:, None, :], Y[None, :, :])
    return np.linalg.norm(X[:, None, :] - Y[None, :, :], axis=-1)


def hausdorff(model, X, Y):
    D = _pair_dist(model, X, Y)
    return float(max(D.min(axis=1).max(), D.min(axis=0).max()))


def _rotation_axis(iso):
    """Axis of a sphere rotation, or ``None``."""
    A = iso.matrix[-3:, -3:]
    if np.allclose(A, np.eye(3)):
        return None
    w, v = np.linalg.eig(A)
    axis = np.real(v[:, np.argmin(np.abs(w - 1.0))])
    return axis / np.linalg.norm(axis)


def _symmetry_candidates(loop, X, Y, n_candidates=48):
    """Isometries ``g`` commuting with ``I`` that could map image ``X`` onto image ``Y``."""
    model = loop.model
    picks = Y[np.linspace(0, len(Y) - 1, min(n_candidates, len(Y))).astype(int)]
    if isinstance(model, FlatTorus):
        return [lambda P, t=t: model.reduce(P + t) for t in model.log(X[0][None], picks, check=False)]
    if isinstance(model, RoundSphere):
        axis = _rotation_axis(loop.isometry)
        if axis is None:
            return None
        e1 = np.cross(axis, [1.0, 0, 0] if abs(axis[0]) < 0.9 else [0, 1.0, 0])
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(axis, e1)
        ang0 = np.arctan2(X[0] @ e2, X[0] @ e1)
        angles = np.arctan2(picks @ e2, picks @ e1) - ang0
        return [lambda P, R=rotation_matrix(axis, a): P @ R.T for a in angles]
    if isinstance(model, CircleTimesSphere):
        return [lambda P, d=d: model.reduce(P + np.array([d, 0, 0, 0])) for d in picks[:, 0] - X[0, 0]]
    return [lambda P: P]


def image_distance(loop_a, loop_b, resolution=VOXEL):
    """Hausdorff distance between the two images, minimised over the commuting symmetries.

    Returns ``None`` when the symmetry group is too large to enumerate (the
    round sphere with identity isometry); callers then rely on signatures.
    """
    model = loop_a.model
    X = image_points(loop_a, resolution)
    Y = image_points(loop_b, resolution)
    cands = _symmetry_candidates(loop_a, X, Y)
    if cands is None:
        return None
    # rank the candidates on a subsample, then take full distances for the best few
    sub = X[np.linspace(0, len(X) - 1, min(64, len(X))).astype(int)]
    scores = [float(_pair_dist(model, g(sub), Y).min(axis=1).max()) for g in cands]
    best = np.argsort(scores)[:3]
    return min(hausdorff(model, cands[i](X), Y) for i in best)


def same_image(a, b, tol=0.06, sig_tol=0.02):
    """Whether two records (or loops) trace the same invariant geodesic up to symmetry."""
    la = getattr(a, "loop", a)
    lb = getattr(b, "loop", b)
    sa = getattr(a, "image_signature", None)
    sb = getattr(b, "image_signature", None)
    sa = image_signature(la) if sa is None else sa
    sb = image_signature(lb) if sb is None else sb
    if np.max(np.abs(np.asarray(sa) - np.asarray(sb))) > sig_tol:
        return False
    d = image_distance(la, lb)
    return True if d is None else d < tol


def dedup_records(records, tol=0.06):
    """Group records by image; returns ``[(representative, count), ...]`` ordered by energy.

    The representative of a class is its lowest-energy member.
    """
    classes = []
    for rec in sorted(records, key=lambda r: r.energy):
        for i, (rep, count) in enumerate(classes):
            if same_image(rep, rec, tol):
                classes[i] = (rep, count + 1)
                break
        else:
            classes.append((rec, 1))
    return classes


__all__ = ["image_points", "image_signature", "signature_bucket", "image_distance", "same_image",
           "dedup_records", "hausdorff"]
