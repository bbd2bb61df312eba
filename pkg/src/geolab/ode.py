"""Batched Dormand-Prince 5(4) integrator.

Each row of the batch carries its own time and adaptive step size, so the
result for one trajectory does not depend on what else is in the batch.
"""

import numpy as np

from .errors import OdeDivergence

# Dormand-Prince tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4


_AM = np.zeros((7, 7))
for _i, _row in enumerate(_A):
    _AM[_i, : len(_row)] = _row


def _advance(fun, y, t0, t1, h, atol, rtol, max_steps):
    """Integrate every row from ``t0`` to ``t1`` (autonomous right-hand side).

    The last stage of an accepted step is reused as the first stage of the
    next one (first-same-as-last).
    """
    y = y.copy()
    n, dim = y.shape
    t = np.full(n, t0, dtype=float)
    h = np.minimum(h, t1 - t0)
    active = np.ones(n, dtype=bool)
    first = fun(y)
    steps = 0
    K = np.empty((7, n, dim))
    while np.any(active):
        steps += 1
        if steps > max_steps:
            raise OdeDivergence("step budget exhausted in geodesic integration")
        idx = np.nonzero(active)[0]
        m = idx.size
        yi = y[idx]
        hi = np.minimum(h[idx], t1 - t[idx])
        hc = hi[:, None]
        Ki = K[:, :m]
        Ki[0] = first[idx]
        flat = Ki.reshape(7, -1)
        for i in range(1, 7):
            Ki[i] = fun(yi + hc * (_AM[i, :i] @ flat[:i]).reshape(m, dim))
        y_new = yi + hc * (_B5 @ flat).reshape(m, dim)
        err = hc * (_E @ flat).reshape(m, dim)
        scale = atol + rtol * np.maximum(np.abs(yi), np.abs(y_new))
        err_norm = np.max(np.abs(err) / scale, axis=1)
        if not np.all(np.isfinite(err_norm)):
            raise OdeDivergence("non-finite state in geodesic integration")
        ok = err_norm <= 1.0
        acc = idx[ok]
        y[acc] = y_new[ok]
        first[acc] = Ki[6][ok]
        reached = hi >= (t1 - t[idx]) * (1 - 1e-15)
        t[acc] = np.where(reached[ok], t1, t[acc] + hi[ok])
        with np.errstate(divide="ignore"):
            grow = np.where(err_norm == 0.0, 5.0, np.clip(0.9 * err_norm ** -0.2, 0.2, 5.0))
        h[idx] = hi * grow
        active[acc[reached[ok]]] = False
        if np.any(h[active] < 1e-14 * max(1.0, abs(t1))):
            raise OdeDivergence("step size underflow")
    return y


def integrate(fun, y0, t1, atol=1e-10, rtol=0.0, t_eval=None, max_steps=20000, h0=None):
    """Integrate the autonomous system ``y' = fun(y)`` from 0 to ``t1``.

    Parameters
    ----------
    fun : callable
        Right-hand side, vectorised over the leading axis of ``y``.
    y0 : ndarray, shape (N, D)
    t1 : float
    t_eval : sequence of float, optional
        Increasing times in ``(0, t1]`` at which the state is recorded.
    h0 : float or ndarray, optional
        Initial step (per row if an array).

    Returns
    -------
    y1 : ndarray, shape (N, D)
    samples : list of ndarray
    """
    y = np.array(y0, dtype=float)
    n = y.shape[0]
    if n == 0 or t1 <= 0.0:
        return y, [y.copy() for _ in (t_eval or [])]
    h = np.full(n, t1 / 8.0) if h0 is None else np.broadcast_to(np.asarray(h0, float), (n,)).copy()
    stops = list(t_eval) if t_eval is not None else []
    if not stops or stops[-1] < t1:
        stops.append(t1)
        keep_last = t_eval is not None and len(stops) > len(t_eval)
    else:
        keep_last = False
    samples = []
    t = 0.0
    for stop in stops:
        if stop > t:
            y = _advance(fun, y, t, stop, h.copy(), atol, rtol, max_steps)
            t = stop
        samples.append(y.copy())
    if t_eval is None:
        samples = []
    elif keep_last:
        samples = samples[:-1]
    return y, samples
