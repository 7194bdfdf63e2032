"""Generalized distance transforms for quadratic spring penalties.

Computes, in one linear pass, transformed[p] = max_q f[q] - a(p-q)^2 - b(p-q)
together with the maximizing q.  Each source q contributes a downward
parabola g_q(u) = f[q] - a(u-q)^2 - b(u-q); because any two such parabolas
cross exactly once, the upper envelope can be built left to right while
keeping a stack of the sites that win somewhere, plus the boundary where
each takes over from its predecessor.  Evaluating the envelope at any
ascending sequence of positions is then a single merge-like sweep.

Sites and evaluation positions are allowed to be arbitrary ascending real
numbers, which is how mean spring offsets enter the pose search without any
grid resizing: the parent lattice is simply evaluated at (position + mean).
"""

from __future__ import annotations

import numpy as np

from .model import EPS_DEF

try:  # pragma: no cover - exercised implicitly wherever numba is present
    from numba import njit as _njit
except ImportError:  # pragma: no cover
    _njit = None


def _envelope_py(sites, values, a, b, positions, out, argout):
    # Build: v holds the site indices that win somewhere, z[k] the position
    # where v[k] takes over from v[k-1].  Parabola i crosses parabola j
    # (site qi > qj) exactly once; to the right of the crossing, i wins.
    n = sites.shape[0]
    v = np.empty(n, dtype=np.int64)
    z = np.empty(n + 1, dtype=np.float64)
    k = 0
    v[0] = 0
    z[0] = -np.inf
    z[1] = np.inf
    inv2a = 1.0 / (2.0 * a)
    for i in range(1, n):
        qi = sites[i]
        fi = values[i]
        while True:
            j = v[k]
            qj = sites[j]
            s = ((values[j] - fi) - b * (qi - qj)) * inv2a / (qi - qj) + (qj + qi) * 0.5
            if s <= z[k] and k > 0:
                k -= 1
            else:
                break
        k += 1
        v[k] = i
        z[k] = s
        z[k + 1] = np.inf
    k = 0
    m = positions.shape[0]
    for p in range(m):
        u = positions[p]
        while z[k + 1] < u:
            k += 1
        q = v[k]
        d = u - sites[q]
        out[p] = values[q] - a * d * d - b * d
        argout[p] = q
    return out


if _njit is not None:
    _envelope = _njit(cache=True, fastmath=False)(_envelope_py)
else:  # pragma: no cover
    _envelope = _envelope_py


def quad_envelope(sites: np.ndarray, values: np.ndarray, a: float, b: float,
                  positions: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Upper envelope of quadratically penalized sites, sampled at positions.

    Sites and positions must be ascending.  Sites whose value is -inf are
    dropped before the sweep; if none remain the output is -inf everywhere
    with argument -1.
    """
    sites = np.ascontiguousarray(sites, dtype=np.float64)
    values = np.ascontiguousarray(values, dtype=np.float64)
    positions = np.ascontiguousarray(positions, dtype=np.float64)
    if a < EPS_DEF:
        raise ValueError(
            f"quadratic coefficient {a} below the admissible floor {EPS_DEF}"
        )
    out = np.empty(positions.shape[0], dtype=np.float64)
    argout = np.empty(positions.shape[0], dtype=np.int64)
    finite = values > -np.inf
    if not finite.all():
        keep = np.flatnonzero(finite)
        if keep.size == 0:
            out.fill(-np.inf)
            argout.fill(-1)
            return out, argout
        _envelope(sites[keep], values[keep], float(a), float(b), positions,
                  out, argout)
        argout = keep[argout]
        return out, argout
    _envelope(sites, values, float(a), float(b), positions, out, argout)
    return out, argout


def gdt_1d(f: np.ndarray, a: float, b: float) -> tuple[np.ndarray, np.ndarray]:
    """transformed[p] = max_q f[q] - a(p-q)^2 - b(p-q) on the integer grid.

    Returns (transformed, argmax); ties cannot survive the strictly concave
    penalty, so a constant input maps every position to itself.
    """
    f = np.asarray(f, dtype=np.float64)
    if f.ndim != 1 or f.shape[0] == 0:
        raise ValueError("f must be a non-empty 1-D array")
    grid = np.arange(f.shape[0], dtype=np.float64)
    return quad_envelope(grid, f, a, b, grid)


def gdt_2d(f: np.ndarray, wx2: float, wx1: float, wy2: float, wy1: float
           ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Separable 2-D transform over rows then columns.

    transformed[py, px] = max over (qy, qx) of
        f[qy, qx] - wx2*(px-qx)^2 - wx1*(px-qx) - wy2*(py-qy)^2 - wy1*(py-qy)

    Returns (transformed, argmax_y, argmax_x).
    """
    f = np.asarray(f, dtype=np.float64)
    if f.ndim != 2 or f.size == 0:
        raise ValueError("f must be a non-empty 2-D array")
    h, w = f.shape
    xs = np.arange(w, dtype=np.float64)
    ys = np.arange(h, dtype=np.float64)
    row_vals = np.empty_like(f)
    row_args = np.empty((h, w), dtype=np.int64)
    for yi in range(h):
        row_vals[yi], row_args[yi] = quad_envelope(xs, f[yi], wx2, wx1, xs)
    out = np.empty_like(f)
    arg_y = np.empty((h, w), dtype=np.int64)
    for xi in range(w):
        out[:, xi], arg_y[:, xi] = quad_envelope(ys, row_vals[:, xi], wy2, wy1, ys)
    arg_x = np.take_along_axis(row_args, arg_y, axis=0)
    return out, arg_y, arg_x


def masked_gdt_2d(f: np.ndarray, ax: float, bx: float, ay: float, by: float,
                  x_sites: np.ndarray, y_sites: np.ndarray,
                  x_positions: np.ndarray, y_positions: np.ndarray
                  ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """2-D transform between two different lattices, tolerating -inf entries.

    ``f`` lives on (y_sites, x_sites); the result lives on
    (y_positions, x_positions).  Used by the pose search, where child and
    parent lattices differ by template extents and the mean spring offset,
    and where evidence clamping blanks out most of a map.
    """
    h = y_sites.shape[0]
    wp = x_positions.shape[0]
    row_vals = np.empty((h, wp), dtype=np.float64)
    row_args = np.empty((h, wp), dtype=np.int64)
    for yi in range(h):
        row_vals[yi], row_args[yi] = quad_envelope(
            x_sites, f[yi], ax, bx, x_positions)
    hp = y_positions.shape[0]
    out = np.empty((hp, wp), dtype=np.float64)
    arg_y = np.empty((hp, wp), dtype=np.int64)
    for xi in range(wp):
        out[:, xi], arg_y[:, xi] = quad_envelope(
            y_sites, row_vals[:, xi], ay, by, y_positions)
    safe_y = np.where(arg_y >= 0, arg_y, 0)
    arg_x = np.take_along_axis(row_args, safe_y, axis=0)
    arg_x[arg_y < 0] = -1
    return out, arg_y, arg_x
