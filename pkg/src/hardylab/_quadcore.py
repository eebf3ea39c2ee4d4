"""Low-level panel quadrature used by the convolution and Duhamel integrals.

All integrands handled here are nonnegative.  The basic object is a tiling of
an interval into panels carrying Gauss-Legendre nodes; singular endpoints get
geometrically graded panels whose innermost gap is closed by a measured tail
completion.  The completion model for the ladder of panel sums g_k is

    g_k ~ A * rho^k * k^(-q)

fitted on the innermost sums, which covers algebraic singularities (constant
ratio rho), logarithmically corrected ones (rho ~ 1, q > 1), and flags
non-integrable behaviour (rho > 1, or rho ~ 1 with q <= 1).
"""

from __future__ import annotations

import math

import numpy as np

# Divergence heuristics for the measured-tail completion (see module docstring).
NEAR_UNIT_RATIO = 0.98
DIVERGE_LOG_POWER = 1.05
_COMPLETION_JMAX = 4096

_gl_cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def gl01(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights on (0, 1)."""
    try:
        return _gl_cache[n]
    except KeyError:
        x, w = np.polynomial.legendre.leggauss(n)
        pair = (0.5 * (x + 1.0), 0.5 * w)
        _gl_cache[n] = pair
        return pair


def geometric_ladder(scale: float, levels: int, ratio: float = 0.5) -> np.ndarray:
    """Ascending edges scale*ratio^levels ... scale*ratio, scale.

    The gap [0, scale*ratio^levels] is deliberately left open for completion.
    """
    k = np.arange(levels, -1, -1, dtype=float)
    return scale * ratio ** k


def panelize(edges: np.ndarray, order: int) -> tuple[np.ndarray, np.ndarray]:
    """Map GL nodes onto consecutive panels of an edge array.

    edges has shape (..., m); returns points and weights of shape
    (..., (m-1)*order).  Zero-width (duplicate) panels get zero weight.
    """
    gx, gw = gl01(order)
    lo = edges[..., :-1, None]
    width = (edges[..., 1:, None] - lo)
    pts = lo + width * gx
    wts = width * gw
    shape = edges.shape[:-1] + (-1,)
    return pts.reshape(shape), wts.reshape(shape)


def panel_sums(values: np.ndarray, weights: np.ndarray, order: int) -> np.ndarray:
    """Per-panel integrals from flattened GL values/weights."""
    prod = values * weights
    shape = prod.shape[:-1] + (prod.shape[-1] // order, order)
    return prod.reshape(shape).sum(axis=-1)


def ladder_complete(sums: np.ndarray, level_offset: int = 0,
                    floor: float = 1e-300) -> tuple[np.ndarray, np.ndarray]:
    """Estimate the open-gap remainder of a geometric panel ladder.

    ``sums`` holds panel integrals ordered outermost to innermost along the
    last axis; ``level_offset`` is the absolute depth of the first sum.

    Divergence is a ratio test: sustained near-unit (or growing) level ratios
    mean the local exponent is non-integrable or unresolvable.  Clearly
    contracting ladders are completed geometrically, which is exact for pure
    powers and immune to local drift; near-unit ladders use the
    A * rho**k * k**-q model, which captures logarithmically corrected tails.
    Returns (remainder, diverged mask); all-zero ladders get remainder 0.
    """
    sums = np.asarray(sums, dtype=float)
    n = sums.shape[-1]
    if n < 4:
        raise ValueError("ladder completion needs at least 4 levels")
    L = n + level_offset
    g0 = np.maximum(sums[..., -3], floor)
    g1 = np.maximum(sums[..., -2], floor)
    g2 = np.maximum(sums[..., -1], floor)
    live = sums[..., -1] > floor

    r1 = g1 / g0
    r2 = g2 / g1
    diverged = live & (((r1 >= NEAR_UNIT_RATIO) & (r2 >= NEAR_UNIT_RATIO))
                       | (r2 >= 1.0 + 1e-1))

    # geometric branch: contraction is clear, drift is harmless
    r_geo = np.minimum(r2, NEAR_UNIT_RATIO)
    rem_geo = g2 * r_geo / (1.0 - r_geo)

    # near-unit branch: fit the log-corrected model on the last three sums
    a1 = math.log((L - 1.0) / (L - 2.0))
    a2 = math.log(L / (L - 1.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        q = np.clip((np.log(r1) - np.log(r2)) / (a1 - a2), 0.0, 12.0)
        rho = np.exp(np.clip(np.log(r2) + q * a2, -700.0, 0.0))
    log_diverged = live & (r2 >= 0.9) & (rho >= 0.999) & (q <= DIVERGE_LOG_POWER)
    diverged = diverged | log_diverged
    j = np.arange(1, _COMPLETION_JMAX + 1, dtype=float)
    qq = np.where(live & (r2 >= 0.9), q, 0.0)
    rr = np.where(live & (r2 >= 0.9) & ~diverged, rho, 0.0)
    terms = rr[..., None] ** j * (1.0 + j / L) ** (-qq[..., None])
    rem_fit = g2 * terms.sum(axis=-1)

    remainder = np.where(r2 >= 0.9, rem_fit, rem_geo)
    remainder = np.where(live & ~diverged, remainder, 0.0)
    return remainder, diverged


def merge_edges(*families: np.ndarray, lo, hi) -> np.ndarray:
    """Sorted union of edge families broadcast to a common batch shape.

    Every family is clipped into [lo, hi]; the bounds themselves are always
    present, so consecutive entries tile [lo, hi] (duplicates give zero-width
    panels, which are harmless).
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    batch = np.broadcast_shapes(lo.shape, hi.shape, *(f.shape[:-1] for f in families))
    parts = [np.broadcast_to(lo[..., None], batch + (1,)),
             np.broadcast_to(hi[..., None], batch + (1,))]
    for fam in families:
        fam = np.broadcast_to(fam, batch + fam.shape[-1:])
        parts.append(np.clip(fam, lo[..., None], hi[..., None]))
    return np.sort(np.concatenate(parts, axis=-1), axis=-1)
