from __future__ import annotations

import math

import numpy as np


def min_separation(p_a, v_a, p_b, v_b, dt: float) -> float:
    """Minimum centre distance of two agents moving linearly over [0, dt]."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    dpx, dpy = p_a[0] - p_b[0], p_a[1] - p_b[1]
    dvx, dvy = v_a[0] - v_b[0], v_a[1] - v_b[1]
    vv = dvx * dvx + dvy * dvy
    if vv == 0.0:
        t = 0.0
    else:
        t = -(dpx * dvx + dpy * dvy) / vv
        t = min(max(t, 0.0), dt)
    return math.hypot(dpx + t * dvx, dpy + t * dvy)


def min_separations(p_a, v_a, p_b: np.ndarray, v_b: np.ndarray, dt: float) -> np.ndarray:
    """Vectorised :func:`min_separation` of one agent against rows of ``p_b``/``v_b``."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    dp = np.asarray(p_a, dtype=np.float64) - p_b
    dv = np.asarray(v_a, dtype=np.float64) - v_b
    vv = np.einsum("ij,ij->i", dv, dv)
    pv = np.einsum("ij,ij->i", dp, dv)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(vv > 0.0, -pv / np.where(vv > 0.0, vv, 1.0), 0.0)
    t = np.clip(t, 0.0, dt)
    closest = dp + t[:, None] * dv
    return np.hypot(closest[:, 0], closest[:, 1])


def pairwise_min_separations(pos: np.ndarray, vel: np.ndarray, dt: float) -> np.ndarray:
    """Symmetric (N, N) matrix of minimum separations; diagonal is +inf."""
    n = pos.shape[0]
    out = np.full((n, n), np.inf)
    for i in range(n - 1):
        d = min_separations(pos[i], vel[i], pos[i + 1:], vel[i + 1:], dt)
        out[i, i + 1:] = d
        out[i + 1:, i] = d
    return out
