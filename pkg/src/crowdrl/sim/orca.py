"""Optimal reciprocal collision avoidance for a single agent.

Each neighbour contributes one half-plane of admissible velocities. The
velocity closest to the preferred one is found with an incremental 2D
linear program on the speed disc; if the constraints are infeasible, a 3D
program minimises the largest constraint violation instead.

Half-planes are stored as ``(px, py, dx, dy)``: the admissible side lies
to the left of the directed line through ``(px, py)`` along unit ``(dx, dy)``.
"""
from __future__ import annotations

import math
from typing import Sequence

from .state import FullState, ObservableState

EPS = 1e-5

Line = tuple[float, float, float, float]


def _det(ax: float, ay: float, bx: float, by: float) -> float:
    return ax * by - ay * bx


def preferred_velocity(px: float, py: float, gx: float, gy: float,
                       v_pref: float, dt: float) -> tuple[float, float]:
    """Full preferred speed toward the goal, shortened to land on it within ``dt``."""
    dx, dy = gx - px, gy - py
    dist = math.hypot(dx, dy)
    if dist == 0.0:
        return 0.0, 0.0
    if dist < v_pref * dt:
        return dx / dt, dy / dt
    return dx / dist * v_pref, dy / dist * v_pref


def orca_lines(pos: Sequence[float], vel: Sequence[float], radius: float,
               neighbors: Sequence[Sequence[float]], dt: float, horizon: float) -> list[Line]:
    """One ORCA half-plane per neighbour row ``(px, py, vx, vy, radius)``."""
    inv_h = 1.0 / horizon
    px, py = float(pos[0]), float(pos[1])
    vx, vy = float(vel[0]), float(vel[1])
    lines: list[Line] = []
    for nb in neighbors:
        rpx, rpy = nb[0] - px, nb[1] - py
        rvx, rvy = vx - nb[2], vy - nb[3]
        dist_sq = rpx * rpx + rpy * rpy
        comb = radius + nb[4]
        comb_sq = comb * comb
        if dist_sq > comb_sq:
            wx, wy = rvx - inv_h * rpx, rvy - inv_h * rpy
            w_len_sq = wx * wx + wy * wy
            dot1 = wx * rpx + wy * rpy
            if dot1 < 0.0 and dot1 * dot1 > comb_sq * w_len_sq:
                # project on the cut-off circle
                w_len = math.sqrt(w_len_sq)
                ux_, uy_ = wx / w_len, wy / w_len
                dx, dy = uy_, -ux_
                scale = comb * inv_h - w_len
                ux, uy = scale * ux_, scale * uy_
            else:
                # project on a leg of the cone
                leg = math.sqrt(dist_sq - comb_sq)
                if _det(rpx, rpy, wx, wy) > 0.0:
                    dx = (rpx * leg - rpy * comb) / dist_sq
                    dy = (rpx * comb + rpy * leg) / dist_sq
                else:
                    dx = -(rpx * leg + rpy * comb) / dist_sq
                    dy = -(-rpx * comb + rpy * leg) / dist_sq
                dot2 = rvx * dx + rvy * dy
                ux, uy = dot2 * dx - rvx, dot2 * dy - rvy
        else:
            # already overlapping: resolve within one step
            inv_dt = 1.0 / dt
            wx, wy = rvx - inv_dt * rpx, rvy - inv_dt * rpy
            w_len = math.hypot(wx, wy)
            if w_len == 0.0:
                ux_, uy_ = 1.0, 0.0
            else:
                ux_, uy_ = wx / w_len, wy / w_len
            dx, dy = uy_, -ux_
            scale = comb * inv_dt - w_len
            ux, uy = scale * ux_, scale * uy_
        lines.append((vx + 0.5 * ux, vy + 0.5 * uy, dx, dy))
    return lines


def _lp1(lines: Sequence[Line], no: int, radius: float, opt: tuple[float, float],
         direction_opt: bool) -> tuple[float, float] | None:
    lpx, lpy, ldx, ldy = lines[no]
    dot = lpx * ldx + lpy * ldy
    disc = dot * dot + radius * radius - (lpx * lpx + lpy * lpy)
    if disc < 0.0:
        return None
    sq = math.sqrt(disc)
    t_left, t_right = -dot - sq, -dot + sq
    for i in range(no):
        ipx, ipy, idx, idy = lines[i]
        denom = _det(ldx, ldy, idx, idy)
        numer = _det(idx, idy, lpx - ipx, lpy - ipy)
        if abs(denom) <= EPS:
            if numer < 0.0:
                return None
            continue
        t = numer / denom
        if denom >= 0.0:
            t_right = min(t_right, t)
        else:
            t_left = max(t_left, t)
        if t_left > t_right:
            return None
    if direction_opt:
        t = t_right if opt[0] * ldx + opt[1] * ldy > 0.0 else t_left
    else:
        t = ldx * (opt[0] - lpx) + ldy * (opt[1] - lpy)
        t = min(max(t, t_left), t_right)
    return lpx + t * ldx, lpy + t * ldy


def _lp2(lines: Sequence[Line], radius: float, opt: tuple[float, float],
         direction_opt: bool) -> tuple[int, tuple[float, float]]:
    if direction_opt:
        result = (opt[0] * radius, opt[1] * radius)
    else:
        n = math.hypot(opt[0], opt[1])
        result = (opt[0] / n * radius, opt[1] / n * radius) if n > radius else (opt[0], opt[1])
    for i, (lpx, lpy, ldx, ldy) in enumerate(lines):
        if _det(ldx, ldy, lpx - result[0], lpy - result[1]) > 0.0:
            new = _lp1(lines, i, radius, opt, direction_opt)
            if new is None:
                return i, result
            result = new
    return len(lines), result


def _lp3(lines: Sequence[Line], begin: int, radius: float,
         result: tuple[float, float]) -> tuple[float, float]:
    distance = 0.0
    for i in range(begin, len(lines)):
        ipx, ipy, idx, idy = lines[i]
        if _det(idx, idy, ipx - result[0], ipy - result[1]) <= distance:
            continue
        proj: list[Line] = []
        for j in range(i):
            jpx, jpy, jdx, jdy = lines[j]
            determinant = _det(idx, idy, jdx, jdy)
            if abs(determinant) <= EPS:
                if idx * jdx + idy * jdy > 0.0:
                    continue
                ppx, ppy = 0.5 * (ipx + jpx), 0.5 * (ipy + jpy)
            else:
                s = _det(jdx, jdy, ipx - jpx, ipy - jpy) / determinant
                ppx, ppy = ipx + s * idx, ipy + s * idy
            ddx, ddy = jdx - idx, jdy - idy
            n = math.hypot(ddx, ddy)
            proj.append((ppx, ppy, ddx / n, ddy / n))
        fail, candidate = _lp2(proj, radius, (-idy, idx), True)
        # a failure here is floating-point noise; keep the previous result
        if fail >= len(proj):
            result = candidate
        distance = _det(idx, idy, ipx - result[0], ipy - result[1])
    return result


def solve_velocity(lines: Sequence[Line], max_speed: float,
                   pref: tuple[float, float]) -> tuple[float, float]:
    """Velocity inside every half-plane and the speed disc closest to ``pref``.

    Falls back to the least-violating velocity when no such velocity exists.
    """
    fail, result = _lp2(lines, max_speed, pref, False)
    if fail < len(lines):
        result = _lp3(lines, fail, max_speed, result)
    return result


def agent_velocity(pos, vel, radius: float, goal, v_pref: float,
                   neighbors: Sequence[Sequence[float]], dt: float, horizon: float) -> tuple[float, float]:
    """New velocity for an agent given neighbour rows ``(px, py, vx, vy, radius)``.

    Neighbours are processed nearest first (ties by row order), which makes
    the result independent of how the caller happens to list them.
    """
    px, py = float(pos[0]), float(pos[1])
    pref = preferred_velocity(px, py, float(goal[0]), float(goal[1]), v_pref, dt)
    if len(neighbors):
        ordered = sorted(
            range(len(neighbors)),
            key=lambda i: ((neighbors[i][0] - px) ** 2 + (neighbors[i][1] - py) ** 2, i),
        )
        lines = orca_lines(pos, vel, radius, [neighbors[i] for i in ordered], dt, horizon)
    else:
        lines = []
    return solve_velocity(lines, v_pref, pref)


def orca_velocity(agent: FullState, neighbors: Sequence[ObservableState], dt: float,
                  horizon: float) -> tuple[float, float]:
    """ORCA velocity for ``agent`` against observable ``neighbors``."""
    rows = [(n.px, n.py, n.vx, n.vy, n.radius) for n in neighbors]
    return agent_velocity((agent.px, agent.py), (agent.vx, agent.vy), agent.radius,
                          (agent.gx, agent.gy), agent.v_pref, rows, dt, horizon)
