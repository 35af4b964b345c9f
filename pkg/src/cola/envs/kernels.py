"""Environment inner loops, each in a numba and a vectorised numpy flavour.

``COLA_NUMBA=0`` (or numba missing) selects the numpy versions at import time.
Both flavours are always importable by name so tests can compare them.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f

USE_NUMBA = HAVE_NUMBA and os.environ.get("COLA_NUMBA", "1").strip().lower() not in (
    "0", "false", "no", "off")


# ------------------------------------------------------------ particle physics


def integrate_numpy(pos, vel, force, inv_mass, damping, dt, bound):
    """Semi-implicit Euler with an elastic wall at ``|x| = bound``."""
    v = vel * (1.0 - damping) + force * inv_mass[:, None] * dt
    p = pos + v * dt
    hi = p > bound
    lo = p < -bound
    p = np.where(hi, bound, np.where(lo, -bound, p))
    v = np.where(hi | lo, -v, v)
    return p, v


@njit(cache=True)
def integrate_numba(pos, vel, force, inv_mass, damping, dt, bound):
    m = pos.shape[0]
    p = np.empty_like(pos)
    v = np.empty_like(vel)
    for i in range(m):
        for d in range(2):
            vi = vel[i, d] * (1.0 - damping) + force[i, d] * inv_mass[i] * dt
            pi = pos[i, d] + vi * dt
            if pi > bound:
                pi = bound
                vi = -vi
            elif pi < -bound:
                pi = -bound
                vi = -vi
            p[i, d] = pi
            v[i, d] = vi
    return p, v


def pairwise_distances_numpy(a, b):
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt((diff * diff).sum(axis=-1))


@njit(cache=True)
def pairwise_distances_numba(a, b):
    out = np.empty((a.shape[0], b.shape[0]))
    for i in range(a.shape[0]):
        for j in range(b.shape[0]):
            dx = a[i, 0] - b[j, 0]
            dy = a[i, 1] - b[j, 1]
            out[i, j] = np.sqrt(dx * dx + dy * dy)
    return out


def push_out_numpy(pos, vel, centers, min_dist):
    """Move entities out of circular obstacles and drop the inward velocity.

    ``min_dist[i, j]`` is the no-entry distance between entity ``i`` and
    obstacle ``j``.
    """
    p = pos.copy()
    v = vel.copy()
    for j in range(centers.shape[0]):
        diff = p - centers[j]
        dist = np.sqrt((diff * diff).sum(axis=-1))
        inside = dist < min_dist[:, j]
        if not inside.any():
            continue
        safe = np.where(dist > 1e-12, dist, 1.0)
        normal = np.where((dist > 1e-12)[:, None], diff / safe[:, None], np.array([1.0, 0.0]))
        p = np.where(inside[:, None], centers[j] + normal * min_dist[:, j:j + 1], p)
        radial = (v * normal).sum(axis=-1)
        drop = inside & (radial < 0)
        v = np.where(drop[:, None], v - radial[:, None] * normal, v)
    return p, v


@njit(cache=True)
def push_out_numba(pos, vel, centers, min_dist):
    p = pos.copy()
    v = vel.copy()
    for j in range(centers.shape[0]):
        for i in range(p.shape[0]):
            dx = p[i, 0] - centers[j, 0]
            dy = p[i, 1] - centers[j, 1]
            dist = np.sqrt(dx * dx + dy * dy)
            if dist < min_dist[i, j]:
                if dist > 1e-12:
                    nx = dx / dist
                    ny = dy / dist
                else:
                    nx = 1.0
                    ny = 0.0
                p[i, 0] = centers[j, 0] + nx * min_dist[i, j]
                p[i, 1] = centers[j, 1] + ny * min_dist[i, j]
                radial = v[i, 0] * nx + v[i, 1] * ny
                if radial < 0:
                    v[i, 0] -= radial * nx
                    v[i, 1] -= radial * ny
    return p, v


# ------------------------------------------------------------ grid world


def grid_windows_numpy(positions, channels, n_channels, n_obs, size, radius):
    """Egocentric ``(2r+1) x (2r+1)`` occupancy windows on a torus.

    Windows are built for entities ``0..n_obs-1``.  Every other entity ``e`` is
    marked in channel ``channels[e]`` (skipped when negative).
    """
    w = 2 * radius + 1
    out = np.zeros((n_obs, n_channels, w, w))
    rel = (positions[None, :, :] - positions[:n_obs, None, :] + radius) % size
    inside = (rel[..., 0] < w) & (rel[..., 1] < w)
    inside &= np.arange(positions.shape[0])[None, :] != np.arange(n_obs)[:, None]
    inside &= channels[None, :] >= 0
    obs_i, ent = np.nonzero(inside)
    out[obs_i, channels[ent], rel[obs_i, ent, 0], rel[obs_i, ent, 1]] = 1.0
    return out


@njit(cache=True)
def grid_windows_numba(positions, channels, n_channels, n_obs, size, radius):
    w = 2 * radius + 1
    out = np.zeros((n_obs, n_channels, w, w))
    for i in range(n_obs):
        for e in range(positions.shape[0]):
            if e == i or channels[e] < 0:
                continue
            r = (positions[e, 0] - positions[i, 0] + radius) % size
            c = (positions[e, 1] - positions[i, 1] + radius) % size
            if r < w and c < w:
                out[i, channels[e], r, c] = 1.0
    return out


def flee_scores_numpy(prey, predators, moves, size, blocked):
    """Min toroidal Manhattan distance to any predator after each candidate move
    (``-1`` for blocked moves)."""
    cand = (prey[None, :] + moves) % size
    d = np.abs(cand[:, None, :] - predators[None, :, :])
    d = np.minimum(d, size - d).sum(axis=-1)
    scores = d.min(axis=1)
    return np.where(blocked, -1, scores)


@njit(cache=True)
def flee_scores_numba(prey, predators, moves, size, blocked):
    scores = np.empty(moves.shape[0], dtype=np.int64)
    for m in range(moves.shape[0]):
        if blocked[m]:
            scores[m] = -1
            continue
        r = (prey[0] + moves[m, 0]) % size
        c = (prey[1] + moves[m, 1]) % size
        best = 1 << 30
        for k in range(predators.shape[0]):
            dr = abs(r - predators[k, 0])
            dc = abs(c - predators[k, 1])
            dr = min(dr, size - dr)
            dc = min(dc, size - dc)
            if dr + dc < best:
                best = dr + dc
        scores[m] = best
    return scores


if USE_NUMBA:
    integrate = integrate_numba
    pairwise_distances = pairwise_distances_numba
    push_out = push_out_numba
    grid_windows = grid_windows_numba
    flee_scores = flee_scores_numba
else:
    integrate = integrate_numpy
    pairwise_distances = pairwise_distances_numpy
    push_out = push_out_numpy
    grid_windows = grid_windows_numpy
    flee_scores = flee_scores_numpy
