"""Finite-difference oracles with explicit kink detection.

Bilinear sampling and ReLU are piecewise smooth. A central difference whose
stencil crosses a cell boundary (or flips a ReLU) is not a valid reference,
so these helpers report such stencils and callers redraw the instance.
"""
from __future__ import annotations

import numpy as np

from stabkit import network
from stabkit.geometry import Homography

EPS = 1e-5
REL_TOL = 1e-4


def rel_err(analytic, fd) -> np.ndarray:
    a = np.asarray(analytic, dtype=np.float64).ravel()
    f = np.asarray(fd, dtype=np.float64).ravel()
    # components far below the vector's scale are compared against that scale
    floor = max(1e-6 * float(np.max(np.abs(f), initial=0.0)), 1e-14)
    return np.abs(a - f) / np.maximum(np.maximum(np.abs(a), np.abs(f)), floor)


def _bumped(h: Homography, k: int, step: float) -> np.ndarray:
    p = h.params.copy()
    p[k] += step
    m = np.append(p, 1.0).reshape(3, 3)
    return m


def _sample_pixels(m: np.ndarray, width: int, height: int):
    # independent of stabkit.image: plain matrix product over the pixel grid
    xs = np.linspace(-1.0, 1.0, width)
    ys = np.linspace(-1.0, 1.0, height)
    gx, gy = np.meshgrid(xs, ys)
    pts = np.stack([gx.ravel(), gy.ravel(), np.ones(gx.size)])
    q = m @ pts
    return (q[0] / q[2] + 1.0) * (width - 1) / 2.0, (q[1] / q[2] + 1.0) * (height - 1) / 2.0


def warp_straddles(h: Homography, width: int, height: int, eps: float = EPS) -> bool:
    """True when any pixel's bilinear cell changes across a +-eps stencil on any parameter."""
    pad = 1e-8  # covers the kernel's snapping to integers
    for k in range(8):
        up, vp = _sample_pixels(_bumped(h, k, eps), width, height)
        um, vm = _sample_pixels(_bumped(h, k, -eps), width, height)
        lo_u, hi_u = np.minimum(up, um) - pad, np.maximum(up, um) + pad
        lo_v, hi_v = np.minimum(vp, vm) - pad, np.maximum(vp, vm) + pad
        if np.any(np.floor(lo_u) != np.floor(hi_u)) or np.any(np.floor(lo_v) != np.floor(hi_v)):
            return True
    return False


def fd_homography(fn, h: Homography, eps: float = EPS) -> np.ndarray:
    """Central differences of scalar ``fn(Homography)`` over the 8 parameters."""
    g = np.zeros(8)
    for k in range(8):
        a = fn(Homography(_bumped(h, k, eps)))
        b = fn(Homography(_bumped(h, k, -eps)))
        g[k] = (a - b) / (2 * eps)
    return g


def _actives(params, x):
    _, cache = network.forward_batch(params, x)
    return [layer[2] for layer in cache.layers if layer[2] is not None]


def fd_network(params, x, upstream, entries, eps: float = EPS):
    """Central differences of ``upstream . delta(x)`` at ``(name, flat_index)`` entries.

    Returns ``(fd, kinked)``; ``kinked[i]`` marks stencils that flip some ReLU.
    """
    fd = np.zeros(len(entries))
    kinked = np.zeros(len(entries), dtype=bool)
    for i, (name, idx) in enumerate(entries):
        arr = params.arrays[name].reshape(-1)
        orig = arr[idx]
        vals, acts = [], []
        for step in (eps, -eps):
            arr[idx] = orig + step
            d, _ = network.forward_batch(params, x, keep_cache=False)
            vals.append(float(np.sum(d * upstream)))
            acts.append(_actives(params, x))
        arr[idx] = orig
        fd[i] = (vals[0] - vals[1]) / (2 * eps)
        kinked[i] = any(not np.array_equal(a, b) for a, b in zip(*acts))
    return fd, kinked


def sample_entries(params, per_array: int, rng) -> list[tuple[str, int]]:
    out = []
    for name, arr in params.arrays.items():
        n = min(per_array, arr.size)
        out += [(name, int(i)) for i in rng.choice(arr.size, size=n, replace=False)]
    return out
