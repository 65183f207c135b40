"""Tensorized composite-Simpson quadrature.

Adaptivity is by uniform panel doubling: every axis panel is split into
2^(k+1) Simpson segments at refinement level k, and refinement stops when two
successive estimates agree within the tolerance. Per-axis breakpoints let
piecewise-smooth integrands (indicator kernels) be integrated exactly panel by
panel.
"""
from __future__ import annotations

import numpy as np


class QuadratureError(RuntimeError):
    """Quadrature failed to converge within the refinement budget."""


def _axis_rule(edges: np.ndarray, level: int):
    """Composite Simpson nodes/weights per panel at the given refinement level."""
    nseg = 2 ** (level + 1)
    nodes = []
    weights = []
    for a, b in zip(edges[:-1], edges[1:]):
        if b - a <= 0:
            continue
        h = (b - a) / nseg
        x = a + h * np.arange(nseg + 1)
        w = np.full(nseg + 1, 2.0)
        w[1::2] = 4.0
        w[0] = w[-1] = 1.0
        nodes.append(x)
        weights.append(w * (h / 3.0))
    if not nodes:
        return np.zeros(0), np.zeros(0)
    return np.concatenate(nodes), np.concatenate(weights)


_MAX_NODES = 40_000_000


def tensor_simpson(f, lo, hi, breakpoints=None, tol=1e-6, min_levels=2):
    """Integrate ``f`` over the box [lo, hi].

    ``f`` must accept an (N, d) array and return (N,) values. ``breakpoints``
    is an optional per-axis sequence of interior panel edges.
    """
    lo = np.atleast_1d(np.asarray(lo, float))
    hi = np.atleast_1d(np.asarray(hi, float))
    d = lo.size
    edges = []
    for ax in range(d):
        pts = [lo[ax], hi[ax]]
        if breakpoints is not None:
            pts.extend(p for p in breakpoints[ax] if lo[ax] < p < hi[ax])
        edges.append(np.unique(np.asarray(pts, float)))
    if any((e[-1] - e[0]) <= 0 for e in edges):
        return 0.0

    prev = None
    level = 0
    while True:
        rules = [_axis_rule(edges[ax], level) for ax in range(d)]
        counts = [r[0].size for r in rules]
        n_nodes = int(np.prod(counts))
        if n_nodes > _MAX_NODES:
            raise QuadratureError(
                f"quadrature needs more than {_MAX_NODES} nodes at tol={tol}"
            )
        grids = np.meshgrid(*[r[0] for r in rules], indexing="ij")
        pts = np.stack([g.ravel() for g in grids], axis=-1)
        vals = np.asarray(f(pts), float).reshape(counts)
        total = vals
        for ax in range(d - 1, -1, -1):
            total = np.tensordot(total, rules[ax][1], axes=([ax], [0]))
        total = float(total)
        if prev is not None and level >= min_levels and abs(total - prev) <= tol:
            return total
        prev = total
        level += 1


def radial_integral(profile, r_max: float, dim: int, tol=1e-6, breakpoints=()):
    """Integral over R^dim of a radial function given by ``profile(r)``,
    truncated at ``r_max``."""
    surface = {1: 2.0, 2: 2.0 * np.pi, 3: 4.0 * np.pi}[dim]

    def integrand(pts):
        r = pts[:, 0]
        return profile(r) * r ** (dim - 1)

    val = tensor_simpson(
        integrand, [0.0], [r_max], breakpoints=[list(breakpoints)], tol=tol / max(surface, 1.0)
    )
    return surface * val
