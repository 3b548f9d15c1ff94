"""Rectangular charts and discretized fields.

All discretized quantities live on a GridChart: a coordinate box with a node
lattice.  Values are stored in C-order arrays of the chart's shape; a field
may carry a boolean mask flagging nodes whose values are unreliable (one-sided
stencils at chart faces, degenerate gradients).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.ndimage import map_coordinates

from .structures import SubRiemannianStructure

__all__ = ["GridChart", "ScalarField", "HorizontalVectorField", "GridError", "horizontal_gradient"]


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class GridChart:
    """A coordinate box [lower, upper] with a regular node lattice."""

    lower: tuple
    upper: tuple
    resolution: tuple

    def __post_init__(self):
        lo, hi, res = map(tuple, (self.lower, self.upper, self.resolution))
        object.__setattr__(self, "lower", tuple(float(v) for v in lo))
        object.__setattr__(self, "upper", tuple(float(v) for v in hi))
        object.__setattr__(self, "resolution", tuple(int(r) for r in res))
        if not (len(lo) == len(hi) == len(res)):
            raise GridError("lower, upper, resolution must have equal lengths")
        if any(r < 2 for r in self.resolution):
            raise GridError(f"need at least 2 nodes per axis, got {self.resolution}")
        if any(u <= l for l, u in zip(self.lower, self.upper)):
            raise GridError(f"upper must exceed lower on every axis: {lo} vs {hi}")

    @property
    def n(self) -> int:
        return len(self.lower)

    @property
    def spacing(self) -> tuple:
        return tuple(
            (u - l) / (r - 1) for l, u, r in zip(self.lower, self.upper, self.resolution)
        )

    @property
    def shape(self) -> tuple:
        return self.resolution

    @property
    def node_count(self) -> int:
        return int(np.prod(self.resolution))

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(np.subtract(self.upper, self.lower)))

    def axes(self) -> list:
        return [
            np.linspace(l, u, r)
            for l, u, r in zip(self.lower, self.upper, self.resolution)
        ]

    def points(self) -> np.ndarray:
        """All node coordinates, shape (*resolution, n)."""
        grids = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack(grids, axis=-1)

    def cell_centers(self) -> np.ndarray:
        """Centers of the (r-1)^n cells, shape (*(r_k - 1), n)."""
        axes = [0.5 * (ax[:-1] + ax[1:]) for ax in self.axes()]
        grids = np.meshgrid(*axes, indexing="ij")
        return np.stack(grids, axis=-1)

    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def node_volumes(self) -> np.ndarray:
        """Per-node ownership volume (trapezoid weights: halved on faces)."""
        out = np.ones(self.shape)
        for k, r in enumerate(self.resolution):
            w = np.ones(r)
            w[0] = w[-1] = 0.5
            shape = [1] * self.n
            shape[k] = r
            out = out * w.reshape(shape)
        return out * self.cell_volume()

    def contains(self, point) -> bool:
        p = np.asarray(point, dtype=float)
        return bool(
            np.all(p >= np.asarray(self.lower)) and np.all(p <= np.asarray(self.upper))
        )

    def nearest_index(self, point) -> tuple:
        p = np.asarray(point, dtype=float)
        idx = [
            int(round((p[k] - self.lower[k]) / self.spacing[k]))
            for k in range(self.n)
        ]
        return tuple(int(np.clip(i, 0, r - 1)) for i, r in zip(idx, self.resolution))

    def index_coords(self, points: np.ndarray) -> np.ndarray:
        """Map coordinates to fractional index space (for interpolation)."""
        p = np.asarray(points, dtype=float)
        lo = np.asarray(self.lower)
        h = np.asarray(self.spacing)
        return (p - lo) / h

    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        for k in range(self.n):
            sl = [slice(None)] * self.n
            sl[k] = 0
            mask[tuple(sl)] = True
            sl[k] = -1
            mask[tuple(sl)] = True
        return mask


@dataclass
class ScalarField:
    """One real value per grid node, with an optional validity mask."""

    chart: GridChart
    values: np.ndarray
    mask: Optional[np.ndarray] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.chart.shape:
            if self.values.size == self.chart.node_count:
                self.values = self.values.reshape(self.chart.shape)
            else:
                raise GridError(
                    f"values shape {self.values.shape} does not match chart {self.chart.shape}"
                )
        if self.mask is not None:
            self.mask = np.asarray(self.mask, dtype=bool).reshape(self.chart.shape)

    def copy(self) -> "ScalarField":
        return ScalarField(self.chart, self.values.copy(),
                           None if self.mask is None else self.mask.copy())

    def sample(self, points: np.ndarray) -> np.ndarray:
        """Multilinear interpolation at arbitrary points inside the chart."""
        pts = np.asarray(points, dtype=float)
        idx = self.chart.index_coords(pts)
        coords = [idx[..., k].ravel() for k in range(self.chart.n)]
        out = map_coordinates(self.values, coords, order=1, mode="nearest")
        return out.reshape(pts.shape[:-1])


@dataclass
class HorizontalVectorField:
    """d frame components per node; the pointwise norm is Euclidean in the
    orthonormal horizontal frame."""

    chart: GridChart
    components: np.ndarray  # shape (*chart.shape, d)
    mask: Optional[np.ndarray] = None

    def __post_init__(self):
        self.components = np.asarray(self.components, dtype=float)
        if self.components.shape[:-1] != self.chart.shape:
            raise GridError(
                f"components shape {self.components.shape} does not match chart"
            )

    @property
    def d(self) -> int:
        return self.components.shape[-1]

    def norm(self) -> np.ndarray:
        return np.sqrt(np.sum(self.components**2, axis=-1))


def horizontal_gradient(
    u: ScalarField, S: SubRiemannianStructure
) -> HorizontalVectorField:
    """Directional derivatives X_i u along the horizontal frame.

    Each component is a central difference of u along the frame direction:
    the field coefficients are evaluated at the node, the offset points
    x +- eps*a_i are read off the grid by multilinear interpolation, with
    eps scaled so the stencil stays within one cell.  Nodes whose stencil
    leaves the chart fall back to a one-sided difference and are flagged in
    the mask.
    """
    chart = u.chart
    if chart.n != S.n:
        raise GridError(f"chart dimension {chart.n} != structure dimension {S.n}")
    if any(r < 3 for r in chart.resolution):
        raise GridError(
            f"chart too coarse for the gradient stencil: {chart.resolution} "
            "(need >= 3 nodes per axis)"
        )
    pts = chart.points()
    h = np.asarray(chart.spacing)
    lo = np.asarray(chart.lower)
    hi = np.asarray(chart.upper)

    comps = []
    mask = np.zeros(chart.shape, dtype=bool)
    for fld in S.horizontal_frame:
        a = fld(pts)  # (*shape, n)
        # eps keeps the interpolation stencil within one cell on every axis
        scale = np.max(np.abs(a) / h, axis=-1)
        eps = np.where(scale > 0, 0.5 / np.maximum(scale, 1e-300), 0.0)
        step = eps[..., None] * a
        fwd_in = np.all((pts + step >= lo) & (pts + step <= hi), axis=-1)
        bwd_in = np.all((pts - step >= lo) & (pts - step <= hi), axis=-1)

        up = u.sample(pts + step)
        dn = u.sample(pts - step)
        u0 = u.values
        with np.errstate(invalid="ignore", divide="ignore"):
            central = (up - dn) / (2.0 * eps)
            fwd = (up - u0) / eps
            bwd = (u0 - dn) / eps
        deriv = np.where(fwd_in & bwd_in, central, np.where(fwd_in, fwd, bwd))
        deriv = np.where(eps > 0, deriv, 0.0)
        mask |= ~(fwd_in & bwd_in) & (eps > 0)
        comps.append(deriv)

    if u.mask is not None:
        mask |= u.mask
    return HorizontalVectorField(chart, np.stack(comps, axis=-1), mask)
