"""Default chart construction for the built-in structures.

Charts must contain the outer ball B(b) with margin: for Euclidean space a
box of half-width 1.15 b suffices; for the Heisenberg group the ball is a
flattened spheroid whose vertical extent grows like b^2, and the g_tau
shortcuts (cost 1/tau per vertical unit) reach further than the C-C swirl
estimate b^2/(4 pi), so the vertical half-extent uses the measured-safe
0.2 b^2 + tau b.
"""
from __future__ import annotations

from .grid import GridChart
from .structures import SubRiemannianStructure

__all__ = ["default_chart"]


def default_chart(
    S: SubRiemannianStructure,
    radius: float,
    resolution,
    tau_min: float = 0.05,
    margin: float = 1.2,
) -> GridChart:
    """A chart containing B(radius) for a built-in structure.

    resolution: int (same per axis) or per-axis tuple.  Raises ValueError for
    structures whose ball shape is unknown (custom structures supply their
    own chart).
    """
    if radius <= 0:
        raise ValueError(f"radius must be positive, got {radius}")
    name = S.name.split("(")[0]
    if isinstance(resolution, int):
        res = (resolution,) * S.n
    else:
        res = tuple(int(r) for r in resolution)
        if len(res) != S.n:
            raise ValueError(f"resolution needs {S.n} axes, got {len(res)}")
    if name == "euclidean" or name == "heisenberg_riemannian":
        half = margin * radius
        return GridChart((-half,) * S.n, (half,) * S.n, res)
    if name == "heisenberg_cc":
        half_xy = margin * radius
        half_t = 0.2 * radius**2 + tau_min * radius
        lower = (-half_xy,) * (S.n - 1) + (-half_t,)
        upper = (half_xy,) * (S.n - 1) + (half_t,)
        return GridChart(lower, upper, res)
    raise ValueError(
        f"no default chart for structure {S.name!r}; supply explicit bounds"
    )
