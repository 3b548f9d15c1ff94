"""Sub-Riemannian structures: horizontal frames, bracket filtration, dimensions.

A structure is a coordinate chart's worth of data: d horizontal vector fields
declared orthonormal, n-d complement fields spanning the rest of the tangent
space, the cumulative filtration ranks generated by iterated Lie brackets of
the horizontal frame, and the resulting metric (Hausdorff) dimension

    m = sum_j j * (rank_j - rank_{j-1}).

Built-ins cover Euclidean space and the Heisenberg group in its symmetric
coordinate model (X = dx - y/2 dt, Y = dy + x/2 dt), both as a genuinely
sub-Riemannian structure (d=2, m=4 for n=3) and with the full frame declared
orthonormal (the translation-invariant Riemannian metric, m=n).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .expressions import CompiledExpression, ExpressionError, compile_expression

__all__ = [
    "VectorFieldSpec",
    "SubRiemannianStructure",
    "StructureError",
    "build_builtin",
    "hausdorff_dimension",
    "filtration_ranks",
    "g_tau_norm",
    "load_structure_file",
    "parse_structure_text",
]


class StructureError(ValueError):
    """Invalid structure data (bad frame, ranks, parameters, file syntax)."""


@dataclass(frozen=True)
class VectorFieldSpec:
    """A vector field given by n coefficient functions of the n coordinates."""

    coefficients: tuple  # n callables, each (x_1,...,x_n) -> value
    label: str = ""

    def __call__(self, points: np.ndarray) -> np.ndarray:
        """Evaluate at points of shape (..., n); returns coefficients (..., n)."""
        points = np.asarray(points, dtype=float)
        coords = [points[..., k] for k in range(points.shape[-1])]
        cols = [np.asarray(c(*coords), dtype=float) for c in self.coefficients]
        return np.stack(np.broadcast_arrays(*cols), axis=-1)


def _const(value: float) -> Callable:
    return lambda *coords: np.full(np.shape(coords[0]), float(value)) if np.ndim(coords[0]) else float(value)


def _coordinate_field(n: int, k: int, label: str) -> VectorFieldSpec:
    coeffs = tuple(_const(1.0 if j == k else 0.0) for j in range(n))
    return VectorFieldSpec(coeffs, label)


@dataclass(frozen=True)
class SubRiemannianStructure:
    """Horizontal frame + complement + filtration data on one coordinate chart.

    The horizontal frame is declared g-orthonormal; any metric on the
    polarization can be brought to this form locally.  `density` converts
    coordinate Lebesgue measure into the Hausdorff m-measure (constant 1 for
    every built-in, where the two coincide).
    """

    name: str
    n: int
    d: int
    horizontal_frame: tuple  # d VectorFieldSpec
    complement_frame: tuple  # n-d VectorFieldSpec
    filtration: tuple  # cumulative ranks, strictly increasing, ends at n
    m: int
    coord_names: tuple
    density: Callable = field(default=None)

    def __post_init__(self):
        if not (1 <= self.d <= self.n):
            raise StructureError(f"horizontal rank d={self.d} outside 1..n={self.n}")
        if len(self.horizontal_frame) != self.d:
            raise StructureError("horizontal_frame length must equal d")
        if len(self.complement_frame) != self.n - self.d:
            raise StructureError("complement_frame length must equal n-d")
        ranks = tuple(self.filtration)
        if any(b <= a for a, b in zip(ranks, ranks[1:])) or not ranks or ranks[-1] != self.n:
            raise StructureError(f"filtration ranks {ranks} must increase strictly to n={self.n}")
        if ranks[0] != self.d:
            raise StructureError("first filtration rank must equal d")
        if self.m != hausdorff_dimension(ranks):
            raise StructureError(
                f"declared m={self.m} inconsistent with ranks {ranks} "
                f"(formula gives {hausdorff_dimension(ranks)})"
            )
        if self.m < self.n or (self.m == self.n) != (self.d == self.n):
            raise StructureError("m >= n with equality exactly in the Riemannian case d=n")

    @property
    def frame(self) -> tuple:
        """All n fields, horizontal first."""
        return tuple(self.horizontal_frame) + tuple(self.complement_frame)

    def frame_matrix(self, points: np.ndarray) -> np.ndarray:
        """Frame coefficients at points (..., n) -> (..., n_fields, n)."""
        return np.stack([f(points) for f in self.frame], axis=-2)

    def horizontal_matrix(self, points: np.ndarray) -> np.ndarray:
        """Horizontal coefficients at points (..., n) -> (..., d, n)."""
        return np.stack([f(points) for f in self.horizontal_frame], axis=-2)

    def density_at(self, points: np.ndarray) -> np.ndarray:
        """Volume density relative to coordinate Lebesgue measure."""
        points = np.asarray(points, dtype=float)
        if self.density is None:
            return np.ones(points.shape[:-1])
        coords = [points[..., k] for k in range(points.shape[-1])]
        out = np.asarray(self.density(*coords), dtype=float)
        return np.broadcast_to(out, points.shape[:-1]).copy() if out.ndim == 0 else out

    def dual_metric(self, points: np.ndarray, tau: float) -> np.ndarray:
        """Co-metric tensor of g_tau at points: M = sum a_i a_i^T + tau^2 sum a_j a_j^T.

        The Hamiltonian of the g_tau eikonal equation is sqrt(p^T M p); the
        tau^2 factor on the complement rows makes non-horizontal travel cost
        1/tau per unit, so distances grow to the C-C distance as tau -> 0.
        """
        if tau <= 0:
            raise StructureError(f"tau must be positive, got {tau}")
        A = self.frame_matrix(points)
        H = A[..., : self.d, :]
        M = np.einsum("...ik,...il->...kl", H, H)
        if self.d < self.n:
            C = A[..., self.d :, :]
            M = M + tau**2 * np.einsum("...ik,...il->...kl", C, C)
        return M

    def g_tau_norm(self, v: Sequence[float], tau: float) -> float:
        return g_tau_norm(v, tau, self.d)


def g_tau_norm(v: Sequence[float], tau: float, d: int) -> float:
    """Norm of a tangent vector given in frame coordinates, under g_tau.

    Horizontal components count as given; complement components cost 1/tau
    per unit, hence the norm is nonincreasing in tau.
    """
    if tau <= 0:
        raise StructureError(f"tau must be positive, got {tau}")
    v = np.asarray(v, dtype=float)
    if v.shape[-1] < d:
        raise StructureError(f"vector of length {v.shape[-1]} shorter than d={d}")
    horiz = np.sum(v[..., :d] ** 2, axis=-1)
    comp = np.sum((v[..., d:] / tau) ** 2, axis=-1)
    return np.sqrt(horiz + comp)


def hausdorff_dimension(ranks: Sequence[int]) -> int:
    """Metric dimension from cumulative filtration ranks: sum_j j*(r_j - r_{j-1})."""
    ranks = list(ranks)
    if not ranks or any(b <= a for a, b in zip(ranks, ranks[1:])) or ranks[0] <= 0:
        raise StructureError(f"ranks {ranks} must be positive and strictly increasing")
    prev = 0
    m = 0
    for j, r in enumerate(ranks, start=1):
        m += j * (r - prev)
        prev = r
    return m


# ---------------------------------------------------------------------------
# Built-in structures
# ---------------------------------------------------------------------------


def _heisenberg_fields(level: int):
    """Horizontal frame of H^level in symmetric coordinates (x_i, y_i, t).

    X_i = d/dx_i - (y_i/2) d/dt,  Y_i = d/dy_i + (x_i/2) d/dt, so that
    [X_i, Y_i] = d/dt.
    """
    n = 2 * level + 1

    def half_coord(j, sign):
        return lambda *coords: sign * 0.5 * np.asarray(coords[j], dtype=float)

    horiz = []
    for i in range(level):
        xi, yi = 2 * i, 2 * i + 1
        cx = [_const(0.0)] * n
        cx[xi] = _const(1.0)
        cx[n - 1] = half_coord(yi, -1.0)
        horiz.append(VectorFieldSpec(tuple(cx), f"X{i + 1}"))
        cy = [_const(0.0)] * n
        cy[yi] = _const(1.0)
        cy[n - 1] = half_coord(xi, +1.0)
        horiz.append(VectorFieldSpec(tuple(cy), f"Y{i + 1}"))
    vertical = _coordinate_field(n, n - 1, "T")
    return tuple(horiz), vertical


def _heisenberg_coords(level: int) -> tuple:
    if level == 1:
        return ("x", "y", "t")
    names = []
    for i in range(level):
        names += [f"x{i + 1}", f"y{i + 1}"]
    return tuple(names) + ("t",)


def build_builtin(name: str, dim: int = None) -> SubRiemannianStructure:
    """Construct a built-in structure.

    euclidean(n): coordinate frame, d=n, ranks [n], m=n.
    heisenberg_cc(l): H^l with the C-C polarization, n=2l+1, d=2l, ranks
        [2l, 2l+1], m=n+1.
    heisenberg_riemannian(l): same fields, all declared orthonormal, m=n.
    """
    key = str(name).strip().lower()
    if key == "euclidean":
        n = 2 if dim is None else int(dim)
        if n < 1:
            raise StructureError(f"euclidean dimension must be >= 1, got {dim}")
        fields = tuple(_coordinate_field(n, k, f"E{k + 1}") for k in range(n))
        coords = tuple(f"x{k + 1}" for k in range(n)) if n > 3 else ("x", "y", "z")[:n]
        return SubRiemannianStructure(
            name=f"euclidean({n})", n=n, d=n, horizontal_frame=fields,
            complement_frame=(), filtration=(n,), m=n, coord_names=coords,
        )
    if key in ("heisenberg_cc", "heisenberg"):
        level = 1 if dim is None else int(dim)
        if level < 1:
            raise StructureError(f"heisenberg level must be >= 1, got {dim}")
        n = 2 * level + 1
        horiz, vertical = _heisenberg_fields(level)
        return SubRiemannianStructure(
            name=f"heisenberg_cc({level})", n=n, d=2 * level,
            horizontal_frame=horiz, complement_frame=(vertical,),
            filtration=(2 * level, n), m=n + 1, coord_names=_heisenberg_coords(level),
        )
    if key == "heisenberg_riemannian":
        level = 1 if dim is None else int(dim)
        if level < 1:
            raise StructureError(f"heisenberg level must be >= 1, got {dim}")
        n = 2 * level + 1
        horiz, vertical = _heisenberg_fields(level)
        return SubRiemannianStructure(
            name=f"heisenberg_riemannian({level})", n=n, d=n,
            horizontal_frame=horiz + (vertical,), complement_frame=(),
            filtration=(n,), m=n, coord_names=_heisenberg_coords(level),
        )
    raise StructureError(
        f"unknown structure {name!r}; built-ins are euclidean, heisenberg_cc, "
        f"heisenberg_riemannian"
    )


# ---------------------------------------------------------------------------
# Numerical bracket filtration
# ---------------------------------------------------------------------------


def _jacobian(field_fn: Callable, x: np.ndarray, h: float) -> np.ndarray:
    """Central-difference Jacobian J[i,k] = d(field_i)/dx_k at one point."""
    n = x.size
    J = np.empty((n, n))
    for k in range(n):
        xp = x.copy()
        xm = x.copy()
        xp[k] += h
        xm[k] -= h
        J[:, k] = (field_fn(xp) - field_fn(xm)) / (2.0 * h)
    return J


def _bracket(f: Callable, g: Callable, x: np.ndarray, h: float) -> np.ndarray:
    """Numerical Lie bracket [f,g](x) = Jg . f - Jf . g."""
    return _jacobian(g, x, h) @ f(x) - _jacobian(f, x, h) @ g(x)


def filtration_ranks(
    S: SubRiemannianStructure,
    sample_points: Sequence[Sequence[float]],
    tol: float = 1e-6,
    fd_step: float = 1e-5,
    max_depth: int = 8,
) -> tuple:
    """Cumulative filtration ranks measured by iterated numerical brackets.

    At each sample point, Lie brackets of the accumulated fields with the
    horizontal frame are appended generation by generation; the rank of the
    span is read off a singular-value threshold of tol (relative to the
    largest singular value).  The sequence must agree across all sample
    points (equiregularity) and reach n (bracket generation), otherwise a
    StructureError is raised.
    """
    if tol <= 0:
        raise StructureError(f"tol must be positive, got {tol}")
    pts = np.atleast_2d(np.asarray(sample_points, dtype=float))
    if pts.shape[1] != S.n:
        raise StructureError(f"sample points must have {S.n} coordinates")

    horiz = [(lambda x, f=f: np.asarray(f(x), dtype=float)) for f in S.horizontal_frame]

    sequences = []
    for x in pts:
        vectors = [f(x) for f in horiz]
        generators = list(horiz)

        def rank_of(vecs):
            A = np.stack(vecs, axis=0)
            s = np.linalg.svd(A, compute_uv=False)
            return int(np.sum(s > tol * s[0])) if s[0] > 0 else 0

        ranks = [rank_of(vectors)]
        current_gen = list(horiz)
        for _ in range(max_depth):
            if ranks[-1] >= S.n:
                break
            next_gen = []
            for g in current_gen:
                for f in horiz:
                    br_fn = (lambda y, a=f, b=g: _bracket(a, b, np.asarray(y, float), fd_step))
                    next_gen.append(br_fn)
                    vectors.append(br_fn(x))
            generators += next_gen
            current_gen = next_gen
            r = rank_of(vectors)
            if r == ranks[-1]:
                # Stalled below n: horizontal fields do not bracket-generate.
                break
            ranks.append(r)
        if ranks[-1] < S.n:
            raise StructureError(
                f"bracket-generating condition fails at {x.tolist()}: rank sequence "
                f"{ranks} never reaches n={S.n}; no C-C metric exists"
            )
        sequences.append(tuple(ranks))

    first = sequences[0]
    for x, seq in zip(pts, sequences):
        if seq != first:
            raise StructureError(
                f"non-equiregular structure: rank sequence {seq} at {x.tolist()} "
                f"differs from {first} at {pts[0].tolist()}"
            )
    return first


# ---------------------------------------------------------------------------
# Structure definition files
# ---------------------------------------------------------------------------


def parse_structure_text(text: str, origin: str = "<string>") -> SubRiemannianStructure:
    """Parse the flat text structure format.

    Lines are `key = value`; `#` starts a comment.  Keys: name, n, d,
    coords (whitespace-separated names), `field LABEL = c1, c2, ...` for the
    horizontal frame (in order), `complement LABEL = ...` for the rest,
    optional `density = expr` and `ranks = r1 r2 ...`.  Errors carry the
    offending line number.
    """
    name = None
    n = None
    d = None
    coords = None
    horiz = []
    comp = []
    density_src = None
    ranks = None

    def fail(lineno, msg):
        raise StructureError(f"{origin}:{lineno}: {msg}")

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            fail(lineno, f"expected 'key = value', got {raw.strip()!r} (column {len(raw) - len(raw.lstrip()) + 1})")
        key, value = (part.strip() for part in line.split("=", 1))
        low = key.lower()
        try:
            if low == "name":
                name = value
            elif low == "n":
                n = int(value)
            elif low == "d":
                d = int(value)
            elif low == "coords":
                coords = tuple(value.replace(",", " ").split())
            elif low.startswith("field") or low.startswith("complement"):
                parts = key.split(None, 1)
                label = parts[1].strip() if len(parts) > 1 else f"V{len(horiz) + len(comp) + 1}"
                exprs = [s.strip() for s in value.split(",")]
                (horiz if low.startswith("field") else comp).append((label, exprs, lineno))
            elif low == "density":
                density_src = (value, lineno)
            elif low == "ranks":
                ranks = tuple(int(s) for s in value.replace(",", " ").split())
            else:
                fail(lineno, f"unknown key {key!r}")
        except ValueError as exc:
            if isinstance(exc, StructureError):
                raise
            fail(lineno, f"bad value for {key!r}: {exc}")

    if coords is None:
        raise StructureError(f"{origin}: missing 'coords' line")
    if n is None:
        n = len(coords)
    if len(coords) != n:
        raise StructureError(f"{origin}: coords lists {len(coords)} names but n={n}")
    if not horiz:
        raise StructureError(f"{origin}: no horizontal 'field' lines")
    if d is None:
        d = len(horiz)
    if d != len(horiz):
        raise StructureError(f"{origin}: d={d} but {len(horiz)} horizontal fields given")

    def build_field(label, exprs, lineno):
        if len(exprs) != n:
            fail(lineno, f"field {label!r} has {len(exprs)} coefficients, expected {n}")
        try:
            compiled = tuple(compile_expression(e, coords) for e in exprs)
        except ExpressionError as exc:
            fail(lineno, str(exc))
        return VectorFieldSpec(compiled, label)

    horizontal = tuple(build_field(*f) for f in horiz)
    complement = tuple(build_field(*f) for f in comp)
    if len(complement) != n - d:
        raise StructureError(
            f"{origin}: need {n - d} complement fields to span H', got {len(complement)}"
        )

    density = None
    if density_src is not None:
        try:
            density = compile_expression(density_src[0], coords)
        except ExpressionError as exc:
            fail(density_src[1], str(exc))

    if ranks is None:
        # Measure the filtration numerically at generic interior points;
        # filtration_ranks only touches n, d and the horizontal frame.
        rng = np.random.default_rng(7)
        samples = 0.25 + 0.5 * rng.random((5, n))
        ranks = filtration_ranks(_PlaceholderFrame(n, d, horizontal), samples)

    return SubRiemannianStructure(
        name=name or origin, n=n, d=d, horizontal_frame=horizontal,
        complement_frame=complement, filtration=tuple(ranks),
        m=hausdorff_dimension(ranks), coord_names=coords, density=density,
    )


class _PlaceholderFrame:
    """Duck-typed carrier so filtration_ranks can run before ranks are known."""

    def __init__(self, n, d, horizontal_frame):
        self.n = n
        self.d = d
        self.horizontal_frame = horizontal_frame


def load_structure_file(path) -> SubRiemannianStructure:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise StructureError(f"cannot read structure file {path}: {exc}") from exc
    return parse_structure_text(text, origin=str(path))
