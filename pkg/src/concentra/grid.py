"""Uniform Cartesian boxes, trapezoidal quadrature and finite differences.

All fields live on a box ``center + [-R, R]^n`` sampled with an odd number of
nodes per axis, so the center is always a node.  Outside the box fields are
taken to be zero (Dirichlet exterior).
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ResourceError, SolverError, ValidationError

#: largest admissible node count for a single grid
NODE_CAP = 2**24
#: above this node count the Riesz map uses CG instead of a sparse LU
DIRECT_SOLVE_LIMIT = 150_000


@dataclass(frozen=True)
class CartesianGrid:
    dim: int
    radius: float
    points_per_axis: int
    center: tuple[float, ...] = ()

    def __post_init__(self):
        if not self.center:
            object.__setattr__(self, "center", (0.0,) * self.dim)
        if len(self.center) != self.dim:
            raise ValidationError("center has wrong dimension", field="grid.center")

    @property
    def spacing(self) -> float:
        return 2.0 * self.radius / (self.points_per_axis - 1)

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.points_per_axis,) * self.dim

    @property
    def n_nodes(self) -> int:
        return self.points_per_axis**self.dim

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.dim

    def axis(self, i: int) -> np.ndarray:
        offsets = -self.radius + self.spacing * np.arange(self.points_per_axis)
        return self.center[i] + offsets

    @functools.cached_property
    def coords(self) -> tuple[np.ndarray, ...]:
        """Node coordinates, one array of ``shape`` per axis."""
        arrs = np.meshgrid(*[self.axis(i) for i in range(self.dim)], indexing="ij")
        for a in arrs:
            a.setflags(write=False)
        return tuple(arrs)

    def points(self) -> np.ndarray:
        """Node coordinates stacked on a trailing axis, shape ``shape + (dim,)``."""
        return np.stack(self.coords, axis=-1)

    def radius_from(self, point: Sequence[float]) -> np.ndarray:
        r2 = sum((c - float(x)) ** 2 for c, x in zip(self.coords, point))
        return np.sqrt(r2)

    def recentered(self, center: Sequence[float]) -> "CartesianGrid":
        return CartesianGrid(self.dim, self.radius, self.points_per_axis,
                             tuple(float(c) for c in center))

    def contains(self, point: Sequence[float], margin: float = 0.0) -> bool:
        return all(abs(float(x) - c) <= self.radius - margin
                   for x, c in zip(point, self.center))


def make_grid(dim: int, radius: float, points_per_axis: int,
              center: Sequence[float] | None = None,
              node_cap: int = NODE_CAP) -> CartesianGrid:
    if dim not in (1, 2, 3, 4):
        raise ValidationError(f"dim must be 1..4, got {dim}", field="grid.dim")
    if not radius > 0:
        raise ValidationError("radius must be positive", field="grid.radius")
    m = int(points_per_axis)
    if m != points_per_axis or m < 3 or m % 2 == 0:
        raise ValidationError(
            f"points_per_axis must be an odd integer >= 3, got {points_per_axis}",
            field="grid.points_per_axis")
    count = m**dim
    if count > node_cap:
        raise ResourceError(f"grid of {count} nodes exceeds cap {node_cap}",
                            nodes=count, cap=node_cap)
    c = tuple(float(x) for x in center) if center is not None else ()
    return CartesianGrid(dim, float(radius), m, c)


@dataclass
class GridFunction:
    grid: CartesianGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.shape != self.grid.shape:
            raise ValidationError(
                f"values shape {self.values.shape} != grid shape {self.grid.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValidationError("grid function has non-finite entries")

    @property
    def field_kind(self) -> str:
        return "complex" if np.iscomplexobj(self.values) else "real"

    def like(self, values) -> "GridFunction":
        return GridFunction(self.grid, values)

    def __add__(self, other: "GridFunction") -> "GridFunction":
        _same_grid(self, other)
        return self.like(self.values + other.values)

    def __sub__(self, other: "GridFunction") -> "GridFunction":
        _same_grid(self, other)
        return self.like(self.values - other.values)

    def __mul__(self, c) -> "GridFunction":
        return self.like(c * self.values)

    __rmul__ = __mul__


def _same_grid(f: GridFunction, g: GridFunction):
    if f.grid != g.grid:
        raise ValidationError("grid functions live on different grids")


@dataclass(frozen=True)
class NormKind:
    tag: str
    p: float | None = None

    def __post_init__(self):
        if self.tag not in ("L2", "Lp", "H1", "Linf"):
            raise ValidationError(f"unknown norm {self.tag!r}")
        if self.tag == "Lp" and (self.p is None or not self.p > 1):
            raise ValidationError("Lp norm needs p > 1")


NormLike = Union[NormKind, str, tuple]


def _as_norm(kind: NormLike) -> NormKind:
    if isinstance(kind, NormKind):
        return kind
    if isinstance(kind, tuple):
        return NormKind(*kind)
    return NormKind(kind)


@functools.lru_cache(maxsize=64)
def _trapezoid_weights(grid: CartesianGrid) -> np.ndarray:
    w1 = np.ones(grid.points_per_axis)
    w1[0] = w1[-1] = 0.5
    w = w1
    for _ in range(grid.dim - 1):
        w = np.multiply.outer(w, w1)
    w = w * grid.cell_volume
    w.setflags(write=False)
    return w


def integrate(f: GridFunction | np.ndarray, grid: CartesianGrid | None = None):
    """Tensor-product trapezoidal rule over the box."""
    if isinstance(f, GridFunction):
        grid, vals = f.grid, f.values
    else:
        vals = np.asarray(f)
    return np.sum(_trapezoid_weights(grid) * vals)


def gradient(f: GridFunction) -> list[np.ndarray]:
    """Central differences inside, second-order one-sided at the box faces."""
    h = f.grid.spacing
    return [np.gradient(f.values, h, axis=i, edge_order=2) for i in range(f.grid.dim)]


def norm(f: GridFunction, kind: NormLike = "L2") -> float:
    k = _as_norm(kind)
    a = np.abs(f.values)
    if k.tag == "Linf":
        return float(a.max(initial=0.0))
    if k.tag == "L2":
        return float(math.sqrt(max(integrate(a**2, f.grid), 0.0)))
    if k.tag == "Lp":
        return float(integrate(a**k.p, f.grid) ** (1.0 / k.p))
    grad_sq = sum(np.abs(g) ** 2 for g in gradient(f))
    return float(math.sqrt(integrate(grad_sq + a**2, f.grid)))


def laplacian_apply(f: GridFunction) -> GridFunction:
    """(2n+1)-point Laplacian with zero values outside the box."""
    u = f.values
    h2 = f.grid.spacing**2
    out = -2.0 * f.grid.dim * u
    for ax in range(f.grid.dim):
        lo = [slice(None)] * u.ndim
        hi = [slice(None)] * u.ndim
        lo[ax], hi[ax] = slice(None, -1), slice(1, None)
        out[tuple(hi)] += u[tuple(lo)]
        out[tuple(lo)] += u[tuple(hi)]
    return f.like(out / h2)


@functools.lru_cache(maxsize=32)
def laplacian_matrix(grid: CartesianGrid) -> sp.csr_matrix:
    """Sparse Dirichlet Laplacian acting on C-ordered flattened fields."""
    m, h = grid.points_per_axis, grid.spacing
    d1 = sp.diags([np.ones(m - 1), -2.0 * np.ones(m), np.ones(m - 1)], [-1, 0, 1]) / h**2
    eye = sp.identity(m, format="csr")
    lap = sp.csr_matrix((grid.n_nodes, grid.n_nodes))
    for ax in range(grid.dim):
        term = None
        for j in range(grid.dim):
            block = d1 if j == ax else eye
            term = block if term is None else sp.kron(term, block, format="csr")
        lap = lap + term
    return lap.tocsr()


@functools.lru_cache(maxsize=32)
def h1_operator(grid: CartesianGrid) -> sp.csc_matrix:
    """S = I - Laplacian; the discrete H1 Gram operator."""
    return (sp.identity(grid.n_nodes, format="csc") - laplacian_matrix(grid)).tocsc()


@functools.lru_cache(maxsize=16)
def _h1_factor(grid: CartesianGrid):
    return spla.splu(h1_operator(grid))


def riesz(grid: CartesianGrid, r: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Solve (I - Laplacian) g = r; complex right-hand sides are split."""
    shape = r.shape
    flat = r.reshape(grid.n_nodes, -1) if r.ndim > grid.dim else r.reshape(-1)
    if np.iscomplexobj(flat):
        return (riesz(grid, flat.real.reshape(shape), tol)
                + 1j * riesz(grid, flat.imag.reshape(shape), tol))
    if grid.n_nodes <= DIRECT_SOLVE_LIMIT:
        return _h1_factor(grid).solve(np.ascontiguousarray(flat)).reshape(shape)
    info_iters = [0]

    def _count(_):
        info_iters[0] += 1

    sol, info = spla.cg(h1_operator(grid), flat, rtol=tol, maxiter=5000, callback=_count)
    if info != 0:
        raise SolverError("CG for the H1 Riesz map did not converge",
                          iterations=info_iters[0])
    return sol.reshape(shape)


def h1_inner(grid: CartesianGrid, u: np.ndarray, v: np.ndarray) -> float:
    """Discrete <u, v>_{H1} = h^n Re sum conj(u) (I - Laplacian) v."""
    sv = (h1_operator(grid) @ v.reshape(-1)).reshape(v.shape)
    return float(np.real(np.vdot(u, sv)) * grid.cell_volume)


def h1_norm(grid: CartesianGrid, u: np.ndarray) -> float:
    return math.sqrt(max(h1_inner(grid, u, u), 0.0))
