"""Discrete NLS energy, its H1 gradient and Hessian, Nehari scaling, Pohozaev check.

The functional is

    f(u) = 1/2 sum |D_A u|^2 h^n + 1/2 sum (1 + V(eps x)) |u|^2 h^n
           - 1/(p+1) sum K(eps x) |u|^{p+1} h^n

where D_A is the forward difference along lattice links carrying the phase
exp(-i h A_j(eps x_mid)).  With A = 0 this is the usual Dirichlet Laplacian
energy, and a constant A is gauged away exactly on the lattice.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.ndimage import map_coordinates

from .errors import DegenerateError, ValidationError
from .grid import CartesianGrid, GridFunction, laplacian_matrix, riesz

__all__ = [
    "EnergyReport", "Functional", "energy", "gradient", "hessian_apply",
    "nehari_scale", "pohozaev_residual", "pohozaev_terms",
]


@dataclass(frozen=True)
class EnergyReport:
    value: float
    grad_norm: float
    kinetic: float
    potential: float
    nonlinear: float

    def to_record(self) -> dict:
        return asdict(self)


def _shift(a: np.ndarray, axis: int, step: int) -> np.ndarray:
    """b[x] = a[x + step e_axis] with zeros outside the box."""
    out = np.zeros_like(a)
    src = [slice(None)] * a.ndim
    dst = [slice(None)] * a.ndim
    if step > 0:
        src[axis], dst[axis] = slice(step, None), slice(None, -step)
    else:
        src[axis], dst[axis] = slice(None, step), slice(-step, None)
    out[tuple(dst)] = a[tuple(src)]
    return out


class Functional:
    """f_eps on one grid; with ``frozen_at`` the coefficients are V, K, A at eps*xi."""

    def __init__(self, spec, grid: CartesianGrid, frozen_at: Sequence[float] | None = None):
        if grid.dim != spec.n:
            raise ValidationError(f"grid dimension {grid.dim} != problem dimension {spec.n}")
        self.spec = spec
        self.grid = grid
        self.p = float(spec.p)
        self.h = grid.spacing
        self.dv = grid.cell_volume
        eps = spec.epsilon
        if frozen_at is not None:
            v0, k0, a0 = spec.frozen(eps * np.asarray(frozen_at, dtype=float))
            self.one_v = np.full(grid.shape, 1.0 + v0)
            self.k = np.full(grid.shape, k0)
            a_const = np.asarray(a0, dtype=float)
            self._a_mid = None if not np.any(a_const) else [
                np.full(grid.shape, a_const[j]) for j in range(grid.dim)]
        else:
            pts = eps * grid.points()
            self.one_v = 1.0 + spec.V(pts)
            self.k = spec.K(pts)
            spec.check_coefficients(pts.reshape(-1, grid.dim), "grid image")
            self._a_mid = None
            if spec.magnetic:
                self._a_mid = []
                for j in range(grid.dim):
                    mid = pts.copy()
                    mid[..., j] += 0.5 * eps * self.h
                    self._a_mid.append(spec.A(mid)[..., j])
        self.magnetic = self._a_mid is not None
        # phase carried by the link from x to x + h e_j
        self._links = None
        if self.magnetic:
            self._links = [np.exp(-1j * self.h * a) for a in self._a_mid]

    # -- pieces ---------------------------------------------------------
    def _check(self, u: np.ndarray):
        if u.shape != self.grid.shape:
            raise ValidationError("field does not live on the functional's grid")
        if self.magnetic and not np.iscomplexobj(u):
            raise ValidationError("magnetic problem requires a complex field",
                                  field="problem.A")

    def kinetic_apply(self, u: np.ndarray) -> np.ndarray:
        """Strong form of the kinetic term: -Laplacian_A u."""
        h2 = self.h**2
        out = 2.0 * self.grid.dim * u
        for j in range(self.grid.dim):
            up = _shift(u, j, 1)
            down = _shift(u, j, -1)
            if self.magnetic:
                ph = self._links[j]
                out = out - ph * up - _shift(np.conj(ph), j, -1) * down
            else:
                out = out - up - down
        return out / h2

    def nonlinearity(self, u: np.ndarray) -> np.ndarray:
        return self.k * np.abs(u) ** (self.p - 1) * u

    def strong_residual(self, u: np.ndarray) -> np.ndarray:
        """-Laplacian_A u + (1 + V) u - K |u|^{p-1} u at every node."""
        self._check(u)
        return self.kinetic_apply(u) + self.one_v * u - self.nonlinearity(u)

    def parts(self, u: np.ndarray) -> tuple[float, float, float]:
        self._check(u)
        kin = 0.5 * self.dv * float(np.real(np.vdot(u, self.kinetic_apply(u))))
        pot = 0.5 * self.dv * float(np.sum(self.one_v * np.abs(u) ** 2))
        nl = self.dv / (self.p + 1) * float(np.sum(self.k * np.abs(u) ** (self.p + 1)))
        return kin, pot, nl

    def value(self, u: np.ndarray) -> float:
        kin, pot, nl = self.parts(u)
        return kin + pot - nl

    def gradient(self, u: np.ndarray) -> np.ndarray:
        return riesz(self.grid, self.strong_residual(u))

    def report(self, u: np.ndarray) -> EnergyReport:
        kin, pot, nl = self.parts(u)
        r = self.strong_residual(u)
        g = riesz(self.grid, r)
        gn = math.sqrt(max(self.dv * float(np.real(np.vdot(g, r))), 0.0))
        return EnergyReport(kin + pot - nl, gn, kin, pot, nl)

    def linearized_apply(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Strong form of D^2 f(u)[v, .]."""
        self._check(u)
        p = self.p
        au = np.abs(u)
        lin = self.kinetic_apply(v) + self.one_v * v
        if np.iscomplexobj(u) or np.iscomplexobj(v):
            with np.errstate(invalid="ignore", divide="ignore"):
                uhat = np.where(au > 0, u / np.where(au > 0, au, 1.0), 0.0)
            proj = np.real(np.conj(uhat) * v) * uhat
            return lin - self.k * au ** (p - 1) * (v + (p - 1) * proj)
        return lin - p * self.k * au ** (p - 1) * v

    def hessian_apply(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        return riesz(self.grid, self.linearized_apply(u, v))

    # -- sparse assembly for Newton, in realified coordinates -------------
    def kinetic_matrix(self) -> sp.csr_matrix:
        """Complex Hermitian (or real) sparse matrix of -Laplacian_A."""
        if not self.magnetic:
            return (-laplacian_matrix(self.grid)).tocsr()
        g = self.grid
        idx = np.arange(g.n_nodes).reshape(g.shape)
        rows, cols, vals = [np.arange(g.n_nodes)], [np.arange(g.n_nodes)], \
            [np.full(g.n_nodes, 2.0 * g.dim / self.h**2, dtype=complex)]
        for j in range(g.dim):
            sl_lo = [slice(None)] * g.dim
            sl_hi = [slice(None)] * g.dim
            sl_lo[j], sl_hi[j] = slice(None, -1), slice(1, None)
            a = idx[tuple(sl_lo)].ravel()
            b = idx[tuple(sl_hi)].ravel()
            ph = self._links[j][tuple(sl_lo)].ravel()
            rows += [a, b]
            cols += [b, a]
            vals += [-ph / self.h**2, -np.conj(ph) / self.h**2]
        return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(g.n_nodes, g.n_nodes))

    def jacobian(self, u: np.ndarray, complex_field: bool) -> sp.csr_matrix:
        """Strong linearization as a real sparse matrix (2N x 2N for complex fields)."""
        p = self.p
        kin = self.kinetic_matrix()
        au = np.abs(u).ravel()
        kk = self.k.ravel()
        ov = self.one_v.ravel()
        if not complex_field:
            diag = ov - p * kk * au ** (p - 1)
            return (kin.real + sp.diags(diag)).tocsr()
        kr, ki = kin.real, kin.imag
        with np.errstate(invalid="ignore", divide="ignore"):
            uh = np.where(au > 0, u.ravel() / np.where(au > 0, au, 1.0), 0.0)
        a, b = uh.real, uh.imag
        base = kk * au ** (p - 1)
        c = (p - 1) * base
        d11 = ov - base - c * a * a
        d22 = ov - base - c * b * b
        d12 = -c * a * b
        return sp.bmat([[kr + sp.diags(d11), -ki + sp.diags(d12)],
                        [ki + sp.diags(d12), kr + sp.diags(d22)]], format="csr")


def _functional(u: GridFunction, spec, frozen_at) -> Functional:
    return Functional(spec, u.grid, frozen_at)


def energy(u: GridFunction, spec, frozen_at: Sequence[float] | None = None) -> EnergyReport:
    return _functional(u, spec, frozen_at).report(u.values)


def gradient(u: GridFunction, spec, frozen_at: Sequence[float] | None = None) -> GridFunction:
    return u.like(_functional(u, spec, frozen_at).gradient(u.values))


def hessian_apply(u: GridFunction, v: GridFunction, spec,
                  frozen_at: Sequence[float] | None = None) -> GridFunction:
    if u.grid != v.grid:
        raise ValidationError("u and v live on different grids")
    if u.field_kind != v.field_kind:
        raise ValidationError("u and v must have the same field kind")
    return u.like(_functional(u, spec, frozen_at).hessian_apply(u.values, v.values))


def nehari_scale(u: GridFunction, spec, frozen_at: Sequence[float] | None = None) -> float:
    """t > 0 with t u on the Nehari manifold."""
    f = _functional(u, spec, frozen_at)
    kin, pot, nl = f.parts(u.values)
    quad = 2.0 * (kin + pot)
    big_n = (spec.p + 1) * nl
    if not big_n > 0 or not np.isfinite(big_n):
        raise DegenerateError("int K |u|^{p+1} vanishes; Nehari scaling undefined")
    return float((quad / big_n) ** (1.0 / (spec.p - 1)))


# -- Pohozaev -------------------------------------------------------------------

def _sphere_rule(dim: int, order: int = 48) -> tuple[np.ndarray, np.ndarray]:
    """Nodes on the unit sphere and weights summing to its area."""
    if dim == 1:
        return np.array([[-1.0], [1.0]]), np.array([1.0, 1.0])
    if dim == 2:
        t = 2 * np.pi * np.arange(4 * order) / (4 * order)
        return np.stack([np.cos(t), np.sin(t)], -1), np.full(t.size, 2 * np.pi / t.size)
    if dim == 3:
        c, wc = np.polynomial.legendre.leggauss(order)
        ph = 2 * np.pi * np.arange(2 * order) / (2 * order)
        C, P = np.meshgrid(c, ph, indexing="ij")
        S = np.sqrt(1 - C**2)
        nodes = np.stack([S * np.cos(P), S * np.sin(P), C], -1).reshape(-1, 3)
        w = np.multiply.outer(wc, np.full(ph.size, 2 * np.pi / ph.size)).ravel()
        return nodes, w
    raise ValidationError("Pohozaev check supports dimensions 1..3")


def pohozaev_terms(u: GridFunction, ball_radius: float, p: float,
                   lam: float = 0.0) -> dict:
    """Terms of the Pohozaev identity for -Delta u = |u|^{p-1}u + lam u in B_R(center).

    Returns ``volume`` = n int F(u) + (2-n)/2 int u f(u) and ``boundary`` =
    1/2 int_{dB} (x.nu) |du/dnu|^2.
    """
    g = u.grid
    R = float(ball_radius)
    if not g.contains(g.center, R + 4 * g.spacing):
        raise ValidationError("ball is not contained in the grid with a 4-node margin",
                              field="ball_radius")
    if np.iscomplexobj(u.values):
        raise ValidationError("Pohozaev check expects a real field")
    n = g.dim
    vals = u.values
    inside = g.radius_from(g.center) <= R
    F = np.abs(vals) ** (p + 1) / (p + 1) + 0.5 * lam * vals**2
    uf = np.abs(vals) ** (p + 1) + lam * vals**2
    volume = g.cell_volume * float(np.sum((n * F + 0.5 * (2 - n) * uf)[inside]))

    nodes, w = _sphere_rule(n)
    h = g.spacing
    s = h * np.arange(2, 7)
    origin = np.asarray(g.center) - g.radius
    # cubic-spline samples along the inward normal, kept two cells off the kink
    pts = np.concatenate([(np.asarray(g.center) + (R - sk) * nodes) for sk in s])
    idx = ((pts - origin) / h).T
    samples = map_coordinates(vals, idx, order=3, mode="constant").reshape(len(s), -1)
    # cubic through u(R) = 0 and the inward samples; slope at the surface
    A = np.stack([s, s**2, s**3], axis=-1)
    coef = np.linalg.lstsq(A, samples, rcond=None)[0]
    dudn = -coef[0]
    boundary = 0.5 * R * float(np.sum(w * dudn**2)) * R ** (n - 1)
    return {"volume": volume, "boundary": boundary}


def pohozaev_residual(u: GridFunction, ball_radius: float, p: float, lam: float = 0.0) -> float:
    t = pohozaev_terms(u, ball_radius, p, lam)
    return abs(t["volume"] - t["boundary"])
