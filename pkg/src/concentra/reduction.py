"""Lyapunov-Schmidt reduction for the (magnetic) NLS family.

For a concentration point xi the grid is recentred at xi.  The critical
manifold point z is the discrete solution of the frozen equation (coefficients
taken at eps*xi), computed by Newton from the interpolated ansatz, so that the
correction w measures only the variation of the coefficients.  w solves

    grad f_eps(z + w) in span(T),   w orthogonal to T in H1,

by Newton on the bordered system [[J, -S T], [T^T S, 0]], and the reduced
energy is Phi(xi) = f_eps(z + w).  Searches are run in the slow variable
x = eps*xi, where Phi is close to C1 * Lambda(x).
"""

from __future__ import annotations

import functools
import itertools
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import minimize, minimize_scalar, root

from .ansatz import RadialProfile, ground_state_integrals, scaling_coefficients, solve_ground_state
from .energy import Functional
from .errors import (ConvergenceError, DegenerateError, DomainError, SolverError,
                     ValidationError)
from .grid import CartesianGrid, GridFunction, h1_operator, laplacian_matrix, make_grid

log = logging.getLogger(__name__)

COERCIVITY_FLOOR = 1e-6
NEWTON_MAX = 50
DENSE_LIMIT = 2500
EPS_CAP = 0.5

#: default (half-width, points per axis) of the moving box by dimension
DEFAULT_BOX = {1: (14.0, 281), 2: (10.0, 81), 3: (8.0, 41)}


class IllConditionedError(SolverError):
    """The projected Hessian is not uniformly invertible (coercivity too small)."""

    kind = "ill_conditioned"


@dataclass
class TangentBasis:
    vectors: list
    kind: str

    def matrix(self) -> np.ndarray:
        return np.stack([_realify(v.values) if self.kind == "translation_phase" else v.values.ravel()
                         for v in self.vectors], axis=1)


@dataclass
class ReducedPoint:
    xi: np.ndarray
    sigma: float = 0.0
    w_norm: float = float("nan")
    phi: float = float("nan")
    reduced_grad: np.ndarray = field(default_factory=lambda: np.zeros(0))
    morse_index: int | None = None
    coercivity: float = float("nan")
    eps: float = float("nan")
    grad_norm: float = float("nan")
    projected_residual: float = float("nan")
    orthogonality: float = float("nan")
    newton_steps: int = 0
    rayleigh_z: float = float("nan")
    flags: tuple = ()

    @property
    def slow(self) -> np.ndarray:
        return self.eps * np.asarray(self.xi)

    def to_row(self) -> dict:
        row = {"eps": self.eps}
        for i, x in enumerate(np.atleast_1d(self.xi)):
            row[f"xi{i + 1}"] = float(x)
        row.update(sigma=self.sigma, phi=self.phi, w_norm=self.w_norm,
                   grad_norm=float(np.linalg.norm(self.reduced_grad)) if self.reduced_grad.size else float("nan"),
                   morse_index=self.morse_index if self.morse_index is not None else "",
                   coercivity=self.coercivity)
        return row


class PointList(list):
    """List of ReducedPoint with attached warning records."""

    def __init__(self, items=(), warnings=()):
        super().__init__(items)
        self.warnings = list(warnings)


# -- realified linear algebra -------------------------------------------------

def _realify(a: np.ndarray) -> np.ndarray:
    a = np.ravel(a)
    return np.concatenate([a.real, a.imag]) if np.iscomplexobj(a) else a


def _unrealify(x: np.ndarray, shape, complex_field: bool) -> np.ndarray:
    if not complex_field:
        return x.reshape(shape)
    m = x.size // 2
    return (x[:m] + 1j * x[m:]).reshape(shape)


def _gram(grid: CartesianGrid, complex_field: bool) -> sp.csc_matrix:
    s = h1_operator(grid)
    return sp.block_diag([s, s], format="csc") if complex_field else s


def _hinner(grid, s_mat, a: np.ndarray, b: np.ndarray) -> float:
    return grid.cell_volume * float(a @ (s_mat @ b))


# -- auxiliary function -------------------------------------------------------

@dataclass
class AuxiliaryFunction:
    """Lambda(x) = (1 + V(x))^theta K(x)^{-2/(p-1)}."""

    spec: object
    fd_step: float = 1e-3

    @property
    def theta(self) -> float:
        return self.spec.theta

    def value(self, x) -> float:
        x = np.asarray(x, dtype=float).reshape(1, self.spec.n)
        one_v = 1.0 + float(self.spec.V(x)[0])
        k = float(self.spec.K(x)[0])
        if one_v <= 0:
            raise DomainError("1 + V must be positive", field="problem.V")
        if k <= 0:
            raise DomainError("K must be positive", field="problem.K")
        return one_v**self.theta * k ** (-2.0 / (self.spec.p - 1))

    def grad(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(self.spec.n)
        h = self.fd_step
        g = np.empty(self.spec.n)
        for i in range(self.spec.n):
            e = np.zeros(self.spec.n)
            e[i] = h
            g[i] = (-self.value(x + 2 * e) + 8 * self.value(x + e)
                    - 8 * self.value(x - e) + self.value(x - 2 * e)) / (12 * h)
        return g

    def hess(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(self.spec.n)
        d = self.spec.n
        h = 10 * self.fd_step
        H = np.empty((d, d))
        for i in range(d):
            e = np.zeros(d)
            e[i] = h
            gp, gm = self.grad(x + e), self.grad(x - e)
            H[i] = (gp - gm) / (2 * h)
        return 0.5 * (H + H.T)


def auxiliary_value(aux: AuxiliaryFunction, x) -> float:
    return aux.value(x)


def auxiliary_grad(aux: AuxiliaryFunction, x) -> np.ndarray:
    return aux.grad(x)


def auxiliary_hess(aux: AuxiliaryFunction, x) -> np.ndarray:
    return aux.hess(x)


# -- tangent space ------------------------------------------------------------

def tangent_basis(z: GridFunction, kind: str | None = None) -> TangentBasis:
    """-d_x z for each axis (plus i z for complex fields), H1-orthonormalized."""
    complex_field = z.field_kind == "complex"
    if kind is None:
        kind = "translation_phase" if complex_field else "translation"
    if kind not in ("translation", "translation_phase"):
        raise ValidationError(f"unknown tangent kind {kind!r}")
    if kind == "translation_phase" and not complex_field:
        raise ValidationError("phase direction needs a complex field")
    g = z.grid
    h = g.spacing
    raw = [-np.gradient(z.values, h, axis=i) for i in range(g.dim)]
    if kind == "translation_phase":
        raw.append(1j * z.values)
    s_mat = _gram(g, complex_field)
    out = []
    for v in raw:
        x = _realify(v).astype(float)
        for _ in range(2):
            for q in out:
                x = x - _hinner(g, s_mat, q, x) * q
        nrm = math.sqrt(max(_hinner(g, s_mat, x, x), 0.0))
        scale = math.sqrt(max(_hinner(g, s_mat, _realify(v), _realify(v)), 0.0))
        if nrm <= 1e-8 * max(scale, 1e-300):
            raise ValidationError("tangent vectors are rank deficient (degenerate z)")
        out.append(x / nrm)
    vecs = [GridFunction(g, _unrealify(q, g.shape, complex_field)) for q in out]
    return TangentBasis(vecs, kind)


# -- frozen ground state -----------------------------------------------------

@functools.lru_cache(maxsize=128)
def _unit_lattice_state(dim: int, radius: float, m: int, beta: float, n: int, p: float) -> np.ndarray:
    """Discrete solution y of -Lap_h y + beta^2 y = beta^2 |y|^{p-1} y centred on the grid."""
    grid = make_grid(dim, radius, m)
    prof = solve_ground_state(n, p)
    y = prof(beta * grid.radius_from(grid.center))
    lap = laplacian_matrix(grid)
    b2 = beta * beta
    N = grid.n_nodes
    # translation constraint keeps Newton away from the lattice near-kernel
    T = np.stack([np.gradient(y, grid.spacing, axis=i).ravel() for i in range(dim)], 1)
    y = y.ravel()
    for it in range(NEWTON_MAX):
        r = -(lap @ y) + b2 * y - b2 * np.abs(y) ** (p - 1) * y
        res = float(np.max(np.abs(r)))
        if res <= 1e-12 * b2 * max(prof.peak, 1.0) ** p:
            break
        J = -lap + sp.diags(b2 - p * b2 * np.abs(y) ** (p - 1))
        A = sp.bmat([[J, sp.csr_matrix(T)], [sp.csr_matrix(T.T), None]], format="csc")
        dx = spla.spsolve(A, np.concatenate([-r, np.zeros(dim)]))[:N]
        y = y + dx
    else:
        raise ConvergenceError("frozen ground state Newton did not converge", residual=res)
    out = y.reshape(grid.shape)
    out.setflags(write=False)
    return out


def frozen_critical_point(spec, xi, sigma: float, grid: CartesianGrid) -> GridFunction:
    """z on ``grid`` (centred at xi): discrete solution of the frozen equation."""
    alpha, beta = scaling_coefficients(spec, xi)
    y = _unit_lattice_state(grid.dim, grid.radius, grid.points_per_axis, float(beta),
                            spec.n, float(spec.p))
    z = alpha * np.array(y)
    if spec.magnetic:
        a0 = spec.A(spec.epsilon * np.asarray(xi, dtype=float).reshape(1, spec.n))[0]
        phase = sigma + sum(a0[i] * grid.coords[i] for i in range(spec.n))
        z = np.exp(1j * phase) * z
    return GridFunction(grid, z)


# -- the reduction engine ------------------------------------------------------

class Reducer:
    """Holds the problem, the moving-box geometry and cached profile constants."""

    def __init__(self, spec, box_radius: float | None = None, points_per_axis: int | None = None,
                 tol: float = 1e-10):
        if spec.epsilon > EPS_CAP:
            raise ValidationError(f"epsilon {spec.epsilon} exceeds cap {EPS_CAP}",
                                  field="problem.epsilon")
        r0, m0 = DEFAULT_BOX[spec.n]
        self.spec = spec
        self.box_radius = float(box_radius or r0)
        self.points = int(points_per_axis or m0)
        self.tol = tol
        self.profile: RadialProfile = solve_ground_state(spec.n, spec.p)
        self.aux = AuxiliaryFunction(spec)
        self._c0, self._c1 = None, None

    @property
    def c1(self) -> float:
        if self._c1 is None:
            self._c0, self._c1 = ground_state_integrals(self.profile)
        return self._c1

    @property
    def c0(self) -> float:
        _ = self.c1
        return self._c0

    def grid_at(self, xi) -> CartesianGrid:
        xi = np.asarray(xi, dtype=float).reshape(self.spec.n)
        return make_grid(self.spec.n, self.box_radius, self.points, center=xi)

    def with_epsilon(self, eps: float) -> "Reducer":
        return Reducer(self.spec.with_epsilon(eps), self.box_radius, self.points, self.tol)

    # -- correction ----------------------------------------------------------
    def solve_correction(self, xi, sigma: float = 0.0, check: bool = True):
        spec = self.spec
        xi = np.asarray(xi, dtype=float).reshape(spec.n)
        grid = self.grid_at(xi)
        z = frozen_critical_point(spec, xi, sigma, grid)
        complex_field = spec.magnetic
        basis = tangent_basis(z)
        T = basis.matrix()
        s_mat = _gram(grid, complex_field)
        ST = np.asarray(s_mat @ T)
        fun = Functional(spec, grid)
        zr = _realify(z.values)
        w = np.zeros_like(zr)
        c = np.zeros(T.shape[1])
        k = T.shape[1]
        scale = max(1.0, math.sqrt(_hinner(grid, s_mat, zr, zr)))
        proj_res = float("inf")
        steps = 0
        for steps in range(NEWTON_MAX + 1):
            u = _unrealify(zr + w, grid.shape, complex_field)
            r = _realify(fun.strong_residual(u))
            proj_res = self._projected_norm(grid, s_mat, r, T)
            f_res = r - ST @ c
            if proj_res <= self.tol * scale and steps > 0 or proj_res <= 0.1 * self.tol * scale:
                break
            if steps == NEWTON_MAX:
                raise ConvergenceError(f"correction Newton did not converge in {NEWTON_MAX} steps",
                                       projected_residual=proj_res, xi=xi.tolist())
            J = fun.jacobian(u, complex_field)
            A = sp.bmat([[J, sp.csc_matrix(-ST)], [sp.csc_matrix(ST.T), None]], format="csc")
            rhs = np.concatenate([-f_res, -(ST.T @ w)])
            try:
                sol = spla.splu(A).solve(rhs)
            except RuntimeError as exc:
                raise ConvergenceError(f"bordered Newton matrix is singular: {exc}") from None
            w = w + sol[:-k]
            c = c + sol[-k:]
        # remove roundoff-level tangential components
        for j in range(k):
            w = w - _hinner(grid, s_mat, T[:, j], w) * T[:, j]
        w_norm = math.sqrt(max(_hinner(grid, s_mat, w, w), 0.0))
        ortho = max((abs(_hinner(grid, s_mat, T[:, j], w)) for j in range(k)), default=0.0)
        u = _unrealify(zr + w, grid.shape, complex_field)
        rep = fun.report(u)
        pt = ReducedPoint(xi=xi, sigma=sigma, w_norm=w_norm, phi=rep.value, eps=spec.epsilon,
                          grad_norm=rep.grad_norm, projected_residual=proj_res,
                          orthogonality=ortho, newton_steps=steps)
        if check:
            coer, ray = self._coercivity(fun, grid, z, basis)
            pt.coercivity, pt.rayleigh_z = coer, ray
            if coer < COERCIVITY_FLOOR:
                raise IllConditionedError(
                    f"coercivity {coer:.3g} below {COERCIVITY_FLOOR}; reduction ill-conditioned",
                    coercivity=coer)
        return GridFunction(grid, _unrealify(w, grid.shape, complex_field)), pt

    @staticmethod
    def _projected_norm(grid, s_mat, r: np.ndarray, T: np.ndarray) -> float:
        """H1 norm of grad f projected onto the complement of span(T)."""
        complex_field = r.size == 2 * grid.n_nodes
        if complex_field:
            m = grid.n_nodes
            g = np.concatenate([_h1_solve(grid, r[:m]), _h1_solve(grid, r[m:])])
        else:
            g = _h1_solve(grid, r)
        g = g - T @ (grid.cell_volume * (T.T @ (s_mat @ g)))
        return math.sqrt(max(_hinner(grid, s_mat, g, g), 0.0))

    def reduced_energy(self, xi, sigma: float = 0.0) -> float:
        return self.solve_correction(xi, sigma, check=False)[1].phi

    def phi_slow(self, x) -> float:
        """Phi_eps evaluated at xi = x / eps."""
        return self.reduced_energy(np.asarray(x, dtype=float) / self.spec.epsilon)

    # -- coercivity ------------------------------------------------------------
    def check_coercivity(self, xi, sigma: float = 0.0) -> tuple[float, float]:
        spec = self.spec
        xi = np.asarray(xi, dtype=float).reshape(spec.n)
        grid = self.grid_at(xi)
        z = frozen_critical_point(spec, xi, sigma, grid)
        return self._coercivity(Functional(spec, grid), grid, z, tangent_basis(z))

    def tangent_quotients(self, xi, sigma: float = 0.0) -> np.ndarray:
        """(L t|t) / |t|^2 for each tangent vector t."""
        spec = self.spec
        xi = np.asarray(xi, dtype=float).reshape(spec.n)
        grid = self.grid_at(xi)
        z = frozen_critical_point(spec, xi, sigma, grid)
        basis = tangent_basis(z)
        fun = Functional(spec, grid)
        J = fun.jacobian(z.values, spec.magnetic)
        s_mat = _gram(grid, spec.magnetic)
        T = basis.matrix()
        return np.array([(T[:, j] @ (J @ T[:, j])) / (T[:, j] @ (s_mat @ T[:, j]))
                         for j in range(T.shape[1])])

    def _coercivity(self, fun: Functional, grid, z: GridFunction, basis: TangentBasis):
        complex_field = z.field_kind == "complex"
        J = fun.jacobian(z.values, complex_field)
        s_mat = _gram(grid, complex_field)
        zr = _realify(z.values)
        ray = float(zr @ (J @ zr)) / float(zr @ (s_mat @ zr))
        Q = np.column_stack([basis.matrix(), zr])
        # H1-orthonormalize Q
        G = Q.T @ (s_mat @ Q)
        Lc = np.linalg.cholesky(G)
        Q = np.linalg.solve(Lc, Q.T).T
        N = J.shape[0]
        if N <= DENSE_LIMIT:
            S = s_mat.toarray()
            C = np.linalg.cholesky(S)
            Ci = sla.solve_triangular(C, np.eye(N), lower=True)
            Jt = Ci @ J.toarray() @ Ci.T
            Qt = C.T @ Q
            Z = sla.null_space(Qt.T)
            mu = np.linalg.eigvalsh(Z.T @ Jt @ Z)
            return float(np.min(np.abs(mu))), ray
        return self._coercivity_sparse(J, s_mat, Q), ray

    @staticmethod
    def _coercivity_sparse(J, s_mat, Q) -> float:
        N, k = Q.shape
        SQ = np.asarray(s_mat @ Q)
        A = sp.bmat([[J, sp.csc_matrix(SQ)], [sp.csc_matrix(SQ.T), None]], format="csc")
        lu = spla.splu(A)
        s_lu = spla.splu(sp.csc_matrix(s_mat))

        def project(v):
            return v - Q @ (SQ.T @ v)

        def inv_apply(v):
            b = s_mat @ project(v)
            x = lu.solve(np.concatenate([b, np.zeros(k)]))[:N]
            return s_mat @ project(x)

        op = spla.LinearOperator((N, N), matvec=inv_apply, dtype=float)
        minv = spla.LinearOperator((N, N), matvec=s_lu.solve, dtype=float)
        try:
            vals = spla.eigsh(op, k=1, M=sp.csc_matrix(s_mat), Minv=minv, which="LM",
                              tol=1e-8, maxiter=5000, return_eigenvectors=False)
        except spla.ArpackNoConvergence as exc:
            raise SolverError("coercivity eigensolver did not converge") from exc
        return float(1.0 / np.max(np.abs(vals)))

    # -- reduced gradient and Hessian in slow variables --------------------------
    def slow_gradient(self, x, step: float = 1e-3) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(self.spec.n)
        g = np.empty(x.size)
        for i in range(x.size):
            e = np.zeros(x.size)
            e[i] = step
            g[i] = (self.phi_slow(x + e) - self.phi_slow(x - e)) / (2 * step)
        return g

    def slow_hessian(self, x, step: float = 1e-2) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(self.spec.n)
        d = x.size
        f0 = self.phi_slow(x)
        H = np.empty((d, d))
        E = np.eye(d) * step
        for i in range(d):
            H[i, i] = (self.phi_slow(x + E[i]) - 2 * f0 + self.phi_slow(x - E[i])) / step**2
            for j in range(i + 1, d):
                H[i, j] = H[j, i] = (self.phi_slow(x + E[i] + E[j]) - self.phi_slow(x + E[i] - E[j])
                                     - self.phi_slow(x - E[i] + E[j])
                                     + self.phi_slow(x - E[i] - E[j])) / (4 * step**2)
        return H

    # -- search ------------------------------------------------------------------
    def lambda_critical_points(self, lo, hi, seeds_per_axis: int = 16) -> list[np.ndarray]:
        d = self.spec.n
        lo, hi = np.broadcast_to(lo, d).astype(float), np.broadcast_to(hi, d).astype(float)
        seeds = _lattice(lo, hi, seeds_per_axis)
        found: list[np.ndarray] = []
        for s in seeds:
            cands = [_optimize(self.aux.value, s, lo, hi, +1),
                     _optimize(self.aux.value, s, lo, hi, -1), s]
            for x in cands:
                if x is None:
                    continue
                sol = root(self.aux.grad, x, jac=self.aux.hess, method="hybr",
                           options={"xtol": 1e-14})
                y = sol.x
                if np.all(y >= lo) and np.all(y <= hi) and np.linalg.norm(self.aux.grad(y)) < 1e-9:
                    _add_unique(found, y, 1e-4)
        return found

    def find_concentration_points(self, search_box, multistart: int = 16) -> PointList:
        """Critical points of Phi_eps in the slow box [lo, hi]^n."""
        spec = self.spec
        d = spec.n
        lo, hi = _box(search_box, d)
        corners = np.array(list(itertools.product(*zip(lo, hi))))
        spec.check_coefficients(corners, "search box")
        warnings = []
        lattice = _lattice(lo, hi, multistart)
        vals = np.array([self.phi_slow(x) for x in lattice])
        spread = float(vals.max() - vals.min())
        if spread <= 1e-10 * max(1.0, float(np.abs(vals).max())):
            warnings.append({"kind": "flat", "message": "flat reduced landscape"})
            return PointList([], warnings)

        seeds: list[tuple[np.ndarray, int]] = []
        for x in self.lambda_critical_points(lo, hi, min(multistart, 8)):
            seeds.append((x, 0))
        shape = (multistart,) * d
        grid_vals = vals.reshape(shape)
        for idx in itertools.product(*[range(multistart)] * d):
            v = grid_vals[idx]
            nbrs = []
            for ax in range(d):
                for st in (-1, 1):
                    j = list(idx)
                    j[ax] += st
                    if 0 <= j[ax] < multistart:
                        nbrs.append(grid_vals[tuple(j)])
            x = lattice[np.ravel_multi_index(idx, shape)]
            if all(v < nb for nb in nbrs):
                seeds.append((x, +1))
            elif all(v > nb for nb in nbrs):
                seeds.append((x, -1))

        accepted: list[ReducedPoint] = []
        for x0, sense in seeds:
            x = x0
            if sense != 0:
                x = _optimize(self.phi_slow, x0, lo, hi, sense, grad=self.slow_gradient)
                x = x0 if x is None else x
            x = self._polish(x, lo, hi)
            if x is None:
                continue
            if any(np.linalg.norm(p.slow - x) < 1e-3 for p in accepted):
                continue
            g_slow = self.slow_gradient(x)
            phi = self.phi_slow(x)
            if np.linalg.norm(g_slow) > 1e-7 * max(1.0, abs(phi)):
                warnings.append({"kind": "unconverged", "x": x.tolist(),
                                 "grad": float(np.linalg.norm(g_slow))})
                continue
            _, pt = self.solve_correction(x / spec.epsilon)
            pt.reduced_grad = spec.epsilon * g_slow
            try:
                pt.morse_index = self.morse_index(pt)
            except DegenerateError as exc:
                pt.flags = pt.flags + ("degenerate",)
                warnings.append(exc.record())
            accepted.append(pt)
        if not accepted:
            warnings.append({"kind": "none", "message": "no convergent start"})
            log.warning("no concentration point converged")
        accepted.sort(key=lambda p: tuple(np.round(p.xi, 9)))
        return PointList(accepted, warnings)

    def _polish(self, x, lo, hi, iters: int = 12):
        """Newton on the finite-difference reduced gradient."""
        x = np.asarray(x, dtype=float)
        for _ in range(iters):
            g = self.slow_gradient(x)
            phi = self.phi_slow(x)
            if np.linalg.norm(g) <= 1e-9 * max(1.0, abs(phi)):
                break
            H = self.slow_hessian(x, step=2e-3)
            try:
                dx = -np.linalg.solve(H, g)
            except np.linalg.LinAlgError:
                return None
            step = np.linalg.norm(dx)
            if step > 0.25:
                dx *= 0.25 / step
            x = x + dx
            if np.any(x < lo - 1e-9) or np.any(x > hi + 1e-9):
                return None
        return x

    def morse_index(self, point: ReducedPoint) -> int:
        H = self.slow_hessian(point.slow)
        ev = np.linalg.eigvalsh(0.5 * (H + H.T))
        if np.any(np.abs(ev) < 1e-8):
            raise DegenerateError("reduced Hessian has an eigenvalue within 1e-8 of 0",
                                  eigenvalues=ev.tolist())
        idx = int(np.sum(ev < 0))
        lam_ev = np.linalg.eigvalsh(self.aux.hess(point.slow))
        if np.all(np.abs(lam_ev) > 1e-6) and int(np.sum(lam_ev < 0)) != idx:
            point.flags = point.flags + ("index_mismatch",)
            log.warning("Morse index %d disagrees with Lambda Hessian at %s", idx, point.slow)
        return idx


@functools.lru_cache(maxsize=16)
def _h1_lu(grid: CartesianGrid):
    return spla.splu(h1_operator(grid))


def _h1_solve(grid, r):
    return _h1_lu(grid).solve(np.ascontiguousarray(r))


def _box(search_box, d):
    arr = np.asarray(search_box, dtype=float)
    if arr.ndim == 1 and arr.size == 2:
        lo, hi = np.full(d, arr[0]), np.full(d, arr[1])
    else:
        arr = arr.reshape(d, 2)
        lo, hi = arr[:, 0], arr[:, 1]
    if np.any(hi <= lo):
        raise ValidationError("search box must have lo < hi", field="reduce.search_box")
    return lo, hi


def _lattice(lo, hi, m) -> np.ndarray:
    axes = [np.linspace(a, b, m) if m > 1 else np.array([0.5 * (a + b)]) for a, b in zip(lo, hi)]
    return np.array(list(itertools.product(*axes)))


def _add_unique(found, x, tol):
    if all(np.linalg.norm(x - y) >= tol for y in found):
        found.append(np.asarray(x, dtype=float))


def _optimize(f, x0, lo, hi, sense: int, grad=None):
    """Local min (sense=+1) or max (sense=-1) of f in the box; None if it escapes."""
    fun = (lambda x: sense * f(x))
    jac = (lambda x: sense * grad(x)) if grad is not None else None
    res = minimize(fun, x0, jac=jac, method="L-BFGS-B", bounds=list(zip(lo, hi)),
                   options={"ftol": 1e-15, "gtol": 1e-10, "maxiter": 200})
    x = res.x
    on_edge = np.any(np.isclose(x, lo, atol=1e-9)) or np.any(np.isclose(x, hi, atol=1e-9))
    return None if on_edge else x


# -- module-level wrappers --------------------------------------------------------

def solve_correction(spec, xi, sigma: float = 0.0, **kw):
    return Reducer(spec, **kw).solve_correction(xi, sigma)


def reduced_energy(spec, xi, sigma: float = 0.0, **kw) -> float:
    return Reducer(spec, **kw).reduced_energy(xi, sigma)


def check_coercivity(spec, xi, sigma: float = 0.0, **kw) -> tuple[float, float]:
    return Reducer(spec, **kw).check_coercivity(xi, sigma)


def find_concentration_points(spec, search_box, multistart: int = 16, **kw) -> PointList:
    return Reducer(spec, **kw).find_concentration_points(search_box, multistart)


def morse_index(spec, point: ReducedPoint, **kw) -> int:
    return Reducer(spec.with_epsilon(point.eps) if point.eps == point.eps else spec,
                   **kw).morse_index(point)


# -- generic finite-dimensional reduction ------------------------------------------

@dataclass(frozen=True)
class Chart:
    """Box chart lo <= theta <= hi; periodic axes wrap."""

    lo: tuple
    hi: tuple
    periodic: tuple = ()
    samples: int = 64

    def __post_init__(self):
        if not self.periodic:
            object.__setattr__(self, "periodic", (False,) * len(self.lo))

    @property
    def dim(self) -> int:
        return len(self.lo)

    def axes(self) -> list[np.ndarray]:
        out = []
        for a, b, per in zip(self.lo, self.hi, self.periodic):
            out.append(np.linspace(a, b, self.samples, endpoint=not per))
        return out


@dataclass
class Critical:
    theta: np.ndarray
    value: float
    kind: str


def abstract_reduce(gamma: Callable[[np.ndarray], float], chart: Chart,
                    flat_tol: float = 1e-12) -> list[Critical]:
    """Strict local extrema of gamma on a sampled chart, refined locally."""
    axes = chart.axes()
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], -1)
    vals = np.array([float(gamma(p)) for p in pts]).reshape(mesh[0].shape)
    if np.ptp(vals) <= flat_tol * max(1.0, float(np.abs(vals).max())):
        return []
    found: list[Critical] = []
    shape = vals.shape
    for idx in itertools.product(*[range(s) for s in shape]):
        v = vals[idx]
        nbrs = []
        edge = False
        for ax in range(chart.dim):
            for st in (-1, 1):
                j = list(idx)
                j[ax] += st
                if chart.periodic[ax]:
                    j[ax] %= shape[ax]
                elif not 0 <= j[ax] < shape[ax]:
                    edge = True
                    continue
                nbrs.append((vals[tuple(j)], st))
        if edge:
            continue
        # ties are broken toward the lower index so a symmetric pair yields one point
        if all(v > nb or (st > 0 and v == nb) for nb, st in nbrs):
            kind = "max"
        elif all(v < nb or (st > 0 and v == nb) for nb, st in nbrs):
            kind = "min"
        else:
            continue
        x0 = np.array([axes[a][i] for a, i in enumerate(idx)])
        x = _refine_extremum(gamma, x0, chart, kind, [ax[1] - ax[0] for ax in axes])
        if all(np.linalg.norm(_wrap(x - c.theta, chart)) > 1e-6 for c in found):
            found.append(Critical(x, float(gamma(x)), kind))
    found.sort(key=lambda c: tuple(c.theta))
    return found


def _wrap(dx, chart: Chart):
    dx = np.array(dx, dtype=float)
    for i, per in enumerate(chart.periodic):
        if per:
            L = chart.hi[i] - chart.lo[i]
            dx[i] = (dx[i] + 0.5 * L) % L - 0.5 * L
    return dx


def _refine_extremum(gamma, x0, chart: Chart, kind: str, widths) -> np.ndarray:
    sense = 1.0 if kind == "min" else -1.0
    if chart.dim == 1:
        w = widths[0]
        res = minimize_scalar(lambda t: sense * float(gamma(np.array([t]))),
                              bracket=None, bounds=(x0[0] - w, x0[0] + w), method="bounded",
                              options={"xatol": 1e-12, "maxiter": 500})
        return np.array([res.x])
    bounds = [(a - w, a + w) for a, w in zip(x0, widths)]
    res = minimize(lambda t: sense * float(gamma(t)), x0, method="L-BFGS-B", bounds=bounds,
                   options={"ftol": 1e-15, "gtol": 1e-12})
    return res.x
