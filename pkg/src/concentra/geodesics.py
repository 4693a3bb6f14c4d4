"""Closed geodesics on the cylinder R x S^N for g_eps = g0 + eps h.

Great circles z_{p,q}(t) = (r, p cos 2 pi t + q sin 2 pi t) form the critical
manifold of the unperturbed energy, all at level b = 2 pi^2.  Critical points of

    Gamma(r, p, q) = 1/2 int_0^1 h(r, z_{p,q}(t))[z', z'] dt

over r and the Stiefel pairs (p, q) give the candidates that survive the
perturbation.  ``refine_closed_geodesic`` then solves for the actual closed
geodesic of g_eps by Newton iteration on a trigonometric collocation of the loop.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import null_space, polar
from scipy.optimize import minimize

from .errors import SolverError, ValidationError
from .reduction import Chart, abstract_reduce

log = logging.getLogger(__name__)

B_LEVEL = 2.0 * math.pi**2
DEFAULT_NODES = 128


class RefinementError(SolverError):
    kind = "refinement"


class MetricPerturbation:
    """h(s, x) as an (N+2) x (N+2) symmetric matrix in ambient (s, x) coordinates.

    ``fn(s, x)`` receives s of shape (m,) and x of shape (m, N+1) and returns
    shape (m, N+2, N+2).
    """

    def __init__(self, fn: Callable, N: int, name: str = "custom", fd_step: float = 1e-6):
        if N < 1:
            raise ValidationError("sphere dimension N must be >= 1", field="geodesics.N")
        self._fn = fn
        self.N = N
        self.name = name
        self.fd_step = fd_step

    @classmethod
    def zero(cls, N: int) -> "MetricPerturbation":
        return cls(lambda s, x: np.zeros((len(s), N + 2, N + 2)), N, "zero")

    @classmethod
    def conformal(cls, phi: Callable, N: int) -> "MetricPerturbation":
        eye = np.eye(N + 2)
        return cls(lambda s, x: np.asarray(phi(s), dtype=float)[:, None, None] * eye, N, "conformal")

    @classmethod
    def axis_form(cls, phi: Callable, N: int, axis: int = 0) -> "MetricPerturbation":
        """h[a, b] = phi(s) (a . e) (b . e) with e the ``axis``-th sphere coordinate."""
        E = np.zeros((N + 2, N + 2))
        E[axis + 1, axis + 1] = 1.0
        return cls(lambda s, x: np.asarray(phi(s), dtype=float)[:, None, None] * E, N, "axis")

    def __call__(self, s, x, check: bool = True) -> np.ndarray:
        s = np.atleast_1d(np.asarray(s, dtype=float))
        x = np.asarray(x, dtype=float).reshape(len(s), self.N + 1)
        H = np.asarray(self._fn(s, x), dtype=float)
        if H.shape != (len(s), self.N + 2, self.N + 2):
            raise ValidationError(f"metric perturbation returned shape {H.shape}")
        if check:
            asym = np.max(np.abs(H - np.swapaxes(H, 1, 2)), initial=0.0)
            if asym > 1e-12 * max(1.0, float(np.max(np.abs(H), initial=0.0))):
                raise ValidationError(f"metric perturbation is not symmetric (defect {asym:.2e})")
        return H

    def derivative(self, s, x) -> np.ndarray:
        """dH/dz_k for ambient coordinate k; shape (m, N+2, N+2, N+2), last axis k."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        x = np.asarray(x, dtype=float).reshape(len(s), self.N + 1)
        d = self.fd_step
        out = np.empty((len(s), self.N + 2, self.N + 2, self.N + 2))
        for k in range(self.N + 2):
            sp_, sm_ = s.copy(), s.copy()
            xp, xm = x.copy(), x.copy()
            if k == 0:
                sp_ += d
                sm_ -= d
            else:
                xp[:, k - 1] += d
                xm[:, k - 1] -= d
            out[..., k] = (self(sp_, xp, False) - self(sm_, xm, False)) / (2 * d)
        return out


@dataclass
class LoopState:
    r: float
    p: np.ndarray
    q: np.ndarray
    samples: int = DEFAULT_NODES

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float)
        self.q = np.asarray(self.q, dtype=float)
        if self.samples < 16:
            raise ValidationError("at least 16 quadrature nodes are required")
        if (abs(np.linalg.norm(self.p) - 1) > 1e-12 or abs(np.linalg.norm(self.q) - 1) > 1e-12
                or abs(self.p @ self.q) > 1e-12):
            raise ValidationError("(p, q) must be an orthonormal pair")

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.samples) / self.samples

    def positions(self) -> np.ndarray:
        t = 2 * np.pi * self.nodes
        return np.outer(np.cos(t), self.p) + np.outer(np.sin(t), self.q)

    def velocities(self) -> np.ndarray:
        t = 2 * np.pi * self.nodes
        return 2 * np.pi * (-np.outer(np.sin(t), self.p) + np.outer(np.cos(t), self.q))


def melnikov_gamma(loop: LoopState, h: MetricPerturbation) -> float:
    x = loop.positions()
    v = np.concatenate([np.zeros((loop.samples, 1)), loop.velocities()], axis=1)
    H = h(np.full(loop.samples, loop.r), x)
    return 0.5 * float(np.mean(np.einsum("ni,nij,nj->n", v, H, v)))


def _gamma(h, r, X, samples=DEFAULT_NODES) -> float:
    return melnikov_gamma(LoopState(r, X[:, 0], X[:, 1], samples), h)


def _retract(X: np.ndarray) -> np.ndarray:
    u, _ = polar(X)
    return u


def phase_fix(p: np.ndarray, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Representative of the O(2) orbit of (p, q) with p . e1 maximal.

    When the plane is orthogonal to e1 the next coordinate axis is used.  The
    reflection q -> -q is fixed by making the first significant entry of q positive.
    """
    for k in range(len(p)):
        a, b = p[k], q[k]
        if math.hypot(a, b) > 1e-9:
            tau = math.atan2(b, a)
            p, q = p * math.cos(tau) + q * math.sin(tau), -p * math.sin(tau) + q * math.cos(tau)
            break
    j = int(np.argmax(np.abs(q) > 1e-6))
    if q[j] < 0:
        q = -q
    return p, q


@dataclass
class Candidate:
    r: float
    p: np.ndarray
    q: np.ndarray
    gamma: float
    classification: str
    null_dims: int = 0
    hess_eigs: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def to_row(self) -> dict:
        row = {"r": self.r}
        row.update({f"p{i + 1}": float(v) for i, v in enumerate(self.p)})
        row.update({f"q{i + 1}": float(v) for i, v in enumerate(self.q)})
        row.update(gamma=self.gamma, **{"class": self.classification})
        return row


class _ChartFn:
    """Gamma in local coordinates c = (dr, B) around (r, X): X + X_perp B, then retract."""

    def __init__(self, h, r, X, samples):
        self.h, self.r, self.X, self.samples = h, r, X, samples
        N1 = X.shape[0]
        self.Xp = null_space(X.T) if N1 > 2 else np.zeros((N1, 0))
        self.dim = 1 + 2 * self.Xp.shape[1]

    def point(self, c):
        B = c[1:].reshape(self.Xp.shape[1], 2) if self.Xp.shape[1] else np.zeros((0, 2))
        return self.r + c[0], _retract(self.X + self.Xp @ B)

    def __call__(self, c) -> float:
        r, X = self.point(c)
        return _gamma(self.h, r, X, self.samples)

    def grad(self, d=1e-5):
        g = np.empty(self.dim)
        for i in range(self.dim):
            e = np.zeros(self.dim)
            e[i] = d
            g[i] = (-self(2 * e) + 8 * self(e) - 8 * self(-e) + self(-2 * e)) / (12 * d)
        return g

    def hess(self, d=1e-4):
        n = self.dim
        H = np.empty((n, n))
        f0 = self(np.zeros(n))
        E = np.eye(n) * d
        for i in range(n):
            H[i, i] = (self(E[i]) - 2 * f0 + self(-E[i])) / d**2
            for j in range(i + 1, n):
                H[i, j] = H[j, i] = (self(E[i] + E[j]) - self(E[i] - E[j])
                                     - self(-E[i] + E[j]) + self(-E[i] - E[j])) / (4 * d * d)
        return H


def _newton_polish(h, r, X, samples, iters=30):
    for _ in range(iters):
        cf = _ChartFn(h, r, X, samples)
        g = cf.grad()
        scale = max(1.0, abs(cf(np.zeros(cf.dim))))
        if np.linalg.norm(g) <= 1e-10 * scale:
            return r, X, True
        H = cf.hess()
        step = -np.linalg.lstsq(H, g, rcond=1e-8)[0]
        nrm = np.linalg.norm(step)
        if nrm > 0.5:
            step *= 0.5 / nrm
        r, X = cf.point(step)
    cf = _ChartFn(h, r, X, samples)
    return r, X, np.linalg.norm(cf.grad()) <= 1e-8 * max(1.0, abs(cf(np.zeros(cf.dim))))


def classify(h, r, X, samples=DEFAULT_NODES, null_tol: float = 1e-6, scale: float | None = None):
    """Kind of critical point from the chart Hessian; ``scale`` sets the null threshold."""
    cf = _ChartFn(h, r, X, samples)
    H = cf.hess()
    ev = np.linalg.eigvalsh(0.5 * (H + H.T))
    scale = max(1e-12, float(np.max(np.abs(ev))) if not scale else scale)
    null = np.abs(ev) <= null_tol * scale
    live = ev[~null]
    if live.size == 0:
        kind = "degenerate"
    elif np.all(live < 0):
        kind = "max"
    elif np.all(live > 0):
        kind = "min"
    else:
        kind = "saddle"
    return kind, int(null.sum()), ev


def find_geodesic_candidates(h: MetricPerturbation, N: int | None = None, multistart: int = 8,
                             r_range: tuple[float, float] = (-6.0, 6.0),
                             samples: int = DEFAULT_NODES, seed: int = 0):
    """Critical points of Gamma modulo O(2); returns (candidates, warnings)."""
    N = h.N if N is None else N
    if N != h.N:
        raise ValidationError("N does not match the metric perturbation", field="geodesics.N")
    rng = np.random.default_rng(seed)
    lo, hi = r_range
    warnings = []
    starts = []
    scale = 0.0
    for k in range(multistart):
        X = _retract(rng.standard_normal((N + 1, 2)))
        if k == 0:
            X = np.eye(N + 1)[:, :2]
        # scan r for this plane with the shared reduction engine
        chart = Chart((lo,), (hi,), samples=97)
        crit = abstract_reduce(lambda t, X=X: _gamma(h, float(t[0]), X, samples), chart)
        starts += [(c.theta[0], X) for c in crit]
        for r in np.linspace(lo, hi, 25):
            scale = max(scale, abs(_gamma(h, r, X, samples)))
    if not starts:
        warnings.append({"kind": "flat", "message": "Gamma is flat on the sampled chart"})
        return [], warnings

    found: list[Candidate] = []
    for r0, X0 in starts:
        seeds = []
        for sense in (+1, -1):
            seeds.append(_local_opt(h, r0, X0, samples, sense, lo, hi))
        seeds.append((r0, X0))
        for r, X in seeds:
            if r is None:
                continue
            r, X, ok = _newton_polish(h, r, X, samples)
            if not ok or not lo <= r <= hi:
                continue
            X = _retract(X)
            kind, null, ev = classify(h, r, X, samples, scale=scale)
            if abs(_gamma(h, r, X, samples)) <= 1e-6 * scale and null == len(ev):
                continue  # numerically flat tail, not a genuine critical point
            p, q = phase_fix(X[:, 0], X[:, 1])
            gam = _gamma(h, r, np.column_stack([p, q]), samples)
            cand = Candidate(float(r), p, q, gam, kind, null, ev)
            if not any(_same(cand, c, scale=scale) for c in found):
                found.append(cand)
    found.sort(key=lambda c: (round(c.r, 9), c.gamma))
    return found, warnings


def _same(a: Candidate, b: Candidate, tol=1e-6, scale: float = 1.0) -> bool:
    Pa = np.outer(a.p, a.p) + np.outer(a.q, a.q)
    Pb = np.outer(b.p, b.p) + np.outer(b.q, b.q)
    same_plane = np.linalg.norm(Pa - Pb) <= 1e-5
    if same_plane and max(abs(a.gamma), abs(b.gamma)) <= 1e-8 * scale:
        # Gamma vanishes identically along r for this plane: one family
        return True
    if abs(a.r - b.r) > tol or abs(a.gamma - b.gamma) > tol * max(1.0, abs(a.gamma)):
        return False
    if a.null_dims >= 1 and b.null_dims >= 1:
        # a whole degenerate family of planes; keep a single representative
        return True
    return same_plane


def _local_opt(h, r0, X0, samples, sense, lo, hi):
    N1 = X0.shape[0]

    def unpack(v):
        return v[0], _retract(v[1:].reshape(N1, 2))

    def f(v):
        r, X = unpack(v)
        return sense * _gamma(h, r, X, samples)

    v0 = np.concatenate([[r0], X0.ravel()])
    bounds = [(lo, hi)] + [(None, None)] * (2 * N1)
    res = minimize(f, v0, method="L-BFGS-B", bounds=bounds,
                   options={"ftol": 1e-15, "gtol": 1e-11, "maxiter": 500})
    r, X = unpack(res.x)
    if np.isclose(r, lo) or np.isclose(r, hi):
        return None, None
    return r, X


# -- refinement of a candidate into a closed geodesic of g_eps -------------------

def _spectral_diff(M: int) -> np.ndarray:
    """Differentiation matrix for trigonometric interpolation on M (odd) nodes of [0, 1)."""
    j = np.arange(M)
    D = np.zeros((M, M))
    for k in range(M):
        diff = (j - k)
        with np.errstate(divide="ignore"):
            D[:, k] = np.where(diff == 0, 0.0, 0.5 * (-1.0) ** diff / np.sin(np.pi * diff / M))
    return 2 * np.pi * D


@dataclass
class RefinedLoop:
    s: np.ndarray
    x: np.ndarray
    energy: float
    grad_norm: float
    iterations: int
    eps: float

    @property
    def r_center(self) -> float:
        return float(np.mean(self.s))

    def polyline(self) -> np.ndarray:
        return np.column_stack([np.linspace(0, 1, len(self.s), endpoint=False), self.s, self.x])


class _LoopEnergy:
    def __init__(self, h: MetricPerturbation, eps: float, M: int):
        self.h, self.eps, self.M = h, eps, M
        self.D = _spectral_diff(M)
        self.N1 = h.N + 1

    def split(self, v):
        s = v[: self.M]
        y = v[self.M:].reshape(self.M, self.N1)
        return s, y

    def value(self, v) -> float:
        s, y = self.split(v)
        x = y / np.linalg.norm(y, axis=1, keepdims=True)
        z = np.column_stack([s, x])
        zd = self.D @ z
        G = np.eye(self.N1 + 1)[None] + self.eps * self.h(s, x)
        return 0.5 * float(np.mean(np.einsum("ni,nij,nj->n", zd, G, zd)))

    def grad(self, v) -> np.ndarray:
        s, y = self.split(v)
        ny = np.linalg.norm(y, axis=1, keepdims=True)
        x = y / ny
        z = np.column_stack([s, x])
        zd = self.D @ z
        H = self.h(s, x)
        G = np.eye(self.N1 + 1)[None] + self.eps * H
        Gz = np.einsum("nij,nj->ni", G, zd)
        gz = self.D.T @ Gz / self.M
        if self.eps != 0.0:
            dH = self.h.derivative(s, x)
            gz += 0.5 * self.eps * np.einsum("ni,nijk,nj->nk", zd, dH, zd) / self.M
        gs = gz[:, 0]
        gx = gz[:, 1:]
        # chain rule through x = y / |y|
        gy = (gx - np.sum(gx * x, axis=1, keepdims=True) * x) / ny
        return np.concatenate([gs, gy.ravel()])


def refine_closed_geodesic(candidate: Candidate, eps: float, fourier_modes: int = 16,
                           h: MetricPerturbation | None = None, tol: float = 1e-6,
                           max_iter: int = 40) -> RefinedLoop:
    """Closed geodesic of g0 + eps h near the candidate great circle.

    The loop is represented by its values at 2K+1 equispaced nodes (K Fourier
    modes).  Great circles are saddle points of the energy, so the critical
    point is located by Newton iteration with least-squares steps, which also
    absorbs the reparametrization and radial-scaling null directions.
    """
    if fourier_modes < 2:
        raise ValidationError("fourier_modes must be >= 2", field="geodesics.fourier_modes")
    M = 2 * fourier_modes + 1
    t = np.arange(M) / M
    p, q = np.asarray(candidate.p), np.asarray(candidate.q)
    x0 = np.outer(np.cos(2 * np.pi * t), p) + np.outer(np.sin(2 * np.pi * t), q)
    s0 = np.full(M, candidate.r)
    if h is None:
        if eps != 0.0:
            raise ValidationError("metric perturbation required for eps != 0")
        h = MetricPerturbation.zero(len(p) - 1)
    fn = _LoopEnergy(h, eps, M)
    v = np.concatenate([s0, x0.ravel()])
    if eps == 0.0:
        return RefinedLoop(s0, x0, fn.value(v), float(np.linalg.norm(fn.grad(v))), 0, eps)
    N1 = h.N + 1

    def reduced(v, B):
        g = fn.grad(v)
        gx = g[M:].reshape(M, N1)
        return np.concatenate([g[:M], np.einsum("nik,ni->nk", B, gx).ravel()])

    def moved(v, B, c):
        s, x = fn.split(v)
        y = x + np.einsum("nik,nk->ni", B, c[M:].reshape(M, h.N))
        y /= np.linalg.norm(y, axis=1, keepdims=True)
        return np.concatenate([s + c[:M], y.ravel()])

    it = 0
    gn = float("inf")
    for it in range(1, max_iter + 1):
        _, x = fn.split(v)
        # orthonormal tangent frame of the sphere at every node
        B = np.stack([null_space(xi[None, :]) for xi in x])
        g = reduced(v, B)
        gn = float(np.linalg.norm(g))
        if gn <= 1e-2 * tol:
            break
        n = g.size
        Hm = np.empty((n, n))
        d = 1e-6
        for k in range(n):
            e = np.zeros(n)
            e[k] = d
            Hm[:, k] = (reduced(moved(v, B, e), B) - reduced(moved(v, B, -e), B)) / (2 * d)
        Hm = 0.5 * (Hm + Hm.T)
        step = -np.linalg.lstsq(Hm, g, rcond=1e-10)[0]
        nrm = np.linalg.norm(step, np.inf)
        if nrm > 0.2:
            step *= 0.2 / nrm
        v = moved(v, B, step)
    else:
        _, x = fn.split(v)
        B = np.stack([null_space(xi[None, :]) for xi in x])
        gn = float(np.linalg.norm(reduced(v, B)))
    s, x = fn.split(v)
    if np.max(np.linalg.norm(_spectral_diff(M) @ x, axis=1)) < 1e-3:
        raise RefinementError("loop degenerated to a point")
    if gn > tol:
        raise RefinementError(f"refinement stalled at gradient norm {gn:.2e}", grad_norm=gn)
    return RefinedLoop(s, x, fn.value(v), gn, it, eps)
