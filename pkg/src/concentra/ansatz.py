"""Radial ground state of -U'' - (n-1)/r U' + U = U^p and concentrating ansatz fields."""

from __future__ import annotations

import functools
import hashlib
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.integrate import simpson
from scipy.interpolate import PchipInterpolator
from scipy.special import kv

from .errors import ConvergenceError, DomainError, PlacementError, SolverError, ValidationError
from .grid import CartesianGrid, GridFunction
from .problem import ProblemSpec

log = logging.getLogger(__name__)

SHOOT_STEPS = 4096
BISECTION_DEPTH = 60


@dataclass(frozen=True, eq=False)
class RadialProfile:
    radii: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)
    peak: float
    decay_rate: float
    n: int
    p: float
    residual: float = float("nan")
    r_trusted: float = float("nan")

    @functools.cached_property
    def _interp(self) -> PchipInterpolator:
        return PchipInterpolator(self.radii, self.values, extrapolate=False)

    @functools.cached_property
    def _tail_coef(self) -> float:
        r_end = float(self.radii[-1])
        return float(self.values[-1]) / _tail_shape(self.n, r_end)

    def __call__(self, r) -> np.ndarray:
        r = np.abs(np.asarray(r, dtype=float))
        out = self._interp(np.minimum(r, self.radii[-1]))
        far = r > self.radii[-1]
        if np.any(far):
            out = np.where(far, self._tail_coef * _tail_shape(self.n, np.maximum(r, 1e-300)), out)
        return out

    def derivative(self, r) -> np.ndarray:
        r = np.abs(np.asarray(r, dtype=float))
        d = self._interp.derivative()(np.minimum(r, self.radii[-1]))
        return np.where(r > self.radii[-1], -self.decay_rate * self(r), d)

    def to_text(self) -> str:
        lines = [f"# n p peak decay_rate", f"# {self.n} {self.p!r} {self.peak!r} {self.decay_rate!r}"]
        lines += [f"{r:.17g} {u:.17g}" for r, u in zip(self.radii, self.values)]
        return "\n".join(lines) + "\n"

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_text())
        return path

    @classmethod
    def from_text(cls, text: str) -> "RadialProfile":
        header = [ln for ln in text.splitlines() if ln.startswith("#")]
        try:
            n, p, peak, rate = header[-1].lstrip("#").split()
        except (IndexError, ValueError):
            raise ValidationError("profile file lacks the '# n p peak decay_rate' header") from None
        data = np.loadtxt(text.splitlines(), comments="#", ndmin=2)
        return cls(data[:, 0], data[:, 1], float(peak), float(rate), int(float(n)), float(p))

    @classmethod
    def load(cls, path) -> "RadialProfile":
        return cls.from_text(Path(path).read_text())


def _tail_shape(n: int, r):
    """Decaying solution r^{-nu} K_nu(r) of the linearized radial equation."""
    nu = (n - 2) / 2.0
    return np.power(r, -nu) * kv(abs(nu), r)


def _shoot(u0: float, n: int, p: float, h: float, steps: int, record: bool = False):
    """RK4 from r = 0; returns +1 (overshoot), -1 (undershoot), 0 (neither).

    With ``record`` the whole trajectory (r, U, U') is returned as lists.
    """
    nm1 = n - 1.0
    pm1 = p - 1.0

    def acc(r, u, v):
        nl = abs(u) ** pm1 * u
        if r == 0.0:
            return (u - nl) / n
        return -nm1 / r * v + u - nl

    i0, r, u, v = _series_start(u0, n, p, h)
    if record:
        rs = [k * h for k in range(i0 + 1)]
        us = [float(x) for x in _series_eval(u0, n, p, np.array(rs))[0]]
        vs = [float(x) for x in _series_eval(u0, n, p, np.array(rs))[1]]
    hh = 0.5 * h
    for i in range(i0, steps):
        k1u, k1v = v, acc(r, u, v)
        k2u, k2v = v + hh * k1v, acc(r + hh, u + hh * k1u, v + hh * k1v)
        k3u, k3v = v + hh * k2v, acc(r + hh, u + hh * k2u, v + hh * k2v)
        k4u, k4v = v + h * k3v, acc(r + h, u + h * k3u, v + h * k3v)
        u += h / 6.0 * (k1u + 2 * k2u + 2 * k3u + k4u)
        v += h / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
        r = (i + 1) * h
        if record:
            rs.append(r)
            us.append(u)
            vs.append(v)
            continue
        if u < 0.0:
            return 1
        if v > 0.0:
            return -1
    if record:
        return np.array(rs), np.array(us), np.array(vs)
    return 0


@functools.lru_cache(maxsize=256)
def _series_coeffs(u0: float, n: int, p: float, terms: int = 24) -> np.ndarray:
    """Coefficients a_k of U = sum a_k r^{2k} near the origin.

    U^p = sum g_k r^{2k} follows the usual power-of-a-series recurrence.
    """
    a = np.zeros(terms)
    g = np.zeros(terms)
    a[0], g[0] = u0, u0**p
    for k in range(terms - 1):
        a[k + 1] = (a[k] - g[k]) / ((2 * k + 2) * (2 * k + n))
        m = k + 1
        j = np.arange(1, m + 1)
        g[m] = np.sum(((p + 1) * j - m) * a[j] * g[m - j]) / (m * u0)
    return a


def _series_eval(u0, n, p, r):
    a = _series_coeffs(u0, n, p)
    s = np.asarray(r, dtype=float) ** 2
    k = np.arange(len(a))
    u = np.polynomial.polynomial.polyval(s, a)
    du = np.polynomial.polynomial.polyval(s, (k * a)[1:]) * 2 * np.asarray(r)
    return u, du


def _series_start(u0, n, p, h):
    """Largest node index where the truncated series is still converged."""
    a = _series_coeffs(u0, n, p)
    k = len(a) - 1
    r0 = min((1e-16 * u0 / max(abs(a[-1]), 1e-300)) ** (1.0 / (2 * k)), 1.0)
    i0 = max(int(r0 / h), 1)
    u, du = _series_eval(u0, n, p, i0 * h)
    return i0, i0 * h, float(u), float(du)


def _ode_residual(r, u, v, n, p) -> np.ndarray:
    """Residual of U'' + (n-1)/r U' - U + U^p with fourth-order differences of U'."""
    h = r[1] - r[0]
    upp = (-v[4:] + 8 * v[3:-1] - 8 * v[1:-3] + v[:-4]) / (12 * h)
    rr, uu, vv = r[2:-2], u[2:-2], v[2:-2]
    return upp + (n - 1) / rr * vv - uu + np.abs(uu) ** (p - 1) * uu


def solve_ground_state(n: int, p: float, tol: float = 1e-8, r_max: float = 20.0,
                       upper: float = 10.0, steps: int = SHOOT_STEPS) -> RadialProfile:
    """Positive radial ground state by shooting on U(0) with bisection.

    The bracket starts at [1, upper] (U = 1 is the constant solution) and the
    upper end is doubled until it overshoots.  The far tail, where the shooting
    trajectory is no longer trustworthy, is replaced by the decaying Bessel
    solution of the linearized equation, matched at the cut.  ``decay_rate`` is
    the exponential rate of U with the algebraic factor r^{(n-1)/2} removed.
    """
    if n < 1 or n > 3:
        raise ValidationError("n must be 1, 2 or 3", field="problem.n")
    if not p > 1 or (n >= 3 and not p < (n + 2) / (n - 2)):
        raise ValidationError(f"exponent p={p} outside (1, critical)", field="problem.p")
    if not 1e-12 < tol < 1e-3:
        raise ValidationError("tol must lie in (1e-12, 1e-3)", field="numerics.tol")
    return _solve_cached(int(n), float(p), float(tol), float(r_max), float(upper), int(steps))


@functools.lru_cache(maxsize=32)
def _solve_cached(n, p, tol, r_max, upper, steps) -> RadialProfile:
    cache = _disk_cache_path(n, p, tol, r_max, steps)
    if cache is not None and cache.exists():
        prof = RadialProfile.load(cache)
        log.debug("ground state loaded from %s", cache)
        return prof
    for attempt in range(5):
        r, u, v, lo, hi, u_lo, u_hi = _bracketed_shot(n, p, r_max, upper, steps)
        cut = _trusted_cut(r, u, v, u_lo, u_hi)
        resid = float(np.max(np.abs(_ode_residual(r[:cut], u[:cut], v[:cut], n, p))))
        if resid <= tol:
            break
        log.debug("residual %.2e at %d steps; refining", resid, steps)
        steps *= 2
    u0 = u[0]
    core_u = u[:cut]
    if np.any(np.diff(core_u) >= 0):
        raise ConvergenceError("shooting profile is not monotone decreasing")
    r_cut = r[cut - 1]
    coef = core_u[-1] / _tail_shape(n, r_cut)
    tail_r = r[cut:]
    values = np.concatenate([core_u, coef * _tail_shape(n, tail_r)])

    lo_fit = values < 1e-2 * u0
    hi_fit = values > 1e-12 * u0
    sel = lo_fit & hi_fit & (r > 0)
    if sel.sum() < 4:
        sel = r > 0.5 * r[-1]
    rate = -np.polyfit(r[sel], np.log(values[sel] * r[sel] ** ((n - 1) / 2)), 1)[0]
    if resid > tol:
        log.warning("ground-state ODE residual %.2e exceeds tol %.1e", resid, tol)
    prof = RadialProfile(r, values, float(u0), float(rate), n, p, resid, float(r_cut))
    if cache is not None:
        prof.save(cache)
    return prof


def _bracketed_shot(n, p, r_max, upper, steps):
    h = r_max / steps
    lo, hi = 1.0, float(upper)
    for _ in range(12):
        if _shoot(hi, n, p, h, steps) == 1:
            break
        lo, hi = hi, 2 * hi
    else:
        raise SolverError(f"no overshoot found up to U(0) = {hi}; bracket [1, {upper}] fails",
                          bracket=[1.0, upper])
    for _ in range(BISECTION_DEPTH):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if _shoot(mid, n, p, h, steps) == 1:
            hi = mid
        else:
            lo = mid
    r, u, v = _shoot(0.5 * (lo + hi), n, p, h, steps, record=True)
    u_lo = _shoot(lo, n, p, h, steps, record=True)[1]
    u_hi = _shoot(hi, n, p, h, steps, record=True)[1]
    return r, u, v, lo, hi, u_lo, u_hi


def _trusted_cut(r, u, v, u_lo, u_hi) -> int:
    """Index past which the bisection bracket no longer pins the trajectory."""
    spread = np.abs(u_hi - u_lo)
    bad = (spread > 1e-4 * np.abs(u)) | (u <= 0) | (v > 0)
    bad[0] = False
    cut = int(np.argmax(bad)) if bad.any() else len(r)
    cut = max(int(cut * 0.97), 8)
    if cut < 16:
        raise ConvergenceError("shooting trajectory unusable beyond the origin")
    return cut


def _disk_cache_path(n, p, tol, r_max, steps) -> Path | None:
    root = os.environ.get("CONCENTRA_CACHE")
    if not root:
        return None
    key = hashlib.sha1(repr((n, p, tol, r_max, steps)).encode()).hexdigest()[:12]
    d = Path(root)
    d.mkdir(parents=True, exist_ok=True)
    return d / f"ground_n{n}_p{p:g}_{key}.txt"


def scaling_coefficients(spec: ProblemSpec, xi: Sequence[float]) -> tuple[float, float]:
    """(alpha, beta) making alpha U(beta(x - xi)) solve the equation frozen at eps*xi."""
    slow = spec.epsilon * np.asarray(xi, dtype=float).reshape(spec.n)
    x = slow.reshape(1, spec.n)
    one_v = 1.0 + float(spec.V(x)[0])
    k = float(spec.K(x)[0])
    if one_v <= 0:
        raise DomainError("1 + V(eps xi) must be positive", field="problem.V")
    if k <= 0:
        raise DomainError("K(eps xi) must be positive", field="problem.K")
    return (one_v / k) ** (1.0 / (spec.p - 1.0)), math.sqrt(one_v)


def _check_profile(profile: RadialProfile, spec: ProblemSpec):
    if profile.n != spec.n or abs(profile.p - spec.p) > 1e-14:
        raise ValidationError("profile (n, p) does not match the problem")


def build_ansatz(profile: RadialProfile, spec: ProblemSpec, xi: Sequence[float],
                 grid: CartesianGrid, margin_decay_lengths: float = 4.0) -> GridFunction:
    _check_profile(profile, spec)
    xi = np.asarray(xi, dtype=float).reshape(spec.n)
    alpha, beta = scaling_coefficients(spec, xi)
    margin = margin_decay_lengths / (beta * profile.decay_rate)
    if not grid.contains(xi, margin):
        raise PlacementError(f"xi={xi.tolist()} closer than {margin:.3g} to the box boundary")
    r = grid.radius_from(xi)
    return GridFunction(grid, alpha * profile(beta * r))


def build_magnetic_ansatz(profile: RadialProfile, spec: ProblemSpec, xi: Sequence[float],
                          sigma: float, grid: CartesianGrid) -> GridFunction:
    real = build_ansatz(profile, spec, xi, grid)
    xi = np.asarray(xi, dtype=float).reshape(spec.n)
    a0 = spec.A(spec.epsilon * xi.reshape(1, spec.n))[0]
    phase = sigma + sum(a0[i] * grid.coords[i] for i in range(spec.n))
    return GridFunction(grid, np.exp(1j * phase) * real.values)


def ground_state_integrals(profile: RadialProfile) -> tuple[float, float]:
    """(C0, C1) with C0 = int U^{p+1} over R^n and C1 = C0 (1/2 - 1/(p+1))."""
    n, p = profile.n, profile.p
    area = 2.0 if n == 1 else (2 * math.pi if n == 2 else 4 * math.pi)
    r = profile.radii
    c0 = area * float(simpson(profile.values ** (p + 1) * r ** (n - 1), x=r))
    return c0, c0 * (0.5 - 1.0 / (p + 1))
