"""Concentration-compactness diagnostics on sampled sequences.

Sequences are generated term by term on their own 1D grids (translated terms
need growing boxes, concentrating terms need finer spacing).  Every template is
normalized so that int |u_n|^p is independent of n.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.signal import fftconvolve

from .errors import ValidationError
from .grid import CartesianGrid, GridFunction, integrate, make_grid

KINDS = ("oscillation", "concentration", "vanishing_translation", "spreading",
         "dichotomy_pair", "strong_convergent", "custom")

# expected Lions labels of the mass templates
LIONS_EXPECTED = {
    "vanishing_translation": "compactness",
    "spreading": "vanishing",
    "dichotomy_pair": "dichotomy",
    "concentration": "compactness",
    "strong_convergent": "compactness",
}


# -- sequences ---------------------------------------------------------------

@dataclass
class SequenceSpec:
    """u_n built from a base profile u (a callable of x).

    ``width`` is the length scale of u and fixes the grid spacing; ``generator``
    replaces the templates for kind ``custom`` and must return a GridFunction.
    """

    kind: str
    indices: Sequence[int]
    profile: Callable[[np.ndarray], np.ndarray] | None = None
    p: float = 2.0
    width: float = 1.0
    base_radius: float = 10.0
    nodes_per_width: int = 24
    generator: Callable[[int], GridFunction] | None = None
    limit: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown sequence kind {self.kind!r}", field="cc.kind")
        if self.kind == "custom" and self.generator is None:
            raise ValidationError("custom sequences need a generator", field="cc.generator")
        if self.kind != "custom" and self.profile is None:
            raise ValidationError("template sequences need a base profile", field="cc.profile")
        if not self.p > 1:
            raise ValidationError("p must exceed 1", field="cc.p")
        self.indices = [int(n) for n in self.indices]
        if any(n < 1 for n in self.indices):
            raise ValidationError("indices must be positive integers", field="cc.indices")

    def _grid(self, radius: float, h: float) -> CartesianGrid:
        m = 2 * int(math.ceil(radius / h)) + 1
        return make_grid(1, radius, m)

    def term(self, n: int) -> GridFunction:
        if self.kind == "custom":
            return self.generator(n)
        u, p, w, R0 = self.profile, self.p, self.width, self.base_radius
        h = w / self.nodes_per_width
        if self.kind == "vanishing_translation":
            g = self._grid(R0 + n, h)
            x = g.coords[0]
            vals = u(x - n)
        elif self.kind == "spreading":
            g = self._grid(R0 * n, h * n)
            x = g.coords[0]
            vals = n ** (-1.0 / p) * u(x / n)
        elif self.kind == "concentration":
            g = self._grid(R0, h / n)
            x = g.coords[0]
            vals = n ** (1.0 / p) * u(n * x)
        elif self.kind == "dichotomy_pair":
            # the bumps start half a box apart so the pair never overlaps
            d = 0.5 * R0 + n
            g = self._grid(R0 + d, h)
            x = g.coords[0]
            vals = 2 ** (-1.0 / p) * (u(x - d) + u(x + d))
        elif self.kind == "strong_convergent":
            g = self._grid(R0, h)
            x = g.coords[0]
            s = 1.0 + 1.0 / n
            vals = s ** (1.0 / p) * u(s * x)
        else:  # oscillation on the unit period cell
            g = self._grid(0.5, 1.0 / (self.nodes_per_width * n))
            x = g.coords[0]
            vals = math.sqrt(2.0) * np.cos(2 * np.pi * n * x)
        return GridFunction(g, np.asarray(vals, dtype=float))

    def terms(self) -> list[GridFunction]:
        return [self.term(n) for n in self.indices]

    def density(self, n: int) -> GridFunction:
        t = self.term(n)
        return t.like(np.abs(t.values) ** self.p)


_SHAPES = ("gauss", "sech", "sech2", "skew", "bump")


def random_profile(rng: np.random.Generator) -> tuple[Callable, float]:
    """A randomized positive bump and its width."""
    w = float(rng.uniform(0.5, 1.2))
    kind = _SHAPES[int(rng.integers(len(_SHAPES)))]
    a = float(rng.uniform(0.1, 0.5))
    amp = float(rng.uniform(0.5, 2.0))
    sech = lambda t: 1.0 / np.cosh(np.minimum(np.abs(t), 700.0))
    if kind == "gauss":
        f = lambda x: amp * np.exp(-(x / w) ** 2)
    elif kind == "sech":
        f = lambda x: amp * sech(x / w)
    elif kind == "sech2":
        f = lambda x: amp * sech(x / w) ** 2
    elif kind == "skew":
        f = lambda x: amp * np.exp(-(x / w) ** 2) * (1 + a * np.tanh(x / w))
    else:
        def f(x):
            t = np.clip(np.abs(x) / (2 * w), 0, 1)
            with np.errstate(divide="ignore", over="ignore"):
                return np.where(t < 1, amp * np.exp(1 - 1 / np.maximum(1 - t**2, 1e-300)), 0.0)
    return f, w


def template_sequence(kind: str, rng: np.random.Generator, indices=None, p: float = 2.0) -> SequenceSpec:
    f, w = random_profile(rng)
    if indices is None:
        indices = {"oscillation": [1, 2, 4, 8, 16, 32],
                   "spreading": [2, 8, 32, 128, 512, 2048]}.get(kind, [2, 4, 8, 16, 32, 64, 128])
    limit = None
    if kind == "strong_convergent":
        limit = f
    return SequenceSpec(kind, indices, f, p=p, width=w, base_radius=12 * w, limit=limit)


# -- Brezis-Lieb -------------------------------------------------------------

def _limit_values(limit, term: GridFunction) -> np.ndarray:
    if limit is None:
        return np.zeros(term.grid.shape)
    if isinstance(limit, GridFunction):
        if limit.grid != term.grid:
            raise ValidationError("limit and term live on different grids")
        return limit.values
    pts = term.grid.coords[0] if term.grid.dim == 1 else term.grid.points()
    return np.asarray(limit(pts), dtype=float)


def _lp(values: np.ndarray, grid: CartesianGrid, p: float) -> float:
    return float(integrate(np.abs(values) ** p, grid))


def brezis_lieb_defect(terms: Sequence[GridFunction], limit, p: float) -> list[float]:
    """d_n = | |u_n|_p^p - |u_n - u|_p^p - |u|_p^p |."""
    out = []
    for t in terms:
        u = _limit_values(limit, t)
        out.append(abs(_lp(t.values, t.grid, p) - _lp(t.values - u, t.grid, p) - _lp(u, t.grid, p)))
    return out


# -- Lions concentration function -----------------------------------------------------

def _check_density(rho: GridFunction):
    if np.iscomplexobj(rho.values) or np.min(rho.values) < -1e-12:
        raise ValidationError("density must be real and nonnegative")


def concentration_function(rho: GridFunction, radii: Sequence[float],
                           return_centers: bool = False):
    """Q(R) = max over node centres y of the mass of rho in B(y, R)."""
    _check_density(rho)
    g = rho.grid
    vals = np.maximum(rho.values, 0.0)
    Q, centers = [], []
    if g.dim == 1:
        x = g.axis(0)
        h = g.spacing
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (vals[1:] + vals[:-1]) * h)])
        for R in radii:
            window = np.interp(x + R, x, cum) - np.interp(x - R, x, cum)
            k = int(np.argmax(window))
            Q.append(float(window[k]))
            centers.append((float(x[k]),))
    else:
        h = g.spacing
        for R in radii:
            k = int(R / h)
            ax = np.arange(-k, k + 1) * h
            mesh = np.meshgrid(*[ax] * g.dim, indexing="ij")
            ball = (sum(m**2 for m in mesh) <= R * R + 1e-12).astype(float)
            window = fftconvolve(vals, ball, mode="same") * g.cell_volume
            k = int(np.argmax(window))
            idx = np.unravel_index(k, window.shape)
            Q.append(float(window[idx]))
            centers.append(tuple(float(g.axis(i)[j]) for i, j in enumerate(idx)))
    return (Q, centers) if return_centers else Q


@dataclass
class TrichotomyReport:
    label: str
    mass: float
    radii: list
    indices: list
    q_profile: np.ndarray = field(repr=False)
    centers: list = field(default_factory=list)
    split_mass: float | None = None
    notes: list = field(default_factory=list)

    def rows(self):
        for i, n in enumerate(self.indices):
            for j, R in enumerate(self.radii):
                yield {"n": n, "R": R, "Q": float(self.q_profile[i, j])}


def lions_classify(seq: SequenceSpec, R_grid: Sequence[float], n_grid: Sequence[int] | None = None
                   ) -> TrichotomyReport:
    n_grid = list(seq.indices if n_grid is None else n_grid)
    R_grid = [float(r) for r in R_grid]
    masses, profiles, cents = [], [], []
    for n in n_grid:
        rho = seq.density(n)
        masses.append(float(integrate(rho)))
        q, c = concentration_function(rho, R_grid, return_centers=True)
        profiles.append(q)
        cents.append(c)
    masses = np.array(masses)
    lam = float(np.mean(masses))
    Q = np.array(profiles)
    notes = []
    if np.ptp(masses) > 0.01 * lam:
        notes.append(f"mass varies by {np.ptp(masses) / lam:.2%} across n")
        return TrichotomyReport("inconclusive", lam, R_grid, n_grid, Q, notes=notes)

    if Q[-1].max() < 0.05 * lam:
        return TrichotomyReport("vanishing", lam, R_grid, n_grid, Q, notes=notes)

    ok = True
    centers = []
    for tol in (0.1, 0.05):
        good = np.where(Q.min(axis=0) >= (1 - tol) * lam)[0]
        if good.size == 0:
            ok = False
            break
        j = int(good[0])
        centers = [c[j] for c in cents]
    if ok:
        return TrichotomyReport("compactness", lam, R_grid, n_grid, Q, centers=centers, notes=notes)

    # dichotomy: a plateau of the last profile strictly between 0 and lam
    last = Q[-1]
    inner = (last > 0.1 * lam) & (last < 0.9 * lam)
    if inner.sum() >= 2:
        slopes = np.abs(np.gradient(last, R_grid))
        cand = np.where(inner)[0]
        j = int(cand[np.argmin(slopes[cand])])
        flat = slopes[j] * (R_grid[-1] - R_grid[0]) <= 0.05 * lam
        if flat:
            return TrichotomyReport("dichotomy", lam, R_grid, n_grid, Q,
                                    split_mass=float(last[j]), notes=notes)
    notes.append("no decision rule fired on the sampled R and n range")
    return TrichotomyReport("inconclusive", lam, R_grid, n_grid, Q, notes=notes)


# -- canonical failure modes --------------------------------------------------------

def _mass_radius(t: GridFunction, frac: float = 0.9) -> tuple[float, float]:
    """Centre of mass of |u|^2 and the radius of the smallest centred interval with ``frac`` of it."""
    rho = np.abs(t.values) ** 2
    R = np.logspace(-4, math.log10(2 * t.grid.radius), 120)
    q, c = concentration_function(t.like(rho), R, return_centers=True)
    total = float(integrate(rho, t.grid))
    j = int(np.argmax(np.asarray(q) >= frac * total)) if max(q) >= frac * total else len(R) - 1
    return c[j][0], float(R[j])


def weak_failure_mode(seq: SequenceSpec) -> str:
    terms = [seq.term(n) for n in seq.indices]
    if len(terms) < 3:
        return "unclassified"
    l2 = np.array([math.sqrt(float(integrate(np.abs(t.values) ** 2, t.grid))) for t in terms])
    if l2.min() <= 0 or l2.max() / l2.min() > 1.5:
        return "unclassified"
    sup = np.array([float(np.max(np.abs(t.values))) for t in terms])
    info = [_mass_radius(t) for t in terms]
    radii = np.array([r for _, r in info])
    centers = np.array([c for c, _ in info])

    if radii[-1] <= 0.25 * radii[0] and sup[-1] >= 2 * sup[0]:
        return "concentration"

    base_R = 2 * max(radii[0], 1e-3) + abs(centers[0])

    def fixed_ball_fraction(t):
        x = t.grid.coords[0]
        rho = np.abs(t.values) ** 2
        return float(integrate(np.where(np.abs(x) <= base_R, rho, 0.0), t.grid)
                     / integrate(rho, t.grid))

    frac_last = fixed_ball_fraction(terms[-1])
    sup_const = sup.max() / sup.min() <= 1.5
    if sup_const and frac_last < 0.05:
        return "vanishing"

    # weak limit zero: pair with smooth tests supported in the common region
    lo = max(t.grid.axis(0)[0] for t in terms)
    hi = min(t.grid.axis(0)[-1] for t in terms)
    tests = []
    for c in np.linspace(0.7 * lo + 0.3 * hi, 0.3 * lo + 0.7 * hi, 3):
        s = 0.15 * (hi - lo)
        tests.append(lambda x, c=c, s=s: np.exp(-((x - c) / s) ** 2))
    weak = []
    for t in terms:
        x = t.grid.coords[0]
        weak.append(max(abs(float(integrate(t.values * phi(x), t.grid))) for phi in tests))
    phi_norm = max(math.sqrt(float(integrate(phi(terms[-1].grid.coords[0]) ** 2, terms[-1].grid)))
                   for phi in tests)
    weak_zero = weak[-1] <= 0.05 * l2[-1] * phi_norm
    if sup_const and frac_last >= 0.9 and weak_zero:
        # pointwise values must keep moving for an oscillation
        xs = np.linspace(lo, hi, 17)[1:-1]
        v_prev = np.interp(xs, terms[-2].grid.axis(0), terms[-2].values)
        v_last = np.interp(xs, terms[-1].grid.axis(0), terms[-1].values)
        if np.max(np.abs(v_last - v_prev)) > 0.1 * sup[-1] or np.max(np.abs(v_last)) > 0.5 * sup[-1]:
            return "oscillation"
    return "unclassified"


# -- mass budget ----------------------------------------------------------------------

@dataclass
class MassBudget:
    nu_norm_est: float
    nu_infinity_est: float
    budget_residual: float
    limsup_norm: float
    limit_norm: float
    tail_profile: list = field(default_factory=list)
    error_bar: float = 0.0
    flags: list = field(default_factory=list)

    def __iter__(self):
        yield self.nu_norm_est
        yield self.nu_infinity_est
        yield self.budget_residual


def mass_budget(terms: Sequence[GridFunction], limit, p: float, R_grid: Sequence[float]) -> MassBudget:
    """nu_infinity, |nu| and the residual of |u_n|^p -> |u|^p + |nu| + nu_infinity.

    lim sup over n is the max over the last third of ``terms``; nu_infinity is
    the tail mass at the largest sampled R.
    """
    if not terms:
        raise ValidationError("mass budget needs at least one term")
    k0 = len(terms) - max(1, len(terms) // 3)
    late = terms[k0:]
    R_grid = sorted(float(r) for r in R_grid)
    tails = []
    for R in R_grid:
        vals = []
        for t in late:
            r = t.grid.radius_from(np.zeros(t.grid.dim))
            vals.append(float(integrate(np.where(r > R, np.abs(t.values) ** p, 0.0), t.grid)))
        tails.append(max(vals))
    norms = [_lp(t.values, t.grid, p) for t in late]
    diffs = [_lp(t.values - _limit_values(limit, t), t.grid, p) for t in late]
    lim_norm = max(norms)
    u_norm = _lp(_limit_values(limit, terms[-1]), terms[-1].grid, p)
    nu_inf = tails[-1]
    nu = max(diffs) - nu_inf
    flags = []
    err = 0.0
    inc = np.diff(tails)
    if np.any(inc > 1e-9 * max(1.0, lim_norm)):
        flags.append("non-monotone tail estimate")
        err = float(np.max(inc))
    resid = abs(lim_norm - (u_norm + nu + nu_inf))
    return MassBudget(float(nu), float(nu_inf), float(resid), float(lim_norm), float(u_norm),
                      list(zip(R_grid, tails)), err, flags)
