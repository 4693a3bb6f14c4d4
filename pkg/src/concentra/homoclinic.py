"""Homoclinic orbits of the planar Hamiltonian system

    H(t, u, v, lam) = (v^2 + lam u^2 + a(t) u^2) / 2
                      - |u|^(sigma+2) / ((sigma+2)(1 + e^-t)) + u^2 v^2 / (2(e^t + 1)),

solved as J x' = grad H on [-T, T] with u(-T) = u(T) = 0, together with the
bifurcation value lam0 (bottom of -d^2/dt^2 - a), the parity of the linearized
operator at lam0 and arclength continuation of the bifurcating branch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.integrate import solve_ivp
from scipy.sparse.linalg import eigsh, splu

from .errors import ConvergenceError, DegenerateError, DomainError, SolverError, ValidationError
from .expr import Expression

TerminationCause = str  # "budget" | "unbounded-proxy" | "boundary" | "stall"


def _as_profile(a) -> tuple[Callable[[np.ndarray], np.ndarray], str]:
    if callable(a):
        return a, getattr(a, "__name__", "a(t)")
    if isinstance(a, str):
        ex = Expression(a, field="problem.a")
        return (lambda t: np.broadcast_to(np.asarray(ex(t=np.asarray(t, dtype=float)), dtype=float),
                                          np.shape(t)).astype(float)), a
    raise ValidationError("a must be an expression in t or a callable", field="problem.a")


@dataclass
class HamiltonianSpec:
    sigma_exp: float
    a: Callable[[np.ndarray], np.ndarray] | str
    lam: float = -1.0
    label: str = ""

    def __post_init__(self):
        if not self.sigma_exp > 0:
            raise ValidationError("sigma must be positive", field="problem.sigma")
        fn, lab = _as_profile(self.a)
        self.a = fn
        self.label = self.label or lab
        probe = np.asarray(fn(np.linspace(-50, 50, 2001)), dtype=float)
        if not np.all(np.isfinite(probe)):
            raise ValidationError("a(t) must be finite", field="problem.a")
        if np.min(probe) < 0:
            raise ValidationError("a(t) must be nonnegative", field="problem.a")
        if np.max(probe) == 0:
            raise ValidationError("a(t) must not vanish identically", field="problem.a")

    def at(self, lam: float) -> "HamiltonianSpec":
        return HamiltonianSpec(self.sigma_exp, self.a, float(lam), self.label)

    def rhs(self, t, u, v, lam=None):
        """(u', v') of the system."""
        lam = self.lam if lam is None else lam
        sm = 0.5 * (1 - np.tanh(0.5 * t))          # 1 / (1 + e^t)
        sp_ = 1 - sm                                # 1 / (1 + e^-t)
        a = self.a(t)
        du = v * (1 + u * u * sm)
        dv = -((lam + a) * u - np.abs(u) ** self.sigma_exp * u * sp_ + u * v * v * sm)
        return du, dv

    def rhs_jac(self, t, u, v, lam=None):
        lam = self.lam if lam is None else lam
        sm = 0.5 * (1 - np.tanh(0.5 * t))
        sp_ = 1 - sm
        a = self.a(t)
        s = self.sigma_exp
        fuu = 2 * u * v * sm
        fuv = 1 + u * u * sm
        fvu = -((lam + a) - (s + 1) * np.abs(u) ** s * sp_ + v * v * sm)
        fvv = -2 * u * v * sm
        fvl = -u
        return fuu, fuv, fvu, fvv, fvl


# -- bifurcation value -------------------------------------------------------------

@dataclass
class GroundLevel:
    lam0: float
    phi0: np.ndarray = field(repr=False)
    t: np.ndarray = field(repr=False)
    admissible: bool
    note: str = ""

    def __iter__(self):
        yield self.lam0
        yield self.phi0


def _tgrid(T: float, M: int) -> np.ndarray:
    return np.linspace(-T, T, M + 1)


def _schrodinger(a_vals: np.ndarray, h: float) -> sp.csc_matrix:
    n = len(a_vals)
    main = 2.0 / h**2 - a_vals
    off = -np.ones(n - 1) / h**2
    return sp.diags([off, main, off], [-1, 0, 1], format="csc")


def lambda0(a_spec, T: float = 20.0, M: int = 2048, tol: float = 1e-13, max_iter: int = 500) -> GroundLevel:
    """Bottom of -d^2/dt^2 - a(t) with Dirichlet ends, by shifted inverse iteration."""
    fn, _ = _as_profile(a_spec.a if isinstance(a_spec, HamiltonianSpec) else a_spec)
    if M < 512:
        raise ValidationError("M must be at least 512", field="numerics.M")
    t = _tgrid(T, M)
    a = np.asarray(fn(t), dtype=float) * np.ones_like(t)
    amax = float(np.max(np.abs(a)))
    if amax > 0 and max(abs(a[0]), abs(a[-1])) > 1e-8 * amax:
        raise ValidationError(f"a(+-T) is not negligible at T = {T}; enlarge T", field="numerics.T")
    h = t[1] - t[0]
    A = _schrodinger(a[1:-1], h)
    shift = -amax - 1.0
    n = A.shape[0]
    lu = splu((A - shift * sp.identity(n, format="csc")).tocsc())
    x = np.exp(-t[1:-1] ** 2 / (T * T) * 4)
    mu = np.inf
    for _ in range(max_iter):
        y = lu.solve(x)
        y /= np.linalg.norm(y)
        mu_new = float(y @ (A @ y))
        if abs(mu_new - mu) <= tol * max(1.0, abs(mu_new)):
            x, mu = y, mu_new
            break
        x, mu = y, mu_new
    else:
        raise ConvergenceError("inverse iteration for lambda0 did not converge")
    # polish with a few Rayleigh quotient steps
    for _ in range(3):
        try:
            y = splu((A - (mu - 1e-10) * sp.identity(n, format="csc")).tocsc()).solve(x)
        except RuntimeError:
            break
        y /= np.linalg.norm(y)
        x, mu = y, float(y @ (A @ y))
    phi = np.concatenate([[0.0], x, [0.0]])
    if phi[np.argmax(np.abs(phi))] < 0:
        phi = -phi
    phi /= math.sqrt(float(np.sum(phi**2) * h))
    ok = mu < 0
    note = "" if ok else "no bifurcation point in Lambda = (-inf, 0)"
    return GroundLevel(float(mu), phi, t, ok, note)


def asymptotic_spectrum(lam: float) -> np.ndarray:
    """Eigenvalues of J diag(lam, 1)."""
    Jm = np.array([[0.0, -1.0], [1.0, 0.0]])
    return np.linalg.eigvals(Jm @ np.diag([lam, 1.0]))


def hyperbolicity_check(lam: float) -> bool:
    """True iff the spectrum of the asymptotic systems avoids the imaginary axis."""
    if lam == 0:
        raise DegenerateError("degenerate: the asymptotic spectrum is {0}", field="problem.lambda")
    ev = asymptotic_spectrum(lam)
    return bool(np.all(np.abs(ev.real) > 0))


# -- collocation --------------------------------------------------------------------

@dataclass
class BranchPoint:
    lam: float
    t: np.ndarray = field(repr=False)
    u: np.ndarray = field(repr=False)
    v: np.ndarray = field(repr=False)
    residual: float
    arclength: float = 0.0
    newton_steps: int = 0

    @property
    def amplitude(self) -> float:
        return float(np.max(np.abs(self.u)))

    @property
    def x(self) -> np.ndarray:
        return np.stack([self.u, self.v], axis=1)

    def to_row(self, cause: str = "") -> dict:
        return {"arclength": self.arclength, "lambda": self.lam, "amplitude": self.amplitude,
                "residual": self.residual, "termination_cause": cause}

    def to_text(self) -> str:
        lines = [f"# t u v  lambda={float(self.lam)!r}"]
        lines += [f"{float(ti)!r} {float(ui)!r} {float(vi)!r}" for ti, ui, vi in zip(self.t, self.u, self.v)]
        return "\n".join(lines) + "\n"


class _Collocation:
    """Trapezoidal collocation; unknowns y = (u_1..u_{M-1}, v_0..v_M)."""

    def __init__(self, spec: HamiltonianSpec, T: float, M: int):
        self.spec = spec
        self.t = _tgrid(T, M)
        self.h = self.t[1] - self.t[0]
        self.M = M
        self.nu = M - 1
        self.n = self.nu + M + 1

    def split(self, y):
        u = np.concatenate([[0.0], y[: self.nu], [0.0]])
        v = y[self.nu:]
        return u, v

    def pack(self, u, v):
        return np.concatenate([u[1:-1], v])

    def residual(self, y, lam):
        u, v = self.split(y)
        fu, fv = self.spec.rhs(self.t, u, v, lam)
        h = self.h
        ru = (u[1:] - u[:-1]) / h - 0.5 * (fu[1:] + fu[:-1])
        rv = (v[1:] - v[:-1]) / h - 0.5 * (fv[1:] + fv[:-1])
        return np.concatenate([ru, rv])

    def jacobian(self, y, lam):
        """d residual / d y (sparse) and d residual / d lam."""
        u, v = self.split(y)
        fuu, fuv, fvu, fvv, fvl = self.spec.rhs_jac(self.t, u, v, lam)
        M, h = self.M, self.h
        i = np.arange(M)
        rows, cols, vals = [], [], []

        def add(r, c, x, mask=None):
            if mask is not None:
                r, c, x = r[mask], c[mask], x[mask]
            rows.append(r)
            cols.append(c)
            vals.append(x)

        # columns: u_j -> j-1 for j in 1..M-1, v_j -> nu + j
        uc = lambda j: j - 1
        vc = lambda j: self.nu + j
        for off, sgn in ((0, -1.0), (1, 1.0)):
            j = i + off
            interior = (j >= 1) & (j <= M - 1)
            # u equations
            add(i, uc(j), sgn / h - 0.5 * fuu[j], interior)
            add(i, vc(j), -0.5 * fuv[j])
            # v equations
            add(M + i, uc(j), -0.5 * fvu[j], interior)
            add(M + i, vc(j), sgn / h - 0.5 * fvv[j])
        J = sp.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(2 * M, self.n))
        dl = np.concatenate([np.zeros(M), -0.5 * (fvl[1:] + fvl[:-1])])
        return J, dl


def _res_norm(r) -> float:
    return float(np.max(np.abs(r))) if r.size else 0.0


def solve_homoclinic(spec: HamiltonianSpec, guess, T: float = 20.0, M: int = 8192,
                     tol: float = 1e-10, amplitude_floor: float = 1e-4, max_iter: int = 60) -> BranchPoint:
    """Damped Newton on the collocation equations at spec.lam.

    ``guess`` is an (M+1, 2) array of (u, v) samples or a callable of t returning it.
    """
    if not hyperbolicity_check(spec.lam):
        raise DomainError("lambda must be negative (hyperbolic asymptotic systems)", field="problem.lambda")
    col = _Collocation(spec, T, M)
    g = guess(col.t) if callable(guess) else np.asarray(guess, dtype=float)
    if g.shape != (M + 1, 2):
        raise ValidationError(f"guess must have shape {(M + 1, 2)}", field="guess")
    if not np.any(g):
        raise SolverError("zero seed: the trivial solution attracts Newton; use a larger seed",
                          kind="trivial attractor")
    y = col.pack(g[:, 0], g[:, 1])
    lam = spec.lam
    r = col.residual(y, lam)
    nr = _res_norm(r)
    it = 0
    for it in range(1, max_iter + 1):
        J, _ = col.jacobian(y, lam)
        try:
            dy = splu(J).solve(-r)
        except RuntimeError as exc:
            raise ConvergenceError(f"singular collocation Jacobian: {exc}", iterations=it) from exc
        step = 1.0
        while True:
            y_try = y + step * dy
            r_try = col.residual(y_try, lam)
            n_try = _res_norm(r_try)
            if n_try < (1 - 1e-4 * step) * nr or n_try < tol:
                break
            step *= 0.5
            if step < 1e-6:
                raise ConvergenceError("damped Newton stalled", iterations=it, residual=nr)
        y, r, nr = y_try, r_try, n_try
        if nr < tol:
            break
    else:
        raise ConvergenceError("Newton did not converge", iterations=max_iter, residual=nr)
    u, v = col.split(y)
    if np.max(np.abs(u)) < amplitude_floor:
        raise SolverError("Newton converged to the trivial solution; use a larger seed",
                          kind="trivial attractor")
    return BranchPoint(float(lam), col.t, u, v, nr, 0.0, it)


def seed_from_ground_level(gl: GroundLevel, delta: float = 0.3) -> Callable[[np.ndarray], np.ndarray]:
    """t -> delta (phi0, phi0')(t), scaled so that max u = delta with u > 0."""
    phi = gl.phi0 / np.max(np.abs(gl.phi0))
    dphi = np.gradient(phi, gl.t)

    def seed(t):
        return delta * np.stack([np.interp(t, gl.t, phi), np.interp(t, gl.t, dphi)], axis=1)

    return seed


# -- continuation -------------------------------------------------------------------

class Branch(list):
    termination: TerminationCause = "budget"


def _weights(col: _Collocation) -> np.ndarray:
    return np.concatenate([np.full(col.n, col.h), [1.0]])


def continue_branch(spec: HamiltonianSpec, start: BranchPoint, steps: int = 20, ds: float = 0.05,
                    T: float | None = None, tol: float = 1e-10, amplitude_cap: float = 50.0,
                    boundary_tol: float = 0.02, max_newton: int = 25) -> Branch:
    """Arclength continuation in (lam, x) from ``start``.

    Each new point sits at weighted distance |ds| from the previous one (chord
    constraint), so stepping back with -ds retraces the same points.  Positive
    ds initially moves toward growing amplitude.  The branch records why it
    stopped: step budget, amplitude cap (unbounded branch), approach to
    lam = 0 (boundary of the admissible interval) or a stall after 5 halvings.
    """
    M = len(start.t) - 1
    T = float(start.t[-1]) if T is None else T
    col = _Collocation(spec, T, M)
    W = _weights(col)
    y = np.concatenate([col.pack(start.u, start.v), [start.lam]])
    if _res_norm(col.residual(y[:-1], y[-1])) > 1e3 * max(tol, start.residual):
        raise ValidationError("start point does not solve the collocation system")
    out = Branch()
    out.append(start)
    s_acc = start.arclength
    tau_prev = None
    h_step = abs(ds)
    direction = 1.0 if ds > 0 else -1.0

    def tangent(yk, prev):
        J, dl = col.jacobian(yk[:-1], yk[-1])
        Jf = sp.hstack([J, dl[:, None]]).tocsc()
        if prev is None:
            # kernel of the (n) x (n+1) matrix via a bordered solve with e_lam
            e = np.zeros(col.n + 1)
            e[-1] = 1.0
            ref = e
        else:
            ref = prev
        A = sp.vstack([Jf, sp.csr_matrix(ref * W)]).tocsc()
        rhs = np.zeros(col.n + 1)
        rhs[-1] = 1.0
        tau = splu(A).solve(rhs)
        tau /= math.sqrt(float(np.sum(W * tau * tau)))
        return tau

    cause = "budget"
    for _ in range(steps):
        tau = tangent(y, tau_prev)
        if tau_prev is None:
            u_now, _v = col.split(y[:-1])
            tu, _tv = col.split(tau[:-1])
            grow = float(np.sum(u_now * tu))
            if grow * direction < 0:
                tau = -tau
        elif float(np.sum(W * tau * tau_prev)) < 0:
            tau = -tau
        accepted = False
        for _half in range(6):
            z = y + h_step * tau
            ok = False
            for _it in range(max_newton):
                r = col.residual(z[:-1], z[-1])
                d = z - y
                c = float(np.sum(W * d * d)) - h_step**2
                if _res_norm(r) < tol and abs(c) < 1e-12 * max(h_step**2, 1e-300):
                    ok = True
                    break
                J, dl = col.jacobian(z[:-1], z[-1])
                A = sp.vstack([sp.hstack([J, dl[:, None]]), sp.csr_matrix(2 * W * d)]).tocsc()
                try:
                    dz = splu(A).solve(-np.concatenate([r, [c]]))
                except RuntimeError:
                    break
                z = z + dz
                if not np.all(np.isfinite(z)):
                    break
            if ok and float(np.sum(W * (z - y) * tau)) > 0:
                accepted = True
                break
            h_step *= 0.5
        if not accepted:
            cause = "stall"
            break
        tau_prev = tau
        y = z
        s_acc += h_step
        u, v = col.split(y[:-1])
        pt = BranchPoint(float(y[-1]), col.t, u, v, _res_norm(col.residual(y[:-1], y[-1])), s_acc)
        out.append(pt)
        if pt.amplitude > amplitude_cap:
            cause = "unbounded-proxy"
            break
        if pt.lam > -boundary_tol:
            cause = "boundary"
            break
    out.termination = cause
    return out


def amplitude_law(points: Sequence[BranchPoint], lam0: float) -> tuple[float, float]:
    """Least-squares fit amplitude^2 = c (lam - lam_star); returns (c, lam_star)."""
    lam = np.array([p.lam for p in points])
    amp2 = np.array([p.amplitude**2 for p in points])
    A = np.stack([lam, np.ones_like(lam)], axis=1)
    (c, b), *_ = np.linalg.lstsq(A, amp2, rcond=None)
    return float(c), float(-b / c) if c != 0 else float("nan")


def decay_rate(pt: BranchPoint, window=(0.3, 0.8)) -> tuple[float, float]:
    """Exponential decay rates of |x(t)| on the left and right tails."""
    t, r = pt.t, np.hypot(pt.u, pt.v)
    T = t[-1]
    rates = []
    for sgn in (-1, 1):
        sel = (sgn * t >= window[0] * T) & (sgn * t <= window[1] * T) & (r > 0)
        slope = np.polyfit(np.abs(t[sel]), np.log(r[sel]), 1)[0]
        rates.append(-float(slope))
    return rates[0], rates[1]


# -- verification -------------------------------------------------------------------

def shooting_check(spec: HamiltonianSpec, pt: BranchPoint, segment: float = 1.0,
                   rtol: float = 1e-12) -> float:
    """Max mismatch between the collocation trajectory and DOP853 integrations
    restarted from it every ``segment`` time units.

    A single shot across [-T, T] amplifies any error by exp(sqrt|lam| 2T), so
    the check restarts from the collocation values at each checkpoint.
    """
    t = pt.t
    h = t[1] - t[0]
    stride = max(1, int(round(segment / h)))
    marks = list(range(0, len(t) - 1, stride)) + [len(t) - 1]
    sp_ = spec.at(pt.lam)

    def f(tt, x):
        du, dv = sp_.rhs(np.array(tt), np.array(x[0]), np.array(x[1]))
        return [float(du), float(dv)]

    worst = 0.0
    for i0, i1 in zip(marks[:-1], marks[1:]):
        sol = solve_ivp(f, (t[i0], t[i1]), [pt.u[i0], pt.v[i0]], method="DOP853",
                        rtol=rtol, atol=1e-14, t_eval=t[i0:i1 + 1])
        if not sol.success:
            raise SolverError(f"shooting integration failed: {sol.message}")
        worst = max(worst, float(np.max(np.abs(sol.y[0] - pt.u[i0:i1 + 1]))),
                    float(np.max(np.abs(sol.y[1] - pt.v[i0:i1 + 1]))))
    return worst


# -- parity -----------------------------------------------------------------------

@dataclass
class ParityReport:
    kernel_dim: int
    parity: int
    small_eigenvalues: np.ndarray
    scale: float
    transversality: float


def _staggered_operator(a_vals: np.ndarray, lam: float, h: float) -> sp.csc_matrix:
    """Symmetric discretization of x -> J x' - diag(lam + a, 1) x with u on nodes
    (Dirichlet ends) and v on cell midpoints; eliminating v gives the operator
    used for lam0."""
    nu = len(a_vals) - 2
    M = nu + 1
    D = sp.diags([-np.ones(M), np.ones(M)], [0, 1], shape=(M, M + 1)).tocsc()[:, 1:-1] / h
    A = -sp.diags(lam + a_vals[1:-1])
    return sp.bmat([[A, D.T], [D, -sp.identity(M)]], format="csc")


def parity_report(spec: HamiltonianSpec, lam: float, T: float = 20.0, M: int = 2048,
                  channels: int = 1, rel_tol: float = 1e-6) -> ParityReport:
    t = _tgrid(T, M)
    h = t[1] - t[0]
    a_vals = np.asarray(spec.a(t), dtype=float) * np.ones_like(t)
    L1 = _staggered_operator(a_vals, lam, h)
    L = sp.block_diag([L1] * channels, format="csc")
    scale = float(abs(L).sum(axis=1).max())
    k_req = min(6 * channels, L.shape[0] - 2)
    try:
        vals, vecs = eigsh(L, k=k_req, sigma=0.0, which="LM")
    except RuntimeError:
        vals, vecs = eigsh(L, k=k_req, sigma=1e-9 * scale, which="LM")
    small = np.abs(vals) <= rel_tol * scale
    k = int(np.sum(small))
    trans = float("inf")
    if k:
        nu = M - 1
        block = L1.shape[0]
        kern = vecs[:, small]
        # pairing with d/dlam of the linearization, diag(1, 0): int u_i u_j
        U = np.concatenate([kern[c * block: c * block + nu] for c in range(channels)], axis=0)
        G = h * U.T @ U
        trans = float(np.min(np.linalg.svd(G, compute_uv=False)))
        if trans < 1e-8:
            raise DegenerateError("degenerate crossing: kernel pairing vanishes", pairing=trans)
    return ParityReport(k, (-1) ** k, np.sort(vals[np.argsort(np.abs(vals))][:max(k, 1)]), scale, trans)


def parity_at(spec: HamiltonianSpec, lam0: float, **kw) -> int:
    return parity_report(spec, lam0, **kw).parity
