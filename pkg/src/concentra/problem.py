"""Coefficient fields and the NLS problem description."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DomainError, ValidationError
from .expr import spatial


class ScalarField:
    """A scalar coefficient x -> V(x) evaluated on arrays of shape (..., dim).

    Derivatives come from the optional analytic callables or from fourth-order
    central differences with step ``fd_step``.
    """

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray], dim: int, *,
                 constant: float | None = None, source: str | None = None,
                 grad: Callable | None = None, fd_step: float = 1e-3):
        self._fn = fn
        self.dim = dim
        self.constant = constant
        self.source = source
        self._grad = grad
        self.fd_step = fd_step

    @classmethod
    def const(cls, value: float, dim: int) -> "ScalarField":
        v = float(value)
        return cls(lambda x: np.full(np.shape(x)[:-1], v), dim, constant=v,
                   source=repr(v), grad=lambda x: np.zeros(np.shape(x)))

    @classmethod
    def parse(cls, spec, dim: int, field: str | None = None) -> "ScalarField":
        if isinstance(spec, ScalarField):
            return spec
        if isinstance(spec, (int, float)):
            return cls.const(spec, dim)
        if callable(spec):
            return cls(spec, dim)
        text = str(spec).strip()
        try:
            return cls.const(float(text), dim)
        except ValueError:
            pass
        return cls(spatial(text, dim, field), dim, source=text)

    @property
    def is_constant(self) -> bool:
        return self.constant is not None

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.dim == 1 and (x.ndim == 0 or x.shape[-1] != 1):
            x = x[..., None]
        return np.asarray(self._fn(x), dtype=float)

    def grad(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if self._grad is not None:
            return np.asarray(self._grad(x), dtype=float)
        h = self.fd_step
        out = np.empty(x.shape)
        for i in range(self.dim):
            e = np.zeros(self.dim)
            e[i] = h
            out[..., i] = (-self(x + 2 * e) + 8 * self(x + e)
                           - 8 * self(x - e) + self(x - 2 * e)) / (12 * h)
        return out

    def hess(self, x) -> np.ndarray:
        """Hessian at a single point by fourth-order differences of values."""
        x = np.asarray(x, dtype=float).reshape(self.dim)
        h = self.fd_step * 10
        n = self.dim
        H = np.empty((n, n))
        f0 = float(self(x))
        eye = np.eye(n) * h
        for i in range(n):
            fp2, fp1 = float(self(x + 2 * eye[i])), float(self(x + eye[i]))
            fm1, fm2 = float(self(x - eye[i])), float(self(x - 2 * eye[i]))
            H[i, i] = (-fp2 + 16 * fp1 - 30 * f0 + 16 * fm1 - fm2) / (12 * h * h)
            for j in range(i + 1, n):
                s = 0.0
                for a, b, w in ((1, 1, 1), (1, -1, -1), (-1, 1, -1), (-1, -1, 1)):
                    s += w * float(self(x + a * eye[i] + b * eye[j]))
                H[i, j] = H[j, i] = s / (4 * h * h)
        return H


class VectorField:
    """Magnetic vector potential A(x) with values of shape (..., dim)."""

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray] | None, dim: int,
                 source: str | None = None):
        self._fn = fn
        self.dim = dim
        self.source = source

    @classmethod
    def zero(cls, dim: int) -> "VectorField":
        return cls(None, dim, source="0")

    @classmethod
    def parse(cls, spec, dim: int, field: str | None = None) -> "VectorField":
        if spec is None or isinstance(spec, VectorField):
            return spec if spec is not None else cls.zero(dim)
        if callable(spec):
            return cls(spec, dim)
        if isinstance(spec, (list, tuple, np.ndarray)):
            parts = [str(s) for s in spec]
        else:
            text = str(spec).strip()
            if text in ("", "0", "0.0"):
                return cls.zero(dim)
            parts = [s for s in text.split(";")]
        if len(parts) != dim:
            raise ValidationError(f"vector potential needs {dim} components, got {len(parts)}",
                                  field=field)
        comps = [ScalarField.parse(p.strip(), dim, field) for p in parts]
        if all(c.is_constant and c.constant == 0.0 for c in comps):
            return cls.zero(dim)

        def fn(x):
            return np.stack([c(x) for c in comps], axis=-1)

        return cls(fn, dim, source=";".join(parts))

    @property
    def is_zero(self) -> bool:
        return self._fn is None

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self._fn is None:
            return np.zeros(x.shape)
        return np.asarray(self._fn(x), dtype=float)


@dataclass
class ProblemSpec:
    """-(grad/i - A(eps x))^2 u + (1 + V(eps x)) u = K(eps x) |u|^{p-1} u in R^n."""

    n: int
    p: float
    V: ScalarField = None
    K: ScalarField = None
    A: VectorField = None
    epsilon: float = 0.1
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.n not in (1, 2, 3):
            raise ValidationError("dimension must be 1, 2 or 3", field="problem.n")
        if not self.p > 1:
            raise ValidationError(f"exponent p must exceed 1, got {self.p}", field="problem.p")
        if self.n >= 3 and not self.p < (self.n + 2) / (self.n - 2):
            raise ValidationError("exponent p must be subcritical", field="problem.p")
        if not self.epsilon > 0:
            raise ValidationError("epsilon must be positive", field="problem.epsilon")
        self.V = ScalarField.parse(0.0 if self.V is None else self.V, self.n, "problem.V")
        self.K = ScalarField.parse(1.0 if self.K is None else self.K, self.n, "problem.K")
        self.A = VectorField.parse(self.A, self.n, "problem.A")

    @property
    def magnetic(self) -> bool:
        return not self.A.is_zero

    @property
    def theta(self) -> float:
        return (self.p + 1) / (self.p - 1) - self.n / 2

    def with_epsilon(self, eps: float) -> "ProblemSpec":
        return ProblemSpec(self.n, self.p, self.V, self.K, self.A, eps, dict(self.meta))

    def check_coefficients(self, slow_points: np.ndarray, where: str = "sampled box"):
        """Raise DomainError unless 1 + V > 0 and K > 0 at the given slow points."""
        pts = np.asarray(slow_points, dtype=float).reshape(-1, self.n)
        one_v = 1.0 + self.V(pts)
        if not np.all(one_v > 0):
            raise DomainError(f"1 + V must be positive on the {where}; min {one_v.min():.3g}",
                              field="problem.V")
        k = self.K(pts)
        if not np.all(k > 0):
            raise DomainError(f"K must be positive on the {where}; min {k.min():.3g}",
                              field="problem.K")

    def frozen(self, slow_point: Sequence[float]) -> tuple[float, float, np.ndarray]:
        """(V, K, A) evaluated at the slow point eps*xi."""
        x = np.asarray(slow_point, dtype=float).reshape(1, self.n)
        self.check_coefficients(x, "frozen point")
        return float(self.V(x)[0]), float(self.K(x)[0]), np.asarray(self.A(x)[0])
