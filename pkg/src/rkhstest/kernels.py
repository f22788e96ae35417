"""Covariance kernels, Gram matrices and series-feature matrices.

Kernels are immutable after construction and evaluation is pure, so the same
object can be shared freely across threads.  Every kernel knows how to

* evaluate a single pair of points (``eval``),
* build a cross Gram matrix over point sets (``gram``),

and series kernels additionally expose the scaled feature matrix whose outer
product reconstructs the Gram matrix exactly when the expansion is finite.

Points are real vectors; a sample is an ``(n, d)`` array.  Univariate kernels
(``dim == 1``) receive the selected coordinate as an ``(n,)`` array.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.integrate import quad

__all__ = [
    "Kernel",
    "ConstantKernel",
    "LinearKernel",
    "GaussianRBF",
    "PolynomialKernel",
    "SeriesKernel",
    "IntegratedBrownianKernel",
    "CompositeKernel",
    "NullAltSplit",
    "additive_kernel",
    "polynomial_weights",
    "polynomial_series",
    "linear_series",
    "eval_kernel",
    "gram_matrix",
    "feature_matrix",
    "integrated_brownian_eval",
    "normalized_section_norm",
    "kernel_from_config",
]


def _as_sample(x, dim: int | None) -> np.ndarray:
    """Coerce ``x`` to an (n, d) float array, validating the width."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        # A 1-d array is a column of scalar points for univariate kernels,
        # or a single point for multivariate ones.
        arr = arr[:, None] if dim in (None, 1) else arr[None, :]
    if arr.ndim != 2:
        raise ValueError(f"points must form an (n, d) array, got shape {arr.shape}")
    if dim is not None and arr.shape[1] != dim:
        raise ValueError(
            f"dimension mismatch: kernel expects points of length {dim}, "
            f"got {arr.shape[1]}"
        )
    return arr


def _as_point(x, dim: int | None) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    if arr.ndim != 1:
        raise ValueError(f"a point must be a vector, got shape {arr.shape}")
    if dim is not None and arr.shape[0] != dim:
        raise ValueError(
            f"dimension mismatch: kernel expects points of length {dim}, "
            f"got {arr.shape[0]}"
        )
    return arr


class Kernel:
    """Base class for positive semi-definite covariance functions."""

    #: expected point dimension, or None when any width is accepted
    dim: int | None = None

    def eval(self, s, t) -> float:
        """Evaluate C(s, t) for a single pair of points."""
        raise NotImplementedError

    def gram(self, x, z=None) -> np.ndarray:
        """Cross Gram matrix with entries C(x_i, z_j); z defaults to x."""
        raise NotImplementedError

    def __add__(self, other: "Kernel") -> "CompositeKernel":
        terms = []
        for k in (self, other):
            terms.extend(k.terms if isinstance(k, CompositeKernel) else [(k, None)])
        return CompositeKernel(tuple(terms))


@dataclass(frozen=True)
class ConstantKernel(Kernel):
    """C(s, t) = scale."""

    scale: float = 1.0
    dim: int | None = None

    def eval(self, s, t) -> float:
        return float(self.scale)

    def gram(self, x, z=None) -> np.ndarray:
        x = _as_sample(x, None)
        z = x if z is None else _as_sample(z, None)
        return np.full((x.shape[0], z.shape[0]), float(self.scale))


@dataclass(frozen=True)
class LinearKernel(Kernel):
    """C(s, t) = scale * <s, t>."""

    scale: float = 1.0
    dim: int | None = None

    def eval(self, s, t) -> float:
        s = _as_point(s, self.dim)
        t = _as_point(t, self.dim)
        if s.shape != t.shape:
            raise ValueError("dimension mismatch between points")
        return float(self.scale * np.dot(s, t))

    def gram(self, x, z=None) -> np.ndarray:
        x = _as_sample(x, self.dim)
        z = x if z is None else _as_sample(z, self.dim)
        if x.shape[1] != z.shape[1]:
            raise ValueError("dimension mismatch between point sets")
        return self.scale * (x @ z.T)


@dataclass(frozen=True)
class GaussianRBF(Kernel):
    """C(s, t) = scale * exp{-sum_j (s_j - t_j)^2 / (2 a^2)} with lengthscale a.

    The rate form exp{-r * |s - t|^2} corresponds to a = 1 / sqrt(2 r); use
    :meth:`from_rate` to convert.
    """

    lengthscale: float = 1.0
    scale: float = 1.0
    dim: int | None = None

    def __post_init__(self):
        if self.lengthscale <= 0:
            raise ValueError("lengthscale must be positive")

    @classmethod
    def from_rate(cls, rate: float, scale: float = 1.0) -> "GaussianRBF":
        return cls(lengthscale=1.0 / math.sqrt(2.0 * rate), scale=scale)

    def eval(self, s, t) -> float:
        s = _as_point(s, self.dim)
        t = _as_point(t, self.dim)
        if s.shape != t.shape:
            raise ValueError("dimension mismatch between points")
        d2 = float(np.sum((s - t) ** 2))
        return self.scale * math.exp(-0.5 * d2 / self.lengthscale**2)

    def gram(self, x, z=None) -> np.ndarray:
        x = _as_sample(x, self.dim)
        z = x if z is None else _as_sample(z, self.dim)
        if x.shape[1] != z.shape[1]:
            raise ValueError("dimension mismatch between point sets")
        d2 = (
            np.sum(x**2, axis=1)[:, None]
            + np.sum(z**2, axis=1)[None, :]
            - 2.0 * (x @ z.T)
        )
        np.clip(d2, 0.0, None, out=d2)
        return self.scale * np.exp(-0.5 * d2 / self.lengthscale**2)


@dataclass(frozen=True)
class PolynomialKernel(Kernel):
    """Closed-form polynomial kernel C(s, t) = sum_v w_v (s t)^v on scalars.

    ``weights`` is the sequence (w_1, ..., w_V); evaluation uses Horner's
    scheme on the product p = s t.
    """

    weights: tuple[float, ...]
    dim: int = 1

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if any(w <= 0 for w in self.weights):
            raise ValueError("polynomial weights must be positive")

    def _horner(self, p):
        acc = np.zeros_like(p)
        for w in reversed(self.weights):
            acc = (acc + w) * p
        return acc

    def eval(self, s, t) -> float:
        s = _as_point(s, 1)
        t = _as_point(t, 1)
        return float(self._horner(np.asarray(s[0] * t[0])))

    def gram(self, x, z=None) -> np.ndarray:
        x = _as_sample(x, 1)
        z = x if z is None else _as_sample(z, 1)
        return self._horner(x[:, 0][:, None] * z[:, 0][None, :])


@dataclass(frozen=True)
class SeriesKernel(Kernel):
    """Truncated series kernel C(s, t) = sum_v w_v phi_v(s) phi_v(t).

    ``weights`` holds the w_v = lambda_v^2 (positive, typically descending);
    ``features`` the callables phi_v acting elementwise on coordinate values.
    ``decay_exponent`` is the declared decay eta of lambda_v (metadata only;
    it cannot be verified at runtime for finite truncations).
    """

    weights: tuple[float, ...]
    features: tuple[Callable[[np.ndarray], np.ndarray], ...]
    decay_exponent: float | None = None
    dim: int = 1

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        object.__setattr__(self, "features", tuple(self.features))
        if len(self.weights) != len(self.features):
            raise ValueError("weights and features must have equal length")
        if any(w <= 0 for w in self.weights):
            raise ValueError("series weights must be positive")

    @property
    def n_terms(self) -> int:
        return len(self.weights)

    def _phi(self, values: np.ndarray, n_terms: int) -> np.ndarray:
        cols = [np.asarray(f(values), dtype=float) for f in self.features[:n_terms]]
        return np.column_stack(cols) if cols else np.empty((values.shape[0], 0))

    def feature_matrix(self, x, n_terms: int | None = None) -> np.ndarray:
        """Scaled feature matrix with entries lambda_v phi_v(x_i), (n, V)."""
        x = _as_sample(x, 1)
        v = self.n_terms if n_terms is None else int(n_terms)
        if v > self.n_terms:
            raise ValueError(
                f"requested {v} series terms but only {self.n_terms} available"
            )
        phi = self._phi(x[:, 0], v)
        return phi * np.sqrt(np.asarray(self.weights[:v]))

    def eval(self, s, t) -> float:
        s = _as_point(s, 1)
        t = _as_point(t, 1)
        w = np.asarray(self.weights)
        phis = self._phi(s, self.n_terms)[0]
        phit = self._phi(t, self.n_terms)[0]
        # phi(s)*phi(t) first keeps the evaluation symmetric bit-for-bit
        return float(np.dot(w, phis * phit))

    def gram(self, x, z=None) -> np.ndarray:
        fx = self.feature_matrix(x)
        fz = fx if z is None else self.feature_matrix(z)
        g = fx @ fz.T
        if z is None:
            g = (g + g.T) / 2.0
        return g


def polynomial_weights(n_terms: int, decay: float = 2.2) -> tuple[float, ...]:
    """Weights w_v = v^(-decay), v = 1..V."""
    return tuple(float(v) ** (-decay) for v in range(1, n_terms + 1))


def _monomial(v: int) -> Callable[[np.ndarray], np.ndarray]:
    return lambda u, _v=v: np.asarray(u, dtype=float) ** _v


def polynomial_series(n_terms: int, decay: float = 2.2) -> SeriesKernel:
    """Series form of the polynomial kernel sum_v v^(-decay) (s t)^v."""
    return SeriesKernel(
        weights=polynomial_weights(n_terms, decay),
        features=tuple(_monomial(v) for v in range(1, n_terms + 1)),
        decay_exponent=decay / 2.0,
    )


def linear_series(scale: float = 1.0) -> SeriesKernel:
    """The linear kernel C(s, t) = scale * s t as a one-term series."""
    return SeriesKernel(
        weights=(scale,), features=(_monomial(1),), decay_exponent=None
    )


def integrated_brownian_eval(order: int, s: float, t: float) -> float:
    """Covariance of V-fold integrated Brownian motion on [0, 1].

    Returns the integral over [0, 1] of G_V(s, u) G_V(t, u) with
    G_V(r, u) = (r - u)^(V-1)/(V-1)! for u <= r and 0 otherwise.  Orders 1
    and 2 use closed forms; higher orders fall back to adaptive quadrature
    with absolute tolerance 1e-10.
    """
    if order < 1:
        raise ValueError("order must be >= 1")
    s = float(s)
    t = float(t)
    for name, r in (("s", s), ("t", t)):
        if not 0.0 <= r <= 1.0:
            raise ValueError(f"{name}={r} outside the kernel domain [0, 1]")
    m = min(s, t)
    if order == 1:
        return m
    if order == 2:
        return s * t * m - (s + t) * m**2 / 2.0 + m**3 / 3.0
    if m == 0.0:
        return 0.0
    fact = math.factorial(order - 1)

    def integrand(u):
        return ((s - u) ** (order - 1) / fact) * ((t - u) ** (order - 1) / fact)

    value, _ = quad(integrand, 0.0, m, epsabs=1e-12, epsrel=1e-12)
    return value


@dataclass(frozen=True)
class IntegratedBrownianKernel(Kernel):
    """V-fold integrated Brownian motion covariance on [0, 1]."""

    order: int = 1
    dim: int = 1

    def __post_init__(self):
        if self.order < 1:
            raise ValueError("order must be >= 1")

    def eval(self, s, t) -> float:
        s = _as_point(s, 1)
        t = _as_point(t, 1)
        return integrated_brownian_eval(self.order, s[0], t[0])

    def gram(self, x, z=None) -> np.ndarray:
        x = _as_sample(x, 1)
        z = x if z is None else _as_sample(z, 1)
        u, v = x[:, 0], z[:, 0]
        if np.any(u < 0) or np.any(u > 1) or np.any(v < 0) or np.any(v > 1):
            raise ValueError("points outside the kernel domain [0, 1]")
        if self.order == 1:
            return np.minimum(u[:, None], v[None, :])
        if self.order == 2:
            m = np.minimum(u[:, None], v[None, :])
            prod = u[:, None] * v[None, :]
            tot = u[:, None] + v[None, :]
            return prod * m - tot * m**2 / 2.0 + m**3 / 3.0
        out = np.empty((u.size, v.size))
        for i, ui in enumerate(u):
            for j, vj in enumerate(v):
                out[i, j] = integrated_brownian_eval(self.order, ui, vj)
        return out


@dataclass(frozen=True)
class CompositeKernel(Kernel):
    """Sum of kernels applied to coordinate slices of the input points.

    ``terms`` is a sequence of (kernel, selector) pairs where the selector
    is a tuple of coordinate indices; ``None`` selects the full vector.
    """

    terms: tuple[tuple[Kernel, tuple[int, ...] | None], ...]

    def __post_init__(self):
        norm = []
        for kernel, sel in self.terms:
            if sel is not None:
                sel = tuple(int(i) for i in sel)
            norm.append((kernel, sel))
        object.__setattr__(self, "terms", tuple(norm))

    @property
    def dim(self) -> int | None:  # type: ignore[override]
        needed = [max(sel) + 1 for _, sel in self.terms if sel]
        return max(needed) if needed else None

    def _slice_point(self, p: np.ndarray, sel) -> np.ndarray:
        if sel is None:
            return p
        if max(sel) >= p.shape[0]:
            raise ValueError(
                f"dimension mismatch: selector {sel} needs points of length "
                f">= {max(sel) + 1}, got {p.shape[0]}"
            )
        return p[list(sel)]

    def eval(self, s, t) -> float:
        s = _as_point(s, None)
        t = _as_point(t, None)
        total = 0.0
        for kernel, sel in self.terms:
            total += kernel.eval(self._slice_point(s, sel), self._slice_point(t, sel))
        return total

    def gram(self, x, z=None) -> np.ndarray:
        x = _as_sample(x, None)
        z2 = x if z is None else _as_sample(z, None)
        total = np.zeros((x.shape[0], z2.shape[0]))
        for kernel, sel in self.terms:
            if sel is None:
                xs, zs = x, z2
            else:
                if max(sel) >= x.shape[1]:
                    raise ValueError(
                        f"dimension mismatch: selector {sel} needs {max(sel) + 1} "
                        f"coordinates, sample has {x.shape[1]}"
                    )
                xs, zs = x[:, list(sel)], z2[:, list(sel)]
            total += kernel.gram(xs, zs)
        return total


def additive_kernel(base: Kernel, n_coords: int) -> CompositeKernel:
    """Additive kernel applying ``base`` to each of the first K coordinates."""
    return CompositeKernel(tuple((base, (k,)) for k in range(n_coords)))


@dataclass(frozen=True)
class NullAltSplit:
    """Decomposition C = C_R0 + C_R1 into null and alternative kernels."""

    r0: Kernel
    r1: Kernel

    def combined(self) -> CompositeKernel:
        return self.r0 + self.r1


def eval_kernel(kernel: Kernel, s, t) -> float:
    """Evaluate C(s, t); symmetric in its point arguments."""
    return kernel.eval(s, t)


def gram_matrix(kernel: Kernel, x) -> np.ndarray:
    """Gram matrix over a point sample; raises on non-finite entries."""
    g = kernel.gram(x)
    if not np.all(np.isfinite(g)):
        raise ValueError("non-finite kernel value in Gram matrix (domain violation?)")
    return g


def feature_matrix(kernel: SeriesKernel, x, n_terms: int | None = None) -> np.ndarray:
    """Scaled series-feature matrix, entry (i, v) = lambda_v phi_v(x_i)."""
    if not isinstance(kernel, SeriesKernel):
        raise TypeError("feature_matrix requires a SeriesKernel")
    return kernel.feature_matrix(x, n_terms)


def normalized_section_norm(kernel: Kernel, z) -> float:
    """RKHS norm of h = C(., z) / sqrt(C(z, z)); equals 1 by reproduction.

    Computed through the representer formula: h has the single coefficient
    alpha = 1/sqrt(C(z, z)) on the anchor z, so |h|^2 = alpha^2 C(z, z).
    """
    czz = kernel.eval(z, z)
    if czz <= 0:
        raise ValueError("C(z, z) must be positive to normalize a section")
    alpha = 1.0 / math.sqrt(czz)
    return math.sqrt(alpha * czz * alpha)


_CONFIG_KINDS = (
    "constant",
    "linear",
    "gaussian_rbf",
    "polynomial",
    "integrated_brownian",
    "sum",
)


def kernel_from_config(spec) -> Kernel:
    """Build a kernel from a nested config mapping.

    Supported kinds: constant, linear, gaussian_rbf, polynomial,
    integrated_brownian, and sum (a list of term specs).  Any term may carry
    ``coords``, a list of coordinate indices the kernel is applied to.
    """
    if isinstance(spec, list):
        spec = {"kind": "sum", "terms": spec}
    if not isinstance(spec, dict):
        raise ValueError(f"kernel spec must be a mapping or list, got {type(spec)!r}")
    spec = dict(spec)
    kind = spec.pop("kind", None)
    if kind is None:
        raise ValueError("kernel spec is missing the 'kind' key")
    coords = spec.pop("coords", None)

    if kind == "sum":
        terms = spec.pop("terms", None)
        if spec:
            raise ValueError(f"unknown kernel config key {sorted(spec)[0]!r}")
        if not terms:
            raise ValueError("sum kernel needs a non-empty 'terms' list")
        parts = []
        for term in terms:
            built = kernel_from_config(term)
            if isinstance(built, CompositeKernel):
                parts.extend(built.terms)
            else:
                parts.append((built, None))
        kernel: Kernel = CompositeKernel(tuple(parts))
    elif kind == "constant":
        kernel = ConstantKernel(scale=float(spec.pop("scale", 1.0)))
    elif kind == "linear":
        kernel = LinearKernel(scale=float(spec.pop("scale", 1.0)))
    elif kind == "gaussian_rbf":
        kernel = GaussianRBF(
            lengthscale=float(spec.pop("lengthscale", 1.0)),
            scale=float(spec.pop("scale", 1.0)),
        )
    elif kind == "polynomial":
        if "weights" in spec:
            weights = tuple(float(w) for w in spec.pop("weights"))
            spec.pop("degree", None)
            spec.pop("decay", None)
        else:
            degree = int(spec.pop("degree", 10))
            decay = float(spec.pop("decay", 2.2))
            weights = polynomial_weights(degree, decay)
        series = bool(spec.pop("series", True))
        if series:
            decay_exp = None
            kernel = SeriesKernel(
                weights=weights,
                features=tuple(_monomial(v) for v in range(1, len(weights) + 1)),
                decay_exponent=decay_exp,
            )
        else:
            kernel = PolynomialKernel(weights=weights)
    elif kind == "integrated_brownian":
        kernel = IntegratedBrownianKernel(order=int(spec.pop("order", 1)))
    else:
        raise ValueError(
            f"unknown kernel kind {kind!r}; expected one of {_CONFIG_KINDS}"
        )
    if spec:
        raise ValueError(f"unknown kernel config key {sorted(spec)[0]!r}")
    if coords is not None:
        kernel = CompositeKernel(((kernel, tuple(int(c) for c in coords)),))
    return kernel
