"""One-dimensional B-spline kernel.

Knot vectors, span-local Cox-de Boor evaluation with derivatives, and
continuity control through interior knot multiplicity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

from .exceptions import ConfigurationError, DomainError

__all__ = [
    "BasisEval",
    "KnotVector",
    "continuity_at_breakpoint",
    "evaluate_basis",
    "evaluate_basis_array",
    "make_open_knot_vector",
]


@dataclass(frozen=True, eq=False)
class KnotVector:
    """Nondecreasing knot sequence of a degree-``degree`` B-spline basis."""

    knots: npt.NDArray[np.float64]
    degree: int

    def __post_init__(self) -> None:
        knots = np.asarray(self.knots, dtype=np.float64)
        if knots.ndim != 1:
            raise ConfigurationError("knots must be one-dimensional")
        if self.degree < 0:
            raise ConfigurationError("degree must be nonnegative")
        if knots.size < self.degree + 2:
            raise ConfigurationError("need at least degree + 2 knots")
        if np.any(np.diff(knots) < 0.0):
            raise ConfigurationError("knots must be nondecreasing")
        if knots[0] == knots[-1]:
            raise ConfigurationError("knot vector spans an empty interval")
        _, counts = np.unique(knots, return_counts=True)
        if counts.max() > self.degree + 1:
            raise ConfigurationError(
                f"knot multiplicity {counts.max()} exceeds degree + 1 = {self.degree + 1}"
            )
        knots.setflags(write=False)
        object.__setattr__(self, "knots", knots)

    @property
    def dim(self) -> int:
        """Number of basis functions."""
        return self.knots.size - self.degree - 1

    @property
    def interval(self) -> tuple[float, float]:
        return float(self.knots[0]), float(self.knots[-1])

    @property
    def breakpoints(self) -> npt.NDArray[np.float64]:
        return np.unique(self.knots)

    @property
    def multiplicities(self) -> npt.NDArray[np.int64]:
        return np.unique(self.knots, return_counts=True)[1]

    @property
    def n_elements(self) -> int:
        return self.breakpoints.size - 1

    @property
    def is_open(self) -> bool:
        m = self.multiplicities
        return bool(m[0] == self.degree + 1 and m[-1] == self.degree + 1)

    def __repr__(self) -> str:
        return f"KnotVector(degree={self.degree}, knots={self.knots.tolist()})"


@dataclass(frozen=True)
class BasisEval:
    """Nonzero basis functions at one point.

    ``first`` is the global index of the function stored in ``values[0]``.
    For open knot vectors all ``p + 1`` indices lie in ``[0, dim)``; for
    unclamped vectors, indices outside that range belong to no function and
    are padding.
    """

    span_index: int
    first: int
    derivatives: npt.NDArray[np.float64]  # (max_deriv + 1, p + 1); row 0 = values

    @property
    def values(self) -> npt.NDArray[np.float64]:
        return self.derivatives[0]

    @property
    def indices(self) -> npt.NDArray[np.int64]:
        return np.arange(self.first, self.first + self.derivatives.shape[1])

    def value_of(self, j: int, deriv: int = 0) -> float:
        """Value (or derivative) of global function ``j``; zero off-support."""
        local = j - self.first
        if 0 <= local < self.derivatives.shape[1]:
            return float(self.derivatives[deriv, local])
        return 0.0


def make_open_knot_vector(
    n_elements: int,
    degree: int,
    continuity: int,
    interval: tuple[float, float] = (0.0, 1.0),
) -> KnotVector:
    """Uniform open knot vector giving a ``C^continuity`` spline space.

    Interior breakpoints are repeated ``degree - continuity`` times, the two
    boundary knots ``degree + 1`` times.
    """
    a, b = float(interval[0]), float(interval[1])
    if n_elements < 1:
        raise ConfigurationError("n_elements must be at least 1")
    if degree < 0:
        raise ConfigurationError("degree must be nonnegative")
    if not -1 <= continuity <= degree - 1:
        raise ConfigurationError(
            f"continuity {continuity} outside [-1, {degree - 1}] for degree {degree}"
        )
    if not b > a:
        raise ConfigurationError("interval must satisfy b > a")
    breaks = np.linspace(a, b, n_elements + 1)
    mult = degree - continuity
    knots = np.concatenate(
        [np.full(degree + 1, a), np.repeat(breaks[1:-1], mult), np.full(degree + 1, b)]
    )
    return KnotVector(knots, degree)


def _padded(kv: KnotVector) -> npt.NDArray[np.float64]:
    # p extra copies at each end leave every original function unchanged
    # (function j only sees knots j..j+p+1) and make every span clamped-like.
    p = kv.degree
    t = kv.knots
    return np.concatenate([np.full(p, t[0]), t, np.full(p, t[-1])])


def _find_spans(t: npt.NDArray[np.float64], x: npt.NDArray[np.float64]) -> npt.NDArray[np.int64]:
    # right-limit convention, except at the right end of the domain
    spans = np.searchsorted(t, x, side="right") - 1
    last = np.searchsorted(t, t[-1], side="left") - 1
    return np.minimum(spans, last)


def _ders_basis(
    t: npt.NDArray[np.float64],
    p: int,
    spans: npt.NDArray[np.int64],
    x: npt.NDArray[np.float64],
    n: int,
) -> npt.NDArray[np.float64]:
    """Span-local triangle for values and derivatives, vectorized over points.

    Returns an array of shape ``(n + 1, p + 1, len(x))``.
    """
    m = x.size
    ndu = np.zeros((p + 1, p + 1, m))
    ndu[0, 0] = 1.0
    left = np.zeros((p + 1, m))
    right = np.zeros((p + 1, m))
    for j in range(1, p + 1):
        left[j] = x - t[spans + 1 - j]
        right[j] = t[spans + j] - x
        saved = np.zeros(m)
        for r in range(j):
            ndu[j, r] = right[r + 1] + left[j - r]
            temp = ndu[r, j - 1] / ndu[j, r]
            ndu[r, j] = saved + right[r + 1] * temp
            saved = left[j - r] * temp
        ndu[j, j] = saved

    ders = np.zeros((n + 1, p + 1, m))
    ders[0] = ndu[:, p]
    nd = min(n, p)
    a = np.zeros((2, p + 1, m))
    for r in range(p + 1):
        s1, s2 = 0, 1
        a[:] = 0.0
        a[0, 0] = 1.0
        for k in range(1, nd + 1):
            d = np.zeros(m)
            rk = r - k
            pk = p - k
            if r >= k:
                a[s2, 0] = a[s1, 0] / ndu[pk + 1, rk]
                d += a[s2, 0] * ndu[rk, pk]
            j1 = 1 if rk >= -1 else -rk
            j2 = k - 1 if r - 1 <= pk else p - r
            for j in range(j1, j2 + 1):
                a[s2, j] = (a[s1, j] - a[s1, j - 1]) / ndu[pk + 1, rk + j]
                d += a[s2, j] * ndu[rk + j, pk]
            if r <= pk:
                a[s2, k] = -a[s1, k - 1] / ndu[pk + 1, r]
                d += a[s2, k] * ndu[r, pk]
            ders[k, r] = d
            s1, s2 = s2, s1
    factor = float(p)
    for k in range(1, nd + 1):
        ders[k] *= factor
        factor *= p - k
    return ders


def evaluate_basis_array(
    kv: KnotVector, x: npt.ArrayLike, max_deriv: int = 0
) -> tuple[npt.NDArray[np.int64], npt.NDArray[np.int64], npt.NDArray[np.float64]]:
    """Evaluate the nonzero basis functions at many points.

    Returns ``(spans, first, ders)`` with ``ders`` of shape
    ``(len(x), max_deriv + 1, p + 1)``. ``spans`` index the original knot
    vector; ``first[i]`` is the global index of ``ders[i, :, 0]``.
    """
    if max_deriv < 0:
        raise ConfigurationError("max_deriv must be nonnegative")
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    a, b = kv.interval
    if np.any(x < a) or np.any(x > b) or np.any(~np.isfinite(x)):
        raise DomainError(f"evaluation point outside [{a}, {b}]")
    p = kv.degree
    t = _padded(kv)
    spans = _find_spans(t, x)
    ders = _ders_basis(t, p, spans, x, max_deriv)
    return spans - p, spans - 2 * p, np.ascontiguousarray(ders.transpose(2, 0, 1))


def evaluate_basis(kv: KnotVector, x: float, max_deriv: int = 0) -> BasisEval:
    """Nonzero basis functions (and derivatives up to ``max_deriv``) at ``x``."""
    spans, first, ders = evaluate_basis_array(kv, [x], max_deriv)
    return BasisEval(int(spans[0]), int(first[0]), ders[0])


def continuity_at_breakpoint(kv: KnotVector, breakpoint_index: int) -> int:
    """Continuity order ``p - multiplicity`` across an interior breakpoint."""
    mult = kv.multiplicities
    if not 0 < breakpoint_index < mult.size - 1:
        raise ConfigurationError(
            f"breakpoint {breakpoint_index} is not interior (valid: 1..{mult.size - 2})"
        )
    return kv.degree - int(mult[breakpoint_index])
