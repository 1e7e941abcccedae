"""Uniform tensor meshes, Gauss-Legendre rules and basis evaluation caches."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
import numpy.typing as npt

from .bspline import evaluate_basis_array
from .exceptions import ConfigurationError
from .tensor_space import Box, DiscreteSpace

__all__ = [
    "EvalCache",
    "Mesh",
    "QuadratureRule",
    "build_mesh",
    "integrate",
    "make_quadrature",
    "tensor_product",
]

_OPS_2D = {
    "val": ((0, 0),),
    "dx": ((1, 0),),
    "dy": ((0, 1),),
    "dxx": ((2, 0),),
    "dyy": ((0, 2),),
    "dxy": ((1, 1),),
    "lap": ((2, 0), (0, 2)),
}


def tensor_product(tables: Sequence[npt.NDArray[np.float64]]) -> npt.NDArray[np.float64]:
    """Combine per-direction ``(elements, points, functions)`` tables.

    Every flattened axis of the result runs the first direction fastest.
    """
    out = tables[-1]
    for tab in reversed(tables[:-1]):
        e0, q0, a0 = out.shape
        e1, q1, a1 = tab.shape
        out = np.einsum("EQA,eqa->EeQqAa", out, tab).reshape(e0 * e1, q0 * q1, a0 * a1)
    return out


@dataclass(frozen=True, eq=False)
class Mesh:
    """Uniform tensor-product partition of a box."""

    breakpoints: tuple[npt.NDArray[np.float64], ...]

    @property
    def dim(self) -> int:
        return len(self.breakpoints)

    @property
    def n_elements(self) -> tuple[int, ...]:
        return tuple(b.size - 1 for b in self.breakpoints)

    @property
    def element_count(self) -> int:
        return int(np.prod(self.n_elements))

    @property
    def sizes(self) -> tuple[float, ...]:
        return tuple(float(b[1] - b[0]) for b in self.breakpoints)

    @property
    def h(self) -> float:
        """Element side length (largest side for non-square cells)."""
        return max(self.sizes)

    @property
    def domain(self) -> list[tuple[float, float]]:
        return [(float(b[0]), float(b[-1])) for b in self.breakpoints]

    def matches(self, space: DiscreteSpace) -> bool:
        if space.dim != self.dim:
            return False
        return all(
            kv.breakpoints.size == b.size and np.allclose(kv.breakpoints, b, rtol=0, atol=1e-14)
            for kv, b in zip(space.knot_vectors, self.breakpoints)
        )


def build_mesh(n: int | Sequence[int], domain: Box | None = None, dim: int = 2) -> Mesh:
    """Uniform mesh with ``n`` elements per direction."""
    ns = (int(n),) * dim if isinstance(n, (int, np.integer)) else tuple(int(v) for v in n)
    if any(v < 1 for v in ns):
        raise ConfigurationError("element counts must be at least 1")
    if domain is None:
        domain = [(0.0, 1.0)] * len(ns)
    return Mesh(tuple(np.linspace(a, b, v + 1) for (a, b), v in zip(domain, ns)))


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Tensor Gauss-Legendre rule mapped onto every element.

    ``points1d[d]`` and ``weights1d[d]`` have shape ``(elements_d, n)``;
    1D weights already include the affine Jacobian.
    """

    mesh: Mesh
    points_per_dir: int
    points1d: tuple[npt.NDArray[np.float64], ...]
    weights1d: tuple[npt.NDArray[np.float64], ...]

    @cached_property
    def weights(self) -> npt.NDArray[np.float64]:
        """Shape ``(elements, points)``."""
        return tensor_product([w[:, :, None] for w in self.weights1d])[:, :, 0]

    @cached_property
    def points(self) -> npt.NDArray[np.float64]:
        """Physical coordinates, shape ``(elements, points, dim)``."""
        coords = []
        for d in range(self.mesh.dim):
            tabs = [
                (x if i == d else np.ones_like(x))[:, :, None]
                for i, x in enumerate(self.points1d)
            ]
            coords.append(tensor_product(tabs)[:, :, 0])
        return np.stack(coords, axis=-1)

    def evaluate(self, func: Callable[..., npt.ArrayLike]) -> npt.NDArray[np.float64]:
        """Evaluate ``func(x, y, ...)`` at every point, shape ``(elements, points)``."""
        pts = self.points
        vals = func(*(pts[..., d] for d in range(self.mesh.dim)))
        return np.broadcast_to(np.asarray(vals, dtype=np.float64), pts.shape[:2])


def make_quadrature(mesh: Mesh, points_per_dir: int) -> QuadratureRule:
    """Gauss-Legendre rule exact for degree ``2 * points_per_dir - 1`` per direction."""
    if points_per_dir < 1:
        raise ConfigurationError("points_per_dir must be at least 1")
    xi, wi = np.polynomial.legendre.leggauss(points_per_dir)
    pts, wts = [], []
    for b in mesh.breakpoints:
        lo, hi = b[:-1, None], b[1:, None]
        half = 0.5 * (hi - lo)
        pts.append(lo + half * (xi[None, :] + 1.0))
        wts.append(half * wi[None, :])
    return QuadratureRule(mesh, points_per_dir, tuple(pts), tuple(wts))


def integrate(func: Callable[..., npt.ArrayLike], quad: QuadratureRule) -> float:
    return float(np.sum(quad.weights * quad.evaluate(func)))


class EvalCache:
    """Basis values and derivatives of a space at every quadrature point.

    Only the 1D tables are stored; tensor-product operators are built on
    first request and memoized. Arrays have shape
    ``(elements, points, local_functions)`` per scalar component.
    """

    def __init__(self, space: DiscreteSpace, quad: QuadratureRule, max_deriv: int = 2):
        if not quad.mesh.matches(space):
            raise ConfigurationError("space breakpoints do not match the quadrature mesh")
        self.space = space
        self.quad = quad
        self.max_deriv = max_deriv
        tables = []
        for kv, x, first_expected in zip(
            space.knot_vectors, quad.points1d, space.element_first_functions
        ):
            ne, nq = x.shape
            _, first, ders = evaluate_basis_array(kv, x.ravel(), max_deriv)
            first = first.reshape(ne, nq)
            if np.any(first != first_expected[:, None]):
                raise ConfigurationError("quadrature point on a knot span boundary")
            # (elements, deriv, points, functions)
            tables.append(ders.reshape(ne, nq, max_deriv + 1, -1).transpose(0, 2, 1, 3))
        self.tables = tuple(tables)
        self._memo: dict[tuple[int, ...], npt.NDArray[np.float64]] = {}

    @property
    def n_local(self) -> int:
        """Local functions per scalar component."""
        return (self.space.degree + 1) ** self.space.dim

    def derivative(self, orders: tuple[int, ...]) -> npt.NDArray[np.float64]:
        """Mixed partial derivative of the given per-direction orders."""
        if len(orders) != self.space.dim:
            raise ConfigurationError("derivative orders must match the dimension")
        if max(orders) > self.max_deriv:
            raise ConfigurationError(f"cache holds derivatives up to {self.max_deriv}")
        out = self._memo.get(orders)
        if out is None:
            out = tensor_product([tab[:, o] for tab, o in zip(self.tables, orders)])
            self._memo[orders] = out
        return out

    def op(self, name: str) -> npt.NDArray[np.float64]:
        """Named 2D operator: val, dx, dy, dxx, dyy, dxy, lap."""
        if self.space.dim == 2:
            parts = _OPS_2D[name]
        elif name == "val":
            parts = ((0,) * self.space.dim,)
        else:
            raise ConfigurationError(f"operator {name!r} is only defined in 2D")
        out = self.derivative(parts[0])
        for extra in parts[1:]:
            out = out + self.derivative(extra)
        return out

    def dofs(self, component: int = 0) -> npt.NDArray[np.int64]:
        """Global DOFs of one component, shape ``(elements, local_functions)``."""
        n = self.n_local
        return self.space.dof_map.element_dofs[:, component * n : (component + 1) * n]

    def divergence(self) -> npt.NDArray[np.float64]:
        """Divergence of a vector space, local functions component-major."""
        names = ("dx", "dy", "dz")
        return np.concatenate(
            [self.op(names[c]) for c in range(self.space.n_components)], axis=2
        )

    def field_values(
        self, coeffs: npt.ArrayLike, name: str = "val", component: int = 0
    ) -> npt.NDArray[np.float64]:
        """Evaluate a field with full-length ``coeffs``, shape ``(elements, points)``."""
        c = np.asarray(coeffs, dtype=np.float64)
        return np.einsum("eqa,ea->eq", self.op(name), c[self.dofs(component)])
