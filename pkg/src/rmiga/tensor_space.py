"""Tensor-product B-spline spaces with DOF numbering and Dirichlet masking."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
import numpy.typing as npt

from .bspline import KnotVector, evaluate_basis_array, make_open_knot_vector
from .exceptions import ConfigurationError

__all__ = [
    "DiscreteSpace",
    "DofMap",
    "check_dimension_constraint",
    "make_scalar_space",
    "make_vector_space",
]

Box = Sequence[tuple[float, float]]


def _tensor_index(shape: Sequence[int]) -> npt.NDArray[np.int64]:
    # flat index with the first direction running fastest
    return np.arange(int(np.prod(shape))).reshape(tuple(reversed(shape))).T


@dataclass(frozen=True, eq=False)
class DiscreteSpace:
    """Scalar (``n_components == 1``) or vector tensor-product spline space.

    Vector spaces repeat the same scalar factor per component and number
    their DOFs component-major.
    """

    knot_vectors: tuple[KnotVector, ...]
    degree: int
    continuity: int
    n_components: int = 1
    dirichlet: bool = False
    label: str = field(default="", compare=False)

    @property
    def dim(self) -> int:
        """Spatial dimension."""
        return len(self.knot_vectors)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(kv.dim for kv in self.knot_vectors)

    @property
    def n_elements(self) -> tuple[int, ...]:
        return tuple(kv.n_elements for kv in self.knot_vectors)

    @property
    def scalar_count(self) -> int:
        return int(np.prod(self.shape))

    @property
    def dof_count(self) -> int:
        return self.n_components * self.scalar_count

    @property
    def is_broken(self) -> bool:
        return self.continuity == -1

    @cached_property
    def dirichlet_mask(self) -> npt.NDArray[np.bool_]:
        """True for DOFs constrained to zero."""
        scalar = np.zeros(self.shape, dtype=bool)
        if self.dirichlet:
            for axis in range(self.dim):
                idx = [slice(None)] * self.dim
                idx[axis] = 0
                scalar[tuple(idx)] = True
                idx[axis] = -1
                scalar[tuple(idx)] = True
        return np.tile(scalar.ravel(order="F"), self.n_components)

    @cached_property
    def free_dofs(self) -> npt.NDArray[np.int64]:
        return np.flatnonzero(~self.dirichlet_mask)

    @property
    def free_count(self) -> int:
        return int(self.free_dofs.size)

    @cached_property
    def element_first_functions(self) -> tuple[npt.NDArray[np.int64], ...]:
        """Per direction, index of the first nonzero function on each element."""
        out = []
        for kv in self.knot_vectors:
            bp = kv.breakpoints
            mids = 0.5 * (bp[:-1] + bp[1:])
            _, first, _ = evaluate_basis_array(kv, mids, 0)
            out.append(first)
        return tuple(out)

    @cached_property
    def dof_map(self) -> DofMap:
        p = self.degree
        index = _tensor_index(self.shape)
        firsts = self.element_first_functions
        loc = np.arange(p + 1)
        # per element (first dir fastest), local functions (first dir fastest)
        ranges = [f[:, None] + loc[None, :] for f in firsts]
        grids_e = np.meshgrid(*[np.arange(len(f)) for f in firsts], indexing="ij")
        elems = [g.T.ravel() for g in grids_e]
        nloc = (p + 1) ** self.dim
        local = np.meshgrid(*[loc] * self.dim, indexing="ij")
        local = [g.T.ravel() for g in local]
        multi = tuple(ranges[d][elems[d]][:, local[d]] for d in range(self.dim))
        scalar = index[multi]
        assert scalar.shape == (len(elems[0]), nloc)
        comps = [scalar + c * self.scalar_count for c in range(self.n_components)]
        return DofMap(np.concatenate(comps, axis=1))

    def evaluate(self, point: Sequence[float], component: int = 0) -> npt.NDArray[np.float64]:
        """Values of every scalar basis function at one point (length ``scalar_count``)."""
        vals = np.ones(1)
        idx = np.zeros(1, dtype=np.int64)
        stride = 1
        for kv, x, n in zip(self.knot_vectors, point, self.shape):
            _, first, ders = evaluate_basis_array(kv, [x], 0)
            f = first[0]
            ids = np.arange(f, f + kv.degree + 1)
            v = ders[0, 0]
            keep = (ids >= 0) & (ids < n)
            vals = np.multiply.outer(v[keep], vals).ravel()
            idx = np.add.outer(ids[keep] * stride, idx).ravel()
            stride *= n
        out = np.zeros(self.scalar_count)
        out[idx] = vals
        return out

    def __repr__(self) -> str:
        kind = "scalar" if self.n_components == 1 else f"vector[{self.n_components}]"
        return (
            f"DiscreteSpace({kind}, n={self.n_elements}, p={self.degree}, "
            f"k={self.continuity}, dofs={self.dof_count}, free={self.free_count})"
        )


@dataclass(frozen=True)
class DofMap:
    """Element-to-global DOF table; rows follow element order (x fastest)."""

    element_dofs: npt.NDArray[np.int64]

    @property
    def n_elements(self) -> int:
        return self.element_dofs.shape[0]

    def __getitem__(self, element: int) -> npt.NDArray[np.int64]:
        return self.element_dofs[element]


def _as_tuple(n: int | Sequence[int], dim: int | None) -> tuple[int, ...]:
    if isinstance(n, (int, np.integer)):
        return (int(n),) * (2 if dim is None else dim)
    return tuple(int(v) for v in n)


def make_scalar_space(
    n_elements: int | Sequence[int],
    p: int,
    k: int,
    boundary: str = "none",
    domain: Box | None = None,
    dim: int | None = None,
) -> DiscreteSpace:
    """Scalar tensor-product space of degree ``p`` and continuity ``C^k``.

    ``boundary`` is ``"none"`` or ``"homogeneous_dirichlet"``. An integer
    ``n_elements`` means a square mesh in ``dim`` (default 2) dimensions.
    """
    return _make_space(n_elements, p, k, 1, boundary, domain, dim)


def make_vector_space(
    n_elements: int | Sequence[int],
    p: int,
    k: int,
    boundary: str = "none",
    domain: Box | None = None,
    dim: int | None = None,
    n_components: int | None = None,
) -> DiscreteSpace:
    """Equal-order vector space with one component per spatial direction."""
    ns = _as_tuple(n_elements, dim)
    return _make_space(ns, p, k, n_components or len(ns), boundary, domain, None)


def _make_space(n_elements, p, k, n_components, boundary, domain, dim) -> DiscreteSpace:
    ns = _as_tuple(n_elements, dim)
    if not 1 <= len(ns) <= 3:
        raise ConfigurationError("spaces are 1D, 2D or 3D")
    if boundary not in ("none", "homogeneous_dirichlet"):
        raise ConfigurationError(f"unknown boundary condition {boundary!r}")
    dirichlet = boundary == "homogeneous_dirichlet"
    if dirichlet and k < 0:
        raise ConfigurationError("Dirichlet conditions need a continuous (k >= 0) space")
    if domain is None:
        domain = [(0.0, 1.0)] * len(ns)
    if len(domain) != len(ns):
        raise ConfigurationError("domain and element counts disagree in dimension")
    kvs = tuple(make_open_knot_vector(n, p, k, iv) for n, iv in zip(ns, domain))
    return DiscreteSpace(kvs, p, k, n_components, dirichlet)


def check_dimension_constraint(trial: DiscreteSpace, test: DiscreteSpace) -> bool:
    """Whether the test space has at least as many free DOFs as the trial space."""
    return test.free_count >= trial.free_count
