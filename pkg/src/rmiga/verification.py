"""Manufactured solutions, error norms and convergence-rate estimation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import numpy.typing as npt
import sympy

from .assembly import MixedSolution, SaddleSystem, assemble, solve
from .exceptions import ConfigurationError, ContractError
from .forms import GrammSpec, ProblemData, build_spaces, get_formulation
from .quadrature import EvalCache, Mesh, QuadratureRule, build_mesh, make_quadrature
from .tensor_space import DiscreteSpace

__all__ = [
    "ConvergenceRecord",
    "ManufacturedCase",
    "RateFit",
    "RunResult",
    "error_flux_l2",
    "error_h1_seminorm",
    "error_quadrature",
    "error_h1_reduced_flux",
    "fit_rates",
    "manufactured_case",
    "project",
    "run_single",
]

Field = Callable[..., npt.NDArray[np.float64]]

_X, _Y = sympy.symbols("x y", real=True)

_VARIANTS = {
    "default": sympy.sin(sympy.pi * _X) * sympy.sin(sympy.pi * _Y) * (2 - _X + 3 * _Y),
    "symmetric": sympy.sin(sympy.pi * _X) * sympy.sin(sympy.pi * _Y),
    "polynomial": _X * (1 - _X) * _Y * (1 - _Y),
}


@dataclass(frozen=True)
class ManufacturedCase:
    """Exact fields of a manufactured solution on the unit square.

    Vector fields return arrays stacked on the last axis.
    """

    u_expr: sympy.Expr
    u: Field
    grad_u: Field
    q: Field
    f: Field
    grad_f: Field
    data: ProblemData


def _vector(exprs: Sequence[sympy.Expr]) -> Field:
    funcs = [sympy.lambdify((_X, _Y), e, "numpy") for e in exprs]

    def evaluate(x, y):
        x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        return np.stack([np.broadcast_to(fn(x, y), x.shape) for fn in funcs], axis=-1)

    return evaluate


def _scalar(expr: sympy.Expr) -> Field:
    fn = sympy.lambdify((_X, _Y), expr, "numpy")

    def evaluate(x, y):
        x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        return np.broadcast_to(np.asarray(fn(x, y), dtype=float), x.shape)

    return evaluate


def manufactured_case(
    variant: str = "default",
    kappa: float = 1.0,
    beta: tuple[float, float] = (1.0, 1.0),
    gamma: float = 1.0,
    u: sympy.Expr | None = None,
) -> ManufacturedCase:
    """Exact solution, flux ``kappa grad u - beta u`` and matching forcing.

    ``variant`` picks ``"default"`` (``sin(pi x) sin(pi y) (2 - x + 3y)``),
    ``"symmetric"`` or ``"polynomial"``; an explicit sympy ``u`` in ``x, y``
    overrides it.
    """
    if u is None:
        try:
            u = _VARIANTS[variant]
        except KeyError:
            raise ConfigurationError(f"unknown manufactured variant {variant!r}") from None
    b1, b2 = (sympy.nsimplify(b) for b in beta)
    k, g = sympy.nsimplify(kappa), sympy.nsimplify(gamma)
    ux, uy = sympy.diff(u, _X), sympy.diff(u, _Y)
    q = (k * ux - b1 * u, k * uy - b2 * u)
    f = -(sympy.diff(q[0], _X) + sympy.diff(q[1], _Y)) + g * u
    f_fn = _scalar(f)
    data = ProblemData(kappa=kappa, beta=beta, gamma=gamma, f=f_fn)
    return ManufacturedCase(
        u_expr=u,
        u=_scalar(u),
        grad_u=_vector([ux, uy]),
        q=_vector(q),
        f=f_fn,
        grad_f=_vector([sympy.diff(f, _X), sympy.diff(f, _Y)]),
        data=data,
    )


def error_quadrature(mesh: Mesh, degree: int) -> QuadratureRule:
    """Rule with ``degree + 2`` points per direction used for error norms."""
    return make_quadrature(mesh, degree + 2)


def _cache(space: DiscreteSpace, quad: QuadratureRule) -> EvalCache:
    return EvalCache(space, quad, max_deriv=2)


def error_h1_seminorm(
    coeffs: npt.ArrayLike,
    space: DiscreteSpace,
    case: ManufacturedCase,
    quadrature: QuadratureRule,
) -> float:
    """``|u - u_h|_1`` for full-length scalar coefficients ``coeffs``."""
    cache = _cache(space, quadrature)
    exact = quadrature.evaluate(lambda x, y: case.grad_u(x, y)[..., 0]), quadrature.evaluate(
        lambda x, y: case.grad_u(x, y)[..., 1]
    )
    ex = cache.field_values(coeffs, "dx") - exact[0]
    ey = cache.field_values(coeffs, "dy") - exact[1]
    return math.sqrt(float(np.sum(quadrature.weights * (ex**2 + ey**2))))


def error_flux_l2(
    coeffs: npt.ArrayLike | None,
    space: DiscreteSpace | None,
    case: ManufacturedCase,
    quadrature: QuadratureRule,
) -> float:
    """``||q - q_h||_0`` for full-length vector coefficients (component-major)."""
    if coeffs is None or space is None:
        raise ContractError("flux error needs a flux field; primal formulations have none")
    if space.n_components != 2:
        raise ContractError("flux space must be a 2-component vector space")
    cache = _cache(space, quadrature)
    total = np.zeros_like(quadrature.weights)
    for c in range(2):
        exact = quadrature.evaluate(lambda x, y: case.q(x, y)[..., c])
        total += (cache.field_values(coeffs, "val", c) - exact) ** 2
    return math.sqrt(float(np.sum(quadrature.weights * total)))


def error_h1_reduced_flux(
    coeffs: npt.ArrayLike,
    space: DiscreteSpace,
    case: ManufacturedCase,
    quadrature: QuadratureRule,
) -> float:
    """H1-seminorm error of ``u_h = (f + div q_h) / gamma`` recovered from a flux."""
    gamma = case.data.gamma
    cache = _cache(space, quadrature)
    # grad(div q) = (q0_xx + q1_xy, q0_xy + q1_yy)
    gdx = cache.field_values(coeffs, "dxx", 0) + cache.field_values(coeffs, "dxy", 1)
    gdy = cache.field_values(coeffs, "dxy", 0) + cache.field_values(coeffs, "dyy", 1)
    ex = (quadrature.evaluate(lambda x, y: case.grad_f(x, y)[..., 0]) + gdx) / gamma
    ey = (quadrature.evaluate(lambda x, y: case.grad_f(x, y)[..., 1]) + gdy) / gamma
    ex -= quadrature.evaluate(lambda x, y: case.grad_u(x, y)[..., 0])
    ey -= quadrature.evaluate(lambda x, y: case.grad_u(x, y)[..., 1])
    return math.sqrt(float(np.sum(quadrature.weights * (ex**2 + ey**2))))


def project(
    func: Callable[..., npt.ArrayLike],
    space: DiscreteSpace,
    mesh: Mesh,
    component_funcs: Sequence[Callable[..., npt.ArrayLike]] | None = None,
) -> npt.NDArray[np.float64]:
    """L2 projection onto the free DOFs of ``space``; returns full-length coefficients.

    Vector spaces take one callable per component in ``component_funcs``.
    """
    import scipy.sparse as sp
    import scipy.sparse.linalg as spla

    quad = make_quadrature(mesh, space.degree + 2)
    cache = _cache(space, quad)
    funcs = list(component_funcs) if component_funcs is not None else [func]
    val = cache.op("val")
    w = quad.weights
    mass = np.einsum("eq,eqa,eqb->eab", w, val, val)
    rows, cols, vals, rhs = [], [], [], np.zeros(space.dof_count)
    for c in range(space.n_components):
        d = cache.dofs(c)
        rows.append(np.broadcast_to(d[:, :, None], mass.shape).ravel())
        cols.append(np.broadcast_to(d[:, None, :], mass.shape).ravel())
        vals.append(mass.ravel())
        fv = quad.evaluate(funcs[c])
        np.add.at(rhs, d.ravel(), np.einsum("eq,eqa->ea", w * fv, val).ravel())
    M = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(space.dof_count,) * 2,
    ).tocsr()
    free = space.free_dofs
    out = np.zeros(space.dof_count)
    if free.size:
        out[free] = spla.spsolve(M[free][:, free].tocsc(), rhs[free])
    return out


# --- convergence ------------------------------------------------------------


@dataclass
class ConvergenceRecord:
    """Errors of one error kind on a sequence of meshes."""

    h: list[float]
    errors: list[float]

    def __post_init__(self) -> None:
        if len(self.h) != len(self.errors):
            raise ConfigurationError("h and errors differ in length")
        if any(e <= 0 or not math.isfinite(e) for e in self.errors):
            raise ConfigurationError("errors must be positive and finite")
        if any(b >= a for a, b in zip(self.h, self.h[1:])):
            raise ConfigurationError("h must be strictly decreasing")


@dataclass(frozen=True)
class RateFit:
    pairwise: list[float]
    slope: float
    constants: list[float] = field(default_factory=list)

    @property
    def final(self) -> float:
        """Rate of the finest mesh pair."""
        return self.pairwise[-1]


def fit_rates(record: ConvergenceRecord) -> RateFit:
    """Pairwise log-ratio rates, least-squares slope and constants ``e / h^slope``."""
    if len(record.h) < 2:
        raise ConfigurationError("need at least two mesh levels")
    h = np.asarray(record.h, dtype=float)
    e = np.asarray(record.errors, dtype=float)
    pairwise = (np.log2(e[:-1] / e[1:]) / np.log2(h[:-1] / h[1:])).tolist()
    slope = float(np.polyfit(np.log(h), np.log(e), 1)[0])
    return RateFit(pairwise, slope, (e / h**slope).tolist())


@dataclass
class RunResult:
    """One solve of the manufactured problem on one mesh."""

    formulation: int
    p: int
    k: int
    q: int
    l: tuple[int, ...]
    n: int
    h: float
    dofs_trial: int
    dofs_test: int
    err_h1: float
    err_flux: float | None
    residual_gnorm: float
    solution: MixedSolution | None = field(default=None, repr=False)
    system: SaddleSystem | None = field(default=None, repr=False)


def run_single(
    formulation: int,
    p: int,
    n: int,
    k: int | None = None,
    q: int | None = None,
    l: int | None = None,
    gramm: GrammSpec | None = None,
    case: ManufacturedCase | None = None,
    solver: str = "auto",
    reduced_flux: bool = False,
    keep: bool = False,
) -> RunResult:
    """Assemble, solve and measure errors for one configuration."""
    spec = get_formulation(formulation)
    case = case or manufactured_case()
    gramm = gramm or GrammSpec()
    mesh = build_mesh(n)
    trial, test = build_spaces(spec, n, p, k, q, l, reduced_flux)
    system = assemble(spec, trial, test, gramm, mesh, case.data)
    sol = solve(system, solver)
    equad = error_quadrature(mesh, max(s.degree for s in trial.values()))
    err_flux = None
    if "q" in trial:
        err_flux = error_flux_l2(sol.field("q"), trial["q"], case, equad)
    if "u" in trial:
        err_h1 = error_h1_seminorm(sol.field("u"), trial["u"], case, equad)
    else:
        err_h1 = error_h1_reduced_flux(sol.field("q"), trial["q"], case, equad)
    first_test = next(iter(test.values()))
    first_trial = next(iter(trial.values()))
    return RunResult(
        formulation=spec.id,
        p=p,
        k=first_trial.continuity,
        q=first_test.degree,
        l=tuple(s.continuity for s in test.values()),
        n=n,
        h=mesh.h,
        dofs_trial=system.trial.free_size,
        dofs_test=system.test.free_size,
        err_h1=err_h1,
        err_flux=err_flux,
        residual_gnorm=sol.residual_norm,
        solution=sol if keep else None,
        system=system if keep else None,
    )
