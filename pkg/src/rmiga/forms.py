"""Bilinear and linear forms of the seven residual-minimization formulations.

Every form is written as a list of scalar terms. A term multiplies one
differential operator of a test field component with one operator of a
trial field component (or with the forcing, for linear forms), weighted by
a constant, and is integrated element by element with the quadrature of the
evaluation caches. Vector fields enter component-wise, so a divergence is a
sum of two terms.

Formulation ids:

1. primal trivial (strong residual, L2 test space)
2. primal classical (Galerkin-type weak form)
3. mixed trivial (first-order system, L2 test spaces)
4. mixed classical I (integration by parts moved onto the flux test)
5. mixed classical II (integration by parts moved onto the scalar test)
6. mixed ultraweak
7. reduced flux (scalar eliminated, flux unknown only)
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, NamedTuple, Sequence

import numpy as np
import numpy.typing as npt

from .exceptions import ConfigurationError
from .quadrature import EvalCache
from .tensor_space import DiscreteSpace, make_scalar_space, make_vector_space

__all__ = [
    "FORMULATIONS",
    "FormulationSpec",
    "GrammSpec",
    "LinearTerm",
    "ProblemData",
    "Term",
    "b_terms",
    "build_spaces",
    "element_b",
    "element_g",
    "element_l",
    "g_terms",
    "get_formulation",
    "l_terms",
    "local_matrix_blocks",
    "local_vector_blocks",
    "validate_formulation",
]

Caches = Mapping[str, EvalCache]


@dataclass(frozen=True)
class ProblemData:
    """Constant coefficients and forcing of the advection-diffusion-reaction problem."""

    kappa: float = 1.0
    beta: tuple[float, float] = (1.0, 1.0)
    gamma: float = 1.0
    f: Callable[..., npt.ArrayLike] | None = None

    def __post_init__(self) -> None:
        if not self.kappa > 0:
            raise ConfigurationError("diffusion coefficient must be positive")
        if self.gamma < 0:
            raise ConfigurationError("reaction coefficient must be nonnegative")
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))


@dataclass(frozen=True)
class GrammSpec:
    """Parameters of the residual-minimization inner product.

    Scalar-field (primal) product: ``tau0 (v,w) + tau1 h^iota1 (grad v, grad w)
    + tau2 h^iota2 (lap v, lap w)``. Mixed product: ``tau3 (v,w) + tau4 h^iota3
    (grad v, grad w) + tau5 (r,p) + tau6 h^iota4 (div r, div p)``. All sums
    are element-local.
    """

    tau0: float = 1.0
    tau1: float = 1.0
    tau2: float = 0.0
    iota1: float = 2.0
    iota2: float = 0.0
    tau3: float = 1.0
    tau4: float = 1.0
    tau5: float = 1.0
    tau6: float = 1.0
    iota3: float = 2.0
    iota4: float = 2.0

    def spd_by_construction(self, structure: str) -> bool:
        """Whether the parameter signs alone guarantee a positive definite G."""
        if structure == "primal":
            return self.tau0 > 0 and self.tau1 >= 0 and self.tau2 >= 0
        if structure == "mixed":
            return self.tau3 > 0 and self.tau4 >= 0 and self.tau5 > 0 and self.tau6 >= 0
        return self.tau5 > 0 and self.tau6 >= 0


class Term(NamedTuple):
    test: str
    test_comp: int
    test_op: str
    trial: str
    trial_comp: int
    trial_op: str
    coef: float


class LinearTerm(NamedTuple):
    test: str
    test_comp: int
    test_op: str
    coef: float


@dataclass(frozen=True)
class FormulationSpec:
    """Field layout and regularity requirements of one formulation.

    ``structure`` is ``"primal"`` (scalar unknown), ``"mixed"`` (scalar and
    flux) or ``"flux"`` (flux only, formulation 7). Fields map a name to its
    component count; ``min_trial_k``/``min_test_l`` give the lowest admitted
    continuity per field.
    """

    id: int
    name: str
    structure: str
    trial_fields: dict[str, int]
    test_fields: dict[str, int]
    min_trial_k: dict[str, int]
    min_test_l: dict[str, int]
    default_test_l: dict[str, int]
    test_dirichlet: frozenset[str] = frozenset()
    min_trial_p: int = 0
    requires_reaction: bool = False
    trial_derivs: dict[str, int] = field(default_factory=dict)

    @property
    def is_mixed(self) -> bool:
        return self.structure == "mixed"

    @property
    def has_flux(self) -> bool:
        return "q" in self.trial_fields


_S, _V = 1, 2

FORMULATIONS: dict[int, FormulationSpec] = {
    1: FormulationSpec(
        1, "primal trivial", "primal", {"u": _S}, {"w": _S},
        min_trial_k={"u": 1}, min_test_l={"w": -1}, default_test_l={"w": -1},
        min_trial_p=2, trial_derivs={"u": 2},
    ),
    2: FormulationSpec(
        2, "primal classical", "primal", {"u": _S}, {"w": _S},
        min_trial_k={"u": 0}, min_test_l={"w": 0}, default_test_l={"w": 0},
        test_dirichlet=frozenset({"w"}), trial_derivs={"u": 1},
    ),
    3: FormulationSpec(
        3, "mixed trivial", "mixed", {"u": _S, "q": _V}, {"w": _S, "p": _V},
        min_trial_k={"u": 0, "q": 0}, min_test_l={"w": -1, "p": -1},
        default_test_l={"w": -1, "p": -1}, trial_derivs={"u": 1, "q": 1},
    ),
    4: FormulationSpec(
        4, "mixed classical I", "mixed", {"u": _S, "q": _V}, {"w": _S, "p": _V},
        min_trial_k={"u": -1, "q": 0}, min_test_l={"w": -1, "p": 0},
        default_test_l={"w": -1, "p": 0}, trial_derivs={"u": 0, "q": 1},
    ),
    5: FormulationSpec(
        5, "mixed classical II", "mixed", {"u": _S, "q": _V}, {"w": _S, "p": _V},
        min_trial_k={"u": 0, "q": -1}, min_test_l={"w": 0, "p": -1},
        default_test_l={"w": 0, "p": -1}, test_dirichlet=frozenset({"w"}),
        trial_derivs={"u": 1, "q": 0},
    ),
    6: FormulationSpec(
        6, "mixed ultraweak", "mixed", {"u": _S, "q": _V}, {"w": _S, "p": _V},
        min_trial_k={"u": -1, "q": -1}, min_test_l={"w": 0, "p": 0},
        default_test_l={"w": 0, "p": 0}, test_dirichlet=frozenset({"w"}),
        trial_derivs={"u": 0, "q": 0},
    ),
    7: FormulationSpec(
        7, "reduced flux", "flux", {"q": _V}, {"p": _V},
        min_trial_k={"q": 0}, min_test_l={"p": 0}, default_test_l={"p": 0},
        requires_reaction=True, trial_derivs={"q": 1},
    ),
}


def get_formulation(formulation: int | FormulationSpec) -> FormulationSpec:
    if isinstance(formulation, FormulationSpec):
        return formulation
    try:
        return FORMULATIONS[int(formulation)]
    except (KeyError, ValueError):
        raise ConfigurationError(f"unknown formulation id {formulation!r} (valid: 1-7)") from None


# --- term catalog -----------------------------------------------------------

_GRAD = ("dx", "dy")


def _first_order_system(kappa: float, beta: tuple[float, float]) -> list[Term]:
    # (p, q - kappa grad u + beta u)
    out = []
    for c in range(2):
        out += [
            Term("p", c, "val", "q", c, "val", 1.0),
            Term("p", c, "val", "u", 0, _GRAD[c], -kappa),
            Term("p", c, "val", "u", 0, "val", beta[c]),
        ]
    return out


def _flux_identity_weak(kappa: float, beta: tuple[float, float]) -> list[Term]:
    # (p, q + beta u) + (div(kappa p), u)
    out = []
    for c in range(2):
        out += [
            Term("p", c, "val", "q", c, "val", 1.0),
            Term("p", c, "val", "u", 0, "val", beta[c]),
            Term("p", c, _GRAD[c], "u", 0, "val", kappa),
        ]
    return out


def _balance_strong(gamma: float) -> list[Term]:
    # (w, -div q + gamma u)
    return [
        Term("w", 0, "val", "q", 0, "dx", -1.0),
        Term("w", 0, "val", "q", 1, "dy", -1.0),
        Term("w", 0, "val", "u", 0, "val", gamma),
    ]


def _balance_weak(gamma: float) -> list[Term]:
    # (grad w, q) + (w, gamma u)
    return [
        Term("w", 0, "dx", "q", 0, "val", 1.0),
        Term("w", 0, "dy", "q", 1, "val", 1.0),
        Term("w", 0, "val", "u", 0, "val", gamma),
    ]


def b_terms(formulation: int | FormulationSpec, data: ProblemData) -> list[Term]:
    """Scalar terms of the bilinear form (constant coefficients)."""
    spec = get_formulation(formulation)
    k, (b1, b2), g = data.kappa, data.beta, data.gamma
    if spec.id == 1:
        # -div(kappa grad u - beta u) + gamma u = -kappa lap u + beta.grad u + gamma u
        return [
            Term("w", 0, "val", "u", 0, "lap", -k),
            Term("w", 0, "val", "u", 0, "dx", b1),
            Term("w", 0, "val", "u", 0, "dy", b2),
            Term("w", 0, "val", "u", 0, "val", g),
        ]
    if spec.id == 2:
        return [
            Term("w", 0, "dx", "u", 0, "dx", k),
            Term("w", 0, "dy", "u", 0, "dy", k),
            Term("w", 0, "dx", "u", 0, "val", -b1),
            Term("w", 0, "dy", "u", 0, "val", -b2),
            Term("w", 0, "val", "u", 0, "val", g),
        ]
    if spec.id == 3:
        return _balance_strong(g) + _first_order_system(k, data.beta)
    if spec.id == 4:
        return _balance_strong(g) + _flux_identity_weak(k, data.beta)
    if spec.id == 5:
        return _balance_weak(g) + _first_order_system(k, data.beta)
    if spec.id == 6:
        return _balance_weak(g) + _flux_identity_weak(k, data.beta)
    # (p, q) + (div(kappa p), div q / gamma) + (p, beta div q / gamma)
    _require_reaction(data)
    out = [Term("p", c, "val", "q", c, "val", 1.0) for c in range(2)]
    for c in range(2):
        for d in range(2):
            out.append(Term("p", c, _GRAD[c], "q", d, _GRAD[d], k / g))
            out.append(Term("p", c, "val", "q", d, _GRAD[d], data.beta[c] / g))
    return out


def l_terms(formulation: int | FormulationSpec, data: ProblemData) -> list[LinearTerm]:
    """Scalar terms of the linear form; each multiplies the forcing ``f``."""
    spec = get_formulation(formulation)
    if spec.id != 7:
        # the flux test block of the mixed forms is identically zero
        return [LinearTerm("w", 0, "val", 1.0)]
    _require_reaction(data)
    g = data.gamma
    out = []
    for c in range(2):
        out.append(LinearTerm("p", c, _GRAD[c], -data.kappa / g))
        out.append(LinearTerm("p", c, "val", -data.beta[c] / g))
    return out


def g_terms(structure: str, gramm: GrammSpec, h: float) -> list[Term]:
    """Scalar terms of the Gramm inner product on the test fields."""
    out: list[Term] = []

    def scalar(tau_m: float, tau_g: float, iota_g: float, tau_l=0.0, iota_l=0.0):
        out.append(Term("w", 0, "val", "w", 0, "val", tau_m))
        for op in _GRAD:
            out.append(Term("w", 0, op, "w", 0, op, tau_g * h**iota_g))
        if tau_l:
            out.append(Term("w", 0, "lap", "w", 0, "lap", tau_l * h**iota_l))

    def vector(tau_m: float, tau_d: float, iota_d: float):
        for c in range(2):
            out.append(Term("p", c, "val", "p", c, "val", tau_m))
        for c in range(2):
            for d in range(2):
                out.append(Term("p", c, _GRAD[c], "p", d, _GRAD[d], tau_d * h**iota_d))

    if structure == "primal":
        scalar(gramm.tau0, gramm.tau1, gramm.iota1, gramm.tau2, gramm.iota2)
    elif structure == "mixed":
        scalar(gramm.tau3, gramm.tau4, gramm.iota3)
        vector(gramm.tau5, gramm.tau6, gramm.iota4)
    elif structure == "flux":
        vector(gramm.tau5, gramm.tau6, gramm.iota4)
    else:
        raise ConfigurationError(f"unknown structure {structure!r}")
    return [t for t in out if t.coef != 0.0]


def _require_reaction(data: ProblemData) -> None:
    if not data.gamma > 0:
        raise ConfigurationError("the reduced flux formulation needs gamma > 0")


# --- element integration ----------------------------------------------------

BlockKey = tuple[str, int, str, int]


def local_matrix_blocks(
    terms: Sequence[Term],
    row_caches: Caches,
    col_caches: Caches,
    elements: npt.ArrayLike | None = None,
) -> dict[BlockKey, npt.NDArray[np.float64]]:
    """Integrate terms into per-element blocks keyed by (row field, comp, col field, comp).

    Each block has shape ``(elements, row_local, col_local)``.
    """
    sel = slice(None) if elements is None else np.asarray(elements)
    blocks: dict[BlockKey, npt.NDArray[np.float64]] = {}
    for t in terms:
        rc, cc = row_caches[t.test], col_caches[t.trial]
        w = rc.quad.weights[sel]
        a = rc.op(t.test_op)[sel]
        b = cc.op(t.trial_op)[sel]
        contrib = t.coef * np.einsum("eq,eqa,eqb->eab", w, a, b, optimize=True)
        key = (t.test, t.test_comp, t.trial, t.trial_comp)
        if key in blocks:
            blocks[key] += contrib
        else:
            blocks[key] = contrib
    return blocks


def local_vector_blocks(
    terms: Sequence[LinearTerm],
    f: Callable[..., npt.ArrayLike] | None,
    row_caches: Caches,
    elements: npt.ArrayLike | None = None,
) -> dict[tuple[str, int], npt.NDArray[np.float64]]:
    """Integrate linear terms against ``f``; blocks of shape ``(elements, row_local)``."""
    sel = slice(None) if elements is None else np.asarray(elements)
    blocks: dict[tuple[str, int], npt.NDArray[np.float64]] = {}
    if f is None:
        return blocks
    fvals: dict[int, npt.NDArray[np.float64]] = {}
    for t in terms:
        rc = row_caches[t.test]
        key_q = id(rc.quad)
        if key_q not in fvals:
            fvals[key_q] = rc.quad.evaluate(f)
        wf = (rc.quad.weights * fvals[key_q])[sel]
        contrib = t.coef * np.einsum("eq,eqa->ea", wf, rc.op(t.test_op)[sel])
        key = (t.test, t.test_comp)
        blocks[key] = blocks[key] + contrib if key in blocks else contrib
    return blocks


def _layout(fields: Mapping[str, int], caches: Caches) -> list[tuple[str, int, int]]:
    out, offset = [], 0
    for name, ncomp in fields.items():
        n = caches[name].n_local
        for c in range(ncomp):
            out.append((name, c, offset))
            offset += n
    return out


def _dense(blocks, rows, cols, row_caches, col_caches) -> npt.NDArray[np.float64]:
    nr = sum(row_caches[name].n_local for name, _, _ in rows)
    nc = sum(col_caches[name].n_local for name, _, _ in cols)
    out = np.zeros((nr, nc))
    for rname, rc, ro in rows:
        for cname, cc, co in cols:
            blk = blocks.get((rname, rc, cname, cc))
            if blk is not None:
                out[ro : ro + blk.shape[1], co : co + blk.shape[2]] = blk[0]
    return out


def element_b(
    formulation: int | FormulationSpec,
    data: ProblemData,
    element: int,
    trial_caches: Caches,
    test_caches: Caches,
) -> npt.NDArray[np.float64]:
    """Dense local matrix (test-local x trial-local) of one element.

    Rows and columns are blocked by field in formulation order, then by
    component.
    """
    spec = get_formulation(formulation)
    blocks = local_matrix_blocks(b_terms(spec, data), test_caches, trial_caches, [element])
    rows = _layout(spec.test_fields, test_caches)
    cols = _layout(spec.trial_fields, trial_caches)
    return _dense(blocks, rows, cols, test_caches, trial_caches)


def element_l(
    formulation: int | FormulationSpec,
    data: ProblemData,
    element: int,
    test_caches: Caches,
) -> npt.NDArray[np.float64]:
    spec = get_formulation(formulation)
    blocks = local_vector_blocks(l_terms(spec, data), data.f, test_caches, [element])
    rows = _layout(spec.test_fields, test_caches)
    out = np.zeros(sum(test_caches[name].n_local for name, _, _ in rows))
    for name, c, off in rows:
        blk = blocks.get((name, c))
        if blk is not None:
            out[off : off + blk.shape[1]] = blk[0]
    return out


def element_g(
    structure: str,
    gramm: GrammSpec,
    h: float,
    element: int,
    test_caches: Caches,
) -> npt.NDArray[np.float64]:
    """Dense symmetric local Gramm matrix of one element."""
    fields = {"primal": {"w": 1}, "mixed": {"w": 1, "p": 2}, "flux": {"p": 2}}[structure]
    blocks = local_matrix_blocks(g_terms(structure, gramm, h), test_caches, test_caches, [element])
    rows = _layout(fields, test_caches)
    return _dense(blocks, rows, rows, test_caches, test_caches)


# --- spaces and validation --------------------------------------------------


def build_spaces(
    formulation: int | FormulationSpec,
    n: int,
    p: int,
    k: int | None = None,
    q: int | None = None,
    l: int | None = None,
    reduced_flux: bool = False,
) -> tuple[dict[str, DiscreteSpace], dict[str, DiscreteSpace]]:
    """Default trial and test spaces on an ``n x n`` unit-square mesh.

    Trial fields use degree ``p`` and continuity ``k`` (default ``p - 1``);
    the trial scalar carries homogeneous Dirichlet conditions whenever it is
    continuous. Test fields use degree ``q`` (default ``p``) and continuity
    ``l`` (default: broken where the formulation admits an L2 test space,
    ``C^0`` otherwise). ``reduced_flux`` lowers the trial flux to degree
    ``p - 1`` and continuity ``k - 1``.
    """
    spec = get_formulation(formulation)
    k = p - 1 if k is None else k
    q = p if q is None else q
    trial: dict[str, DiscreteSpace] = {}
    test: dict[str, DiscreteSpace] = {}
    if "u" in spec.trial_fields:
        bc = "homogeneous_dirichlet" if k >= 0 else "none"
        trial["u"] = make_scalar_space(n, p, k, bc)
    if "q" in spec.trial_fields:
        if reduced_flux:
            if p < 1 or k < 0:
                raise ConfigurationError("reduced flux needs p >= 1 and k >= 0")
            trial["q"] = make_vector_space(n, p - 1, k - 1)
        else:
            trial["q"] = make_vector_space(n, p, k)
    for name, ncomp in spec.test_fields.items():
        lf = spec.default_test_l[name] if l is None else l
        if ncomp == 1:
            bc = "homogeneous_dirichlet" if name in spec.test_dirichlet and lf >= 0 else "none"
            test[name] = make_scalar_space(n, q, lf, bc)
        else:
            test[name] = make_vector_space(n, q, lf)
    return trial, test


_PAIRS = {"u": "w", "q": "p"}


def validate_formulation(
    formulation: int | FormulationSpec,
    trial_spaces: Mapping[str, DiscreteSpace],
    test_spaces: Mapping[str, DiscreteSpace],
    data: ProblemData | None = None,
) -> list[str]:
    """Regularity, boundary-condition and dimension violations; empty when valid."""
    spec = get_formulation(formulation)
    out: list[str] = []
    for name in spec.trial_fields:
        if name not in trial_spaces:
            out.append(f"missing trial space for field {name!r}")
    for name in spec.test_fields:
        if name not in test_spaces:
            out.append(f"missing test space for field {name!r}")
    if out:
        return out
    for name, space in trial_spaces.items():
        need = spec.min_trial_k[name]
        if space.continuity < need:
            out.append(
                f"formulation {spec.id}: trial {name} needs continuity >= C^{need}, "
                f"got C^{space.continuity}"
            )
        if spec.trial_derivs.get(name, 0) > space.degree:
            out.append(f"formulation {spec.id}: trial {name} degree {space.degree} too low")
    if spec.min_trial_p and trial_spaces["u"].degree < spec.min_trial_p:
        out.append(f"formulation {spec.id}: trial u needs degree >= {spec.min_trial_p}")
    for name, space in test_spaces.items():
        need = spec.min_test_l[name]
        if space.continuity < need:
            out.append(
                f"formulation {spec.id}: test {name} needs continuity >= C^{need}, "
                f"got C^{space.continuity}"
            )
        if name in spec.test_dirichlet and space.continuity >= 0 and not space.dirichlet:
            out.append(f"formulation {spec.id}: test {name} must vanish on the boundary")
    for trial_name, test_name in _PAIRS.items():
        if trial_name in trial_spaces and test_name in test_spaces:
            tr, te = trial_spaces[trial_name], test_spaces[test_name]
            if te.free_count < tr.free_count:
                out.append(
                    f"formulation {spec.id}: dim test {test_name} ({te.free_count}) < "
                    f"dim trial {trial_name} ({tr.free_count})"
                )
    meshes = {s.n_elements for s in [*trial_spaces.values(), *test_spaces.values()]}
    if len(meshes) > 1:
        out.append("trial and test spaces live on different meshes")
    if data is not None and spec.requires_reaction and not data.gamma > 0:
        out.append(f"formulation {spec.id}: needs gamma > 0")
    return out


def with_forcing(data: ProblemData, f: Callable[..., npt.ArrayLike]) -> ProblemData:
    return replace(data, f=f)
