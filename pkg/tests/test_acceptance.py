"""Acceptance gate: one test per criterion, one PASS/FAIL line each in the summary."""

import math
import os
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE
from oracles import all_functions
from rmiga.assembly import assemble, solve, solve_full, solve_schur
from rmiga.bspline import evaluate_basis_array, make_open_knot_vector
from rmiga.forms import GrammSpec, ProblemData, build_spaces
from rmiga.quadrature import EvalCache, build_mesh, make_quadrature
from rmiga.tensor_space import make_scalar_space, make_vector_space
from rmiga.verification import ConvergenceRecord, fit_rates, manufactured_case, run_single

MESHES = (5, 10, 20, 40)
ORDERS = (2, 3)
FORMS = (1, 2, 3, 4, 5, 6)
MIXED = (3, 4, 5, 6)
TRIVIAL = (1, 3)
CASE = manufactured_case()


def record(key, passed, detail):
    ACCEPTANCE[key] = (bool(passed), detail)
    print(f"{'PASS' if passed else 'FAIL'} {key}: {detail}")
    assert passed, detail


def rates(results, attr):
    hs = [r.h for r in results]
    return fit_rates(ConvergenceRecord(hs, [getattr(r, attr) for r in results]))


@pytest.fixture(scope="module")
def sweep():
    """Default-parameter runs of formulations 1-6, p in {2, 3}, all four meshes."""
    out = {}
    schur_gap = {}
    for fid in FORMS:
        for p in ORDERS:
            runs = []
            for n in MESHES:
                keep = fid in TRIVIAL
                r = run_single(fid, p, n, case=CASE, keep=keep)
                if keep:
                    a, b = solve_full(r.system), solve_schur(r.system)
                    schur_gap[(fid, p, n)] = np.linalg.norm(a.U - b.U) / np.linalg.norm(a.U)
                    r.system = r.solution = None
                runs.append(r)
            out[(fid, p)] = runs
    return out, schur_gap


def test_criterion_1_h1_rates(sweep):
    results, _ = sweep
    bad, worst = [], 0.0
    for (fid, p), runs in results.items():
        rate = rates(runs, "err_h1").final
        worst = max(worst, abs(rate - p))
        if abs(rate - p) > 0.15:
            bad.append(f"id {fid} p={p}: {rate:.3f}")
    record(
        "1 H1 rates within p +- 0.15",
        not bad,
        "; ".join(bad) or f"max |rate - p| = {worst:.3f}",
    )


def test_criterion_2_flux_rates(sweep):
    results, _ = sweep
    lines, bad = [], []
    for fid in MIXED:
        for p in ORDERS:
            fit = rates(results[(fid, p)], "err_flux")
            lines.append(f"id {fid} p={p}: {fit.final:.3f}")
            if fit.final < p + 0.85:
                bad.append(lines[-1])
    even = [rates(results[(fid, 2)], "err_flux").final for fid in MIXED]
    print(f"p=2 flux rates (superconvergence check, not gated): {np.round(even, 3).tolist()}")
    record(
        "2 flux rates >= p + 0.85",
        not bad,
        ("below threshold: " + "; ".join(bad)) if bad else "; ".join(lines),
    )


def test_criterion_3_galerkin_reduction():
    worst, bad = 0.0, []
    for p in ORDERS:
        for k in range(p):
            trial, test = build_spaces(2, 10, p, k=k, q=p, l=k)
            system = assemble(2, trial, test, GrammSpec(), build_mesh(10), CASE.data)
            sol = solve(system)
            ratio = sol.residual_norm / np.linalg.norm(system.L)
            worst = max(worst, ratio)
            if ratio > 1e-10:
                bad.append(f"p={p} k=l={k}: {ratio:.2e}")
    record("3 Galerkin reduction", not bad, "; ".join(bad) or f"max |Phi|_G/|L| = {worst:.2e}")


def test_criterion_4_formulation_equivalence(sweep):
    results, _ = sweep
    idx = MESHES.index(20)
    errs = {fid: results[(fid, 3)][idx].err_h1 for fid in FORMS}
    spread = max(errs.values()) / min(errs.values())
    h = results[(1, 2)][-1].h
    c1 = results[(1, 2)][-1].err_h1 / h**2
    c2 = results[(2, 2)][-1].err_h1 / h**2
    ok = spread <= 3.0 and c1 > c2
    record(
        "4 formulation equivalence",
        ok,
        f"p=3 20x20 error spread {spread:.3f} (<= 3); p=2 constants id1 {c1:.3f} > id2 {c2:.3f}",
    )


def test_criterion_5_l2_gramm():
    gramm = {1: GrammSpec(tau1=0.0, tau2=0.0), 3: GrammSpec(tau4=0.0, tau6=0.0)}
    lines, bad = [], []
    for fid, g in gramm.items():
        for p in ORDERS:
            runs = [run_single(fid, p, n, gramm=g, case=CASE) for n in MESHES]
            rate = rates(runs, "err_h1").final
            lines.append(f"id {fid} p={p}: {rate:.3f}")
            if abs(rate - p) > 0.15:
                bad.append(lines[-1])
    record("5 L2 Gramm product keeps H1 rates", not bad, "; ".join(bad or lines))


def test_criterion_6_solver_paths(sweep):
    _, gaps = sweep
    worst = max(gaps.values())
    record(
        "6 Schur and full solvers agree",
        worst <= 1e-9,
        f"max relative U difference {worst:.2e} over {len(gaps)} runs",
    )


def _property_suite():
    rng = np.random.default_rng(2024)
    checks = {}
    # partition of unity and agreement with the global recursion
    worst = 0.0
    for p in range(0, 6):
        for k in range(-1, p):
            kv = make_open_knot_vector(4, p, k)
            x = rng.uniform(0, 1, 50)
            _, first, d = evaluate_basis_array(kv, x, 0)
            worst = max(worst, np.abs(d[:, 0].sum(axis=1) - 1).max())
            for i in range(3):
                ref = all_functions(kv.knots, p, x[i])
                loc = ref[np.clip(np.arange(first[i], first[i] + p + 1), 0, kv.dim - 1)]
                worst = max(worst, np.abs(loc - d[i, 0]).max())
    checks["partition of unity"] = worst <= 1e-12
    # derivatives vs central differences
    ok = True
    for p in range(1, 6):
        kv = make_open_knot_vector(4, p, p - 1)
        x = rng.uniform(0.01, 0.99, 100)
        s = 1e-6
        _, f0, d0 = evaluate_basis_array(kv, x, 2)
        _, fp, dp = evaluate_basis_array(kv, x + s, 2)
        _, fm, dm = evaluate_basis_array(kv, x - s, 2)
        same = (f0 == fp) & (f0 == fm)
        for order in range(1, min(p, 2) + 1):
            fd = (dp[same, order - 1] - dm[same, order - 1]) / (2 * s)
            ex = d0[same, order]
            ok &= np.abs(fd - ex).max() <= 1e-5 * np.abs(ex).max()
    checks["derivatives vs finite differences"] = bool(ok)
    # Gramm symmetry and definiteness, residual orthogonality
    spd, orth = True, True
    for fid in range(1, 8):
        trial, test = build_spaces(fid, 2, 2)
        system = assemble(fid, trial, test, GrammSpec(), build_mesh(2), CASE.data)
        G = system.G.toarray()
        spd &= np.abs(G - G.T).max() <= 1e-14 and np.linalg.eigvalsh(G).min() > 0
        sol = solve(system)
        scale = abs(system.B).sum(axis=1).max()
        orth &= np.abs(system.B.T @ sol.Phi).max() <= 1e-10 * scale
    checks["G symmetric positive definite"] = bool(spd)
    checks["residual orthogonality"] = bool(orth)
    # manufactured residual against an independent hand derivation
    x, y = rng.uniform(size=(2, 200))
    s_x, s_y, c_x, c_y = np.sin(np.pi * x), np.sin(np.pi * y), np.cos(np.pi * x), np.cos(np.pi * y)
    g = 2 - x + 3 * y
    u = s_x * s_y * g
    ux = np.pi * c_x * s_y * g - s_x * s_y
    uy = np.pi * s_x * c_y * g + 3 * s_x * s_y
    lap = -2 * np.pi**2 * u + 2 * np.pi * (-c_x * s_y + 3 * s_x * c_y)
    f = -lap + ux + uy + u
    checks["manufactured residual"] = np.abs(CASE.f(x, y) - f).max() <= 1e-10
    # adjoint-pair identity
    n, p = 4, 3
    w_space = make_scalar_space(n, p, 0, "homogeneous_dirichlet")
    q_space = make_vector_space(n, p, p - 1)
    quad = make_quadrature(build_mesh(n), p + 1)
    wc, qc = EvalCache(w_space, quad), EvalCache(q_space, quad)
    W = rng.normal(size=w_space.dof_count) * ~w_space.dirichlet_mask
    Q = rng.normal(size=q_space.dof_count)
    lhs = np.sum(
        quad.weights
        * (wc.field_values(W, "dx") * qc.field_values(Q, "val", 0)
           + wc.field_values(W, "dy") * qc.field_values(Q, "val", 1))
    )
    rhs = -np.sum(
        quad.weights * wc.field_values(W) * (qc.field_values(Q, "dx", 0) + qc.field_values(Q, "dy", 1))
    )
    checks["adjoint identity"] = abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs))
    return checks


def test_criterion_7_property_suites():
    t0 = time.perf_counter()
    checks = _property_suite()
    elapsed = time.perf_counter() - t0
    failed = [name for name, ok in checks.items() if not ok]
    record(
        "7 property suites",
        not failed and elapsed < 60,
        (", ".join(failed) + " failed") if failed else f"{len(checks)} checks in {elapsed:.1f}s",
    )


@pytest.mark.skipif(not os.environ.get("RMIGA_EXTENDED"), reason="set RMIGA_EXTENDED=1")
@pytest.mark.parametrize("p", [4, 5])
def test_extended_high_order(p):
    # non-gating: reports rates for p = 4, 5 on the full matrix
    for fid in FORMS:
        runs = [run_single(fid, p, n, case=CASE) for n in MESHES]
        h1 = rates(runs, "err_h1").final
        flux = rates(runs, "err_flux").final if runs[0].err_flux else math.nan
        print(f"extended id {fid} p={p}: H1 {h1:.3f} flux {flux:.3f}")
