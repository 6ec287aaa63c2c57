"""Acceptance criteria, each run at its stated tolerance.

Every test records one pass/fail line; they are printed together at the
end of the pytest run.
"""

import time

import numpy as np
import pytest

from femlab.analysis import (
    bdm_counterexample_search,
    compute_errors,
    compute_inf_sup,
    constrained_flux_projection,
    discrete_dual_check,
    fit_slope,
    inf_sup_svd_oracle,
    inner_approx_sweep,
    solve_mixed,
)
from femlab.assembly import (
    assemble_pair,
    assemble_rhs,
    duality_defect,
    manufactured_problem,
    sine_solution,
)
from femlab.coefficients import CoefficientSet, as_field, presets
from femlab.fe_spaces import evaluate_flux, flux_space, l2_project_Pk
from femlab.mesh import build_structured_mesh, refine_uniform
from femlab.quadrature import triangle_rule

REF = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
LEVELS = [2, 4, 8, 16]


def convergence_run(kind, degree, coeffs, scalar_degree=None):
    u, g, H = sine_solution()
    p = manufactured_problem(u, g, H, coeffs)
    reps = []
    for m in LEVELS:
        mesh = build_structured_mesh(m)
        sys_ = assemble_pair(mesh, kind, degree, coeffs, scalar_degree)
        x = solve_mixed(sys_, assemble_rhs(mesh, sys_.scalar_space, p.f, flux=sys_.flux_space))
        reps.append(compute_errors(sys_, x, p))
    h = [r.h_max for r in reps]

    def slope(attr):
        return fit_slope(h, [getattr(r, attr) for r in reps], last=3)

    return slope


def test_criterion_01_rt_inner_approximation(verdict):
    t0 = time.perf_counter()
    sweeps = [inner_approx_sweep(k, 10_000, seed=2024 + k) for k in (0, 1)]
    elapsed = time.perf_counter() - t0
    ok = (
        all(s.violations == 0 for s in sweeps)
        and all(s.max_identity_defect <= 1e-12 for s in sweeps)
        and elapsed < 30.0
    )
    detail = "; ".join(
        f"k={s.k}: max ratio {s.max_ratio:.4f}, violations {s.violations}, identity defect {s.max_identity_defect:.1e}"
        for s in sweeps
    )
    assert verdict(1, ok, f"{detail}; {elapsed:.2f} s")


def test_criterion_02_bdm_failure_witness(verdict):
    t0 = time.perf_counter()
    res = bdm_counterexample_search(REF, trials=1000, seed=0, proj_degree=1)
    elapsed = time.perf_counter() - t0
    ok = res.witness_coeffs is not None and res.witness_lhs > 0.0 and elapsed < 1.0
    detail = (
        f"divergence-free BDM1 field with ||tau - Pi_1 tau|| = {res.witness_lhs:.2e}"
        f" (largest over the divergence-free subspace); {elapsed:.2f} s"
    )
    assert verdict(2, ok, detail)


def test_criterion_03_duality(verdict):
    t0 = time.perf_counter()
    worst_defect, worst_gap = 0.0, 0.0
    for name in ("laplace", "indefinite", "checkerboard"):
        c = presets(name)
        for m in (2, 4):
            mesh = build_structured_mesh(m)
            cons = assemble_pair(mesh, "RT", 0, c.with_formulation("conservative"))
            div = assemble_pair(mesh, "RT", 0, c.with_formulation("divergence"))
            worst_defect = max(worst_defect, duality_defect(cons, div))
            gap = abs(compute_inf_sup(cons).beta_h - compute_inf_sup(div).beta_h)
            worst_gap = max(worst_gap, gap)
    elapsed = time.perf_counter() - t0
    ok = worst_defect <= 1e-13 and worst_gap <= 1e-9 and elapsed < 120.0
    detail = f"max defect {worst_defect:.1e}, max |beta_cons - beta_div| {worst_gap:.1e}; {elapsed:.2f} s"
    assert verdict(3, ok, detail)


def test_criterion_04_stability(verdict):
    t0 = time.perf_counter()
    c = presets("indefinite")
    betas = [compute_inf_sup(assemble_pair(build_structured_mesh(m), "RT", 0, c)).beta_h for m in LEVELS]
    elapsed = time.perf_counter() - t0
    change = abs(betas[-1] - betas[-2]) / betas[-2]
    ok = min(betas) > 0 and change <= 0.10 and elapsed < 300.0
    detail = f"beta_h = {', '.join(f'{b:.6f}' for b in betas)}; last change {change:.2%}; {elapsed:.2f} s"
    assert verdict(4, ok, detail)


def test_criterion_05_oracle(verdict):
    sys_ = assemble_pair(build_structured_mesh(2), "RT", 0, CoefficientSet.create())
    beta = compute_inf_sup(sys_).beta_h
    oracle = inf_sup_svd_oracle(sys_)
    rel = abs(beta - oracle) / oracle
    assert verdict(5, rel <= 1e-10, f"beta_h {beta:.12g} vs oracle {oracle:.12g}; rel diff {rel:.1e}")


def test_criterion_06_convergence_rates(verdict):
    c = presets("indefinite")
    rt0 = convergence_run("RT", 0, c)
    rt1 = convergence_run("RT", 1, c)
    s = {
        "rt0_flux": rt0("flux_error"),
        "rt0_scalar": rt0("scalar_error"),
        "rt0_osc_div": rt0("osc_div"),
        "rt0_osc_u": rt0("osc_u"),
        "rt1_flux": rt1("flux_error"),
        "rt1_osc_div": rt1("osc_div"),
        "rt1_osc_u": rt1("osc_u"),
    }
    ok = (
        0.85 <= s["rt0_flux"] <= 1.15
        and 0.85 <= s["rt0_scalar"] <= 1.15
        and 1.85 <= s["rt1_flux"] <= 2.15
        and min(s["rt0_osc_div"], s["rt0_osc_u"]) >= s["rt0_flux"] + 0.85
        and min(s["rt1_osc_div"], s["rt1_osc_u"]) >= s["rt1_flux"] + 0.85
    )
    assert verdict(6, ok, ", ".join(f"{k} {v:.3f}" for k, v in s.items()))


def test_criterion_07_bdm_flux_improvement(verdict):
    c = CoefficientSet.create(
        b=(1.0, 1.0), gamma=as_field(lambda x: 1.0 + x[..., 0], ()), formulation="divergence"
    )
    slope = convergence_run("BDM", 1, c, scalar_degree=1)
    flux, proj, osc = slope("flux_error"), slope("proj_error_u"), slope("osc_u")
    ok = 1.85 <= flux <= 2.15 and abs(proj - 2.0) <= 0.15 and abs(osc - 3.0) <= 0.15
    assert verdict(7, ok, f"flux {flux:.3f}, ||u - Pi_1 u|| {proj:.3f}, ||h_T (u - Pi_1 u)|| {osc:.3f}")


def test_criterion_08_constrained_projection(verdict):
    _, g, H = sine_solution()

    def div_p(x):
        return np.trace(H(x), axis1=-2, axis2=-1)

    worst_res, worst_ratio = 0.0, 0.0
    for kind, degree in (("RT", 0), ("RT", 1), ("BDM", 1)):
        for m in (2, 4, 8):
            r = constrained_flux_projection(g, div_p, flux_space(build_structured_mesh(m), kind, degree))
            worst_res = max(worst_res, r.constraint_residual)
            worst_ratio = max(worst_ratio, r.ratio)
    ok = worst_res <= 1e-11 and worst_ratio <= 10.0
    assert verdict(8, ok, f"max constraint residual {worst_res:.1e}, max ratio {worst_ratio:.3f}")


def test_criterion_09_discrete_dual_bound(verdict):
    sys_ = assemble_pair(build_structured_mesh(2), "RT", 0, CoefficientSet.create())
    rep = compute_inf_sup(sys_)
    beta = rep.beta_h
    rng = np.random.default_rng(99)
    worst = -np.inf
    for _ in range(100):
        x = rng.standard_normal(sys_.n_dofs)
        x /= sys_.h_norm(x)
        y, _ = discrete_dual_check(sys_, x, beta)
        worst = max(worst, sys_.h_norm(y) - 1.0 / beta)
    y, _ = discrete_dual_check(sys_, rep.minimizer, beta)
    extremal = abs(sys_.h_norm(y) - 1.0 / beta)
    ok = worst <= 1e-9 and extremal <= 1e-8
    assert verdict(9, ok, f"max ||y||_H - 1/beta over 100 samples {worst:.3e}; extremal gap {extremal:.1e}")


def test_criterion_10_exact_algebraic_solves(verdict):
    f = lambda x: np.exp(x[..., 0]) * np.cos(2 * x[..., 1]) + x[..., 1] ** 3  # noqa: E731
    quad = triangle_rule()
    worst, zero = 0.0, 0.0
    for degree in (0, 1):
        mesh = refine_uniform(build_structured_mesh(2))
        sys_ = assemble_pair(mesh, "RT", degree, CoefficientSet.create())
        x = solve_mixed(sys_, assemble_rhs(mesh, sys_.scalar_space, f, flux=sys_.flux_space))
        _, div = evaluate_flux(sys_.flux_space, sys_.split(x)[0], quad)
        diff = l2_project_Pk(div, mesh, degree, quad) - l2_project_Pk(f, mesh, degree, quad)
        worst = max(worst, float(np.abs(diff).max()))
        zero = max(zero, float(np.abs(solve_mixed(sys_, np.zeros(sys_.n_dofs))).max()))
    ok = worst <= 1e-11 and zero == 0.0
    assert verdict(10, ok, f"max |div sigma_h - Pi_k f| coefficient {worst:.1e}; f = 0 gives max |x_h| {zero:.1e}")


def test_bdm_witness_with_matching_projection():
    """Companion to criterion 2: BDM1 divergences lie in P0, and against Pi_0
    a divergence-free field with a nonzero projection residual exists."""
    res = bdm_counterexample_search(REF, trials=1000, seed=0, proj_degree=0)
    assert res.witness_coeffs is not None
    assert res.witness_lhs > 0.1
    assert res.witness_rhs <= 1e-14
