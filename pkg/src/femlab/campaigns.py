"""Experiment campaigns over uniformly refined mesh families.

Every campaign writes one CSV row per mesh level using a single schema
(empty cells where a column does not apply) and collects assertion
failures; the run fails iff any assertion fails.
"""

from __future__ import annotations

import csv
import io
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import analysis
from .assembly import (
    assemble_b,
    assemble_rhs,
    bubble_solution,
    duality_defect,
    manufactured_problem,
    sine_solution,
)
from .coefficients import CoefficientSet, validate_assumption_A
from .config import (
    KINDS,
    Section,
    coefficients_from,
    get_bool,
    get_float,
    get_int,
    get_range,
    parse_config,
)
from .errors import ConfigError, FemlabError
from .fe_spaces import dg_space, flux_space
from .mesh import Triangulation, build_structured_mesh, refine_uniform

log = logging.getLogger(__name__)

CSV_COLUMNS = (
    "campaign", "level", "h_max", "n_dof", "beta_h", "flux_err",
    "scalar_err", "best_flux", "osc_div", "osc_u", "runtime_s",
)
WORKERS_ENV = "FEMLAB_WORKERS"
SOLUTIONS = {"sine": sine_solution, "bubble": bubble_solution}


def fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return f"{float(value):.12g}"


@dataclass
class Campaign:
    name: str
    kind: str
    base_m: int
    levels: int
    space: str
    degree: int
    scalar_degree: int
    coeffs: CoefficientSet
    output: Path
    seed: int = 0
    solution: str = "sine"
    samples: int = 10_000
    max_rel_change: float = 0.2
    ratio_bound: float = 10.0
    expectations: dict[str, tuple[float, float]] = field(default_factory=dict)
    record_runtime: bool = False

    @classmethod
    def from_section(cls, section: Section, base_dir: Path) -> "Campaign":
        kind = section.get("kind")
        if kind not in KINDS:
            raise ConfigError(
                f"[{section.name}] kind must be one of {', '.join(KINDS)}, got {kind!r}",
                section.line_of("kind"),
            )
        space = (section.get("space", "RT") or "").upper()
        if space not in ("RT", "BDM"):
            raise ConfigError(f"space must be RT or BDM, got {space!r}", section.line_of("space"))
        degree = get_int(section, "degree", 0, minimum=0)
        if space == "BDM" and degree < 1:
            raise ConfigError("BDM requires degree >= 1", section.line_of("degree"))
        if degree > 1:
            raise ConfigError("only degrees 0 and 1 are supported", section.line_of("degree"))
        solution = section.get("solution", "sine")
        if solution not in SOLUTIONS:
            raise ConfigError(f"unknown solution {solution!r}", section.line_of("solution"))
        expectations = {}
        for key in ("flux_slope", "scalar_slope", "osc_div_slope", "osc_u_slope", "best_flux_slope"):
            r = get_range(section, key)
            if r is not None:
                expectations[key] = r
        return cls(
            name=section.name,
            kind=kind,
            base_m=get_int(section, "base_m", 2, minimum=1),
            levels=get_int(section, "levels", 3, minimum=1),
            space=space,
            degree=degree,
            scalar_degree=get_int(section, "scalar_degree", degree, minimum=0),
            coeffs=coefficients_from(section),
            output=base_dir / section.get("output", f"{section.name}.csv"),
            seed=get_int(section, "seed", 0),
            solution=solution,
            samples=get_int(section, "samples", 10_000, minimum=1),
            max_rel_change=get_float(section, "max_rel_change", 0.2),
            ratio_bound=get_float(section, "ratio_bound", 10.0),
            expectations=expectations,
            record_runtime=get_bool(section, "record_runtime", False),
        )

    def meshes(self) -> list[Triangulation]:
        out = [build_structured_mesh(self.base_m)]
        for _ in range(self.levels - 1):
            out.append(refine_uniform(out[-1]))
        return out


@dataclass
class CampaignResult:
    campaign: Campaign
    rows: list[dict]
    summary: list[str]
    failures: list[str]

    @property
    def ok(self) -> bool:
        return not self.failures

    def csv_text(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in self.rows:
            writer.writerow([row.get(c, "") if c in ("campaign",) else fmt(row.get(c)) for c in CSV_COLUMNS])
        return buf.getvalue()


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        log.warning("ignoring non-integer %s=%r", WORKERS_ENV, raw)
        return 1


def _map_levels(fn, items):
    """Apply ``fn`` to every level, results in level order."""
    n = worker_count()
    if n == 1 or len(items) == 1:
        return [fn(i, x) for i, x in enumerate(items)]
    with ThreadPoolExecutor(max_workers=n) as pool:
        futures = [pool.submit(fn, i, x) for i, x in enumerate(items)]
        return [f.result() for f in futures]


def _assemble(c: Campaign, mesh: Triangulation, coeffs: CoefficientSet | None = None):
    coeffs = coeffs or c.coeffs
    V = flux_space(mesh, c.space, c.degree)
    Q = dg_space(mesh, c.scalar_degree)
    return assemble_b(mesh, V, Q, coeffs)


def _stability(c: Campaign, meshes) -> CampaignResult:
    def level(i, mesh):
        t0 = time.perf_counter()
        validate_assumption_A(c.coeffs, mesh)
        rep = analysis.compute_inf_sup(_assemble(c, mesh), mesh_level=i)
        return rep, time.perf_counter() - t0

    reps = _map_levels(level, meshes)
    rows, failures = [], []
    for i, (rep, dt) in enumerate(reps):
        rows.append(dict(campaign=c.name, level=i, h_max=rep.h_max, n_dof=rep.n_dof,
                         beta_h=rep.beta_h, runtime_s=dt))
        if not rep.beta_h > 0.0:
            failures.append(f"level {i}: beta_h = {rep.beta_h:.12g} is not positive")
        if rep.eigenvalue_residual > 1e-8:
            failures.append(f"level {i}: eigen-residual {rep.eigenvalue_residual:.3e} > 1e-8")
    betas = [r.beta_h for r, _ in reps]
    for i in range(1, len(betas)):
        change = abs(betas[i] - betas[i - 1]) / max(betas[i - 1], 1e-300)
        if change > c.max_rel_change:
            failures.append(f"level {i}: beta_h changed by {change:.3%} > {c.max_rel_change:.0%}")
    summary = [f"{c.name}: beta_h = " + ", ".join(fmt(b) for b in betas)]
    return CampaignResult(c, rows, summary, failures)


def _convergence(c: Campaign, meshes) -> CampaignResult:
    u, g, H = SOLUTIONS[c.solution]()
    problem = manufactured_problem(u, g, H, c.coeffs)

    def level(i, mesh):
        t0 = time.perf_counter()
        system = _assemble(c, mesh)
        rhs = assemble_rhs(mesh, system.scalar_space, problem.f, flux=system.flux_space)
        x = analysis.solve_mixed(system, rhs)
        return analysis.compute_errors(system, x, problem), system.n_dofs, time.perf_counter() - t0

    reps = _map_levels(level, meshes)
    rows, failures = [], []
    for i, (r, n, dt) in enumerate(reps):
        rows.append(dict(campaign=c.name, level=i, h_max=r.h_max, n_dof=n, flux_err=r.flux_error,
                         scalar_err=r.scalar_error, best_flux=r.best_flux, osc_div=r.osc_div,
                         osc_u=r.osc_u, runtime_s=dt))
        if r.best_flux > r.flux_error + 1e-12:
            failures.append(f"level {i}: best approximation exceeds the Galerkin error")
    summary = []
    if len(reps) >= 2:
        h = [r.h_max for r, _, _ in reps]
        slopes = {
            "flux_slope": analysis.fit_slope(h, [r.flux_error for r, _, _ in reps]),
            "scalar_slope": analysis.fit_slope(h, [r.scalar_error for r, _, _ in reps]),
            "best_flux_slope": analysis.fit_slope(h, [r.best_flux for r, _, _ in reps]),
            "osc_div_slope": analysis.fit_slope(h, [r.osc_div for r, _, _ in reps]),
            "osc_u_slope": analysis.fit_slope(h, [r.osc_u for r, _, _ in reps]),
        }
        summary.append(f"{c.name}: slopes " + ", ".join(f"{k}={fmt(v)}" for k, v in slopes.items()))
        for key, (lo, hi) in c.expectations.items():
            if not lo <= slopes[key] <= hi:
                failures.append(f"{key} = {slopes[key]:.12g} outside [{lo}, {hi}]")
    elif c.expectations:
        failures.append("slope expectations need at least two levels")
    return CampaignResult(c, rows, summary, failures)


def _lemma4(c: Campaign, meshes) -> CampaignResult:
    if c.space != "RT":
        raise ConfigError(f"[{c.name}] lemma4 campaigns need space = RT")
    rng = np.random.default_rng(c.seed)
    rows, failures = [], []
    max_ratio, max_defect = 0.0, 0.0
    for i, mesh in enumerate(meshes):
        t0 = time.perf_counter()
        V = flux_space(mesh, "RT", c.degree)
        n_vec = -(-c.samples // mesh.n_triangles)
        x = rng.standard_normal((n_vec, V.n_dofs))
        local = (x[:, V.dof_map] * V.dof_signs).reshape(-1, V.local_dim)
        verts = np.tile(mesh.vertices[mesh.triangles], (n_vec, 1, 1))
        terms = analysis.inner_approximation_terms("RT", c.degree, verts, local)
        max_ratio = max(max_ratio, float(terms.ratio.max()))
        max_defect = max(max_defect, float(terms.identity_defect.max()))
        rows.append(dict(campaign=c.name, level=i, h_max=mesh.h_max, n_dof=V.n_dofs,
                         runtime_s=time.perf_counter() - t0))
    sweep = analysis.inner_approx_sweep(c.degree, c.samples, c.seed)
    max_ratio = max(max_ratio, sweep.max_ratio)
    max_defect = max(max_defect, sweep.max_identity_defect)
    if max_ratio > 1.0 + 1e-10:
        failures.append(f"inner-approximation ratio {max_ratio:.12g} exceeds 1")
    if max_defect > 1e-12:
        failures.append(f"moment identity defect {max_defect:.3e} exceeds 1e-12")
    summary = [f"{c.name}: RT_{c.degree} max ratio {fmt(max_ratio)}, identity defect {max_defect:.3e}"]
    return CampaignResult(c, rows, summary, failures)


def duality_levels(c: Campaign, meshes):
    """Per level: (defect, beta_cons, beta_div, n_dof, h_max, runtime)."""

    def level(i, mesh):
        t0 = time.perf_counter()
        cons = _assemble(c, mesh, c.coeffs.with_formulation("conservative"))
        div = _assemble(c, mesh, c.coeffs.with_formulation("divergence"))
        defect = duality_defect(cons, div)
        bc = analysis.compute_inf_sup(cons).beta_h
        bd = analysis.compute_inf_sup(div).beta_h
        return defect, bc, bd, cons.n_dofs, mesh.h_max, time.perf_counter() - t0

    return _map_levels(level, meshes)


def _duality(c: Campaign, meshes) -> CampaignResult:
    rows, failures, summary = [], [], []
    for i, (defect, bc, bd, n, h, dt) in enumerate(duality_levels(c, meshes)):
        rows.append(dict(campaign=f"{c.name}/conservative", level=i, h_max=h, n_dof=n, beta_h=bc, runtime_s=dt))
        rows.append(dict(campaign=f"{c.name}/divergence", level=i, h_max=h, n_dof=n, beta_h=bd, runtime_s=dt))
        summary.append(f"{c.name} level {i}: identity defect {defect:.3e}, |beta_cons - beta_div| = {abs(bc - bd):.3e}")
        if defect > 1e-13:
            failures.append(f"level {i}: duality identity defect {defect:.3e} > 1e-13")
        if abs(bc - bd) > 1e-9:
            failures.append(f"level {i}: beta_h differs by {abs(bc - bd):.3e} > 1e-9")
    return CampaignResult(c, rows, summary, failures)


def _bestapprox(c: Campaign, meshes) -> CampaignResult:
    u, g, H = SOLUTIONS[c.solution]()
    A = c.coeffs.A

    def p(x):
        return g(x)

    def div_p(x):
        return np.trace(H(x), axis1=-2, axis2=-1)

    def level(i, mesh):
        t0 = time.perf_counter()
        V = flux_space(mesh, c.space, c.degree)
        res = analysis.constrained_flux_projection(p, div_p, V, A)
        return res, V.n_dofs, mesh.h_max, time.perf_counter() - t0

    rows, failures, ratios = [], [], []
    for i, (res, n, h, dt) in enumerate(_map_levels(level, meshes)):
        rows.append(dict(campaign=c.name, level=i, h_max=h, n_dof=n, flux_err=res.distance,
                         best_flux=res.best_distance, osc_div=res.osc_div, runtime_s=dt))
        ratios.append(res.ratio)
        if res.constraint_residual > 1e-11:
            failures.append(f"level {i}: divergence constraint residual {res.constraint_residual:.3e}")
        if res.ratio > c.ratio_bound:
            failures.append(f"level {i}: ratio {res.ratio:.12g} > {c.ratio_bound}")
    summary = [f"{c.name}: ratio ||p-p_h|| / (dist + osc) = " + ", ".join(fmt(r) for r in ratios)]
    return CampaignResult(c, rows, summary, failures)


_RUNNERS = {
    "stability": _stability,
    "convergence": _convergence,
    "lemma4": _lemma4,
    "duality": _duality,
    "bestapprox": _bestapprox,
}


def run_campaign(c: Campaign, write: bool = True) -> CampaignResult:
    try:
        result = _RUNNERS[c.kind](c, c.meshes())
    except FemlabError as exc:
        if isinstance(exc, ConfigError):
            raise
        result = CampaignResult(c, [], [], [f"{type(exc).__name__}: {exc}"])
    if not c.record_runtime:
        for row in result.rows:
            row.pop("runtime_s", None)
    if write:
        c.output.parent.mkdir(parents=True, exist_ok=True)
        c.output.write_text(result.csv_text())
    return result


def load_campaigns(path: str | Path) -> list[Campaign]:
    path = Path(path)
    return [Campaign.from_section(s, path.parent) for s in parse_config(path)]
