"""Command line entry point: ``femlab run|lemma4|duality|mesh-info``.

Exit status is 0 when every assertion passes, 1 when one fails and 2 for
configuration or input errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from . import analysis
from .campaigns import duality_levels, fmt, load_campaigns, run_campaign
from .errors import ConfigError, FemlabError, MeshError
from .mesh import read_mesh, shape_regularity

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _report(failures: list[str], out) -> int:
    for f in failures:
        print(f"FAIL {f}", file=out)
    return EXIT_FAIL if failures else EXIT_OK


def cmd_run(args, out) -> int:
    campaigns = load_campaigns(args.config)
    failures = []
    for c in campaigns:
        result = run_campaign(c)
        for line in result.summary:
            print(line, file=out)
        print(f"{c.name}: wrote {len(result.rows)} rows to {c.output}", file=out)
        failures += [f"[{c.name}] {f}" for f in result.failures]
    return _report(failures, out)


def cmd_lemma4(args, out) -> int:
    if args.samples < 1:
        raise ConfigError("--samples must be positive")
    sweep = analysis.inner_approx_sweep(args.k, args.samples, args.seed)
    print(f"k = {sweep.k}, samples = {sweep.samples}", file=out)
    print(f"max ratio = {fmt(sweep.max_ratio)}", file=out)
    print(f"max identity defect = {fmt(sweep.max_identity_defect)}", file=out)
    failures = []
    if sweep.max_ratio > 1.0 + 1e-10:
        failures.append(f"max ratio {fmt(sweep.max_ratio)} exceeds 1")
    if sweep.max_identity_defect > 1e-12:
        failures.append(f"identity defect {fmt(sweep.max_identity_defect)} exceeds 1e-12")
    return _report(failures, out)


def cmd_duality(args, out) -> int:
    failures = []
    for c in load_campaigns(args.config):
        c = dataclasses.replace(c, kind="duality")
        for i, (defect, bc, bd, n, h, _) in enumerate(duality_levels(c, c.meshes())):
            print(
                f"{c.name} level {i}: n_dof = {n}, defect = {fmt(defect)}, "
                f"beta_cons = {fmt(bc)}, beta_div = {fmt(bd)}",
                file=out,
            )
            if defect > 1e-13:
                failures.append(f"[{c.name}] level {i}: defect {fmt(defect)} > 1e-13")
            if abs(bc - bd) > 1e-9:
                failures.append(f"[{c.name}] level {i}: |beta_cons - beta_div| = {fmt(abs(bc - bd))}")
    return _report(failures, out)


def cmd_mesh_info(args, out) -> int:
    mesh = read_mesh(args.mesh)
    print(f"vertices = {mesh.n_vertices}", file=out)
    print(f"triangles = {mesh.n_triangles}", file=out)
    print(f"edges = {mesh.n_edges}", file=out)
    print(f"boundary edges = {int(mesh.boundary_edge_flags.sum())}", file=out)
    print(f"h_max = {fmt(mesh.h_max)}", file=out)
    print(f"shape regularity = {fmt(shape_regularity(mesh))}", file=out)
    print(f"area = {fmt(mesh.areas.sum())}", file=out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="femlab", description="Mixed finite element stability lab.")
    p.add_argument("-v", "--verbose", action="store_true", help="enable debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run every campaign in a config file")
    r.add_argument("config", type=Path)
    r.set_defaults(func=cmd_run)

    l4 = sub.add_parser("lemma4", help="random sweep of the RT inner-approximation bound")
    l4.add_argument("--k", type=int, choices=(0, 1), required=True)
    l4.add_argument("--samples", type=int, default=10_000)
    l4.add_argument("--seed", type=int, default=0)
    l4.set_defaults(func=cmd_lemma4)

    d = sub.add_parser("duality", help="check the conservative/divergence duality identity")
    d.add_argument("config", type=Path)
    d.set_defaults(func=cmd_duality)

    m = sub.add_parser("mesh-info", help="print statistics of a mesh file")
    m.add_argument("mesh", type=Path)
    m.set_defaults(func=cmd_mesh_info)
    return p


def main(argv: list[str] | None = None, out=None) -> int:
    out = out or sys.stdout
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.func(args, out)
    except (ConfigError, MeshError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FemlabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
