"""Command line front end.

Subcommands mirror the study drivers; configuration is passed as repeated
--config key=value pairs (values parsed as JSON where possible). Exit code
0 on success, 2 on configuration errors, 3 on numerical failures.
"""

import argparse
import json
import sys

import numpy as np

from . import dg, multiscale, projection, studies
from .errors import ConfigError, NumericalError
from .mesh import build_hierarchy, unit_square


def parse_config_pairs(pairs):
    out = {}
    for item in pairs:
        if "=" not in item:
            raise ConfigError(f"bad --config entry {item!r}, expected key=value")
        key, _, raw = item.partition("=")
        key = key.strip()
        if not key:
            raise ConfigError(f"bad --config entry {item!r}, empty key")
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            out[key] = raw
    return out


def build_config(args):
    d = parse_config_pairs(args.config)
    for k in ("coarse_levels", "loc_constants", "qoi_box"):
        if k in d and isinstance(d[k], list):
            d[k] = tuple(d[k])
    if args.threads is not None:
        d["threads"] = args.threads
    if args.force_budget:
        d["force_budget"] = True
    return studies.StudyConfig.from_dict(d)


def cmd_reference(args):
    cfg = build_config(args)
    fp = studies._FineProblem(cfg)
    manifest = {
        "kind": "reference",
        "config_hash": cfg.hash(),
        "fine_level": cfg.fine_level,
        "ndof": fp.fine.ndof,
        "energy_norm": fp.op.energy_norm(fp.u_ref),
        "l2_norm": dg.l2_norm(fp.u_ref),
        "iterations": fp.ref_info["iterations"],
        "residual": fp.ref_info["residual"],
    }
    _write_manifest(args.out, manifest)
    print(f"reference solve: {fp.fine.ndof} unknowns, "
          f"energy norm {manifest['energy_norm']:.6e}")
    return 0


def cmd_msfem(args):
    cfg = build_config(args)
    one = studies.StudyConfig.from_dict(
        {**_cfg_dict(cfg), "coarse_levels": (cfg.coarse_levels[0],)}
    )
    result = studies.run_convergence_study(one)
    studies.emit_outputs(result, args.out, kind="msfem", gnuplot=args.gnuplot)
    r = result.rows[0]
    print(f"msfem H={r.H:g} L={r.L}: energy err {r.err_energy_rel:.3e}, "
          f"L2 err {r.err_l2_rel:.3e}")
    return 0


def cmd_convergence(args):
    cfg = build_config(args)
    result = studies.run_convergence_study(cfg)
    studies.emit_outputs(result, args.out, kind="convergence", gnuplot=args.gnuplot)
    for r in result.rows:
        print(f"H={r.H:g} L={r.L}: energy {r.err_energy_rel:.3e}, "
              f"L2 {r.err_l2_rel:.3e}")
    print(f"slopes: energy {result.extras['slope_energy']:.2f}, "
          f"L2 {result.extras['slope_l2']:.2f}")
    return 0


def cmd_localization(args):
    cfg = build_config(args)
    result = studies.run_localization_sweep(cfg)
    studies.emit_outputs(result, args.out, kind="localization", gnuplot=args.gnuplot)
    for C, g in result.extras["gap_to_largest"].items():
        print(f"C={C}: gap to largest constant {g:.3e}")
    return 0


def cmd_decay(args):
    cfg = build_config(args)
    result = studies.run_decay_study(cfg)
    studies.emit_outputs(result, args.out, kind="decay")
    gamma = result.extras["gamma"]
    tails = result.extras["tails"]
    print(f"corrector T={result.extras['T']}: tails {['%.3e' % t for t in tails]}")
    print(f"gamma = {gamma if gamma is not None else 'not fitted'}")
    return 0


def cmd_qoi(args):
    cfg = build_config(args)
    result = studies.run_qoi_study(cfg)
    studies.emit_outputs(result, args.out, kind="qoi")
    for H, gap, bound in zip(
        result.extras["H"], result.extras["gap"], result.extras["bound"]
    ):
        print(f"H={H:g}: gap {gap:.3e} <= bound {bound:.3e}")
    return 0


def cmd_verify(args):
    """Internal consistency checks on small problems."""
    rng = np.random.default_rng(0)
    checks = []

    res = dg.verify_face_identities(rng.standard_normal((200, 6)))
    checks.append(("face identities", res, res < 1e-12))

    from . import coefficient

    domain = unit_square()
    hier = build_hierarchy(domain, 2, 4)
    A = coefficient.constant(hier.fine, 1.0)
    pen = dg.PenaltyRule()
    op = dg.assemble_sip(hier.fine, A, pen)
    sym = abs(op.matrix - op.matrix.T).max()
    checks.append(("operator symmetry", float(sym), sym < 1e-13))

    maps = projection.build_maps(hier)
    v = dg.DGFunction(hier.fine, rng.standard_normal(hier.fine.ndof))
    p1 = maps.project @ v.coeffs
    p2 = maps.project @ (maps.inject @ p1)
    idem = float(np.max(np.abs(p1 - p2)) / max(np.max(np.abs(p1)), 1e-30))
    checks.append(("projection idempotence", idem, idem < 1e-12))

    ws = multiscale.assemble_workspace(hier, A, pen, fine_op=op)
    c = multiscale.corrector(ws, 0, 0, 2)
    pi_phi = maps.project @ c.phi.coeffs
    rel = float(np.linalg.norm(pi_phi) / max(op.energy_norm(c.phi), 1e-30))
    checks.append(("corrector fine-scale constraint", rel, rel < 1e-9))

    ok = True
    for name, val, passed in checks:
        status = "ok" if passed else "FAIL"
        print(f"{name}: {val:.3e} [{status}]")
        ok = ok and passed
    if not ok:
        raise NumericalError("verification checks failed")
    return 0


def make_parser():
    p = argparse.ArgumentParser(
        prog="dgms",
        description="Discontinuous Galerkin multiscale method studies",
    )
    sub = p.add_subparsers(dest="command", required=True)
    commands = {
        "reference": cmd_reference,
        "msfem": cmd_msfem,
        "convergence": cmd_convergence,
        "localization": cmd_localization,
        "decay": cmd_decay,
        "qoi": cmd_qoi,
        "verify": cmd_verify,
    }
    for name, fn in commands.items():
        sp = sub.add_parser(name)
        sp.add_argument("--config", action="append", default=[],
                        metavar="KEY=VALUE")
        sp.add_argument("--out", default="out")
        sp.add_argument("--threads", type=int, default=None)
        sp.add_argument("--force-budget", action="store_true")
        sp.add_argument("--gnuplot", action="store_true")
        sp.set_defaults(func=fn)
    return p


def _cfg_dict(cfg):
    from dataclasses import asdict

    return asdict(cfg)


def _write_manifest(outdir, manifest):
    import pathlib

    out = pathlib.Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True, default=float) + "\n"
    )


def main(argv=None):
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
