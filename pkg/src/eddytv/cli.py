"""Command-line pipeline: mesh, synth, invert, report, export.

Stages talk through files (mesh text format, trace files, CSV logs,
npz checkpoints), so expensive synthetic-data solves are paid once and
reused across inversion parameter sweeps. Every stage writes a manifest
that pins config, seeds, mesh hash, and code version.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from . import __version__
from .admm import AdmmState, run_modified_admm
from .config import RunConfig, default_config, load_config, manifest_text
from .errors import ConfigError, NumericalError
from .experiments import (add_noise, generate_synthetic_data,
                          problem_from_trace, read_trace, sigma_l2_error,
                          write_trace)
from .mesh import mesh_hash, write_mesh
from .report import render_report, write_log
from .vtk_io import export_vtk

log = logging.getLogger(__name__)


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s")
    if args.threads is not None:
        _limit_threads(args.threads)
    try:
        return args.func(args)
    except ConfigError as exc:
        print("config error: %s" % exc, file=sys.stderr)
        return 2
    except NumericalError as exc:
        print("numerical failure: %s" % exc, file=sys.stderr)
        return 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eddytv",
        description="Conductivity reconstruction from boundary "
                    "tangential electric-field data.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--verbose", action="store_true",
                        help="debug logging")
    parser.add_argument("--threads", type=int, default=None,
                        help="cap BLAS/solver threads")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None,
                       help="INI config file (defaults to preset values)")
        p.add_argument("--preset", type=int, choices=(1, 2, 3), default=None,
                       help="bundled experiment preset")
        p.add_argument("--refine", type=int, default=None,
                       help="extra uniform refinements of the base mesh")
        p.add_argument("--noise", type=float, default=None,
                       help="relative noise level for the data")
        p.add_argument("--seed", type=int, default=None,
                       help="noise RNG seed")
        p.add_argument("--workdir", default=None,
                       help="output directory (default from config)")

    p_mesh = sub.add_parser("mesh", help="build and save the mesh")
    common(p_mesh)
    p_mesh.set_defaults(func=cmd_mesh)

    p_synth = sub.add_parser("synth", help="generate observation data")
    common(p_synth)
    p_synth.set_defaults(func=cmd_synth)

    p_inv = sub.add_parser("invert", help="run the inversion")
    common(p_inv)
    p_inv.add_argument("--trace", default=None,
                       help="trace file (default: workdir/trace.txt)")
    p_inv.add_argument("--resume", default=None,
                       help="checkpoint npz to resume from")
    p_inv.set_defaults(func=cmd_invert)

    p_rep = sub.add_parser("report", help="render figures from CSV logs")
    p_rep.add_argument("logs", nargs="+", help="inversion log files")
    p_rep.add_argument("--out", default=None,
                       help="figure directory (default: alongside first log)")
    p_rep.add_argument("--labels", default=None,
                       help="comma-separated curve labels")
    p_rep.set_defaults(func=cmd_report)

    p_exp = sub.add_parser("export", help="export fields to legacy VTK")
    common(p_exp)
    p_exp.add_argument("--state", default=None,
                       help="checkpoint npz (default: workdir/final_state.npz)")
    p_exp.add_argument("--out", default=None,
                       help="output vtk path (default: workdir/sigma.vtk)")
    p_exp.set_defaults(func=cmd_export)
    return parser


def _limit_threads(n: int) -> None:
    if n < 1:
        raise ConfigError("--threads must be >= 1")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        os.environ[var] = str(n)


def _resolve(args) -> RunConfig:
    overrides = {key: getattr(args, key)
                 for key in ("preset", "refine", "noise", "seed")
                 if getattr(args, key, None) is not None}
    if args.config is not None:
        cfg = load_config(args.config, overrides)
    else:
        import dataclasses

        cfg = default_config(overrides.pop("preset", 1))
        preset = cfg.preset
        if "refine" in overrides:
            preset = dataclasses.replace(
                preset, domain=dataclasses.replace(
                    preset.domain, refine_levels=overrides.pop("refine")))
        if "noise" in overrides:
            preset = dataclasses.replace(preset,
                                         noise=overrides.pop("noise"))
        if "seed" in overrides:
            preset = dataclasses.replace(preset, seed=overrides.pop("seed"))
        cfg = dataclasses.replace(cfg, preset=preset).validate()
    if getattr(args, "workdir", None):
        import dataclasses

        cfg = dataclasses.replace(cfg, workdir=args.workdir)
    return cfg


def _workdir(cfg: RunConfig) -> str:
    os.makedirs(cfg.workdir, exist_ok=True)
    return cfg.workdir


def _write_manifest(cfg, digest, path, extra=None) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(manifest_text(cfg, digest, extra))


def cmd_mesh(args) -> int:
    cfg = _resolve(args)
    wd = _workdir(cfg)
    mesh = cfg.preset.build_mesh()
    out = os.path.join(wd, "mesh.txt")
    write_mesh(mesh, out)
    digest = mesh_hash(mesh)
    _write_manifest(cfg, digest, os.path.join(wd, "mesh_manifest.txt"))
    print("mesh: %d vertices, %d edges, %d tets, h = %r"
          % (mesh.n_vertices, mesh.n_edges, mesh.n_tets, mesh.h))
    print("wrote %s (hash %s)" % (out, digest[:16]))
    return 0


def cmd_synth(args) -> int:
    cfg = _resolve(args)
    wd = _workdir(cfg)
    preset = cfg.preset
    mesh = preset.build_mesh()
    digest = mesh_hash(mesh)
    trace = generate_synthetic_data(preset, mesh, cfg.refine_extra)
    if preset.noise > 0:
        trace = add_noise(trace, preset.noise, preset.seed)
    else:
        trace = add_noise(trace, 0.0, preset.seed)
    out = os.path.join(wd, "trace.txt")
    write_trace(out, trace)
    _write_manifest(cfg, digest, os.path.join(wd, "synth_manifest.txt"),
                    extra={"trace.file": os.path.basename(out)})
    print("wrote %s (%d faces x %d points, noise %r, seed %d)"
          % (out, trace.values.shape[0], trace.values.shape[1],
             preset.noise, preset.seed))
    return 0


def cmd_invert(args) -> int:
    cfg = _resolve(args)
    wd = _workdir(cfg)
    preset = cfg.preset
    mesh = preset.build_mesh()
    digest = mesh_hash(mesh)

    trace_path = args.trace or os.path.join(wd, "trace.txt")
    if not os.path.exists(trace_path):
        raise ConfigError("trace file %s not found; run synth first"
                          % trace_path)
    trace = read_trace(trace_path)
    if trace.mesh_digest and trace.mesh_digest != digest:
        raise ConfigError("trace was generated for a different mesh "
                          "(hash %s... vs %s...)"
                          % (trace.mesh_digest[:12], digest[:12]))

    problem = problem_from_trace(mesh, preset, trace)

    def error_fn(sig):
        return sigma_l2_error(sig, preset.truth, mesh)

    state = AdmmState.load(args.resume) if args.resume else None

    ckpt_path = os.path.join(wd, "checkpoint.npz")

    def checkpoint(st):
        if cfg.checkpoint_every and st.k % cfg.checkpoint_every == 0:
            st.save(ckpt_path)

    try:
        state = run_modified_admm(problem, preset.outer, error_fn=error_fn,
                                  callback=checkpoint, state=state,
                                  record_timing=cfg.timing)
    except NumericalError:
        if state is not None:
            state.save(os.path.join(wd, "failed_state.npz"))
        raise
    state.save(os.path.join(wd, "final_state.npz"))
    log_path = os.path.join(wd, "log.csv")
    write_log(log_path, state)
    err = sigma_l2_error(state.sigma, preset.truth, mesh)
    _write_manifest(cfg, digest, os.path.join(wd, "invert_manifest.txt"),
                    extra={"trace.file": os.path.basename(trace_path),
                           "trace.noise": repr(trace.noise),
                           "trace.seed": trace.seed,
                           "result.iterations": state.k,
                           "result.sigma_err": repr(err)})
    print("finished %d iterations; final error %r; log %s"
          % (state.k, err, log_path))
    return 0


def cmd_report(args) -> int:
    out = args.out or os.path.join(os.path.dirname(args.logs[0]) or ".",
                                   "figures")
    labels = args.labels.split(",") if args.labels else None
    written = render_report(args.logs, out, labels)
    for path in written:
        print("wrote %s" % path)
    return 0


def cmd_export(args) -> int:
    cfg = _resolve(args)
    wd = _workdir(cfg)
    state_path = args.state or os.path.join(wd, "final_state.npz")
    if not os.path.exists(state_path):
        raise ConfigError("state file %s not found; run invert first"
                          % state_path)
    state = AdmmState.load(state_path)
    mesh = cfg.preset.build_mesh()
    out = args.out or os.path.join(wd, "sigma.vtk")
    export_vtk(out, mesh, state.sigma, s=state.s, y_dual=state.y_dual)
    print("wrote %s" % out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
