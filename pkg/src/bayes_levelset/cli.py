"""Command-line entry point.

Staged commands share one output directory: ``synth`` writes ``config.json``
and ``data.npz``, ``sample`` adds ``samples.npz``, ``reconstruct`` writes
fields and metrics, ``report`` adds traces and figures. ``experiment`` runs
all of them in one go.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import report
from .experiment import (
    ExperimentConfig,
    ExperimentError,
    PhantomSpec,
    noise_study,
    prepare_data,
    run_experiment,
    sample_posterior,
    summarize,
)
from .forward import MeasurementSet, measure, pattern_set
from .inference import ChainConfig, PosteriorSamples
from .mesh import MeshError, generate_disk_mesh, read_mesh, write_mesh

log = logging.getLogger("bayes_levelset")


def _config(args) -> ExperimentConfig:
    d = {}
    if getattr(args, "config", None):
        d = json.loads(Path(args.config).read_text())
    if args.allow_inverse_crime:
        # must be set before the config validates its meshes
        d["allow_inverse_crime"] = True
    cfg = ExperimentConfig.from_dict(d) if d else ExperimentConfig()
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.output_dir is not None:
        over["output_dir"] = args.output_dir
    if args.allow_inverse_crime:
        over["allow_inverse_crime"] = True
    if getattr(args, "phantom", None):
        over["phantom"] = PhantomSpec.preset(args.phantom)
    if getattr(args, "noise", None) is not None:
        over["noise_level"] = args.noise
    if getattr(args, "patterns", None):
        over["patterns"] = args.patterns
    base = ChainConfig.full(seed=cfg.chain.seed) if getattr(args, "full", False) else cfg.chain
    chain = {}
    for key in ("iterations", "burn_in", "thin"):
        if getattr(args, key, None) is not None:
            chain[key] = getattr(args, key)
    if chain or base is not cfg.chain:
        over["chain"] = replace(base, **chain)
    return replace(cfg, **over) if over else cfg


def _require_dir(cfg) -> Path:
    if not cfg.output_dir:
        raise SystemExit("error: --output-dir is required for this command")
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _stored_config(args) -> ExperimentConfig:
    """Config saved by ``synth``, with command-line overrides on top."""
    out = Path(args.output_dir or ".")
    path = out / "config.json"
    if not path.exists():
        raise SystemExit(f"error: {path} not found; run 'synth' first")
    if not getattr(args, "config", None):
        args.config = str(path)
    return _config(args)


def _progress(every):
    def cb(k, state):
        if (k + 1) % every == 0:
            log.info("iteration %d  loglik %.2f  delta %.3g", k + 1, state.current_loglik,
                     state.delta_current)
    return cb


# -- commands -------------------------------------------------------------


def cmd_mesh_gen(args):
    mesh = generate_disk_mesh(args.radius, args.elements, args.boundary_elements, args.gap)
    write_mesh(args.out, mesh)
    print(f"{mesh.num_triangles} triangles, {mesh.num_vertices} vertices -> {args.out}")


def _field(spec, n):
    try:
        return np.full(n, float(spec))
    except ValueError:
        return report.read_field(spec)


def cmd_forward(args):
    if args.mesh:
        mesh = read_mesh(args.mesh)
    else:
        mesh = generate_disk_mesh(1.0, args.elements, args.boundary_elements, 0.25)
    n = mesh.num_triangles
    if args.flux:
        patterns = np.array([[float(v) for v in args.flux.split(",")]])
    else:
        patterns = pattern_set(args.patterns or "unit", mesh.num_elements)
    ms = measure(mesh, _field(args.a, n), _field(args.b, n), patterns)
    np.savetxt(sys.stdout, ms.blocks(), fmt="%.10g")


def _save_synth(out, cfg, true_a, true_b, data):
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")
    data.save(out / "data.npz", true_a=true_a, true_b=true_b)


def cmd_synth(args):
    cfg = _config(args)
    out = _require_dir(cfg)
    _, _, true_a, true_b, data = prepare_data(cfg)
    _save_synth(out, cfg, true_a, true_b, data)
    print(f"{data.data.size} data values, sigma {data.noise_sigma:.4g} -> {out / 'data.npz'}")


def cmd_sample(args):
    cfg = _stored_config(args)
    out = _require_dir(cfg)
    data = MeasurementSet.load(out / "data.npz")
    samples = sample_posterior(cfg, cfg.coarse_mesh(), data, _progress(args.log_every))
    samples.save(out / "samples.npz")
    print(f"{len(samples)} draws, acceptance {samples.acceptance_rate():.3f} -> "
          f"{out / 'samples.npz'}")


def _load_bundle(cfg, out):
    data = MeasurementSet.load(out / "data.npz")
    with np.load(out / "data.npz") as z:
        true_a, true_b = z["true_a"], z["true_b"]
    samples = PosteriorSamples.load(out / "samples.npz")
    return summarize(cfg, cfg.fine_mesh(), cfg.coarse_mesh(), true_a, true_b, samples, data)


def cmd_reconstruct(args):
    cfg = _stored_config(args)
    out = _require_dir(cfg)
    bundle = _load_bundle(cfg, out)
    (out / "fields").mkdir(exist_ok=True)
    for name, vals in bundle.reconstruction.fields().items():
        report.write_field(out / "fields" / f"{name}.csv", vals)
    (out / "metrics.json").write_text(json.dumps({"metrics": bundle.metrics}, indent=2) + "\n")
    print(json.dumps(bundle.metrics, indent=2))


def cmd_report(args):
    cfg = _stored_config(args)
    out = _require_dir(cfg)
    report.emit_report(_load_bundle(cfg, out), out)
    print(f"report written to {out}")


def cmd_experiment(args):
    cfg = _config(args)
    if cfg.output_dir:
        out = _require_dir(cfg)
        (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")
    bundle = run_experiment(cfg, progress=_progress(args.log_every))
    print(json.dumps(bundle.metrics, indent=2))


def cmd_noise_study(args):
    cfg = _config(args)
    table, _ = noise_study(cfg, args.levels, args.repeats, args.workers)
    print("noise param metric mean sd n")
    for r in table:
        print(f"{r['noise']:g} {r['param']} {r['metric']} {r['mean']:.4f} {r['sd']:.4f} {r['n']}")


# -- parser ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="root seed")
    common.add_argument("--output-dir", default=None)
    common.add_argument("--allow-inverse-crime", action="store_true",
                        help="permit identical data and inversion meshes")
    common.add_argument("--config", default=None, help="JSON experiment config")
    common.add_argument("-v", "--verbose", action="store_true")

    exp = argparse.ArgumentParser(add_help=False)
    exp.add_argument("--phantom", choices=["moon", "two_circles", "separate"])
    exp.add_argument("--noise", type=float, help="relative noise level, e.g. 0.02")
    exp.add_argument("--patterns", choices=["unit", "adjacent"])
    exp.add_argument("--full", action="store_true", help="300k/50k chain preset")
    exp.add_argument("--iterations", type=int)
    exp.add_argument("--burn-in", type=int)
    exp.add_argument("--thin", type=int)
    exp.add_argument("--log-every", type=int, default=10_000)

    p = argparse.ArgumentParser(prog="bayes-levelset", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("mesh-gen", parents=[common], help="write a disk mesh")
    s.add_argument("out")
    s.add_argument("--radius", type=float, default=1.0)
    s.add_argument("--elements", type=int, default=549)
    s.add_argument("--boundary-elements", type=int, default=16)
    s.add_argument("--gap", type=float, default=0.25)
    s.set_defaults(func=cmd_mesh_gen)

    s = sub.add_parser("forward", parents=[common], help="print element data for one solve")
    s.add_argument("--mesh", help="mesh file (default: generated disk)")
    s.add_argument("--elements", type=int, default=549)
    s.add_argument("--boundary-elements", type=int, default=16)
    s.add_argument("--a", default="1", help="constant or triangle_id,value CSV")
    s.add_argument("--b", default="0.1", help="constant or triangle_id,value CSV")
    s.add_argument("--flux", help="comma-separated fluxes for a single pattern")
    s.add_argument("--patterns", choices=["unit", "adjacent"])
    s.set_defaults(func=cmd_forward)

    for name, func, text in [
        ("synth", cmd_synth, "generate noisy data on the fine mesh"),
        ("sample", cmd_sample, "run the chain on stored data"),
        ("reconstruct", cmd_reconstruct, "fields and metrics from stored draws"),
        ("report", cmd_report, "fields, traces, metrics and figures"),
        ("experiment", cmd_experiment, "end-to-end run"),
    ]:
        s = sub.add_parser(name, parents=[common, exp], help=text)
        s.set_defaults(func=func)

    s = sub.add_parser("noise-study", parents=[common, exp], help="repeated runs per noise level")
    s.add_argument("--levels", type=float, nargs="+", default=[0.01, 0.02, 0.03, 0.04])
    s.add_argument("--repeats", type=int, default=10)
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_noise_study)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except (ExperimentError, MeshError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
