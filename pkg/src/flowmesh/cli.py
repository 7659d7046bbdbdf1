"""Command-line pipeline: depth meshing, deformation, flow sampling, drag runs.

Exit codes: 0 success, 2 user error, 3 empty or degenerate result,
4 numerical failure. FLOWMESH_LOG sets the log level.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import arap, depthmesh, drag, flow as flowmod, images, mesh as meshmod, meshobj, report, rigidity
from .errors import (
    ConfigurationError,
    DegenerateGeometryError,
    EmptyMeshError,
    FlowMeshError,
    NumericalError,
    RankError,
    StructuralError,
    UndefinedMetricError,
    UnmappedHandleError,
)

log = logging.getLogger("flowmesh")

USER_ERRORS = (ConfigurationError, UnmappedHandleError, StructuralError)
EMPTY_ERRORS = (EmptyMeshError, UndefinedMetricError, DegenerateGeometryError)
NUMERIC_ERRORS = (NumericalError, RankError)


def _setup_logging():
    level = os.environ.get("FLOWMESH_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _parse_point(text: str):
    parts = text.split(",")
    if len(parts) != 2:
        raise ConfigurationError(f"expected 'x,y', got {text!r}")
    return float(parts[0]), float(parts[1])


def _deform_params(args) -> arap.DeformParams:
    return arap.DeformParams(
        alpha=args.alpha, beta=args.beta, lam=getattr(args, "lam"),
        steps=args.steps, max_lg_iters=args.max_iters, rel_tol=args.rel_tol,
        weight_mode=args.weights,
    )


def _add_deform_flags(p):
    p.add_argument("--alpha", type=float, default=0.3)
    p.add_argument("--beta", type=float, default=0.8)
    p.add_argument("--lambda", dest="lam", type=float, default=0.5)
    p.add_argument("--steps", type=int, default=10)
    p.add_argument("--max-iters", dest="max_iters", type=int, default=50)
    p.add_argument("--rel-tol", dest="rel_tol", type=float, default=1e-6)
    p.add_argument("--weights", choices=["cotangent", "uniform"], default="cotangent")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_depth2mesh(args) -> int:
    depth = depthmesh.DepthMap(images.read_depth(args.depth))
    tau_b = args.tau_b if args.tau_b == "auto" else float(args.tau_b)
    resolved_b = depthmesh.resolve_tau_b(depth, tau_b)
    print(f"tau_d={args.tau_d} tau_b={resolved_b}")
    mesh = depthmesh.depth_to_mesh(depth, tau_d=args.tau_d, tau_b=tau_b,
                                   reduction_ratio=args.reduction,
                                   depth_scale=args.depth_scale)
    meshobj.write_mesh(mesh, args.output)
    print(f"vertices={mesh.n_vertices} faces={mesh.n_faces}")
    print(f"wrote {args.output}")
    return 0


def _load_and_deform(mesh, spec, params, snap_radius=depthmesh.DEFAULT_SNAP_RADIUS,
                     on_step=None):
    proj = meshmod.project_2d(mesh, image_size=spec.mask.shape[::-1])
    constraints = depthmesh.lift_drag_spec(spec, mesh, proj, snap_radius=snap_radius)
    trace = arap.deform_progressive(mesh, constraints, params, on_step=on_step)
    return proj, constraints, trace


def cmd_deform(args) -> int:
    mesh = meshobj.read_mesh(args.mesh)
    spec = depthmesh.read_drag_spec(args.spec)
    params = _deform_params(args)
    proj, constraints, trace = _load_and_deform(mesh, spec, params,
                                                snap_radius=args.snap_radius)
    outdir = Path(args.output)
    arap.write_trace(trace, mesh, outdir)
    for k, (e_arap, e_sr) in enumerate(zip(trace.arap_energies, trace.srarap_energies), 1):
        print(f"step {k}: arap={e_arap:.6g} srarap={e_sr:.6g} "
              f"converged={trace.converged[k - 1]}")
    movable = constraints.movable
    final = trace.final_positions
    rep = rigidity.rigidity_report(mesh, final, movable)
    report.energy_figure(trace.arap_energies, trace.srarap_energies,
                         outdir / "energies.png", converged=trace.converged)
    proj_after = meshmod.project_deformed(mesh, final, image_size=spec.mask.shape[::-1])
    report.wireframe_figure(mesh, proj, proj_after, outdir / "wireframe.png")
    print(f"MELR={rep.melr:.3f} mARAP={rep.m_arap_error:.6g}")
    print(f"wrote trace to {outdir}")
    return 0


def cmd_flow(args) -> int:
    loaded = arap.read_trace(args.trace)
    mask = images.load_mask_ref(args.mask)
    base = loaded.base_mesh
    proj_before = meshmod.project_2d(base, image_size=mask.shape[::-1])
    proj_after = meshmod.project_deformed(base, loaded.final_mesh.vertices,
                                          image_size=mask.shape[::-1])
    field = flowmod.compute_flow(proj_before, proj_after)
    candidates = flowmod.grid_candidates(field, mask, grid_n=args.grid)
    sampled = flowmod.sample_flow(candidates, args.strategy, count=args.count,
                                  grid_n=args.grid)
    outdir = Path(args.output)
    outdir.mkdir(parents=True, exist_ok=True)
    flowmod.write_flow_json(sampled, outdir / "flow.json")
    flowmod.write_flow_csv(sampled.vectors, outdir / "flow.csv")
    flowmod.write_flow_csv(field.records(), outdir / "field.csv")
    report.flow_figure(candidates, (field.width, field.height),
                       outdir / "flow.png", sampled=sampled)
    print(f"candidates={len(candidates)} sampled={len(sampled)} "
          f"strategy={sampled.strategy}")
    print(f"wrote flow to {outdir}")
    return 0


def cmd_dragsim(args) -> int:
    if args.latent:
        grid = drag.read_latent(args.latent)
    else:
        rng = np.random.default_rng(args.seed)
        h, w, c = args.generate
        values = rng.normal(0.0, 1.0, (h, w, c))
        if args.bump:
            y, x = np.mgrid[0:h, 0:w]
            cx, cy = args.bump_center or (w / 2, h / 2)
            values = values * 0.0 + args.bump * np.exp(
                -(((x - cx) ** 2 + (y - cy) ** 2) / (2.0 * args.bump_sigma ** 2))
            )[:, :, None]
        grid = drag.LatentGrid(values)
    handles = [(_parse_point(t)) for t in args.handle]
    targets = [(_parse_point(t)) for t in args.target]
    state = drag.DragState(
        grid, handles, targets,
        patch_radius=args.patch_radius, track_radius=args.track_radius,
        lambda_reg=args.lambda_reg, eta=args.eta,
    )
    feat = drag.make_feature_fn(args.feature)
    use_flow = flowmod.read_flow_json(args.flow) if args.flow else None
    trace = drag.run_drag(state, feat, alternations=args.alternations,
                          ms_iters_per_alt=args.ms_iters, use_flow=use_flow,
                          stop_within=args.stop_within)
    outdir = Path(args.output)
    outdir.mkdir(parents=True, exist_ok=True)
    drag.write_drag_trace(trace, outdir / "dragtrace.json")
    report.drag_figure(trace, outdir / "drag.png")
    print(f"alternations={trace.alternations_run} MD={trace.mean_distance:.4f}")
    print(f"wrote drag trace to {outdir}")
    return 0


def cmd_pipeline(args) -> int:
    outdir = Path(args.output)
    outdir.mkdir(parents=True, exist_ok=True)
    depth = depthmesh.DepthMap(images.read_depth(args.depth))
    spec = depthmesh.read_drag_spec(args.spec)
    params = _deform_params(args)
    stages = []
    artifacts = {}

    def record(path: Path):
        artifacts[str(path.relative_to(outdir))] = {
            "sha256": _sha256(path), "bytes": path.stat().st_size,
        }

    def timed(name, fn):
        t0 = time.perf_counter()
        result = fn()
        stages.append({"stage": name, "seconds": time.perf_counter() - t0})
        log.info("%s took %.3fs", name, stages[-1]["seconds"])
        return result

    reductions = args.reduction
    flows = {}
    for ratio in reductions:
        sub = outdir if len(reductions) == 1 else outdir / f"reduction_{ratio:g}"
        sub.mkdir(parents=True, exist_ok=True)
        mesh = timed(f"mesh r={ratio:g}", lambda: depthmesh.depth_to_mesh(
            depth, tau_d=args.tau_d,
            tau_b=args.tau_b if args.tau_b == "auto" else float(args.tau_b),
            reduction_ratio=ratio, depth_scale=args.depth_scale))
        meshobj.write_mesh(mesh, sub / "mesh.obj")
        record(sub / "mesh.obj")
        proj, constraints, trace = timed(f"deform r={ratio:g}", lambda: _load_and_deform(
            mesh, spec, params, snap_radius=args.snap_radius))
        arap.write_trace(trace, mesh, sub / "trace")
        for f in sorted((sub / "trace").iterdir()):
            record(f)
        proj_after = meshmod.project_deformed(mesh, trace.final_positions,
                                              image_size=spec.mask.shape[::-1])
        field = flowmod.compute_flow(proj, proj_after)
        candidates = timed(f"flow r={ratio:g}", lambda: flowmod.grid_candidates(
            field, spec.mask, grid_n=args.grid))
        sampled = flowmod.sample_flow(candidates, args.strategy, count=args.count,
                                      grid_n=args.grid)
        flowmod.write_flow_json(sampled, sub / "flow.json")
        flowmod.write_flow_csv(sampled.vectors, sub / "flow.csv")
        record(sub / "flow.json")
        record(sub / "flow.csv")
        rep = rigidity.rigidity_report(mesh, trace.final_positions, constraints.movable)
        (sub / "metrics.json").write_text(json.dumps(rep.to_dict(), indent=1))
        record(sub / "metrics.json")
        report.flow_figure(candidates, (field.width, field.height),
                           sub / "flow.png", sampled=sampled)
        report.energy_figure(trace.arap_energies, trace.srarap_energies,
                             sub / "energies.png", converged=trace.converged)
        record(sub / "flow.png")
        record(sub / "energies.png")
        flows[ratio] = sampled
        print(f"reduction {ratio:g}: vertices={mesh.n_vertices} "
              f"faces={mesh.n_faces} MELR={rep.melr:.3f} mARAP={rep.m_arap_error:.6g}")

    hashed = {"params": {
        "tau_d": args.tau_d, "tau_b": args.tau_b, "reduction": reductions,
        "deform": params.to_dict(), "grid": args.grid,
        "strategy": args.strategy, "count": args.count,
    }, "artifacts": artifacts}
    canonical = json.dumps(hashed, sort_keys=True, separators=(",", ":"))
    manifest = dict(hashed)
    manifest["manifest_sha256"] = hashlib.sha256(canonical.encode()).hexdigest()
    manifest["stages"] = stages  # timings stay outside the hashed section
    (outdir / "manifest.json").write_text(json.dumps(manifest, indent=1))
    print(f"manifest sha256 {manifest['manifest_sha256']}")
    return 0


def cmd_sample(args) -> int:
    """Write the bundled sample inputs: a dome depth map plus one drag."""
    outdir = Path(args.output)
    outdir.mkdir(parents=True, exist_ok=True)
    n = 64
    r, c = np.mgrid[0:n, 0:n]
    center = (n - 1) / 2
    dome = 0.55 + 0.08 * np.exp(-(((r - center) ** 2 + (c - center) ** 2)
                                  / (2 * (n / 3.2) ** 2)))
    images.write_depth_png(np.clip(dome, 0, 1), outdir / "depth.png")
    mask = np.ones((n, n), dtype=bool)
    spec = depthmesh.DragSpec2D([[32, 32]], [[38, 28]], mask)
    depthmesh.write_drag_spec(spec, outdir / "dragspec.json")
    print(f"wrote sample inputs to {outdir}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app
    app = create_app(state_dir=args.state_dir)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flowmesh",
        description="Depth-map meshing, rigidity-preserving deformation, "
                    "2D vector flow sampling and a drag-editing kernel.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("depth2mesh", help="mesh a normalized depth map")
    p.add_argument("--depth", required=True)
    p.add_argument("--tau-d", dest="tau_d", type=float, default=depthmesh.DEFAULT_TAU_D)
    p.add_argument("--tau-b", dest="tau_b", default="auto",
                   help="background threshold value or 'auto' (mean depth + 0.3)")
    p.add_argument("--reduction", type=float, default=1.0)
    p.add_argument("--depth-scale", dest="depth_scale", type=float, default=None)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_depth2mesh)

    p = sub.add_parser("deform", help="run the progressive deformation")
    p.add_argument("--mesh", required=True)
    p.add_argument("--spec", required=True, help="drag spec JSON")
    p.add_argument("--snap-radius", dest="snap_radius", type=float,
                   default=depthmesh.DEFAULT_SNAP_RADIUS)
    _add_deform_flags(p)
    p.add_argument("-o", "--output", required=True, help="trace directory")
    p.set_defaults(func=cmd_deform)

    p = sub.add_parser("flow", help="derive and sample the 2D vector flow")
    p.add_argument("--trace", required=True, help="trace directory from 'deform'")
    p.add_argument("--mask", required=True, help="mask PNG path or inline RLE")
    p.add_argument("--grid", type=int, default=flowmod.DEFAULT_GRID_N)
    p.add_argument("--strategy", choices=["magnitude", "uniform"], default="magnitude")
    p.add_argument("--count", type=int, default=flowmod.DEFAULT_SAMPLE_COUNT)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_flow)

    p = sub.add_parser("dragsim", help="run the drag-editing kernel on a latent grid")
    p.add_argument("--latent", help="latent grid file (FMLG)")
    p.add_argument("--generate", type=lambda s: tuple(int(t) for t in s.split("x")),
                   default=(48, 48, 1), help="HxWxC for a generated latent")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--bump", type=float, default=None,
                   help="replace noise with a Gaussian bump of this amplitude")
    p.add_argument("--bump-sigma", dest="bump_sigma", type=float, default=3.0)
    p.add_argument("--bump-center", dest="bump_center", type=_parse_point, default=None)
    p.add_argument("--handle", action="append", required=True, help="x,y (repeatable)")
    p.add_argument("--target", action="append", required=True, help="x,y (repeatable)")
    p.add_argument("--feature", choices=["identity", "blur"], default="identity")
    p.add_argument("--eta", type=float, default=drag.DEFAULT_ETA)
    p.add_argument("--patch-radius", dest="patch_radius", type=int,
                   default=drag.DEFAULT_PATCH_RADIUS)
    p.add_argument("--track-radius", dest="track_radius", type=int,
                   default=drag.DEFAULT_TRACK_RADIUS)
    p.add_argument("--lambda-reg", dest="lambda_reg", type=float,
                   default=drag.DEFAULT_LAMBDA_REG)
    p.add_argument("--alternations", type=int, default=80)
    p.add_argument("--ms-iters", dest="ms_iters", type=int, default=1)
    p.add_argument("--stop-within", dest="stop_within", type=float, default=0.0)
    p.add_argument("--flow", help="restrict supervision to this sampled flow JSON")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_dragsim)

    p = sub.add_parser("pipeline", help="depth -> mesh -> deform -> flow -> metrics")
    p.add_argument("--depth", required=True)
    p.add_argument("--spec", required=True)
    p.add_argument("--tau-d", dest="tau_d", type=float, default=depthmesh.DEFAULT_TAU_D)
    p.add_argument("--tau-b", dest="tau_b", default="auto")
    p.add_argument("--reduction", type=float, nargs="+", default=[1.0])
    p.add_argument("--depth-scale", dest="depth_scale", type=float, default=None)
    p.add_argument("--snap-radius", dest="snap_radius", type=float,
                   default=depthmesh.DEFAULT_SNAP_RADIUS)
    _add_deform_flags(p)
    p.add_argument("--grid", type=int, default=flowmod.DEFAULT_GRID_N)
    p.add_argument("--strategy", choices=["magnitude", "uniform"], default="magnitude")
    p.add_argument("--count", type=int, default=flowmod.DEFAULT_SAMPLE_COUNT)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("sample", help="write the bundled sample inputs")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("serve", help="run the REST service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8787)
    p.add_argument("--state-dir", dest="state_dir", default=None)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except USER_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except EMPTY_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NUMERIC_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FlowMeshError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
