"""Command-line interface.

Exit codes: 0 success, 2 validation error, 3 averaging did not converge.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import io as cio
from .averaging import AdmmConfig
from .errors import ValidationError
from .metrics import EvalReport
from .pipeline import PipelineConfig, run_pipeline
from .synthetic import MeasurementNoise, generate, measure

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NO_CONVERGENCE = 3


def _admm_from_args(args) -> AdmmConfig:
    return AdmmConfig(
        rho=args.rho,
        max_iters=args.max_iters,
        primal_tol=args.tol,
        dual_tol=args.tol,
    )


def _pipeline_cfg(args) -> PipelineConfig:
    return PipelineConfig(
        admm=_admm_from_args(args),
        collinearity_threshold=args.collinearity_threshold,
        threads=args.threads,
        insert_virtual=not getattr(args, "no_virtual", False),
    )


def _emit(args, payload: dict, text: str) -> None:
    if args.json:
        print(json.dumps(payload, sort_keys=True))
    else:
        print(text)


def cmd_synth(args) -> int:
    scene = generate(
        args.layout,
        args.n_cams,
        args.n_points,
        seed=args.seed,
        intrinsics_mode=args.intrinsics,
        collinear_fraction=args.collinear_fraction,
    )
    cio.save_scene(scene, args.out)
    _emit(args, {"cameras": scene.n, "points": len(scene.points), "out": str(args.out)},
          f"wrote scene with {scene.n} cameras, {len(scene.points)} points to {args.out}")
    return EXIT_OK


def cmd_measure(args) -> int:
    scene = cio.load_scene(args.scene)
    noise = MeasurementNoise(args.noise_rot_deg, args.noise_trans_deg, args.noise_px)
    nview, tracks = measure(scene, noise, seed=args.seed)
    cio.save_measurements(nview, tracks, args.out)
    _emit(args, {"n": nview.n, "edges": len(nview.blocks), "out": str(args.out)},
          f"wrote {len(nview.blocks)} measured tensors over {nview.n} cameras to {args.out}")
    return EXIT_OK


def _run(args, scene):
    measurements, tracks = cio.load_measurements(args.measurements)
    cfg = _pipeline_cfg(args)
    return run_pipeline(measurements, tracks, args.algorithm, args.regime, scene, cfg)


def cmd_average(args) -> int:
    out = _run(args, None)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    n_total = max((max(t) for t in out.cover.triplets), default=0) + 1
    cio.write_convergence_log(out.averaging_log, outdir / "convergence.log")
    (outdir / "cover.json").write_text(out.cover.to_json() + "\n", encoding="utf-8")
    _emit(args, {"converged": out.converged, "iterations": len(out.averaging_log)},
          f"averaging {'converged' if out.converged else 'did NOT converge'} "
          f"in {len(out.averaging_log)} iterations ({n_total} cameras incl. virtual)")
    return EXIT_OK if out.converged else EXIT_NO_CONVERGENCE


def cmd_recover(args) -> int:
    out = _run(args, None)
    cio.save_cameras(out.cameras, out.frame, args.out)
    _emit(args, {"n_reconstructed": out.report.n_reconstructed, "out": str(args.out)},
          f"recovered {out.report.n_reconstructed} cameras ({out.frame} frame) to {args.out}")
    return EXIT_OK if out.converged else EXIT_NO_CONVERGENCE


def cmd_eval(args) -> int:
    cameras, frame = cio.load_cameras(args.cameras)
    _, tracks = cio.load_measurements(args.measurements)
    scene = cio.load_scene(args.scene) if args.scene else None
    from .pipeline import _evaluate

    regime = "calibrated" if frame == "euclidean" else "uncalibrated"
    report = _evaluate(cameras, len(cameras), tracks, scene, regime, args.algorithm, True)
    cio.save_report(report, args.out, include_runtime=args.timing)
    _emit(args, report.to_dict(), _report_text(report))
    return EXIT_OK


def _report_text(report: EvalReport) -> str:
    parts = [f"{report.algorithm}/{report.regime}:",
             f"{report.n_reconstructed}/{report.n_cameras} cameras"]
    if report.mean_position_error is not None:
        parts.append(f"mean position error {report.mean_position_error:.3e}")
        parts.append(f"median {report.median_position_error:.3e}")
    if report.mean_reprojection_error is not None:
        parts.append(f"mean reprojection error {report.mean_reprojection_error:.3e}")
    if not report.converged:
        parts.append("(averaging did not converge)")
    return " ".join(parts)


def cmd_pipeline(args) -> int:
    scene = cio.load_scene(args.scene) if args.scene else None
    measurements, tracks = cio.load_measurements(args.measurements)
    cfg = _pipeline_cfg(args)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    try:
        out = run_pipeline(measurements, tracks, args.algorithm, args.regime, scene, cfg)
    except ValidationError as exc:
        report = EvalReport(
            algorithm=args.algorithm, regime=args.regime,
            n_cameras=measurements.n, n_reconstructed=0,
            mean_position_error=None, median_position_error=None,
            mean_reprojection_error=None, converged=False,
            failure_stage=str(exc),
        )
        cio.save_report(report, outdir / "report.json", include_runtime=args.timing)
        raise
    cio.save_report(out.report, outdir / "report.json", include_runtime=args.timing)
    cio.save_cameras(out.cameras, out.frame, outdir / "cameras_out.json")
    (outdir / "cover.json").write_text(out.cover.to_json() + "\n", encoding="utf-8")
    cio.write_convergence_log(out.averaging_log, outdir / "convergence.log")
    _emit(args, out.report.to_dict(), _report_text(out.report))
    return EXIT_OK if out.converged else EXIT_NO_CONVERGENCE


def _add_common(p) -> None:
    p.add_argument("--algorithm", choices=["r4", "vc"], default="r4")
    p.add_argument("--regime", choices=["calibrated", "uncalibrated"], default="calibrated")
    p.add_argument("--tol", type=float, default=1e-9, help="ADMM primal/dual tolerance")
    p.add_argument("--max-iters", type=int, default=500)
    p.add_argument("--rho", type=float, default=5.0, help="ADMM penalty")
    p.add_argument("--collinearity-threshold", type=float, default=0.05)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--no-virtual", action="store_true",
                   help="vc only: skip virtual-camera insertion (diagnostic)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="colsfm",
        description="Bifocal tensor averaging and camera recovery for collinear camera networks",
    )
    ap.add_argument("--json", action="store_true", help="machine-readable diagnostics")
    ap.add_argument("--timing", action="store_true",
                    help="include measured runtime in report.json (breaks byte determinism)")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic scene")
    p.add_argument("--layout", choices=["collinear", "general", "mixed"], default="collinear")
    p.add_argument("--n-cams", type=int, default=10)
    p.add_argument("--n-points", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--intrinsics", choices=["calibrated", "varied"], default="calibrated")
    p.add_argument("--collinear-fraction", type=float, default=0.5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("measure", help="simulate measured tensors and tracks")
    p.add_argument("--scene", required=True)
    p.add_argument("--noise-rot-deg", type=float, default=0.0)
    p.add_argument("--noise-trans-deg", type=float, default=0.0)
    p.add_argument("--noise-px", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_measure)

    p = sub.add_parser("average", help="run the ADMM averaging stage")
    p.add_argument("--measurements", required=True)
    p.add_argument("--out", required=True, help="output directory (cover + log)")
    _add_common(p)
    p.set_defaults(func=cmd_average)

    p = sub.add_parser("recover", help="average + camera recovery")
    p.add_argument("--measurements", required=True)
    p.add_argument("--out", required=True, help="cameras_out.json path")
    _add_common(p)
    p.set_defaults(func=cmd_recover)

    p = sub.add_parser("eval", help="evaluate recovered cameras")
    p.add_argument("--cameras", required=True)
    p.add_argument("--measurements", required=True)
    p.add_argument("--scene", default=None, help="ground truth scene for position errors")
    p.add_argument("--algorithm", choices=["r4", "vc"], default="r4")
    p.add_argument("--out", required=True, help="report.json path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("pipeline", help="full run: average, recover, evaluate")
    p.add_argument("--measurements", required=True)
    p.add_argument("--scene", default=None)
    p.add_argument("--out", required=True, help="output directory")
    _add_common(p)
    p.set_defaults(func=cmd_pipeline)

    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
