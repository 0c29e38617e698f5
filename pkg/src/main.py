"""
Command-line entry point.

    python -m src.main analyze --metric data/sphere3.json
    python -m src.main embed --metric data/sphere2.json --out output/cap.obj
    python -m src.main verify-k --metric data/flat_cartesian2.json --candidate fields.csv
    python -m src.main cross-section --metric data/sphere3.json --level 0.05
    python -m src.main presets

Exit codes: 0 success, 2 obstruction found, 3 input error, 4 numerical failure.
"""

import argparse
import logging
import os
import shutil
import sys
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from app.config import settings

from .cross_section import cross_section_check
from .errors import DegenerateGradient, EmptyLevelBand, ImmersionError, InputError, SchemaError, UsageError
from .flat_immersion import build_immersion
from .general_k import KTupleCandidate, verify_k_tuple
from .height_field import integrate_height
from .models import (
    CrossSectionSummary,
    EmbeddingSummary,
    GridSummary,
    KTupleSummary,
    ReportDocument,
    ResidualSummary,
    RunInfo,
    Tolerances,
)
from .obstruction import ObstructionReport, analyze, pi_evaluator
from .presets_io import bundled_presets, load_metric, read_samples, seed_index, write_embedding, write_report
from .utils import utc_timestamp

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_OBSTRUCTION = 2
EXIT_INPUT = 3
EXIT_NUMERICAL = 4

COMMANDS = ("analyze", "embed", "verify-k", "cross-section", "presets")
EMBEDDABLE = ("Immersible", "FlatCase", "SurfaceCase")


@dataclass
class CliInvocation:
    command: str
    metric: Optional[str] = None
    out: Optional[str] = None
    report: Optional[str] = None
    tolerances: Tolerances = field(default_factory=Tolerances)
    order: int = 2
    substeps: int = 4
    threads: int = 1
    seed_point: Optional[List[float]] = None
    seed_h: Optional[float] = None
    seed_grad: Optional[List[float]] = None
    levels: List[float] = field(default_factory=list)
    format: str = "obj"
    candidate: Optional[str] = None
    verbose: bool = False


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="immersion",
        description="Decide and construct local isometric immersions of Riemannian charts into R^(n+1)",
    )
    common = _Parser(add_help=False)
    common.add_argument("--metric", help="Metric spec document (JSON)")
    common.add_argument("--out", help="Output path (embedding file, or directory for presets)")
    common.add_argument("--report", help="Report path (JSON; a .txt summary is written next to it)")
    common.add_argument("--tol-flat", type=float, default=settings.TOL_FLAT)
    common.add_argument("--tol-weyl", type=float, default=settings.TOL_WEYL)
    common.add_argument("--tol-codazzi", type=float, default=settings.TOL_CODAZZI)
    common.add_argument("--tol-gauss", type=float, default=settings.TOL_GAUSS)
    common.add_argument("--order", type=int, choices=(2, 4), default=settings.DIFF_ORDER,
                        help="Finite-difference order (default: %(default)s)")
    common.add_argument("--substeps", type=int, default=settings.RK4_SUBSTEPS,
                        help="RK4 substeps per grid cell (default: %(default)s)")
    common.add_argument("--threads", type=int, default=settings.THREADS)
    common.add_argument("--verbose", action="store_true", help="Debug logging")

    seeds = _Parser(add_help=False)
    seeds.add_argument("--seed-point", type=float, nargs="+", help="Seed chart coordinates (snapped to a node)")
    seeds.add_argument("--seed-h", type=float, help="Height at the seed")
    seeds.add_argument("--seed-grad", type=float, nargs="+", help="Height gradient at the seed")

    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("analyze", parents=[common], help="Classify a metric")
    embed = sub.add_parser("embed", parents=[common, seeds], help="Build the immersion")
    embed.add_argument("--format", choices=("csv", "obj"), default=settings.EMBED_FORMAT)
    verify = sub.add_parser("verify-k", parents=[common], help="Check a k-tuple of scalar fields")
    verify.add_argument("--candidate", required=True, help="Samples CSV holding the candidate fields")
    cross = sub.add_parser("cross-section", parents=[common, seeds], help="Check level-set curvature scaling")
    cross.add_argument("--level", type=float, action="append", required=True, help="Level of h (repeatable)")
    sub.add_parser("presets", parents=[common], help="List or copy the bundled spec documents")
    return parser


def parse_invocation(argv: Optional[Sequence[str]] = None) -> CliInvocation:
    args = build_parser().parse_args(argv)
    if args.command != "presets" and not args.metric:
        raise UsageError(f"{args.command} requires --metric")
    for name in ("substeps", "threads"):
        if getattr(args, name) < 1:
            raise UsageError(f"--{name} must be at least 1")
    try:
        tolerances = Tolerances(**{
            **settings.tolerances().model_dump(),
            "flat": args.tol_flat,
            "weyl": args.tol_weyl,
            "codazzi": args.tol_codazzi,
            "gauss": args.tol_gauss,
        })
    except ValueError as exc:
        raise UsageError(f"Invalid tolerance: {exc}") from exc
    return CliInvocation(
        command=args.command,
        metric=args.metric,
        out=args.out,
        report=args.report,
        tolerances=tolerances,
        order=args.order,
        substeps=args.substeps,
        threads=args.threads,
        seed_point=getattr(args, "seed_point", None),
        seed_h=getattr(args, "seed_h", None),
        seed_grad=getattr(args, "seed_grad", None),
        levels=getattr(args, "level", None) or [],
        format=getattr(args, "format", settings.EMBED_FORMAT),
        candidate=getattr(args, "candidate", None),
        verbose=args.verbose,
    )


# ---------------------------------------------------------------------------
# Report assembly
# ---------------------------------------------------------------------------

class _Timer:
    def __init__(self):
        self.timings: Dict[str, float] = {}

    def stage(self, name: str, fn, *args, **kwargs):
        start = time.perf_counter()
        try:
            return fn(*args, **kwargs)
        finally:
            self.timings[name] = round(time.perf_counter() - start, 6)


def _finite(value: Optional[float]) -> Optional[float]:
    if value is None or not np.isfinite(value):
        return None
    return float(value)


def _document(inv: CliInvocation, name: str, grid, report: Optional[ObstructionReport], timer: _Timer) -> ReportDocument:
    doc = ReportDocument(
        command=inv.command,
        metric=name,
        grid=GridSummary(**grid.summary()),
        tolerances=inv.tolerances,
        differentiation_order=inv.order,
        run=RunInfo(timestamp=utc_timestamp(), timings=timer.timings),
    )
    if report is not None:
        doc.verdict = report.verdict
        doc.residuals = ResidualSummary(
            weyl_star=report.weyl_star_norm,
            gauss=_finite(report.gauss_residual),
            codazzi=_finite(report.codazzi_residual),
            flatness=report.flatness,
            min_operator_eigenvalue=_finite(report.min_operator_eigenvalue),
            conditioning=_finite(report.conditioning),
            surface_determinant=_finite(report.surface_determinant_residual),
        )
        doc.pi_present = report.pi is not None
        doc.sectional_positive = report.sectional_positive
        doc.codimension_lower_bound = report.codimension_lower_bound
        doc.non_unique = report.non_unique
        doc.notes = list(report.notes)
    return doc


def _report_path(inv: CliInvocation, name: str) -> str:
    if inv.report:
        return inv.report
    return os.path.join(settings.OUTPUT_DIR, f"{name}_{inv.command.replace('-', '_')}.json")


def _save_report(doc: ReportDocument, path: str) -> None:
    write_report(doc, path)
    print(f"Saved report to {path}")


def _seed(inv: CliInvocation, spec, grid):
    index = seed_index(spec, grid, inv.seed_point)
    h0 = inv.seed_h if inv.seed_h is not None else (spec.seed.h0 if spec.seed else 0.0)
    grad0 = inv.seed_grad if inv.seed_grad is not None else (spec.seed.grad0 if spec.seed else None)
    return index, h0, grad0


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _run_analyze(inv: CliInvocation) -> int:
    timer = _Timer()
    spec, metric = timer.stage("load", load_metric, inv.metric)
    report = timer.stage("analyze", analyze, metric, inv.tolerances, inv.order, inv.threads)
    doc = _document(inv, spec.name, metric.grid, report, timer)
    _save_report(doc, _report_path(inv, spec.name))
    print(f"{spec.name}: {report.verdict}")
    return EXIT_OK if report.verdict in ("Immersible", "FlatCase") else EXIT_OBSTRUCTION


def _run_embed(inv: CliInvocation) -> int:
    timer = _Timer()
    spec, metric = timer.stage("load", load_metric, inv.metric)
    report = timer.stage("analyze", analyze, metric, inv.tolerances, inv.order, inv.threads)
    doc = _document(inv, spec.name, metric.grid, report, timer)
    path = _report_path(inv, spec.name)
    if report.verdict not in EMBEDDABLE or report.pi is None:
        doc.notes.append(f"no immersion built: verdict {report.verdict}")
        _save_report(doc, path)
        print(f"{spec.name}: {report.verdict}, nothing to embed")
        return EXIT_OBSTRUCTION

    index, h0, grad0 = _seed(inv, spec, metric.grid)
    evaluate = None if report.verdict == "FlatCase" else pi_evaluator(metric, inv.tolerances)
    result = timer.stage(
        "embed", build_immersion, metric, report.pi, index,
        h0=h0, grad0=grad0, substeps=inv.substeps, clamp=inv.tolerances.clamp,
        order=inv.order, pi_evaluate=evaluate,
    )
    out = inv.out or os.path.join(settings.OUTPUT_DIR, f"{spec.name}_embedding.{inv.format}")
    timer.stage("write", write_embedding, result.immersion, out, inv.format)

    imm = result.immersion
    doc.embedding = EmbeddingSummary(
        output=out,
        format=inv.format,
        seed_index=list(index),
        h0=float(h0),
        grad0=[float(v) for v in result.height.grad0],
        valid_points=int(imm.valid.sum()),
        total_points=metric.grid.size,
        guaranteed_radius=_finite(result.guaranteed_radius),
        path_independence=result.path_independence,
        flat_metric_flatness=result.flat.flatness,
        closure_residual=result.coordinates.closure_residual,
        induced_residual=imm.induced_residual,
        second_form_residual=imm.second_form_residual,
        normal_deviation=imm.normal_deviation,
        normal_norm_deviation=imm.normal_norm_deviation,
    )
    doc.run.timings = timer.timings
    _save_report(doc, path)
    print(f"{spec.name}: {report.verdict}, embedding written to {out}")
    return EXIT_OK


def _run_verify_k(inv: CliInvocation) -> int:
    timer = _Timer()
    spec, metric = timer.stage("load", load_metric, inv.metric)
    candidate = timer.stage("candidate", read_samples, inv.candidate)
    if not isinstance(candidate, KTupleCandidate):
        raise SchemaError(f"{inv.candidate} holds a metric, not candidate fields")
    result = timer.stage("verify", verify_k_tuple, metric, candidate, inv.order)
    doc = _document(inv, spec.name, metric.grid, None, timer)
    doc.k_tuple = KTupleSummary(
        k=result.k,
        residual=result.residual,
        relative_residual=result.relative_residual,
        f_positive_definite=result.f_positive_definite,
        max_condition_number=result.max_condition_number,
        inverse_identity_residual=result.inverse_identity_residual,
    )
    _save_report(doc, _report_path(inv, spec.name))
    print(f"{spec.name}: k = {result.k}, residual {result.residual:.3g}, f positive {result.f_positive_definite}")
    return EXIT_OK


def _run_cross_section(inv: CliInvocation) -> int:
    timer = _Timer()
    spec, metric = timer.stage("load", load_metric, inv.metric)
    report = timer.stage("analyze", analyze, metric, inv.tolerances, inv.order, inv.threads)
    doc = _document(inv, spec.name, metric.grid, report, timer)
    path = _report_path(inv, spec.name)
    if report.pi is None:
        doc.notes.append(f"no height field: verdict {report.verdict}")
        _save_report(doc, path)
        return EXIT_OBSTRUCTION

    index, h0, grad0 = _seed(inv, spec, metric.grid)
    evaluate = None if report.verdict == "FlatCase" else pi_evaluator(metric, inv.tolerances)
    height = timer.stage(
        "height", integrate_height, report.pi, metric, index,
        h0=h0, grad0=grad0, substeps=inv.substeps, clamp=inv.tolerances.clamp,
        pi_evaluate=evaluate, order=inv.order,
    )
    for level in inv.levels:
        try:
            result = timer.stage(
                f"level {level:g}", cross_section_check, metric, report.curvature, height, report.pi, level
            )
        except (EmptyLevelBand, DegenerateGradient) as exc:
            logger.warning("Level %g skipped: %s", level, exc)
            doc.cross_sections.append(CrossSectionSummary(level=level, error=str(exc)))
            continue
        doc.cross_sections.append(CrossSectionSummary(
            level=result.level,
            residual=result.residual,
            band_points=result.band_points,
            min_scaling_factor=result.min_scaling_factor,
            max_scaling_factor=result.max_scaling_factor,
        ))
    doc.run.timings = timer.timings
    _save_report(doc, path)
    for section in doc.cross_sections:
        if section.error:
            print(f"level {section.level:g}: {section.error}")
        else:
            print(f"level {section.level:g}: residual {section.residual:.3g} over {section.band_points} points")
    if doc.cross_sections and all(section.error for section in doc.cross_sections):
        return EXIT_INPUT
    return EXIT_OK


def _run_presets(inv: CliInvocation) -> int:
    presets = bundled_presets(settings.PRESET_DIR if os.path.isdir(settings.PRESET_DIR) else None)
    for name, path in presets.items():
        print(f"{name}\t{path}")
    if inv.out:
        os.makedirs(inv.out, exist_ok=True)
        for path in presets.values():
            shutil.copy(path, inv.out)
        logger.info("Copied %d presets to %s", len(presets), inv.out)
    return EXIT_OK


HANDLERS = {
    "analyze": _run_analyze,
    "embed": _run_embed,
    "verify-k": _run_verify_k,
    "cross-section": _run_cross_section,
    "presets": _run_presets,
}


def run(invocation: CliInvocation) -> int:
    """Execute one invocation; every failure maps to an exit code."""
    try:
        return HANDLERS[invocation.command](invocation)
    except InputError as exc:
        logger.error("Input error: %s", exc)
        return EXIT_INPUT
    except ImmersionError as exc:
        logger.error("Numerical failure: %s", exc)
        return EXIT_NUMERICAL
    except (np.linalg.LinAlgError, FloatingPointError) as exc:
        logger.error("Numerical failure: %s", exc)
        return EXIT_NUMERICAL
    except (ValueError, OSError) as exc:
        logger.error("Input error: %s", exc)
        return EXIT_INPUT


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        invocation = parse_invocation(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.DEBUG if invocation.verbose else getattr(logging, settings.LOG_LEVEL.upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    return run(invocation)


if __name__ == "__main__":
    sys.exit(main())
