"""Command-line pipeline: demo-gen -> sensitivity -> plan -> compress -> report.

Each stage reads/writes files under a shared output directory, so stages can
be re-run independently and everything is inspectable on disk:

    sensitivity   curve_<layer>.csv, sensitivity_summary.csv
    plan          rate_plan.json
    compress      compressed/manifest.json (+ blobs), report.json, report.txt
    report        report.json, report.txt (recomputed from the artifacts)

Exit codes: 0 success, 1 usage, 2 malformed/missing data, 3 numerical failure.
``CC_LOG=debug|info|warning|error`` controls stderr logging.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .core import CompressedLayer
from .demo import make_demo_network
from .errors import ConvSqueezeError, DataError, NumericalError, UsageError
from .heuristic import HeuristicConfig, compress_layer
from .model_io import (
    LayerRecord,
    NetworkBundle,
    build_report,
    format_report_table,
    load_compressed,
    load_network,
    load_rate_plan,
    load_sensitivity_summary,
    save_compressed,
    write_rate_plan,
    write_report,
    write_sensitivity_csv,
)
from .planner import (
    DEFAULT_R_MAX,
    DEFAULT_STOP_THRESHOLD,
    plan_rates,
)
from .sensitivity import SensitivityCurve, sensitivity_curve

log = logging.getLogger(__name__)

#: Fits with r_squared below this (or b <= 0) are excluded from the joint
#: solve and assigned the network target as a fixed rate.
MIN_FIT_R_SQUARED = 0.5


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # noqa: D102 - argparse hook
        raise UsageError(message)


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="convsqueeze",
        description="Joint channel-pruning and low-rank compression of conv networks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_demo = sub.add_parser("demo-gen", help="generate a synthetic demo network")
    p_demo.add_argument("--out", required=True, help="directory for the demo network")
    p_demo.add_argument("--seed", type=int, default=0)

    p_sens = sub.add_parser("sensitivity", help="per-layer removal curves and fits")
    p_sens.add_argument("--manifest", required=True)
    p_sens.add_argument("--out", required=True, help="artifact directory")
    p_sens.add_argument("--workers", type=int, default=1)

    p_plan = sub.add_parser("plan", help="allocate per-layer rates for a network target")
    p_plan.add_argument("--manifest", required=True)
    p_plan.add_argument("--out", required=True, help="artifact directory")
    p_plan.add_argument("--target-rate", type=float, required=True)
    p_plan.add_argument("--eta", type=float, default=None, help="fixed descent step (default: adaptive)")
    p_plan.add_argument("--stop-threshold", type=float, default=DEFAULT_STOP_THRESHOLD)
    p_plan.add_argument("--r-max", type=float, default=DEFAULT_R_MAX)

    p_comp = sub.add_parser("compress", help="compress every layer to its planned rate")
    p_comp.add_argument("--manifest", required=True)
    p_comp.add_argument("--out", required=True, help="artifact directory")
    p_comp.add_argument("--gamma", type=float, default=0.5)
    p_comp.add_argument("--interval-frac", type=float, default=0.01)
    p_comp.add_argument("--pruning-only", action="store_true")
    p_comp.add_argument("--decompose-only", action="store_true")
    p_comp.add_argument("--workers", type=int, default=1)

    p_rep = sub.add_parser("report", help="recompute the report from compressed artifacts")
    p_rep.add_argument("--out", required=True, help="artifact directory")
    return parser


def _configure_logging() -> None:
    level_name = os.environ.get("CC_LOG", "warning").upper()
    level = getattr(logging, level_name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(
        level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s"
    )


# -- sensitivity -------------------------------------------------------------


def _sensitivity_worker(item) -> tuple[str, SensitivityCurve]:
    name, w, g = item
    return name, sensitivity_curve(w, g)


def cmd_sensitivity(args: argparse.Namespace) -> int:
    bundle = load_network(args.manifest)
    targets = [rec for rec in bundle.layers if rec.compressible]
    if not targets:
        raise DataError("manifest lists no compressible layers")
    items = [(rec.name, bundle.weights[rec.name], bundle.gradients[rec.name]) for rec in targets]

    curves: dict[str, SensitivityCurve] = {}
    try:
        if args.workers > 1:
            with ProcessPoolExecutor(max_workers=args.workers) as pool:
                for name, curve in pool.map(_sensitivity_worker, items):
                    curves[name] = curve
        else:
            for item in items:
                name, curve = _sensitivity_worker(item)
                curves[name] = curve
    except ConvSqueezeError as exc:
        raise type(exc)(f"sensitivity failed: {exc}") from exc

    write_sensitivity_csv(curves, args.out)
    for name in sorted(curves):
        curve = curves[name]
        print(
            f"{name}: a={curve.a:.6g} b={curve.b:.6g} r_squared={curve.r_squared:.6f} "
            f"({len(curve.points)} points)"
        )
    skipped = [rec.name for rec in bundle.layers if not rec.compressible]
    if skipped:
        print(f"skipped (not compressible): {', '.join(skipped)}")
    return 0


# -- plan ---------------------------------------------------------------------


def cmd_plan(args: argparse.Namespace) -> int:
    if not 0.0 < args.target_rate < 1.0:
        raise UsageError(f"--target-rate must lie in (0, 1), got {args.target_rate}")
    bundle = load_network(args.manifest)
    out_dir = Path(args.out)
    summary_path = out_dir / "sensitivity_summary.csv"
    any_compressible = any(rec.compressible for rec in bundle.layers)
    if any_compressible and not summary_path.exists():
        raise DataError(f"{summary_path} not found; run the sensitivity stage first")
    summary = load_sensitivity_summary(summary_path) if any_compressible else {}

    target = args.target_rate
    total_flops = bundle.total_flops
    joint: list[LayerRecord] = []
    models: list[tuple[float, float]] = []
    fixed: dict[str, float] = {}
    excluded: dict[str, str] = {}
    for rec in bundle.layers:
        if not rec.compressible:
            excluded[rec.name] = "not compressible"
            continue
        if rec.name not in summary:
            raise DataError(f"sensitivity summary is missing layer {rec.name!r}")
        a, b, r_squared = summary[rec.name]
        if b <= 0.0 or r_squared < MIN_FIT_R_SQUARED:
            fixed[rec.name] = target
            log.warning(
                "layer %s: unusable fit (b=%g, r_squared=%g); assigning the fixed rate %g",
                rec.name, b, r_squared, target,
            )
            continue
        joint.append(rec)
        models.append((a, b))

    plan_layers = []
    fixed_flops_sum = sum(target * rec.flops for rec in bundle.layers if rec.name in fixed)
    plan = None
    if joint:
        # Fixed-rate layers consume part of the network budget up front; the
        # joint solve targets the remainder so sum(F*R) still hits C*F_total.
        effective_target = (target * total_flops - fixed_flops_sum) / total_flops
        plan = plan_rates(
            models,
            [rec.flops for rec in joint],
            total_flops,
            effective_target,
            eta=args.eta,
            stop_threshold=args.stop_threshold,
            r_max=args.r_max,
        )
        for rec, (a, b), rate, raw, was_clamped in zip(
            joint, models, plan.rates, plan.rates_raw, plan.clamped
        ):
            plan_layers.append(
                {
                    "name": rec.name,
                    "rate": rate,
                    "rate_raw": raw,
                    "clamped": was_clamped,
                    "source": "joint",
                    "a": a,
                    "b": b,
                    "flops": rec.flops,
                }
            )
    for name, rate in fixed.items():
        rec = next(r for r in bundle.layers if r.name == name)
        plan_layers.append(
            {
                "name": name,
                "rate": rate,
                "rate_raw": rate,
                "clamped": False,
                "source": "fixed",
                "flops": rec.flops,
            }
        )
    for name, reason in excluded.items():
        rec = next(r for r in bundle.layers if r.name == name)
        plan_layers.append(
            {
                "name": name,
                "rate": 0.0,
                "rate_raw": 0.0,
                "clamped": False,
                "source": "excluded",
                "reason": reason,
                "flops": rec.flops,
            }
        )
    plan_layers.sort(key=lambda e: e["name"])

    achieved = sum(e["rate"] * e["flops"] for e in plan_layers)
    target_sum = target * total_flops
    doc = {
        "target_rate": target,
        "total_flops": total_flops,
        "target_flops_sum": target_sum,
        "achieved_flops_sum": achieved,
        "i_bar": plan.i_bar if plan else None,
        "iterations": plan.iterations if plan else 0,
        "stop_threshold": args.stop_threshold,
        "r_max": args.r_max,
        "layers": plan_layers,
    }
    write_rate_plan(doc, out_dir / "rate_plan.json")
    print(
        f"planned sum(F*R) = {achieved:.6g} against C*F = {target_sum:.6g} "
        f"({len(plan_layers)} layers, i_bar="
        + (f"{plan.i_bar:.6g}" if plan else "n/a")
        + ")"
    )
    slack = abs(achieved - target_sum)
    if slack > max(args.stop_threshold**0.5, 1e-9 * target_sum):
        print(
            f"warning: plan misses the network target by {slack:.6g} FLOPs "
            "(clamping or fixed-rate layers); the target may be infeasible",
            file=sys.stderr,
        )
    return 0


# -- compress -----------------------------------------------------------------


def _compress_worker(item) -> tuple[str, CompressedLayer]:
    name, w, g, rate, gamma, interval_frac, pruning_only, decompose_only = item
    cfg = HeuristicConfig(
        target_rate=rate,
        gamma=gamma,
        interval_fraction=interval_frac,
        pruning_only=pruning_only,
        decompose_only=decompose_only,
    )
    return name, compress_layer(w, g, cfg, source_layer=name)


def _passthrough(name: str, w) -> CompressedLayer:
    return CompressedLayer(
        source_layer=name,
        variant="pruned",
        kept_channels=tuple(range(w.shape[1])),
        weights=w.copy(),
    )


def cmd_compress(args: argparse.Namespace) -> int:
    if args.pruning_only and args.decompose_only:
        raise UsageError("--pruning-only and --decompose-only are mutually exclusive")
    bundle = load_network(args.manifest)
    out_dir = Path(args.out)
    plan_path = out_dir / "rate_plan.json"
    if not plan_path.exists():
        raise DataError(f"{plan_path} not found; run the plan stage first")
    plan_doc = load_rate_plan(plan_path)
    rates = {e["name"]: float(e["rate"]) for e in plan_doc["layers"]}

    jobs = []
    results: dict[str, CompressedLayer] = {}
    for rec in bundle.layers:
        if rec.name not in rates:
            raise DataError(f"rate plan is missing layer {rec.name!r}; re-run the plan stage")
        rate = rates[rec.name]
        if not rec.compressible or rate <= 0.0:
            results[rec.name] = _passthrough(rec.name, bundle.weights[rec.name])
            continue
        jobs.append(
            (
                rec.name,
                bundle.weights[rec.name],
                bundle.gradients[rec.name],
                rate,
                args.gamma,
                args.interval_frac,
                args.pruning_only,
                args.decompose_only,
            )
        )

    try:
        if args.workers > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=args.workers) as pool:
                for name, layer in pool.map(_compress_worker, jobs):
                    results[name] = layer
        else:
            for job in jobs:
                name, layer = _compress_worker(job)
                results[name] = layer
                log.info("compressed %s: rate target %.4f reached", name, job[3])
    except ConvSqueezeError as exc:
        raise type(exc)(f"compression failed: {exc}") from exc

    records = {rec.name: rec for rec in bundle.layers}
    ordered = [results[rec.name] for rec in bundle.layers]
    save_compressed(
        ordered, out_dir / "compressed" / "manifest.json", records, bundle.metadata
    )
    targets = {name: (rates[name] if rates[name] > 0 else None) for name in records}
    report = build_report(bundle.layers, results, targets)
    write_report(report, out_dir / "report.json")
    print(format_report_table(report), end="")
    return 0


# -- report -------------------------------------------------------------------


def cmd_report(args: argparse.Namespace) -> int:
    out_dir = Path(args.out)
    manifest_path = out_dir / "compressed" / "manifest.json"
    if not manifest_path.exists():
        raise DataError(f"{manifest_path} not found; run the compress stage first")
    layers, doc = load_compressed(manifest_path)
    records = [
        LayerRecord(
            name=e["name"],
            n=e["n"],
            c=e["c"],
            k=e["k"],
            stride=e["stride"],
            h_out=e["h_out"],
            w_out=e["w_out"],
            compressible=True,
            weight_blob="",
            gradient_blob="",
        )
        for e in doc["layers"]
    ]
    targets: dict[str, float | None] = {rec.name: None for rec in records}
    plan_path = out_dir / "rate_plan.json"
    if plan_path.exists():
        plan_doc = load_rate_plan(plan_path)
        for entry in plan_doc["layers"]:
            if entry["name"] in targets and float(entry["rate"]) > 0.0:
                targets[entry["name"]] = float(entry["rate"])
    report = build_report(records, {layer.source_layer: layer for layer in layers}, targets)
    write_report(report, out_dir / "report.json")
    print(format_report_table(report), end="")
    return 0


def cmd_demo_gen(args: argparse.Namespace) -> int:
    manifest = make_demo_network(args.out, seed=args.seed)
    print(manifest)
    return 0


_COMMANDS = {
    "demo-gen": cmd_demo_gen,
    "sensitivity": cmd_sensitivity,
    "plan": cmd_plan,
    "compress": cmd_compress,
    "report": cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    _configure_logging()
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
