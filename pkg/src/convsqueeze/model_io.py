"""Interchange formats: network manifests, blobs, plans, curves, reports.

A *network manifest* is a JSON file listing conv layers with their geometry
and two raw float32 little-endian blobs each (weights and dataset-averaged
loss gradients), paths relative to the manifest. A *compressed manifest*
describes realized layers: variant, kept channels, retained rank and factor
blobs. Everything written here is byte-deterministic for fixed inputs.
"""
from __future__ import annotations

import csv
import json
import re
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import CompressedLayer, compressed_flops, compression_rate, layer_flops
from .errors import DataError
from .sensitivity import SensitivityCurve

_NAME_SANITIZER = re.compile(r"[^A-Za-z0-9_.-]")


@dataclass(frozen=True)
class LayerRecord:
    """Geometry and blob locations of one conv layer."""

    name: str
    n: int
    c: int
    k: int
    stride: int
    h_out: int
    w_out: int
    compressible: bool
    weight_blob: str
    gradient_blob: str

    def __post_init__(self) -> None:
        if not self.name:
            raise DataError("layer name must be non-empty")
        for field_name in ("n", "c", "k", "stride", "h_out", "w_out"):
            value = getattr(self, field_name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise DataError(
                    f"layer {self.name!r}: {field_name} must be a positive integer, "
                    f"got {value!r}"
                )

    @property
    def weight_shape(self) -> tuple[int, int, int, int]:
        return (self.n, self.c, self.k, self.k)

    @property
    def flops(self) -> int:
        return layer_flops(self.n, self.c, self.k, self.h_out, self.w_out)

    @property
    def params(self) -> int:
        return self.n * self.c * self.k * self.k


@dataclass
class NetworkBundle:
    """A loaded network: records plus their tensors, keyed by layer name."""

    layers: list[LayerRecord]
    weights: dict[str, np.ndarray]
    gradients: dict[str, np.ndarray]
    metadata: dict[str, str]

    @property
    def total_flops(self) -> int:
        return sum(rec.flops for rec in self.layers)


def sanitize_name(name: str) -> str:
    """Layer name made safe for use inside file names."""
    return _NAME_SANITIZER.sub("_", name)


def write_blob(array: np.ndarray, path: Path) -> None:
    """Write an array as raw row-major little-endian float32."""
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(np.ascontiguousarray(array, dtype="<f4").tobytes())


def read_blob(path: Path, shape: Sequence[int]) -> np.ndarray:
    """Read a raw float32 blob back into a float64 array of ``shape``."""
    expected = int(np.prod(shape)) * 4
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read blob {path}: {exc}") from exc
    if len(data) != expected:
        raise DataError(
            f"blob {path} holds {len(data)} bytes, expected {expected} for shape {tuple(shape)}"
        )
    array = np.frombuffer(data, dtype="<f4").astype(np.float64).reshape(shape)
    if not np.all(np.isfinite(array)):
        raise DataError(f"blob {path} contains non-finite values")
    return array


def _require(mapping: Mapping, key: str, context: str):
    if key not in mapping:
        raise DataError(f"{context}: missing required key {key!r}")
    return mapping[key]


def _load_json(path: Path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise DataError(f"{path}: top-level value must be an object")
    return doc


def _dump_json(doc: dict, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_network(path: str | Path) -> NetworkBundle:
    """Load a network manifest and every referenced blob."""
    path = Path(path)
    doc = _load_json(path)
    raw_layers = _require(doc, "layers", str(path))
    if not isinstance(raw_layers, list):
        raise DataError(f"{path}: 'layers' must be a list")
    metadata = doc.get("metadata", {})
    if not isinstance(metadata, dict):
        raise DataError(f"{path}: 'metadata' must be an object")

    records: list[LayerRecord] = []
    weights: dict[str, np.ndarray] = {}
    gradients: dict[str, np.ndarray] = {}
    seen: set[str] = set()
    for idx, entry in enumerate(raw_layers):
        if not isinstance(entry, dict):
            raise DataError(f"{path}: layer #{idx} must be an object")
        context = f"{path}: layer #{idx}"
        try:
            rec = LayerRecord(
                name=_require(entry, "name", context),
                n=_require(entry, "n", context),
                c=_require(entry, "c", context),
                k=_require(entry, "k", context),
                stride=_require(entry, "stride", context),
                h_out=_require(entry, "h_out", context),
                w_out=_require(entry, "w_out", context),
                compressible=bool(_require(entry, "compressible", context)),
                weight_blob=_require(entry, "weight_blob", context),
                gradient_blob=_require(entry, "gradient_blob", context),
            )
        except TypeError as exc:
            raise DataError(f"{context}: {exc}") from exc
        if rec.name in seen:
            raise DataError(f"{path}: duplicate layer name {rec.name!r}")
        seen.add(rec.name)
        records.append(rec)
        weights[rec.name] = read_blob(path.parent / rec.weight_blob, rec.weight_shape)
        gradients[rec.name] = read_blob(path.parent / rec.gradient_blob, rec.weight_shape)
    return NetworkBundle(layers=records, weights=weights, gradients=gradients, metadata=dict(metadata))


def save_network(bundle: NetworkBundle, path: str | Path) -> None:
    """Write a manifest plus blobs; blob paths are derived from layer names."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    entries = []
    for rec in bundle.layers:
        w = bundle.weights[rec.name]
        g = bundle.gradients[rec.name]
        if w.shape != rec.weight_shape or g.shape != rec.weight_shape:
            raise DataError(f"layer {rec.name!r}: tensor shape does not match the record")
        safe = sanitize_name(rec.name)
        weight_blob = f"{safe}__w.bin"
        gradient_blob = f"{safe}__g.bin"
        write_blob(w, path.parent / weight_blob)
        write_blob(g, path.parent / gradient_blob)
        entry = asdict(rec)
        entry["weight_blob"] = weight_blob
        entry["gradient_blob"] = gradient_blob
        entries.append(entry)
    _dump_json({"layers": entries, "metadata": bundle.metadata}, path)


# -- compressed manifests --------------------------------------------------


def save_compressed(
    layers: Sequence[CompressedLayer],
    path: str | Path,
    records: Mapping[str, LayerRecord],
    metadata: Mapping[str, str] | None = None,
) -> None:
    """Write realized layers: manifest plus one blob per stored tensor."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    entries = []
    for layer in layers:
        rec = records.get(layer.source_layer)
        if rec is None:
            raise DataError(f"no layer record for compressed layer {layer.source_layer!r}")
        safe = sanitize_name(layer.source_layer)
        blobs: dict[str, dict] = {}
        if layer.variant == "pruned":
            blob = f"{safe}__w.bin"
            write_blob(layer.weights, path.parent / blob)
            blobs["weights"] = {"path": blob, "shape": list(layer.weights.shape)}
        else:
            blob1, blob2 = f"{safe}__w1.bin", f"{safe}__w2.bin"
            write_blob(layer.w1, path.parent / blob1)
            write_blob(layer.w2, path.parent / blob2)
            blobs["w1"] = {"path": blob1, "shape": list(layer.w1.shape)}
            blobs["w2"] = {"path": blob2, "shape": list(layer.w2.shape)}
        entries.append(
            {
                "name": layer.source_layer,
                "variant": layer.variant,
                "kept_channels": list(layer.kept_channels),
                "r_bar": layer.r_bar,
                "n": rec.n,
                "c": rec.c,
                "k": rec.k,
                "stride": rec.stride,
                "h_out": rec.h_out,
                "w_out": rec.w_out,
                "blobs": blobs,
            }
        )
    _dump_json({"layers": entries, "metadata": dict(metadata or {})}, path)


def load_compressed(path: str | Path) -> tuple[list[CompressedLayer], dict]:
    """Read a compressed manifest; returns the layers and the raw document."""
    path = Path(path)
    doc = _load_json(path)
    raw_layers = _require(doc, "layers", str(path))
    if not isinstance(raw_layers, list):
        raise DataError(f"{path}: 'layers' must be a list")
    layers: list[CompressedLayer] = []
    for idx, entry in enumerate(raw_layers):
        context = f"{path}: layer #{idx}"
        name = _require(entry, "name", context)
        variant = _require(entry, "variant", context)
        kept = tuple(_require(entry, "kept_channels", context))
        blobs = _require(entry, "blobs", context)
        if variant == "pruned":
            spec = _require(blobs, "weights", context)
            weights = read_blob(path.parent / spec["path"], spec["shape"])
            layer = CompressedLayer(
                source_layer=name, variant=variant, kept_channels=kept, weights=weights
            )
        elif variant == "decomposed":
            spec1 = _require(blobs, "w1", context)
            spec2 = _require(blobs, "w2", context)
            w1 = read_blob(path.parent / spec1["path"], spec1["shape"])
            w2 = read_blob(path.parent / spec2["path"], spec2["shape"])
            layer = CompressedLayer(
                source_layer=name, variant=variant, kept_channels=kept, w1=w1, w2=w2
            )
        else:
            raise DataError(f"{context}: unknown variant {variant!r}")
        c = _require(entry, "c", context)
        if kept and (kept[-1] >= c or kept[0] < 0):
            raise DataError(f"{context}: kept_channels exceed c={c}")
        layers.append(layer)
    return layers, doc


# -- sensitivity artifacts ---------------------------------------------------


def write_sensitivity_csv(curves: Mapping[str, SensitivityCurve], out_dir: str | Path) -> None:
    """Write one curve CSV per layer plus a fit-summary CSV.

    Values carry 9 significant digits so the files can serve as a faithful
    exchange format for the planner.
    """
    if not curves:
        raise DataError("no sensitivity curves to write")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name in sorted(curves):
        curve = curves[name]
        with open(out_dir / f"curve_{sanitize_name(name)}.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["R", "I"])
            for rate, loss in curve.points:
                writer.writerow([f"{rate:.9e}", f"{loss:.9e}"])
    with open(out_dir / "sensitivity_summary.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["layer", "a", "b", "r_squared", "points"])
        for name in sorted(curves):
            curve = curves[name]
            writer.writerow(
                [name, f"{curve.a:.9e}", f"{curve.b:.9e}", f"{curve.r_squared:.9e}", len(curve.points)]
            )


def read_curve_csv(path: str | Path) -> list[tuple[float, float]]:
    """Read one layer's curve CSV back into (R, I) points."""
    points = []
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            for row in reader:
                points.append((float(row["R"]), float(row["I"])))
    except (OSError, KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed curve CSV {path}: {exc}") from exc
    return points


def load_sensitivity_summary(path: str | Path) -> dict[str, tuple[float, float, float]]:
    """Read the fit summary: layer -> (a, b, r_squared)."""
    out: dict[str, tuple[float, float, float]] = {}
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            for row in reader:
                out[row["layer"]] = (float(row["a"]), float(row["b"]), float(row["r_squared"]))
    except (OSError, KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed sensitivity summary {path}: {exc}") from exc
    if not out:
        raise DataError(f"sensitivity summary {path} lists no layers")
    return out


# -- rate plans -------------------------------------------------------------


def write_rate_plan(plan_doc: dict, path: str | Path) -> None:
    _dump_json(plan_doc, Path(path))


def load_rate_plan(path: str | Path) -> dict:
    doc = _load_json(Path(path))
    _require(doc, "layers", str(path))
    return doc


# -- reports ----------------------------------------------------------------


@dataclass(frozen=True)
class LayerReportRow:
    name: str
    variant: str
    flops_before: int
    flops_after: int
    params_before: int
    params_after: int
    rate_target: float | None
    rate_achieved: float
    t1: int
    t2: int
    pruned_fraction: float
    decomposed_fraction: float


@dataclass(frozen=True)
class CompressionReport:
    rows: tuple[LayerReportRow, ...]
    flops_before_total: int
    flops_after_total: int
    params_before_total: int
    params_after_total: int
    overall_rate_achieved: float


def build_report(
    records: Sequence[LayerRecord],
    layers: Mapping[str, CompressedLayer],
    targets: Mapping[str, float | None],
) -> CompressionReport:
    """Assemble the per-layer and whole-network compression accounting."""
    rows = []
    for rec in records:
        layer = layers.get(rec.name)
        if layer is None:
            raise DataError(f"compressed output is missing layer {rec.name!r}")
        r_full = min(rec.n, rec.c * rec.k * rec.k)
        t1 = rec.c - len(layer.kept_channels)
        t2 = 0 if layer.variant == "pruned" else r_full - layer.w1.shape[0]
        removed = t1 + t2
        rows.append(
            LayerReportRow(
                name=rec.name,
                variant=layer.variant,
                flops_before=rec.flops,
                flops_after=compressed_flops(layer, rec.h_out, rec.w_out),
                params_before=rec.params,
                params_after=layer.param_count(),
                rate_target=targets.get(rec.name),
                rate_achieved=compression_rate(rec.n, rec.c, rec.k, t1, t2, r_full),
                t1=t1,
                t2=t2,
                pruned_fraction=t1 / removed if removed else 0.0,
                decomposed_fraction=t2 / removed if removed else 0.0,
            )
        )
    flops_before = sum(r.flops_before for r in rows)
    flops_after = sum(r.flops_after for r in rows)
    return CompressionReport(
        rows=tuple(rows),
        flops_before_total=flops_before,
        flops_after_total=flops_after,
        params_before_total=sum(r.params_before for r in rows),
        params_after_total=sum(r.params_after for r in rows),
        overall_rate_achieved=1.0 - flops_after / flops_before if flops_before else 0.0,
    )


def format_report_table(report: CompressionReport) -> str:
    """Fixed-width human-readable rendering of a report."""
    header = (
        f"{'layer':<20} {'variant':<10} {'R_target':>9} {'R_achieved':>10} "
        f"{'t1':>5} {'t2':>5} {'prune%':>7} {'decomp%':>8} {'MFLOPs':>10} {'->':>2} {'MFLOPs':>10}"
    )
    lines = [header, "-" * len(header)]
    for row in report.rows:
        target = f"{row.rate_target:.4f}" if row.rate_target is not None else "-"
        lines.append(
            f"{row.name:<20} {row.variant:<10} {target:>9} {row.rate_achieved:>10.4f} "
            f"{row.t1:>5} {row.t2:>5} {100 * row.pruned_fraction:>6.1f}% "
            f"{100 * row.decomposed_fraction:>7.1f}% {row.flops_before / 1e6:>10.3f} "
            f"{'':>2} {row.flops_after / 1e6:>10.3f}"
        )
    lines.append("-" * len(header))
    lines.append(
        f"total FLOPs {report.flops_before_total} -> {report.flops_after_total} "
        f"(reduction {report.overall_rate_achieved:.4f}); "
        f"params {report.params_before_total} -> {report.params_after_total}"
    )
    return "\n".join(lines) + "\n"


def write_report(report: CompressionReport, json_path: str | Path) -> None:
    """Write ``report.json`` plus a sibling ``.txt`` rendering."""
    json_path = Path(json_path)
    doc = {
        "layers": [
            {**asdict(row)} for row in report.rows
        ],
        "totals": {
            "flops_before": report.flops_before_total,
            "flops_after": report.flops_after_total,
            "params_before": report.params_before_total,
            "params_after": report.params_after_total,
            "overall_rate_achieved": report.overall_rate_achieved,
        },
    }
    _dump_json(doc, json_path)
    text_path = json_path.with_suffix(".txt")
    text_path.write_text(format_report_table(report), encoding="utf-8")
