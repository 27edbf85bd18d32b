"""Manifest/blob serialization, CSV artifacts and report assembly.

Round-trips are checked value-for-value and the writers are checked for
byte determinism, since reproducible artifacts are part of the CLI
contract.
"""

from __future__ import annotations

import json

import numpy as np
import pytest

from convsqueeze.core import ApproxState, compression_rate, prune_channel, realize, remove_singular_value
from convsqueeze.errors import DataError
from convsqueeze.model_io import (
    CompressionReport,
    LayerRecord,
    NetworkBundle,
    build_report,
    format_report_table,
    load_compressed,
    load_network,
    load_rate_plan,
    load_sensitivity_summary,
    read_blob,
    read_curve_csv,
    sanitize_name,
    save_compressed,
    save_network,
    write_blob,
    write_rate_plan,
    write_report,
    write_sensitivity_csv,
)
from convsqueeze.sensitivity import SensitivityCurve

from conftest import make_network_dir, random_layer


def _record(name="lyr", n=4, c=5, k=3, stride=1, h_out=8, compressible=True):
    return LayerRecord(
        name=name,
        n=n,
        c=c,
        k=k,
        stride=stride,
        h_out=h_out,
        w_out=h_out,
        compressible=compressible,
        weight_blob="",
        gradient_blob="",
    )


class TestBlobs:
    def test_round_trip_preserves_float32_values(self, tmp_path, rng):
        a = rng.standard_normal((3, 4, 3, 3)).astype(np.float32).astype(np.float64)
        path = tmp_path / "x.bin"
        write_blob(a, path)
        back = read_blob(path, (3, 4, 3, 3))
        np.testing.assert_array_equal(back, a)

    def test_byte_length_mismatch_rejected(self, tmp_path, rng):
        a = rng.standard_normal((2, 2, 3, 3))
        path = tmp_path / "x.bin"
        write_blob(a, path)
        raw = path.read_bytes()
        path.write_bytes(raw[:-4])
        with pytest.raises(DataError):
            read_blob(path, (2, 2, 3, 3))

    def test_non_finite_blob_rejected(self, tmp_path):
        a = np.full((2, 2, 1, 1), np.nan)
        path = tmp_path / "x.bin"
        np.asarray(a, dtype="<f4").tofile(path)
        with pytest.raises(DataError):
            read_blob(path, (2, 2, 1, 1))

    def test_blob_is_little_endian_row_major(self, tmp_path):
        a = np.arange(6, dtype=np.float64).reshape(1, 2, 1, 3)
        path = tmp_path / "x.bin"
        write_blob(a, path)
        raw = np.frombuffer(path.read_bytes(), dtype="<f4")
        np.testing.assert_array_equal(raw, np.arange(6, dtype=np.float32))


class TestNetworkManifest:
    def test_round_trip(self, tmp_path):
        path = make_network_dir(
            tmp_path,
            [
                ("stem", 4, 3, 3, 1, 10, False),
                ("block.conv", 6, 4, 3, 1, 8, True),
            ],
        )
        bundle = load_network(path)
        assert [r.name for r in bundle.layers] == ["stem", "block.conv"]
        assert bundle.layers[1].compressible
        assert bundle.weights["block.conv"].shape == (6, 4, 3, 3)
        assert bundle.gradients["stem"].shape == (4, 3, 3, 3)
        assert bundle.total_flops == 4 * 3 * 9 * 100 + 6 * 4 * 9 * 64

    def test_missing_manifest_rejected(self, tmp_path):
        with pytest.raises(DataError):
            load_network(tmp_path / "nope.json")

    def test_duplicate_layer_name_rejected(self, tmp_path, rng):
        path = make_network_dir(tmp_path, [("a", 2, 2, 1, 1, 4, True)])
        doc = json.loads(path.read_text())
        doc["layers"].append(dict(doc["layers"][0]))
        path.write_text(json.dumps(doc))
        with pytest.raises(DataError):
            load_network(path)

    def test_truncated_blob_rejected(self, tmp_path):
        path = make_network_dir(tmp_path, [("a", 2, 2, 3, 1, 4, True)])
        doc = json.loads(path.read_text())
        blob = tmp_path / doc["layers"][0]["weight_blob"]
        blob.write_bytes(blob.read_bytes()[:-4])
        with pytest.raises(DataError):
            load_network(path)

    def test_missing_key_rejected(self, tmp_path):
        path = make_network_dir(tmp_path, [("a", 2, 2, 1, 1, 4, True)])
        doc = json.loads(path.read_text())
        del doc["layers"][0]["stride"]
        path.write_text(json.dumps(doc))
        with pytest.raises(DataError):
            load_network(path)

    def test_save_is_byte_deterministic(self, tmp_path):
        p1 = make_network_dir(tmp_path / "a", [("x", 3, 3, 3, 1, 6, True)], seed=5)
        p2 = make_network_dir(tmp_path / "b", [("x", 3, 3, 3, 1, 6, True)], seed=5)
        assert p1.read_bytes() == p2.read_bytes()

    def test_sanitize_name(self):
        assert sanitize_name("block1.conv/3x3") == "block1.conv_3x3"
        assert sanitize_name("plain") == "plain"


class TestCompressedManifest:
    def _compressed_pair(self, rng):
        w, _ = random_layer(rng, 6, 5, 3)
        state = prune_channel(ApproxState.from_weights(w), 1)
        pruned = realize(state, "p")
        state2 = remove_singular_value(ApproxState.from_weights(w), 2)
        decomposed = realize(state2, "d")
        records = {
            "p": _record("p", 6, 5, 3),
            "d": _record("d", 6, 5, 3),
        }
        return [pruned, decomposed], records

    def test_round_trip_both_variants(self, tmp_path, rng):
        layers, records = self._compressed_pair(rng)
        path = tmp_path / "compressed" / "manifest.json"
        save_compressed(layers, path, records, metadata={"target": "0.5"})
        back, doc = load_compressed(path)
        assert doc["metadata"]["target"] == "0.5"
        by_name = {l.source_layer: l for l in back}
        assert by_name["p"].variant == "pruned"
        assert by_name["d"].variant == "decomposed"
        f32 = lambda a: a.astype(np.float32).astype(np.float64)
        np.testing.assert_array_equal(by_name["p"].weights, f32(layers[0].weights))
        np.testing.assert_array_equal(by_name["d"].w1, f32(layers[1].w1))
        np.testing.assert_array_equal(by_name["d"].w2, f32(layers[1].w2))
        assert by_name["p"].kept_channels == layers[0].kept_channels

    def test_geometry_recorded(self, tmp_path, rng):
        layers, records = self._compressed_pair(rng)
        path = tmp_path / "manifest.json"
        save_compressed(layers, path, records)
        doc = json.loads(path.read_text())
        entry = {e["name"]: e for e in doc["layers"]}["d"]
        assert entry["n"] == 6 and entry["c"] == 5 and entry["k"] == 3
        assert entry["stride"] == 1 and entry["h_out"] == 8
        assert entry["r_bar"] == 5  # min(6, 45) - 1 removed

    def test_save_is_byte_deterministic(self, tmp_path, rng):
        layers, records = self._compressed_pair(rng)
        save_compressed(layers, tmp_path / "a" / "m.json", records)
        save_compressed(layers, tmp_path / "b" / "m.json", records)
        assert (tmp_path / "a" / "m.json").read_bytes() == (
            tmp_path / "b" / "m.json"
        ).read_bytes()


class TestCurveCsv:
    def test_round_trip_with_nine_significant_digits(self, tmp_path):
        points = [(0.123456789123, 1.98765432198e-4), (0.5, 1e-2), (0.9, 0.999999999)]
        curves = {
            "blk.conv": SensitivityCurve(points=points, a=1e-3, b=7.25, r_squared=0.9987)
        }
        write_sensitivity_csv(curves, tmp_path)
        csv_path = tmp_path / "curve_blk.conv.csv"
        assert csv_path.exists()
        header = csv_path.read_text().splitlines()[0]
        assert header == "R,I"
        back = read_curve_csv(csv_path)
        for (r0, i0), (r1, i1) in zip(points, back):
            assert r1 == pytest.approx(r0, rel=1e-8)
            assert i1 == pytest.approx(i0, rel=1e-8)

    def test_summary_round_trip(self, tmp_path):
        curves = {
            "a": SensitivityCurve(points=[(0.1, 1e-3)], a=2e-3, b=5.5, r_squared=0.75),
            "b": SensitivityCurve(points=[(0.2, 1e-2)], a=3e-4, b=9.0, r_squared=0.25),
        }
        write_sensitivity_csv(curves, tmp_path)
        summary = load_sensitivity_summary(tmp_path / "sensitivity_summary.csv")
        assert summary["a"] == pytest.approx((2e-3, 5.5, 0.75), rel=1e-8)
        assert summary["b"][1] == pytest.approx(9.0, rel=1e-8)

    def test_malformed_csv_rejected(self, tmp_path):
        bad = tmp_path / "c.csv"
        bad.write_text("R,I\n0.1,not_a_number\n")
        with pytest.raises(DataError):
            read_curve_csv(bad)


class TestRatePlan:
    def test_round_trip(self, tmp_path):
        doc = {
            "target_rate": 0.5,
            "layers": [
                {"name": "a", "rate": 0.42, "rate_raw": 0.42, "clamped": False},
                {"name": "b", "rate": 0.0, "rate_raw": -0.1, "clamped": True},
            ],
        }
        path = tmp_path / "rate_plan.json"
        write_rate_plan(doc, path)
        back = load_rate_plan(path)
        assert back == doc

    def test_missing_plan_rejected(self, tmp_path):
        with pytest.raises(DataError):
            load_rate_plan(tmp_path / "missing.json")


class TestReport:
    def test_totals_and_fractions(self, rng):
        w, _ = random_layer(rng, 6, 5, 3)
        state = prune_channel(ApproxState.from_weights(w), 1)
        state = remove_singular_value(state, 0)
        layer = realize(state, "lyr")
        record = _record("lyr", 6, 5, 3, h_out=8)
        report = build_report([record], {"lyr": layer}, {"lyr": 0.5})
        row = report.rows[0]
        assert row.variant == "decomposed"
        assert row.t1 == 1 and row.t2 == 1
        assert row.pruned_fraction == pytest.approx(0.5)
        assert row.decomposed_fraction == pytest.approx(0.5)
        assert row.rate_target == 0.5
        expected_rate = compression_rate(6, 5, 3, 1, 1, 6)
        assert row.rate_achieved == pytest.approx(expected_rate, abs=1e-12)
        assert report.flops_before_total == 6 * 5 * 9 * 64
        assert report.overall_rate_achieved == pytest.approx(
            1.0 - report.flops_after_total / report.flops_before_total
        )

    def test_table_renders_every_layer(self, rng):
        w, _ = random_layer(rng, 4, 4, 3)
        layer = realize(prune_channel(ApproxState.from_weights(w), 0), "x")
        report = build_report([_record("x", 4, 4, 3)], {"x": layer}, {})
        table = format_report_table(report)
        assert "x" in table
        assert "pruned" in table

    def test_write_report_emits_json_and_text(self, tmp_path, rng):
        w, _ = random_layer(rng, 4, 4, 3)
        layer = realize(prune_channel(ApproxState.from_weights(w), 0), "x")
        report = build_report([_record("x", 4, 4, 3)], {"x": layer}, {})
        out = tmp_path / "report.json"
        write_report(report, out)
        doc = json.loads(out.read_text())
        assert doc["layers"][0]["name"] == "x"
        assert (tmp_path / "report.txt").exists()

    def test_empty_report(self):
        report = build_report([], {}, {})
        assert isinstance(report, CompressionReport)
        assert report.flops_before_total == 0
        assert report.overall_rate_achieved == 0.0


class TestLayerRecordValidation:
    def test_bad_dimensions_rejected(self):
        with pytest.raises(DataError):
            _record(n=0)
        with pytest.raises(DataError):
            _record(stride=0)

    def test_flops_and_params(self):
        rec = _record(n=4, c=5, k=3, h_out=8)
        assert rec.flops == 4 * 5 * 9 * 64
        assert rec.params == 4 * 5 * 9
        assert rec.weight_shape == (4, 5, 3, 3)
