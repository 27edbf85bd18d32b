"""Synthetic demo network generator.

Produces a small conv stack with random weights and gradients in the
interchange format, sized so the whole pipeline (sensitivity -> plan ->
compress -> report) runs in seconds while still giving the per-unit rate
increments enough resolution to land close to an overall target.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .model_io import LayerRecord, NetworkBundle, save_network

#: (name, n, c, k, stride, h_in, compressible); spatial chain, valid padding.
_DEMO_STACK = [
    ("stem", 64, 3, 3, 1, 20, False),
    ("block1.conv", 64, 64, 3, 1, 18, True),
    ("block2.conv", 64, 64, 3, 1, 16, True),
    ("block3.conv", 64, 64, 3, 1, 14, True),
    ("block4.conv", 64, 64, 1, 1, 12, True),
    ("head", 10, 64, 1, 1, 12, False),
]


def make_demo_network(out_dir: str | Path, seed: int = 0) -> Path:
    """Write the demo network under ``out_dir``; returns the manifest path."""
    rng = np.random.default_rng(seed)
    records = []
    weights = {}
    gradients = {}
    for name, n, c, k, stride, h_in, compressible in _DEMO_STACK:
        h_out = (h_in - k) // stride + 1
        records.append(
            LayerRecord(
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
        )
        weights[name] = rng.normal(scale=0.1, size=(n, c, k, k))
        gradients[name] = rng.normal(scale=1.0, size=(n, c, k, k))
    bundle = NetworkBundle(
        layers=records,
        weights=weights,
        gradients=gradients,
        metadata={"generator": "convsqueeze-demo", "seed": str(seed)},
    )
    manifest = Path(out_dir) / "network.json"
    save_network(bundle, manifest)
    return manifest
