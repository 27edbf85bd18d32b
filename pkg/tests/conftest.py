"""Shared helpers for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from convsqueeze.model_io import LayerRecord, NetworkBundle, save_network


def random_layer(rng: np.random.Generator, n: int, c: int, k: int, scale: float = 0.1):
    """A (weights, gradients) pair with well-conditioned generic spectra."""
    w = rng.standard_normal((n, c, k, k)) * scale
    g = rng.standard_normal((n, c, k, k))
    return w, g


def make_network_dir(tmp_path, layers, seed: int = 0):
    """Write a small on-disk network manifest for CLI-level tests.

    ``layers`` is a list of (name, n, c, k, stride, h_out, compressible)
    tuples; square outputs are assumed.  Returns the manifest path.
    """
    rng = np.random.default_rng(seed)
    records = []
    weights = {}
    gradients = {}
    for name, n, c, k, stride, h_out, compressible in layers:
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
        weights[name] = rng.standard_normal((n, c, k, k)) * 0.1
        gradients[name] = rng.standard_normal((n, c, k, k))
    bundle = NetworkBundle(
        layers=records, weights=weights, gradients=gradients, metadata={"seed": str(seed)}
    )
    path = tmp_path / "network.json"
    save_network(bundle, path)
    return path


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
