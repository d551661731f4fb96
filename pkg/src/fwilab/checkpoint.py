"""Checkpoint serialization: one raster per parameter tensor plus a manifest
recording layer order, channels, activations, and the normalization spec."""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from .network import ConvLayer, NormSpec, UpdateNetwork
from .raster import read_raster, write_raster
from .tomlio import dump_toml, load_toml

__all__ = ["save_network", "load_network", "save_ensemble", "load_ensemble"]


def save_network(directory: str | os.PathLike, net: UpdateNetwork) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    manifest: dict = {
        "kind": "update_network",
        "dtype": str(np.dtype(net.dtype)),
        "n_layers": len(net.layers),
        "norm": {"offset": net.norm.offset, "scale": net.norm.scale},
    }
    for i, layer in enumerate(net.layers):
        kfile = f"layer{i:02d}_kernel.fwir"
        bfile = f"layer{i:02d}_bias.fwir"
        write_raster(d / kfile, layer.kernel)
        write_raster(d / bfile, layer.bias)
        manifest[f"layer{i:02d}"] = {
            "in_channels": layer.in_channels,
            "out_channels": layer.out_channels,
            "activation": layer.activation,
            "kernel": kfile,
            "bias": bfile,
        }
    dump_toml(d / "manifest.toml", manifest)


def load_network(directory: str | os.PathLike) -> UpdateNetwork:
    d = Path(directory)
    manifest = load_toml(d / "manifest.toml")
    norm = NormSpec(**manifest["norm"])
    layers = []
    for i in range(manifest["n_layers"]):
        entry = manifest[f"layer{i:02d}"]
        kernel = read_raster(d / entry["kernel"])
        bias = read_raster(d / entry["bias"])
        layers.append(ConvLayer(kernel, bias, entry["activation"]))
    return UpdateNetwork(layers, norm)


def save_ensemble(directory: str | os.PathLike, nets: list[UpdateNetwork]) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    dump_toml(d / "manifest.toml", {"kind": "unfolded_ensemble", "k": len(nets)})
    for i, net in enumerate(nets):
        save_network(d / f"net_{i:02d}", net)


def load_ensemble(directory: str | os.PathLike) -> list[UpdateNetwork]:
    d = Path(directory)
    manifest = load_toml(d / "manifest.toml")
    return [load_network(d / f"net_{i:02d}") for i in range(manifest["k"])]
