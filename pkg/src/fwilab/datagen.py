"""Dataset builder: ground-truth maps plus simulated channel data on disk.

Layout written by :func:`generate_dataset`::

    out/
      manifest.toml              # grid, geometry, pulse, PML, kind, seed
      sample_000000/
        sos.fwir                 # ground-truth speed map (f64)
        labels.fwir              # tissue labels (u8)
        cd.fwir                  # simulated channel data (f64)
        meta.toml                # per-sample seed and region speeds
      sample_000001/ ...

Every sample derives its RNG stream from (master seed, sample index), so
regeneration is byte-identical regardless of worker count or ordering.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .forward import DampingProfile, SourcePulse, build_pml, make_source_pulse, simulate_all
from .grid import AcquisitionGeometry, ChannelData, Grid2D, SosMap, build_geometry
from .phantoms import (
    LABEL_BACKGROUND,
    WATER_SPEED,
    ArmGeometry,
    AugmentSpec,
    TissueMap,
    add_noise,
    arm_phantom,
    mnist_sos_map,
    parse_idx,
    rod_phantom,
    synthetic_digits,
)
from .raster import read_raster, write_raster
from .tomlio import dump_toml, load_toml

__all__ = ["DatasetConfig", "generate_dataset", "load_dataset", "load_dataset_setup"]


@dataclass(frozen=True)
class DatasetConfig:
    """Everything needed to regenerate a dataset."""

    kind: str  # mnist | arm | rods
    n: int
    seed: int
    grid: Grid2D
    n_p: int = 8
    diameter: float = 0.044
    n_r: int = 3
    f_c: float = 200e3
    pulse_kind: str = "gaussian_derivative"
    pml_thickness: int = 8
    pml_attenuation: float = 1e-3
    pml_exponent: float = 2.0
    noise_snr_db: float | None = None
    edema_ratio: float = 0.5
    idx_path: str | None = None
    arm_geometry: ArmGeometry = field(default_factory=ArmGeometry)
    max_rods: int = 3

    def __post_init__(self):
        if self.kind not in ("mnist", "arm", "rods"):
            raise ValueError(f"unknown dataset kind {self.kind!r}")
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if not 0.0 <= self.edema_ratio <= 1.0:
            raise ValueError("edema_ratio must lie in [0, 1]")

    def geometry(self) -> AcquisitionGeometry:
        return build_geometry(self.n_p, self.diameter, self.n_r, self.grid)

    def pulse(self) -> SourcePulse:
        return make_source_pulse(self.f_c, self.grid.dt, self.grid.nt, self.pulse_kind)

    def damping(self) -> DampingProfile:
        return build_pml(
            self.grid, self.pml_thickness, self.pml_attenuation, self.pml_exponent
        )

    def to_manifest(self) -> dict:
        m = {
            "kind": self.kind,
            "n": self.n,
            "seed": self.seed,
            "noise_snr_db": "none" if self.noise_snr_db is None else self.noise_snr_db,
            "edema_ratio": self.edema_ratio,
            "idx_path": self.idx_path or "",
            "grid": {
                "nx": self.grid.nx,
                "nz": self.grid.nz,
                "dx": self.grid.dx,
                "dt": self.grid.dt,
                "nt": self.grid.nt,
            },
            "geometry": {"n_p": self.n_p, "diameter": self.diameter, "n_r": self.n_r},
            "pulse": {"f_c": self.f_c, "kind": self.pulse_kind},
            "pml": {
                "thickness": self.pml_thickness,
                "attenuation": self.pml_attenuation,
                "exponent": self.pml_exponent,
            },
        }
        if self.kind == "arm":
            m["arm_geometry"] = self.arm_geometry.to_dict()
        return m

    @classmethod
    def from_manifest(cls, m: dict) -> "DatasetConfig":
        grid = Grid2D(**m["grid"])
        snr = m["noise_snr_db"]
        return cls(
            kind=m["kind"],
            n=m["n"],
            seed=m["seed"],
            grid=grid,
            n_p=m["geometry"]["n_p"],
            diameter=m["geometry"]["diameter"],
            n_r=m["geometry"]["n_r"],
            f_c=m["pulse"]["f_c"],
            pulse_kind=m["pulse"]["kind"],
            pml_thickness=m["pml"]["thickness"],
            pml_attenuation=m["pml"]["attenuation"],
            pml_exponent=m["pml"]["exponent"],
            noise_snr_db=None if snr == "none" else float(snr),
            edema_ratio=m["edema_ratio"],
            idx_path=m["idx_path"] or None,
            arm_geometry=ArmGeometry.from_dict(m["arm_geometry"])
            if "arm_geometry" in m
            else ArmGeometry(),
        )


def _sample_seed(master: int, index: int) -> int:
    return int(np.random.SeedSequence([master, index]).generate_state(1)[0])


def _ground_truth(cfg: DatasetConfig, index: int, images: np.ndarray | None) -> TissueMap:
    seed = _sample_seed(cfg.seed, index)
    if cfg.kind == "mnist":
        rng = np.random.default_rng(seed)
        image = images[rng.integers(0, images.shape[0])]
        sos = mnist_sos_map(
            image, AugmentSpec(seed=seed), cfg.grid, diameter=cfg.diameter
        )
        labels = np.full(cfg.grid.shape, LABEL_BACKGROUND, dtype=np.uint8)
        return TissueMap(sos, labels, {LABEL_BACKGROUND: WATER_SPEED})
    if cfg.kind == "arm":
        # Deterministic 1:edema_ratio split by index, not by chance.
        with_edema = (index % cfg.n) < round(cfg.edema_ratio * cfg.n)
        return arm_phantom(
            seed, with_edema, cfg.grid, cfg.diameter, geometry=cfg.arm_geometry
        )
    rng = np.random.default_rng(seed)
    n_rods = int(rng.integers(1, cfg.max_rods + 1))
    usable = cfg.diameter * 0.38
    cx = (cfg.grid.nx - 1) / 2.0 * cfg.grid.dx
    cz = (cfg.grid.nz - 1) / 2.0 * cfg.grid.dx
    specs = []
    for _ in range(200):
        if len(specs) == n_rods:
            break
        r = rng.uniform(0.0, usable)
        theta = rng.uniform(0.0, 2 * np.pi)
        center = (cx + r * np.cos(theta), cz + r * np.sin(theta))
        kind = "bone" if rng.random() < 0.5 else "edema"
        diam = 0.01 if cfg.diameter >= 0.06 else cfg.diameter * 0.12
        if all(
            np.hypot(center[0] - c[0], center[1] - c[1]) > diam + 0.002
            for (c, _, _) in specs
        ):
            specs.append((center, diam, kind))
    return rod_phantom(specs, cfg.grid, array_diameter=cfg.diameter)


def _write_sample(args) -> str:
    cfg, out_dir, index, images = args
    tissue = _ground_truth(cfg, index, images)
    cd = simulate_all(tissue.sos, cfg.geometry(), cfg.pulse(), cfg.damping())
    if cfg.noise_snr_db is not None:
        cd = add_noise(cd, cfg.noise_snr_db, seed=_sample_seed(cfg.seed, index) ^ 0xA5A5)
    sample_dir = Path(out_dir) / f"sample_{index:06d}"
    sample_dir.mkdir(parents=True, exist_ok=True)
    write_raster(sample_dir / "sos.fwir", tissue.sos.values)
    write_raster(sample_dir / "labels.fwir", tissue.labels)
    write_raster(sample_dir / "cd.fwir", cd.traces)
    dump_toml(
        sample_dir / "meta.toml",
        {
            "index": index,
            "seed": _sample_seed(cfg.seed, index),
            "kind": cfg.kind,
            "region_speeds": {str(k): float(v) for k, v in tissue.region_speeds.items()},
        },
    )
    return str(sample_dir)


def generate_dataset(cfg: DatasetConfig, out_dir: str | os.PathLike, jobs: int = 1) -> list[str]:
    """Write ``cfg.n`` samples plus the dataset manifest; returns sample dirs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    images = None
    if cfg.kind == "mnist":
        if cfg.idx_path:
            with open(cfg.idx_path, "rb") as f:
                images = parse_idx(f.read())
            if images.ndim != 3:
                raise ValueError("idx file does not contain images")
        else:
            images = synthetic_digits(max(64, cfg.n), seed=cfg.seed)
    dump_toml(out / "manifest.toml", cfg.to_manifest())
    work = [(cfg, str(out), i, images) for i in range(cfg.n)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_write_sample, work))
    return [_write_sample(w) for w in work]


def load_dataset_setup(dataset_dir: str | os.PathLike) -> DatasetConfig:
    return DatasetConfig.from_manifest(load_toml(Path(dataset_dir) / "manifest.toml"))


def load_dataset(
    dataset_dir: str | os.PathLike,
    indices: list[int] | None = None,
) -> tuple[DatasetConfig, list[tuple[ChannelData, SosMap]], list[np.ndarray]]:
    """Read samples back as (channel data, ground truth) pairs plus labels."""
    root = Path(dataset_dir)
    cfg = load_dataset_setup(root)
    geometry = cfg.geometry()
    if indices is None:
        indices = list(range(cfg.n))
    samples: list[tuple[ChannelData, SosMap]] = []
    labels: list[np.ndarray] = []
    for i in indices:
        d = root / f"sample_{i:06d}"
        if not d.is_dir():
            raise FileNotFoundError(f"missing sample directory {d}")
        sos = SosMap(cfg.grid, read_raster(d / "sos.fwir"))
        traces = read_raster(d / "cd.fwir")
        samples.append((ChannelData(traces, geometry, cfg.grid.dt), sos))
        labels.append(read_raster(d / "labels.fwir"))
    return cfg, samples, labels
