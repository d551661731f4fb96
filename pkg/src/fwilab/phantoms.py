"""Speed-map generators and measurement-noise injection.

Three families of ground-truth maps are produced here: digit-image maps
(an IDX-format corpus pushed through an augmentation chain and rescaled to
tissue-like speeds), layered arm cross-sections with labeled tissue regions,
and water-bath rod phantoms.  All generation is a pure function of its seed,
so datasets are replayable.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .grid import ChannelData, Grid2D, SosMap

__all__ = [
    "AugmentSpec",
    "TissueMap",
    "ARM_TISSUE_RANGES",
    "ArmGeometry",
    "parse_idx",
    "write_idx",
    "synthetic_digits",
    "mnist_sos_map",
    "arm_phantom",
    "rod_phantom",
    "add_noise",
]

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

WATER_SPEED = 1500.0
MNIST_INTENSITY_SCALE = 666.0
MNIST_BIAS = 1550.0

ROD_SPEEDS = {"bone": 2700.0, "edema": 1588.0}

#: Label raster values.
LABEL_BACKGROUND = 0
LABEL_SKIN = 1
LABEL_FAT = 2
LABEL_MUSCLE = 3
LABEL_BONE = 4
LABEL_EDEMA = 5

#: Physiological speed ranges (m/s) keyed by label.
ARM_TISSUE_RANGES = {
    LABEL_SKIN: (1530.0, 1560.0),
    LABEL_FAT: (1420.0, 1450.0),
    LABEL_MUSCLE: (1570.0, 1620.0),
    LABEL_BONE: (2700.0, 3000.0),
    LABEL_EDEMA: (1450.0, 1500.0),
}


class PhantomError(RuntimeError):
    """Phantom construction failed (bad request or placement exhaustion)."""


# ---------------------------------------------------------------------------
# IDX container
# ---------------------------------------------------------------------------


def parse_idx(data: bytes) -> np.ndarray:
    """Decode a big-endian IDX byte string into u8 images (N, H, W) or
    labels (N,)."""
    if len(data) < 8:
        raise ValueError("truncated IDX header")
    magic = struct.unpack(">I", data[:4])[0]
    if magic == IDX_IMAGES_MAGIC:
        if len(data) < 16:
            raise ValueError("truncated IDX image dimensions")
        n, h, w = struct.unpack(">III", data[4:16])
        need = 16 + n * h * w
        if len(data) < need:
            raise ValueError(f"truncated IDX payload: have {len(data)}, need {need}")
        return np.frombuffer(data[16:need], dtype=np.uint8).reshape(n, h, w).copy()
    if magic == IDX_LABELS_MAGIC:
        n = struct.unpack(">I", data[4:8])[0]
        need = 8 + n
        if len(data) < need:
            raise ValueError(f"truncated IDX payload: have {len(data)}, need {need}")
        return np.frombuffer(data[8:need], dtype=np.uint8).copy()
    raise ValueError(
        f"bad IDX magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x} (images) "
        f"or 0x{IDX_LABELS_MAGIC:08x} (labels)"
    )


def write_idx(array: np.ndarray) -> bytes:
    """Inverse of :func:`parse_idx` for u8 images (N, H, W) or labels (N,)."""
    a = np.ascontiguousarray(array, dtype=np.uint8)
    if a.ndim == 3:
        header = struct.pack(">IIII", IDX_IMAGES_MAGIC, *a.shape)
    elif a.ndim == 1:
        header = struct.pack(">II", IDX_LABELS_MAGIC, a.shape[0])
    else:
        raise ValueError(f"expected rank 1 or 3, got rank {a.ndim}")
    return header + a.tobytes()


def synthetic_digits(n: int, seed: int, size: int = 28) -> np.ndarray:
    """Digit-like u8 stroke images for runs without a local IDX corpus.

    Each image is one to three thick quadratic strokes, optionally closed
    into a ring, on a black background; visually crude but exercises the
    same enclosed/open topologies as handwritten digits.
    """
    rng = np.random.default_rng(seed)
    images = np.zeros((n, size, size), dtype=np.uint8)
    yy, xx = np.mgrid[0:size, 0:size]
    for i in range(n):
        canvas = np.zeros((size, size))
        n_strokes = rng.integers(1, 4)
        for _ in range(n_strokes):
            if rng.random() < 0.4:  # closed loop
                cx, cy = rng.uniform(size * 0.3, size * 0.7, 2)
                rx, ry = rng.uniform(size * 0.12, size * 0.3, 2)
                ring = np.abs(
                    np.sqrt(((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2) - 1.0
                )
                canvas = np.maximum(canvas, np.clip(1.5 - ring * rx, 0, 1))
            else:  # quadratic stroke through three control points
                pts = rng.uniform(size * 0.15, size * 0.85, (3, 2))
                t = np.linspace(0, 1, 80)[:, None]
                curve = (
                    (1 - t) ** 2 * pts[0] + 2 * (1 - t) * t * pts[1] + t**2 * pts[2]
                )
                for px, py in curve:
                    d2 = (xx - px) ** 2 + (yy - py) ** 2
                    canvas = np.maximum(canvas, np.clip(2.0 - d2 / 2.0, 0, 1))
        images[i] = (np.clip(canvas, 0, 1) * 255).astype(np.uint8)
    return images


# ---------------------------------------------------------------------------
# Digit-image speed maps
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AugmentSpec:
    """Augmentation ranges; defaults follow the training-corpus recipe."""

    rotation_deg: float = 30.0
    translate_px: float = 5.0
    scale_range: tuple[float, float] = (0.8, 1.2)
    shear_deg: float = 10.0
    erase_area: tuple[float, float] = (0.02, 0.20)
    erase_aspect: tuple[float, float] = (0.3, 3.3)
    intensity_range: tuple[float, float] = (0.3, 1.2)
    final_rotation: bool = True
    seed: int = 0

    def __post_init__(self):
        for lo, hi, name in (
            (*self.scale_range, "scale_range"),
            (*self.erase_area, "erase_area"),
            (*self.erase_aspect, "erase_aspect"),
            (*self.intensity_range, "intensity_range"),
        ):
            if not (0 < lo <= hi):
                raise ValueError(f"{name} must satisfy 0 < lo <= hi")

    def with_seed(self, seed: int) -> "AugmentSpec":
        return replace(self, seed=seed)


def _random_affine(img: np.ndarray, spec: AugmentSpec, rng: np.random.Generator) -> np.ndarray:
    theta = np.deg2rad(rng.uniform(-spec.rotation_deg, spec.rotation_deg))
    shear = np.deg2rad(rng.uniform(-spec.shear_deg, spec.shear_deg))
    scale = rng.uniform(*spec.scale_range)
    shift = rng.uniform(-spec.translate_px, spec.translate_px, size=2)
    rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    shr = np.array([[1.0, np.tan(shear)], [0.0, 1.0]])
    m = rot @ shr * scale
    center = (np.asarray(img.shape) - 1) / 2.0
    m_inv = np.linalg.inv(m)
    offset = center - m_inv @ (center + shift)
    return ndimage.affine_transform(img, m_inv, offset=offset, order=1, cval=0.0)


def _random_erase(img: np.ndarray, spec: AugmentSpec, rng: np.random.Generator) -> np.ndarray:
    h, w = img.shape
    area = rng.uniform(*spec.erase_area) * h * w
    aspect = rng.uniform(*spec.erase_aspect)
    eh = min(h, max(1, int(round(np.sqrt(area * aspect)))))
    ew = min(w, max(1, int(round(np.sqrt(area / aspect)))))
    top = rng.integers(0, h - eh + 1)
    left = rng.integers(0, w - ew + 1)
    out = img.copy()
    out[top : top + eh, left : left + ew] = 0.0
    return out


def mnist_sos_map(
    image: np.ndarray, spec: AugmentSpec, grid: Grid2D, diameter: float
) -> SosMap:
    """Augment a digit image and embed it as a speed map inside the array disk.

    Chain: unit-range conversion, random affine (rotation/translation/scale/
    shear, bilinear), random erase, random intensity factor, resize onto the
    square inscribed in the transducer circle, final in-plane rotation, then
    speeds ``666 * I + 1550`` m/s inside the disk and water outside.
    """
    from skimage.transform import resize

    img = np.asarray(image, dtype=np.float64)
    if img.size == 0:
        raise ValueError("empty input image")
    if img.max() > 1.0:
        img = img / 255.0
    rng = np.random.default_rng(spec.seed)

    img = _random_affine(img, spec, rng)
    img = _random_erase(img, spec, rng)
    img = img * rng.uniform(*spec.intensity_range)

    r_cells = (diameter / 2.0) / grid.dx
    side = int(np.floor(2.0 * r_cells / np.sqrt(2.0)))
    if side < 2:
        raise ValueError("array circle too small for the image block")
    block = resize(img, (side, side), order=1, anti_aliasing=False, preserve_range=True)
    if spec.final_rotation:
        block = ndimage.rotate(
            block, rng.uniform(0.0, 360.0), reshape=False, order=1, cval=0.0
        )

    cx = (grid.nx - 1) / 2.0
    cz = (grid.nz - 1) / 2.0
    intensity = np.zeros(grid.shape)
    x0 = int(round(cx - side / 2.0))
    z0 = int(round(cz - side / 2.0))
    intensity[x0 : x0 + side, z0 : z0 + side] = np.clip(block, 0.0, None)

    ix = np.arange(grid.nx)[:, None]
    iz = np.arange(grid.nz)[None, :]
    disk = (ix - cx) ** 2 + (iz - cz) ** 2 <= r_cells**2
    values = np.where(disk, MNIST_BIAS + MNIST_INTENSITY_SCALE * intensity, WATER_SPEED)
    return SosMap(grid, values)


# ---------------------------------------------------------------------------
# Arm phantoms
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TissueMap:
    """Speed map plus an aligned per-cell tissue label raster."""

    sos: SosMap
    labels: np.ndarray  # (nx, nz) uint8, values LABEL_*
    region_speeds: dict

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.uint8)
        if labels.shape != self.sos.grid.shape:
            raise ValueError("labels shape does not match the grid")
        labels = np.ascontiguousarray(labels)
        labels.flags.writeable = False
        object.__setattr__(self, "labels", labels)

    @property
    def grid(self) -> Grid2D:
        return self.sos.grid

    def mask(self, label: int) -> np.ndarray:
        return self.labels == label


@dataclass(frozen=True)
class ArmGeometry:
    """Geometric priors for arm cross-sections, as fractions of the usable
    disk radius.  All ranges are sampled uniformly per phantom."""

    outer_a: tuple[float, float] = (0.62, 0.80)
    outer_b: tuple[float, float] = (0.50, 0.68)
    skin_thickness: tuple[float, float] = (0.045, 0.075)
    fat_thickness: tuple[float, float] = (0.09, 0.16)
    bone_radius: tuple[float, float] = (0.10, 0.15)
    edema_a: tuple[float, float] = (0.13, 0.22)
    edema_b: tuple[float, float] = (0.09, 0.16)
    center_jitter: float = 0.05
    max_tries: int = 200

    def to_dict(self) -> dict:
        return {
            "outer_a": list(self.outer_a),
            "outer_b": list(self.outer_b),
            "skin_thickness": list(self.skin_thickness),
            "fat_thickness": list(self.fat_thickness),
            "bone_radius": list(self.bone_radius),
            "edema_a": list(self.edema_a),
            "edema_b": list(self.edema_b),
            "center_jitter": self.center_jitter,
            "max_tries": self.max_tries,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArmGeometry":
        kwargs = {
            k: tuple(v) if isinstance(v, list) else v for k, v in d.items()
        }
        return cls(**kwargs)


def _ellipse_mask(
    grid: Grid2D, center: tuple[float, float], a: float, b: float, phi: float
) -> np.ndarray:
    """Cells inside an ellipse with semi-axes (a, b) in cells, rotated by phi."""
    ix = np.arange(grid.nx)[:, None] - center[0]
    iz = np.arange(grid.nz)[None, :] - center[1]
    xr = ix * np.cos(phi) + iz * np.sin(phi)
    zr = -ix * np.sin(phi) + iz * np.cos(phi)
    return (xr / a) ** 2 + (zr / b) ** 2 <= 1.0


def arm_phantom(
    seed: int,
    with_edema: bool,
    grid: Grid2D,
    diameter: float,
    geometry: ArmGeometry | None = None,
) -> TissueMap:
    """Layered arm cross-section inside the array disk.

    Nested regions: elliptical skin rim, subcutaneous fat ring, muscle
    interior, two circular bones in the muscle, and (optionally) an
    elliptical edema region that never overlaps bone.  Region speeds are
    drawn uniformly from the physiological ranges.
    """
    geo = geometry or ArmGeometry()
    rng = np.random.default_rng(seed)
    r_disk = (diameter / 2.0) / grid.dx
    cx = (grid.nx - 1) / 2.0
    cz = (grid.nz - 1) / 2.0

    jitter = geo.center_jitter * r_disk
    center = (cx + rng.uniform(-jitter, jitter), cz + rng.uniform(-jitter, jitter))
    phi = rng.uniform(0.0, np.pi)
    a = rng.uniform(*geo.outer_a) * r_disk
    b = rng.uniform(*geo.outer_b) * r_disk
    t_skin = max(2.0, rng.uniform(*geo.skin_thickness) * r_disk)
    t_fat = max(2.0, rng.uniform(*geo.fat_thickness) * r_disk)
    if min(a, b) - t_skin - t_fat < 4.0:
        raise PhantomError("grid too coarse for the nested arm layers")

    outer = _ellipse_mask(grid, center, a, b, phi)
    fat_outer = _ellipse_mask(grid, center, a - t_skin, b - t_skin, phi)
    muscle = _ellipse_mask(grid, center, a - t_skin - t_fat, b - t_skin - t_fat, phi)

    labels = np.full(grid.shape, LABEL_BACKGROUND, dtype=np.uint8)
    labels[outer] = LABEL_SKIN
    labels[fat_outer] = LABEL_FAT
    labels[muscle] = LABEL_MUSCLE

    ix = np.arange(grid.nx)[:, None]
    iz = np.arange(grid.nz)[None, :]

    def place_disk(radius: float, clear_of: list[tuple[tuple, float]]):
        for _ in range(geo.max_tries):
            u, v = rng.uniform(-0.6, 0.6, 2)
            cand = (center[0] + u * (a - t_skin - t_fat), center[1] + v * (b - t_skin - t_fat))
            d2 = (ix - cand[0]) ** 2 + (iz - cand[1]) ** 2
            disk = d2 <= radius**2
            if not np.all(muscle[disk]):
                continue
            if any(
                np.hypot(cand[0] - c[0], cand[1] - c[1]) <= radius + r + 2.0
                for c, r in clear_of
            ):
                continue
            return cand, disk
        raise PhantomError("could not place a region after bounded retries")

    r_bone1 = rng.uniform(*geo.bone_radius) * r_disk
    r_bone2 = rng.uniform(*geo.bone_radius) * r_disk
    c1, bone1 = place_disk(r_bone1, [])
    c2, bone2 = place_disk(r_bone2, [(c1, r_bone1)])
    labels[bone1 | bone2] = LABEL_BONE

    edema_mask = None
    if with_edema:
        ea = rng.uniform(*geo.edema_a) * r_disk
        eb = rng.uniform(*geo.edema_b) * r_disk
        ephi = rng.uniform(0.0, np.pi)
        for attempt in range(geo.max_tries):
            u, v = rng.uniform(-0.55, 0.55, 2)
            ec = (center[0] + u * (a - t_skin - t_fat), center[1] + v * (b - t_skin - t_fat))
            cand = _ellipse_mask(grid, ec, ea, eb, ephi)
            if not cand.any():
                continue
            if not np.all(muscle[cand]):
                continue
            grown = ndimage.binary_dilation(cand, iterations=1)
            if (grown & (bone1 | bone2)).any():
                continue
            edema_mask = cand
            break
        if edema_mask is None:
            raise PhantomError("could not place the edema region after bounded retries")
        labels[edema_mask] = LABEL_EDEMA

    speeds = {LABEL_BACKGROUND: WATER_SPEED}
    for label, (lo, hi) in ARM_TISSUE_RANGES.items():
        speeds[label] = float(rng.uniform(lo, hi))
    values = np.full(grid.shape, WATER_SPEED)
    for label, speed in speeds.items():
        values[labels == label] = speed
    if not with_edema:
        speeds.pop(LABEL_EDEMA)

    return TissueMap(SosMap(grid, values), labels, {int(k): v for k, v in speeds.items()})


# ---------------------------------------------------------------------------
# Rod phantoms
# ---------------------------------------------------------------------------


def rod_phantom(
    rod_specs: list[tuple[tuple[float, float], float, str]],
    grid: Grid2D,
    array_diameter: float | None = None,
) -> TissueMap:
    """Cylindrical rods in a water bath.

    ``rod_specs`` holds ((x, z) center in meters, diameter in meters, kind)
    with kind "bone" (2700 m/s) or "edema" (1588 m/s).  One to three rods,
    pairwise non-overlapping, all inside the array circle when a diameter is
    given (inside the grid otherwise).
    """
    if not 1 <= len(rod_specs) <= 3:
        raise PhantomError(f"need 1 to 3 rods, got {len(rod_specs)}")
    cx = (grid.nx - 1) / 2.0 * grid.dx
    cz = (grid.nz - 1) / 2.0 * grid.dx

    parsed = []
    for (x, z), diam, kind in rod_specs:
        if kind not in ROD_SPEEDS:
            raise PhantomError(f"unknown rod kind {kind!r}")
        if diam <= 0:
            raise PhantomError("rod diameter must be positive")
        radius = diam / 2.0
        if radius < grid.dx:
            raise PhantomError(f"rod of diameter {diam} m has no area at dx={grid.dx}")
        if array_diameter is not None:
            if np.hypot(x - cx, z - cz) + radius > array_diameter / 2.0:
                raise PhantomError("rod extends outside the array circle")
        else:
            ext_x, ext_z = grid.extent
            if not (radius <= x <= ext_x - radius and radius <= z <= ext_z - radius):
                raise PhantomError("rod extends outside the grid")
        parsed.append(((x, z), radius, kind))

    for i in range(len(parsed)):
        for j in range(i + 1, len(parsed)):
            (xi, zi), ri, _ = parsed[i]
            (xj, zj), rj, _ = parsed[j]
            if np.hypot(xi - xj, zi - zj) < ri + rj:
                raise PhantomError(f"rods {i} and {j} overlap")

    ix = np.arange(grid.nx)[:, None] * grid.dx
    iz = np.arange(grid.nz)[None, :] * grid.dx
    labels = np.full(grid.shape, LABEL_BACKGROUND, dtype=np.uint8)
    values = np.full(grid.shape, WATER_SPEED)
    speeds = {LABEL_BACKGROUND: WATER_SPEED}
    for (x, z), radius, kind in parsed:
        disk = (ix - x) ** 2 + (iz - z) ** 2 <= radius**2
        label = LABEL_BONE if kind == "bone" else LABEL_EDEMA
        labels[disk] = label
        values[disk] = ROD_SPEEDS[kind]
        speeds[label] = ROD_SPEEDS[kind]
    return TissueMap(SosMap(grid, values), labels, {int(k): v for k, v in speeds.items()})


# ---------------------------------------------------------------------------
# Measurement noise
# ---------------------------------------------------------------------------


def noisy_traces(traces: np.ndarray, snr_db: float | None, seed: int) -> np.ndarray:
    """Trace array plus white Gaussian noise at the requested SNR.

    Noise power is ``mean(traces**2) / 10**(snr_db/10)`` over all entries;
    ``snr_db=None`` (or infinity) returns the input unchanged.
    """
    traces = np.asarray(traces, dtype=np.float64)
    if snr_db is None or np.isinf(snr_db):
        return traces
    power = float(np.mean(traces**2))
    if power == 0.0:
        return traces
    noise_power = power / 10.0 ** (snr_db / 10.0)
    rng = np.random.default_rng(seed)
    return traces + rng.normal(0.0, np.sqrt(noise_power), size=traces.shape)


def add_noise(cd: ChannelData, snr_db: float | None, seed: int) -> ChannelData:
    """Channel data with white Gaussian noise at the requested SNR; see
    :func:`noisy_traces` for the power convention."""
    if snr_db is None or np.isinf(snr_db):
        return cd
    return ChannelData(noisy_traces(cd.traces, snr_db, seed), cd.geometry, cd.dt)
