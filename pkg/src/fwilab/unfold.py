"""Unfolded inversion driver: block-wise training and K-stage inference.

Each stage k owns a separately trained update network.  Training never
backpropagates through the wave solver: for every training sample the
current estimate and its misfit gradient are materialized first (one
physics pass per stage), and the stage network is then fit as an ordinary
supervised regression onto the ground-truth map.  Inference alternates a
gradient computation with a network update, starting from a homogeneous
water map.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .adjoint import compute_gradient
from .forward import DampingProfile, SourcePulse
from .grid import ChannelData, Grid2D, SosMap, homogeneous_map
from .network import AdamState, NormSpec, UpdateNetwork, train_step
from .raster import read_raster, write_raster

logger = logging.getLogger(__name__)

__all__ = [
    "UnfoldPlan",
    "BlockDataset",
    "InversionSetup",
    "clamp_sos",
    "cfl_safe_bounds",
    "prepare_block_dataset",
    "advance_block_dataset",
    "train_block",
    "unfold_infer",
    "train_all_blocks",
]

#: Default learning-rate schedule for the five-stage configuration.
DEFAULT_LR_SCHEDULE = (1e-4, 1e-4, 5e-5, 1e-5, 1e-5)


@dataclass(frozen=True)
class UnfoldPlan:
    """Stage count, per-stage learning rates, and per-block epoch budget."""

    k: int = 5
    lr_schedule: tuple[float, ...] = DEFAULT_LR_SCHEDULE
    epochs: int = 40
    batch_size: int = 32

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("need at least one stage")
        if len(self.lr_schedule) != self.k:
            raise ValueError(
                f"lr_schedule has {len(self.lr_schedule)} entries for k={self.k}"
            )
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")


@dataclass(frozen=True)
class InversionSetup:
    """Physics context shared by training and inference."""

    pulse: SourcePulse
    damping: DampingProfile | None = None
    bounds: tuple[float, float] = (1300.0, 3200.0)
    water_speed: float = 1500.0
    norm: NormSpec = field(default_factory=NormSpec)


@dataclass
class BlockDataset:
    """Aligned (C_k, g_k, C_gt) stacks for one training stage."""

    k: int
    c_maps: np.ndarray  # (N, nx, nz)
    gradients: np.ndarray  # (N, nx, nz)
    targets: np.ndarray  # (N, nx, nz)

    def __post_init__(self):
        if not (self.c_maps.shape == self.gradients.shape == self.targets.shape):
            raise ValueError("dataset stacks must share one shape")
        if self.c_maps.ndim != 3:
            raise ValueError("dataset stacks must be (N, nx, nz)")

    def __len__(self) -> int:
        return self.c_maps.shape[0]

    def sample(self, i: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.c_maps[i], self.gradients[i], self.targets[i]

    def save(self, directory: str | os.PathLike) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        write_raster(d / "c_maps.fwir", self.c_maps)
        write_raster(d / "gradients.fwir", self.gradients)
        write_raster(d / "targets.fwir", self.targets)
        write_raster(d / "stage.fwir", np.array([self.k], dtype=np.float64))

    @classmethod
    def load(cls, directory: str | os.PathLike) -> "BlockDataset":
        d = Path(directory)
        return cls(
            k=int(read_raster(d / "stage.fwir")[0]),
            c_maps=read_raster(d / "c_maps.fwir"),
            gradients=read_raster(d / "gradients.fwir"),
            targets=read_raster(d / "targets.fwir"),
        )


def cfl_safe_bounds(
    grid: Grid2D, bounds: tuple[float, float], safety: float = 0.999
) -> tuple[float, float]:
    """Cap the upper speed bound at the grid's stability limit.

    Clamping iterates to these bounds guarantees every stage's forward
    solve satisfies the CFL condition, whatever the network predicts.
    """
    limit = safety * grid.dx / (grid.dt * np.sqrt(2.0))
    c_min, c_max = bounds
    if c_min >= limit:
        raise ValueError(
            f"lower bound {c_min} m/s already exceeds the CFL limit {limit:.1f} m/s"
        )
    return (c_min, min(c_max, limit))


def clamp_sos(sos: SosMap, bounds: tuple[float, float]) -> SosMap:
    """Elementwise clamp to [c_min, c_max]; idempotent."""
    c_min, c_max = bounds
    if not c_min < c_max:
        raise ValueError("bounds must satisfy c_min < c_max")
    values = np.clip(sos.values, c_min, c_max)
    if np.array_equal(values, sos.values):
        return sos
    return sos.with_values(values)


def _roll_estimate(
    m_obs: ChannelData,
    nets: list[UpdateNetwork],
    setup: InversionSetup,
    upto: int,
) -> tuple[SosMap, np.ndarray]:
    """Run ``upto`` trained stages from the water map; returns the clamped
    estimate C_upto and its misfit gradient."""
    grid = m_obs.geometry.grid
    c = clamp_sos(homogeneous_map(grid, setup.water_speed), setup.bounds)
    for j in range(upto):
        g = compute_gradient(c, m_obs, setup.pulse, setup.damping)
        update = nets[j].predict_update(c.values, g.values)
        c = clamp_sos(c.with_values(c.values + update), setup.bounds)
    g = compute_gradient(c, m_obs, setup.pulse, setup.damping)
    return c, g.values


def prepare_block_dataset(
    k: int,
    samples: list[tuple[ChannelData, SosMap]],
    nets: list[UpdateNetwork],
    setup: InversionSetup,
) -> BlockDataset:
    """Materialize stage-``k`` training tuples by replaying stages 0..k-1.

    Samples whose physics pass fails are skipped with a log entry rather
    than aborting the whole dataset.
    """
    if k < 0 or k > len(nets):
        raise ValueError(f"stage {k} requires {k} trained networks, have {len(nets)}")
    c_maps, grads, targets = [], [], []
    for i, (m_obs, c_gt) in enumerate(samples):
        try:
            c, g = _roll_estimate(m_obs, nets, setup, upto=k)
        except Exception:
            logger.exception("sample %d skipped while preparing stage %d", i, k)
            continue
        c_maps.append(c.values)
        grads.append(g)
        targets.append(c_gt.values)
    if not c_maps:
        raise RuntimeError(f"no usable samples while preparing stage {k}")
    return BlockDataset(k, np.stack(c_maps), np.stack(grads), np.stack(targets))


def advance_block_dataset(
    ds: BlockDataset,
    net: UpdateNetwork,
    samples: list[tuple[ChannelData, SosMap]],
    setup: InversionSetup,
) -> BlockDataset:
    """Roll an existing stage dataset forward through one trained network.

    Equivalent to ``prepare_block_dataset(ds.k + 1, ...)`` but reuses the
    stored estimates, costing a single gradient pass per sample.
    """
    if len(ds) != len(samples):
        raise ValueError("dataset and sample list are misaligned")
    grid = samples[0][0].geometry.grid
    c_maps, grads = [], []
    for i, (m_obs, _) in enumerate(samples):
        c_vals, g_vals, _ = ds.sample(i)
        update = net.predict_update(c_vals, g_vals)
        c = clamp_sos(SosMap(grid, c_vals + update), setup.bounds)
        g = compute_gradient(c, m_obs, setup.pulse, setup.damping)
        c_maps.append(c.values)
        grads.append(g.values)
    return BlockDataset(ds.k + 1, np.stack(c_maps), np.stack(grads), ds.targets.copy())


def train_block(
    k: int,
    ds: BlockDataset,
    plan: UnfoldPlan,
    seed: int,
    dtype=np.float32,
    norm: NormSpec | None = None,
) -> tuple[UpdateNetwork, list[float]]:
    """Fit stage ``k``'s network on its dataset; returns the final-epoch
    network (no early stopping) and the per-epoch mean losses."""
    if len(ds) == 0:
        raise ValueError("empty block dataset")
    init_seed, shuffle_seed = np.random.SeedSequence([seed, k]).spawn(2)
    net = UpdateNetwork.initialize(
        seed=int(init_seed.generate_state(1)[0]), dtype=dtype, norm=norm
    )
    adam = AdamState.for_network(net)
    rng = np.random.default_rng(shuffle_seed)
    lr = plan.lr_schedule[k]
    epoch_losses: list[float] = []
    n = len(ds)
    for epoch in range(plan.epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, plan.batch_size):
            idx = order[start : start + plan.batch_size]
            batch = [ds.sample(int(i)) for i in idx]
            try:
                losses.append(train_step(net, batch, adam, lr))
            except FloatingPointError as exc:
                raise FloatingPointError(
                    f"stage {k} diverged at epoch {epoch}, batch {start // plan.batch_size}"
                ) from exc
        epoch_losses.append(float(np.mean(losses)))
    return net, epoch_losses


def unfold_infer(
    m_obs: ChannelData,
    c0: SosMap,
    nets: list[UpdateNetwork],
    setup: InversionSetup,
) -> list[SosMap]:
    """Run all trained stages; returns the estimates C_1..C_K in order."""
    c = clamp_sos(c0, setup.bounds)
    out: list[SosMap] = []
    for net in nets:
        g = compute_gradient(c, m_obs, setup.pulse, setup.damping)
        update = net.predict_update(c.values, g.values)
        c = clamp_sos(c.with_values(c.values + update), setup.bounds)
        out.append(c)
    return out


def train_all_blocks(
    samples: list[tuple[ChannelData, SosMap]],
    plan: UnfoldPlan,
    setup: InversionSetup,
    seed: int,
    ckpt_dir: str | os.PathLike | None = None,
    dataset_dir: str | os.PathLike | None = None,
) -> tuple[list[UpdateNetwork], list[list[float]]]:
    """Sequentially train all stages, advancing the materialized dataset
    through each freshly trained network.

    If ``ckpt_dir`` is given every stage checkpoint is saved as it finishes;
    ``dataset_dir`` materializes each stage's (C_k, g_k, C_gt) shards.
    """
    from .checkpoint import save_ensemble, save_network

    nets: list[UpdateNetwork] = []
    histories: list[list[float]] = []
    ds = prepare_block_dataset(0, samples, nets, setup)
    for k in range(plan.k):
        if dataset_dir is not None:
            ds.save(Path(dataset_dir) / f"stage_{k:02d}")
        net, losses = train_block(k, ds, plan, seed, norm=setup.norm)
        nets.append(net)
        histories.append(losses)
        logger.info("stage %d trained: first %.4g last %.4g", k, losses[0], losses[-1])
        if ckpt_dir is not None:
            save_network(Path(ckpt_dir) / f"net_{k:02d}", net)
        if k + 1 < plan.k:
            ds = advance_block_dataset(ds, net, samples, setup)
    if ckpt_dir is not None:
        save_ensemble(ckpt_dir, nets)
    return nets, histories
