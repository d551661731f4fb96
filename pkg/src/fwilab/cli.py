"""Command-line entry point wiring the library into reproducible runs.

Subcommands: gen-data, forward, grad, grad-check, fwi, dufwi-train,
dufwi-infer, calibrate, evaluate, noise.  A TOML config given with
``--config`` supplies defaults that explicit flags override; every run
writes a manifest (parameters, seed, version, input hashes) next to its
outputs.  Exit codes: 0 success, 2 usage error, 3 missing input,
4 invalid data or geometry, 5 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .adjoint import compute_gradient, fd_gradient_oracle, gradient_mask
from .calibration import Trace, bandpass, calibrate_source, gate_and_smooth, resample
from .checkpoint import load_ensemble
from .datagen import DatasetConfig, generate_dataset, load_dataset, load_dataset_setup
from .forward import (
    NumericError,
    SourcePulse,
    build_pml,
    make_source_pulse,
    simulate_all,
    simulate_wavefield,
    zero_damping,
)
from .fwi import FwiConfig, FwiDivergenceError, admm_fwi
from .grid import ChannelData, GeometryError, Grid2D, SosMap, build_geometry, homogeneous_map
from .manifest import write_run_manifest
from .metrics import classify_edema, dice, image_metrics, lmse
from .phantoms import (
    LABEL_BONE,
    LABEL_EDEMA,
    LABEL_SKIN,
    PhantomError,
    noisy_traces,
)
from .pngio import save_heatmap
from .raster import RasterFormatError, read_raster, write_raster
from .tomlio import load_toml
from .unfold import InversionSetup, UnfoldPlan, cfl_safe_bounds, train_all_blocks, unfold_infer

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_MISSING_INPUT = 3
EXIT_INVALID = 4
EXIT_NUMERIC = 5

DEFAULT_GRID = "64,64,1e-3,2.2e-7,192"
SEED_ENV_VAR = "FWI_LAB_SEED"


# ---------------------------------------------------------------------------
# Shared option plumbing
# ---------------------------------------------------------------------------


def _parse_grid(spec: str) -> Grid2D:
    parts = spec.split(",")
    if len(parts) != 5:
        raise ValueError(f"--grid expects nx,nz,dx,dt,nt, got {spec!r}")
    nx, nz, nt = int(parts[0]), int(parts[1]), int(parts[4])
    return Grid2D(nx=nx, nz=nz, dx=float(parts[2]), dt=float(parts[3]), nt=nt)


def _parse_pair(spec: str, flag: str) -> tuple[float, float]:
    parts = spec.split(",")
    if len(parts) != 2:
        raise ValueError(f"{flag} expects lo,hi, got {spec!r}")
    return float(parts[0]), float(parts[1])


def _resolve_seed(args) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    env = os.environ.get(SEED_ENV_VAR)
    return int(env) if env else 0


def _add_grid_arg(p: argparse.ArgumentParser) -> None:
    p.add_argument("--grid", default=DEFAULT_GRID, help="nx,nz,dx,dt,nt")


def _add_physics_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--geom", help="geometry TOML (n_p, diameter, n_r)")
    p.add_argument("--pulse", default="dgauss", choices=["gaussian", "dgauss"])
    p.add_argument("--fc", type=float, default=200e3, help="pulse center frequency, Hz")
    p.add_argument("--pml-thickness", type=int, default=8)
    p.add_argument("--pml-attenuation", type=float, default=1e-3)
    p.add_argument("--pml-exponent", type=float, default=2.0)


def _require_file(path: str | None, what: str) -> Path:
    if not path:
        raise FileNotFoundError(f"missing required {what}")
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"{what} not found: {p}")
    return p


def _load_geometry(args, grid: Grid2D):
    geom_file = _require_file(args.geom, "geometry file (--geom)")
    spec = load_toml(geom_file)
    return build_geometry(
        int(spec["n_p"]), float(spec["diameter"]), int(spec["n_r"]), grid
    )


def _make_pulse(args, grid: Grid2D) -> SourcePulse:
    kind = "gaussian" if args.pulse == "gaussian" else "gaussian_derivative"
    return make_source_pulse(args.fc, grid.dt, grid.nt, kind)


def _make_damping(args, grid: Grid2D):
    if args.pml_thickness == 0:
        return zero_damping(grid)
    return build_pml(grid, args.pml_thickness, args.pml_attenuation, args.pml_exponent)


def _manifest_params(args) -> dict:
    skip = {"func", "config"}
    out = {}
    for key, value in vars(args).items():
        if key in skip or value is None:
            continue
        if isinstance(value, (str, int, float, bool)):
            out[key] = value
        else:
            out[key] = str(value)
    return out


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    seed = _resolve_seed(args)
    grid = _parse_grid(args.grid)
    cfg = DatasetConfig(
        kind=args.kind,
        n=args.n,
        seed=seed,
        grid=grid,
        n_p=args.n_p,
        diameter=args.diameter,
        n_r=args.n_r,
        f_c=args.fc,
        pulse_kind="gaussian" if args.pulse == "gaussian" else "gaussian_derivative",
        pml_thickness=args.pml_thickness,
        pml_attenuation=args.pml_attenuation,
        pml_exponent=args.pml_exponent,
        noise_snr_db=args.noise_snr,
        edema_ratio=args.edema_ratio,
        idx_path=args.idx,
    )
    generate_dataset(cfg, args.out, jobs=args.jobs)
    write_run_manifest(args.out, "gen-data", _manifest_params(args), seed=seed)
    print(f"wrote {cfg.n} {cfg.kind} samples to {args.out}")
    return EXIT_OK


def cmd_forward(args) -> int:
    grid = _parse_grid(args.grid)
    sos = SosMap(grid, read_raster(_require_file(args.sos, "speed map (--sos)")))
    geometry = _load_geometry(args, grid)
    pulse = _make_pulse(args, grid)
    damping = _make_damping(args, grid)
    cd = simulate_all(sos, geometry, pulse, damping)
    write_raster(args.out, cd.traces)
    if args.snapshot_every:
        node = tuple(geometry.element_nodes[0])
        fields = simulate_wavefield(sos, pulse, node, damping)
        out_dir = Path(args.out).parent / "snapshots"
        for t in range(0, grid.nt, args.snapshot_every):
            save_heatmap(out_dir, f"wavefield_t{t:05d}", fields[t])
    write_run_manifest(
        Path(args.out), "forward", _manifest_params(args), inputs=[args.sos, args.geom]
    )
    print(f"wrote channel data {cd.shape} to {args.out}")
    return EXIT_OK


def cmd_grad(args) -> int:
    grid = _parse_grid(args.grid)
    sos = SosMap(grid, read_raster(_require_file(args.sos, "speed map (--sos)")))
    geometry = _load_geometry(args, grid)
    traces = read_raster(_require_file(args.obs, "observed data (--obs)"))
    m_obs = ChannelData(traces, geometry, grid.dt)
    pulse = _make_pulse(args, grid)
    damping = _make_damping(args, grid)
    grad = compute_gradient(sos, m_obs, pulse, damping)
    write_raster(args.out, grad.values)
    write_run_manifest(
        Path(args.out), "grad", _manifest_params(args), inputs=[args.sos, args.obs, args.geom]
    )
    print(f"wrote gradient to {args.out} (max |g| = {np.abs(grad.values).max():.3e})")
    return EXIT_OK


def cmd_grad_check(args) -> int:
    seed = _resolve_seed(args)
    rng = np.random.default_rng(seed)
    grid = Grid2D(nx=16, nz=16, dx=1e-3, dt=2.2e-7, nt=100)
    geometry = build_geometry(2, 0.010, 1, grid)
    pulse = make_source_pulse(3e5, grid.dt, grid.nt)
    truth = np.full(grid.shape, 1500.0)
    truth[5:11, 5:11] = 1580.0
    m_obs = simulate_all(SosMap(grid, truth), geometry, pulse)
    sos = homogeneous_map(grid, 1500.0)
    grad = compute_gradient(sos, m_obs, pulse)
    mask = gradient_mask(geometry, zero_damping(grid))
    magnitude_floor = 1e-3 * np.abs(grad.values).max()
    candidates = [
        (ix, iz)
        for ix in range(2, grid.nx - 2)
        for iz in range(2, grid.nz - 2)
        if mask[ix, iz] and abs(grad.values[ix, iz]) > magnitude_floor
    ]
    rng.shuffle(candidates)
    cells = candidates[: args.cells]
    fd = fd_gradient_oracle(sos, m_obs, pulse, cells, eps=args.eps)
    adj = np.array([grad.values[c] for c in cells])
    rel = np.abs(adj - fd) / np.abs(fd)
    print(f"max relative error over {len(cells)} cells: {rel.max():.3e}")
    if rel.max() > args.tol:
        print(f"exceeds tolerance {args.tol}")
        return EXIT_INVALID
    return EXIT_OK


def cmd_fwi(args) -> int:
    grid = _parse_grid(args.grid)
    geometry = _load_geometry(args, grid)
    traces = read_raster(_require_file(args.obs, "observed data (--obs)"))
    m_obs = ChannelData(traces, geometry, grid.dt)
    pulse = _make_pulse(args, grid)
    damping = _make_damping(args, grid)
    if args.init == "water":
        c0 = homogeneous_map(grid, args.water_speed)
    else:
        c0 = SosMap(grid, read_raster(_require_file(args.init, "initial map (--init)")))
    bounds = cfl_safe_bounds(grid, _parse_pair(args.bounds, "--bounds"))
    cfg = FwiConfig(
        outer_iters=args.outer,
        inner_lbfgs_iters=args.inner,
        inner_lr=args.inner_lr,
        tv_weight=getattr(args, "lambda"),
        rho_admm=args.rho,
        bounds=bounds,
    )
    result, log = admm_fwi(m_obs, c0, cfg, pulse, damping)
    write_raster(args.out, result.values)
    if args.log:
        with open(args.log, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["iteration", "misfit"])
            for i, value in enumerate(log):
                writer.writerow([i, f"{value:.10e}"])
    write_run_manifest(
        Path(args.out), "fwi", _manifest_params(args), inputs=[args.obs, args.geom]
    )
    print(f"fwi finished: misfit {log[0]:.4e} -> {log[-1]:.4e}")
    return EXIT_OK


def cmd_dufwi_train(args) -> int:
    seed = _resolve_seed(args)
    data_dir = _require_file(args.data, "dataset directory (--data)")
    cfg, samples, _ = load_dataset(data_dir)
    lrs = tuple(float(x) for x in args.lrs.split(","))
    plan = UnfoldPlan(k=args.K, lr_schedule=lrs, epochs=args.epochs, batch_size=args.batch)
    bounds = cfl_safe_bounds(cfg.grid, _parse_pair(args.bounds, "--bounds"))
    setup = InversionSetup(
        pulse=cfg.pulse(),
        damping=cfg.damping(),
        bounds=bounds,
        water_speed=args.water_speed,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _, histories = train_all_blocks(
        samples, plan, setup, seed, ckpt_dir=out, dataset_dir=out / "blocks"
    )
    write_run_manifest(out, "dufwi-train", _manifest_params(args), seed=seed)
    for k, losses in enumerate(histories):
        print(f"stage {k}: loss {losses[0]:.4e} -> {losses[-1]:.4e}")
    return EXIT_OK


def _infer_one(m_obs, nets, setup, grid):
    c0 = homogeneous_map(grid, setup.water_speed)
    return unfold_infer(m_obs, c0, nets, setup)


def cmd_dufwi_infer(args) -> int:
    ckpt = _require_file(args.ckpt, "checkpoint directory (--ckpt)")
    nets = load_ensemble(ckpt)
    obs_path = Path(_require_file(args.obs, "observed data (--obs)"))
    out_prefix = Path(args.out_prefix)

    if obs_path.is_dir():  # dataset directory: reconstruct every sample
        cfg, samples, _ = load_dataset(obs_path)
        bounds = cfl_safe_bounds(cfg.grid, _parse_pair(args.bounds, "--bounds"))
        setup = InversionSetup(
            pulse=cfg.pulse(), damping=cfg.damping(), bounds=bounds,
            water_speed=args.water_speed,
        )
        out_prefix.mkdir(parents=True, exist_ok=True)
        for i, (m_obs, _) in enumerate(samples):
            iterates = _infer_one(m_obs, nets, setup, cfg.grid)
            write_raster(out_prefix / f"sample_{i:06d}.fwir", iterates[-1].values)
            if args.heatmap:
                save_heatmap(out_prefix, f"sample_{i:06d}", iterates[-1].values)
        write_run_manifest(out_prefix, "dufwi-infer", _manifest_params(args))
        print(f"reconstructed {len(samples)} samples into {out_prefix}")
        return EXIT_OK

    grid = _parse_grid(args.grid)
    geometry = _load_geometry(args, grid)
    m_obs = ChannelData(read_raster(obs_path), geometry, grid.dt)
    pulse = _make_pulse(args, grid)
    damping = _make_damping(args, grid)
    bounds = cfl_safe_bounds(grid, _parse_pair(args.bounds, "--bounds"))
    setup = InversionSetup(
        pulse=pulse, damping=damping, bounds=bounds, water_speed=args.water_speed
    )
    iterates = _infer_one(m_obs, nets, setup, grid)
    out_prefix.parent.mkdir(parents=True, exist_ok=True)
    for k, sos in enumerate(iterates, start=1):
        write_raster(f"{out_prefix}_{k:02d}.fwir", sos.values)
        if args.heatmap:
            save_heatmap(out_prefix.parent, f"{out_prefix.name}_{k:02d}", sos.values)
    write_run_manifest(
        Path(f"{out_prefix}_{len(iterates):02d}.fwir"),
        "dufwi-infer",
        _manifest_params(args),
        inputs=[obs_path],
    )
    print(f"wrote {len(iterates)} iterates with prefix {out_prefix}")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    pulse_path = _require_file(args.sim_pulse, "simulated pulse (--sim-pulse)")
    sim_rx_path = _require_file(args.sim_rx, "simulated receive trace (--sim-rx)")
    hw_rx_path = _require_file(args.hw_rx, "hardware receive trace (--hw-rx)")
    band = _parse_pair(args.band, "--band")

    pulse_meta = load_toml(pulse_path.with_suffix(".toml")) if pulse_path.with_suffix(".toml").exists() else {}
    dt = args.dt or pulse_meta.get("dt")
    f_c = args.fc or pulse_meta.get("f_c", 350e3)
    if dt is None:
        raise ValueError("pulse sampling interval unknown; pass --dt or a sidecar TOML")
    s_sim = SourcePulse(read_raster(pulse_path).astype(np.float64), float(dt), float(f_c))
    fs_sim = 1.0 / s_sim.dt
    r_sim = Trace(read_raster(sim_rx_path).astype(np.float64), fs_sim)

    hw_meta_path = hw_rx_path.with_suffix(".toml")
    hw_meta = load_toml(hw_meta_path) if hw_meta_path.exists() else {}
    fs_hw = args.fs_hw or hw_meta.get("fs", fs_sim)
    raw = Trace(read_raster(hw_rx_path).astype(np.float64), float(fs_hw))
    conditioned = gate_and_smooth(
        raw,
        zero_prefix=int(hw_meta.get("zero_prefix", args.zero_prefix)),
        window=int(hw_meta.get("window", args.window)),
        shift=int(hw_meta.get("shift", args.shift)),
    )
    conditioned = resample(conditioned, fs_sim)
    samples = conditioned.samples
    if samples.shape[0] < s_sim.nt:
        samples = np.pad(samples, (0, s_sim.nt - samples.shape[0]))
    r_hw = bandpass(Trace(samples[: s_sim.nt], fs_sim), band[0], band[1])

    calibrated = calibrate_source(s_sim, r_sim, r_hw, band=band)
    write_raster(args.out, calibrated.samples)
    write_run_manifest(
        Path(args.out),
        "calibrate",
        _manifest_params(args),
        inputs=[pulse_path, sim_rx_path, hw_rx_path],
    )
    print(f"wrote calibrated source pulse to {args.out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    gt_dir = _require_file(args.gt, "ground-truth dataset (--gt)")
    recon_dir = _require_file(args.recon, "reconstruction directory (--recon)")
    cfg, samples, labels = load_dataset(gt_dir)
    rows = []
    for i, ((_, gt_sos), label) in enumerate(zip(samples, labels)):
        recon_path = Path(recon_dir) / f"sample_{i:06d}.fwir"
        if not recon_path.exists():
            raise FileNotFoundError(f"missing reconstruction {recon_path}")
        recon = read_raster(recon_path)
        report = image_metrics(recon, gt_sos)
        edema_gt = label == LABEL_EDEMA
        detection = classify_edema(recon, label == LABEL_BONE, label == LABEL_SKIN)
        row = {
            "sample": i,
            "ssim": report.ssim,
            "psnr_db": report.psnr_db,
            "nmse_db": report.nmse_db,
            "lmse": lmse(recon, gt_sos, edema_gt) if edema_gt.any() else "",
            "dice": dice(detection.region_mask, edema_gt) if edema_gt.any() else "",
            "decision": int(detection.positive),
        }
        rows.append(row)
        if args.heatmap:
            save_heatmap(
                Path(args.report).parent, f"recon_{i:06d}", recon,
                contours=detection.contours,
            )
    fields = ["sample", "ssim", "psnr_db", "nmse_db", "lmse", "dice", "decision"]
    with open(args.report, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)
        mean = {
            "sample": "mean",
            "ssim": float(np.mean([r["ssim"] for r in rows])),
            "psnr_db": float(np.mean([r["psnr_db"] for r in rows])),
            "nmse_db": float(np.mean([r["nmse_db"] for r in rows])),
            "lmse": "",
            "dice": "",
            "decision": "",
        }
        writer.writerow(mean)
    write_run_manifest(Path(args.report), "evaluate", _manifest_params(args))
    print(f"wrote {len(rows)} rows to {args.report}")
    return EXIT_OK


def cmd_noise(args) -> int:
    seed = _resolve_seed(args)
    traces = read_raster(_require_file(args.input, "channel data (--in)"))
    noisy = noisy_traces(traces, args.snr, seed)
    write_raster(args.out, noisy)
    write_run_manifest(
        Path(args.out), "noise", _manifest_params(args), inputs=[args.input], seed=seed
    )
    print(f"wrote noisy channel data to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fwilab",
        description="Time-domain ultrasound speed-of-sound inversion toolkit",
    )
    parser.add_argument("--version", action="version", version=f"fwilab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="TOML file of default flag values")
        p.add_argument("--seed", type=int, default=None,
                       help=f"master seed (fallback: ${SEED_ENV_VAR}, then 0)")
        p.add_argument("--jobs", type=int, default=1, help="worker processes")

    p = sub.add_parser("gen-data", help="generate a phantom dataset")
    common(p)
    _add_grid_arg(p)
    p.add_argument("--kind", required=True, choices=["mnist", "arm", "rods"])
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n-p", type=int, default=8, dest="n_p")
    p.add_argument("--diameter", type=float, default=0.044)
    p.add_argument("--n-r", type=int, default=3, dest="n_r")
    p.add_argument("--pulse", default="dgauss", choices=["gaussian", "dgauss"])
    p.add_argument("--fc", type=float, default=200e3)
    p.add_argument("--pml-thickness", type=int, default=8)
    p.add_argument("--pml-attenuation", type=float, default=1e-3)
    p.add_argument("--pml-exponent", type=float, default=2.0)
    p.add_argument("--noise-snr", type=float, default=None)
    p.add_argument("--edema-ratio", type=float, default=0.5)
    p.add_argument("--idx", help="local IDX image file for kind=mnist")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("forward", help="simulate channel data for a speed map")
    common(p)
    _add_grid_arg(p)
    _add_physics_args(p)
    p.add_argument("--sos", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--snapshot-every", type=int, default=0)
    p.set_defaults(func=cmd_forward)

    p = sub.add_parser("grad", help="adjoint-state misfit gradient")
    common(p)
    _add_grid_arg(p)
    _add_physics_args(p)
    p.add_argument("--sos", required=True)
    p.add_argument("--obs", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_grad)

    p = sub.add_parser("grad-check", help="adjoint vs finite differences")
    common(p)
    p.add_argument("--cells", type=int, default=20)
    p.add_argument("--eps", type=float, default=1e-3)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("fwi", help="classical ADMM-TV inversion")
    common(p)
    _add_grid_arg(p)
    _add_physics_args(p)
    p.add_argument("--obs", required=True)
    p.add_argument("--init", default="water", help="'water' or a speed-map raster")
    p.add_argument("--water-speed", type=float, default=1500.0)
    p.add_argument("--outer", type=int, default=200)
    p.add_argument("--inner", type=int, default=5)
    p.add_argument("--inner-lr", type=float, default=1.0)
    p.add_argument("--lambda", type=float, default=None)
    p.add_argument("--rho", type=float, default=None)
    p.add_argument("--bounds", default="1300,3200")
    p.add_argument("--out", required=True)
    p.add_argument("--log", help="per-iteration misfit CSV")
    p.set_defaults(func=cmd_fwi)

    p = sub.add_parser("dufwi-train", help="block-wise training of the unfolded stages")
    common(p)
    p.add_argument("--data", required=True, help="gen-data dataset directory")
    p.add_argument("--K", type=int, default=5)
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--lrs", default="1e-4,1e-4,5e-5,1e-5,1e-5")
    p.add_argument("--bounds", default="1300,3200")
    p.add_argument("--water-speed", type=float, default=1500.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_dufwi_train)

    p = sub.add_parser("dufwi-infer", help="run trained stages on observed data")
    common(p)
    _add_grid_arg(p)
    _add_physics_args(p)
    p.add_argument("--obs", required=True, help="cd raster or dataset directory")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out-prefix", required=True)
    p.add_argument("--bounds", default="1300,3200")
    p.add_argument("--water-speed", type=float, default=1500.0)
    p.add_argument("--heatmap", action="store_true")
    p.set_defaults(func=cmd_dufwi_infer)

    p = sub.add_parser("calibrate", help="spectral-ratio source calibration")
    common(p)
    p.add_argument("--sim-pulse", required=True)
    p.add_argument("--sim-rx", required=True)
    p.add_argument("--hw-rx", required=True)
    p.add_argument("--band", default="1e5,7e5")
    p.add_argument("--dt", type=float, default=None, help="pulse sampling interval")
    p.add_argument("--fc", type=float, default=None)
    p.add_argument("--fs-hw", type=float, default=None)
    p.add_argument("--zero-prefix", type=int, default=400)
    p.add_argument("--window", type=int, default=10)
    p.add_argument("--shift", type=int, default=5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("evaluate", help="score reconstructions against ground truth")
    common(p)
    p.add_argument("--recon", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--heatmap", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("noise", help="add white noise to channel data")
    common(p)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--snr", type=float, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_noise)

    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> None:
    """Load --config (if present) as subcommand defaults; flags still win."""
    if "--config" not in argv:
        return
    path = argv[argv.index("--config") + 1]
    config = load_toml(path)
    if not argv or argv[0].startswith("-"):
        return
    command = argv[0]
    for action in parser._subparsers._group_actions:  # noqa: SLF001
        subparser = action.choices.get(command)
        if subparser is None:
            continue
        dests = {a.dest for a in subparser._actions}  # noqa: SLF001
        unknown = set(config) - dests
        if unknown:
            raise ValueError(f"unknown config keys for {command}: {sorted(unknown)}")
        subparser.set_defaults(**config)


def dispatch(argv: list[str]) -> int:
    parser = build_parser()
    try:
        _apply_config(parser, argv)
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse handles --help (0) and usage errors (2)
        return int(exc.code or 0)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING_INPUT
    except (FwiDivergenceError, NumericError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, GeometryError, PhantomError, RasterFormatError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
