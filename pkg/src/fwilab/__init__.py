"""Ultrasound speed-of-sound inversion: FDTD forward modeling, adjoint-state
gradients, a classical ADMM-TV baseline, and learned unfolded updates."""

__version__ = "0.1.0"

from .grid import (
    AcquisitionGeometry,
    ChannelData,
    CflCheck,
    GeometryError,
    Grid2D,
    SosMap,
    build_geometry,
    check_cfl,
    homogeneous_map,
)
from .raster import RasterFormatError, read_raster, write_raster
from .forward import (
    DampingProfile,
    NumericError,
    SourcePulse,
    Wavefield,
    build_pml,
    make_source_pulse,
    simulate_all,
    simulate_transmission,
    simulate_wavefield,
    step_wavefield,
    zero_damping,
)
from .adjoint import (
    GradientMap,
    compute_gradient,
    data_misfit,
    fd_gradient_oracle,
    gradient_mask,
    misfit_and_gradient,
)
from .fwi import (
    FwiConfig,
    FwiDivergenceError,
    admm_fwi,
    lbfgs_minimize,
    plain_gradient_descent,
    total_variation,
    tv_prox,
)
from .network import (
    AdamState,
    ConvLayer,
    NormSpec,
    UpdateNetwork,
    conv2d,
    denormalize_update,
    net_forward,
    normalize_gradient,
    normalize_sos,
    train_step,
)
from .checkpoint import load_ensemble, load_network, save_ensemble, save_network
from .unfold import (
    BlockDataset,
    InversionSetup,
    UnfoldPlan,
    advance_block_dataset,
    cfl_safe_bounds,
    clamp_sos,
    prepare_block_dataset,
    train_all_blocks,
    train_block,
    unfold_infer,
)
from .phantoms import (
    ARM_TISSUE_RANGES,
    ArmGeometry,
    AugmentSpec,
    PhantomError,
    TissueMap,
    add_noise,
    arm_phantom,
    mnist_sos_map,
    parse_idx,
    rod_phantom,
    synthetic_digits,
    write_idx,
)
from .calibration import (
    Spectrum,
    Trace,
    bandpass,
    calibrate_source,
    dft,
    gate_and_smooth,
    idft,
    resample,
)
from .metrics import (
    EdemaDetection,
    MetricReport,
    classify_edema,
    detection_scores,
    dice,
    image_metrics,
    lmse,
    ssim,
)
from .datagen import DatasetConfig, generate_dataset, load_dataset, load_dataset_setup
