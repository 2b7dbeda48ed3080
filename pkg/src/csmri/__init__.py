"""Compressed-sensing MRI reconstruction toolkit.

Simulated Cartesian undersampling, classic wavelet ISTA, and small trainable
unrolled networks with MR physics side information, all on numpy.
"""

from .transforms import fft2c, ifft2c
from .kspace import (
    SamplingMask,
    MultiCoilKSpace,
    SensitivityMaps,
    make_cartesian_mask,
    expected_kept_columns,
    apply_mask,
    mask_columns,
    lowpass_images,
    estimate_sensitivities,
    sense_expand,
    sense_reduce,
    rss_combine,
    forward_model,
    adjoint_model,
    zero_filled_recon,
)
from .sparsity import (
    soft_threshold,
    wavelet_forward,
    wavelet_inverse,
    threshold_details,
    WaveletCoeffs,
    IstaConfig,
    IstaResult,
    dc_gradient_step,
    objective_value,
    ista_solve,
    write_objective_trace,
)
from .priors import (
    PriorBundle,
    combined_lowpass,
    dc_prior,
    phase_prior,
    background_prior,
    build_prior_bundle,
)
from .metrics import (
    nmse,
    psnr,
    ssim,
    msssim,
    max_msssim_scales,
    combined_loss,
    l1_loss,
    mse_loss,
    huber_loss,
    discrepancy_loss,
    SliceMetrics,
    score_slice,
    write_metrics_csv,
    write_metrics_json,
    read_metrics_csv,
    aggregate_metrics,
)
from .network import (
    BlockSpec,
    ModelConfig,
    UnrolledModel,
    SampleBatch,
    istanet_plus_config,
    model_forward,
    block_forward,
    save_checkpoint,
    load_checkpoint,
    CheckpointError,
)
from .optim import RMSprop, RAdam, make_optimizer
from .training import TrainConfig, build_model, train, batch_loss, evaluate_ssim
from .data import (
    PhantomVolume,
    make_phantom,
    make_coil_maps,
    AcquiredVolume,
    simulate_acquisition,
    SliceAcquisition,
    SliceStack,
    ReconSample,
    make_samples,
)
from .tensorio import save_tensor, load_tensor, export_image, TensorFormatError

__version__ = "0.1.0"
