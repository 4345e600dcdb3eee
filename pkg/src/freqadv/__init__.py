"""Frequency-domain adversarial attacks on differentiable forgery classifiers."""

from ._version import __version__
from .errors import (
    ConfigError,
    DegenerateInput,
    DimensionError,
    DivergenceError,
    EmptyEnsemble,
    EmptyInput,
    FreqAdvError,
    NumericError,
    PreconditionError,
    ShapeMismatch,
    WindowTooLarge,
)
from .imaging import (
    BlockGrid,
    Image,
    clamp_pixels,
    load_png,
    merge_blocks,
    project_linf,
    save_png,
    split_blocks,
)
from .spectral import (
    BandMask,
    Spectrum,
    WeightMatrix,
    band_energy_profile,
    band_mask,
    band_thresholds,
    compute_weight_matrix,
    dct2_block,
    dct_basis,
    forward_spectrum,
    high_band_mass,
    idct2_block,
    inverse_spectrum,
)
from .models import (
    Classifier,
    EnsembleClassifier,
    LinearSpectralClassifier,
    TinyCnnClassifier,
    TrainResult,
    bce_loss,
    finite_diff_grad,
    load_checkpoint,
    save_checkpoint,
    sigmoid,
    train,
)
from .attacks import (
    ATTACKS,
    AttackConfig,
    AttackResult,
    TraceEntry,
    fgsm,
    frequency_attack,
    hybrid_attack,
    pgd,
    sum_attack,
    trace_to_csv,
)
from .metrics import (
    QualityReport,
    TransferMatrix,
    attack_success_rate,
    mse,
    psnr,
    quality_report,
    ssim,
    transfer_matrix,
)
from .harness import (
    DatasetConfig,
    ExperimentConfig,
    ExperimentReport,
    LabeledDataset,
    ModelConfig,
    config_hash,
    default_config,
    generate_dataset,
    load_config_file,
    load_dataset,
    report_to_text,
    run_experiment,
    run_experiment_detailed,
    save_dataset,
    select_attack_pool,
    train_models,
)

__all__ = [
    "__version__",
    "FreqAdvError", "DimensionError", "ShapeMismatch", "NumericError",
    "DegenerateInput", "EmptyEnsemble", "EmptyInput", "PreconditionError",
    "DivergenceError", "WindowTooLarge", "ConfigError",
    "Image", "BlockGrid", "split_blocks", "merge_blocks", "clamp_pixels",
    "project_linf", "load_png", "save_png",
    "Spectrum", "BandMask", "WeightMatrix", "dct_basis", "dct2_block",
    "idct2_block", "forward_spectrum", "inverse_spectrum", "band_mask",
    "band_thresholds", "band_energy_profile", "high_band_mass",
    "compute_weight_matrix",
    "Classifier", "LinearSpectralClassifier", "TinyCnnClassifier",
    "EnsembleClassifier", "TrainResult", "train", "bce_loss", "sigmoid",
    "finite_diff_grad", "save_checkpoint", "load_checkpoint",
    "ATTACKS", "AttackConfig", "AttackResult", "TraceEntry", "fgsm", "pgd",
    "frequency_attack", "hybrid_attack", "sum_attack", "trace_to_csv",
    "mse", "psnr", "ssim", "QualityReport", "quality_report",
    "attack_success_rate", "TransferMatrix", "transfer_matrix",
    "DatasetConfig", "ModelConfig", "ExperimentConfig", "ExperimentReport",
    "LabeledDataset", "default_config", "generate_dataset", "save_dataset",
    "load_dataset", "train_models", "select_attack_pool", "run_experiment",
    "run_experiment_detailed", "report_to_text", "load_config_file",
    "config_hash",
]
