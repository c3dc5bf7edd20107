"""Reconstruction of frequency spectra from non-uniformly sampled
exponential time-domain signals: a compressed-sensing IST solver, an
unrolled network with learnable adaptive soft-thresholding plus its full
training pipeline, analysis and quantitation tools, file formats, a CLI and
a job-based reconstruction service.
"""

__version__ = "0.1.0"

from .signals import (
    ComplexSeries,
    Domain,
    ParameterRanges,
    PeakModel,
    ShrinkMode,
    SyntheticSignalSpec,
    dft_forward,
    dft_inverse,
    soft_threshold,
    synthesize_fid,
    virtual_echo,
)
from .sampling import (
    Schedule,
    extract,
    poisson_gap_schedule,
    subsample_schedule,
    uniform_random_schedule,
    ve_schedule,
    zero_fill,
)
from .ist import IstConfig, IstDiagnostics, ReconProblem, ThresholdMode, ist_reconstruct, prepare_problem
from .network import (
    BnMode,
    LsWeights,
    ModernWeights,
    NetMeta,
    data_consistency,
    ist_equivalent_weights,
    ls_apply,
    modern_forward,
    modern_reconstruct,
    threshold_autoset,
)
from .training import (
    AdamState,
    Dataset,
    DatasetSpec,
    DatasetSplit,
    TrainConfig,
    TrainHistory,
    adam_step,
    baseline_rlne,
    deep_supervision_loss,
    evaluate_rlne,
    generate_dataset,
    grad,
    he_init,
    init_weights,
    train,
)
from .analysis import (
    Peak,
    QuantResult,
    ScenarioSpec,
    five_peak_preset,
    hsqc0_extrapolate,
    intensity_correlation,
    pick_peaks,
    quantify_volume_table,
    relative_concentrations,
    rlne,
    robustness_sweep,
)
