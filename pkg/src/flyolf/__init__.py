"""Spiking fly-olfaction circuit with lateral inhibition and adaptation."""

from .circuit import (
    CircuitConfig,
    WeightSet,
    build_topology,
    load_checkpoint,
    save_checkpoint,
    validate_weights,
)
from .dynamics import (
    LIConfig,
    NeuronParams,
    SFAConfig,
    SurrogateParams,
    li_current,
    li_trace_update,
    lif_step,
    sfa_current,
    sfa_update,
    surrogate_grad,
)
from .errors import (
    CalibrationError,
    ConfigError,
    FormatError,
    TrainingDivergedError,
)
from .harness import DESK, PAPER, ScaleProfile, SweepSpec, run_sweep, summarize
from .odor_data import (
    DatasetConfig,
    DatasetManifest,
    OdorDataset,
    OdorSample,
    generate_dataset,
    make_prototypes,
    ou_noise_matrix,
    read_dataset,
    realize_ou_noise,
    sample_gaussian,
    sample_ou,
    write_dataset,
)
from .simulator import (
    MBON_V_TH,
    TrialProtocol,
    TrialRecording,
    calibrate_compensation,
    calibrated_config,
    forward_batch,
    mean_mbon_potential,
    run_trial,
)
from .trainer import (
    AdamState,
    TrainConfig,
    TrainReport,
    adam_step,
    backward_kc_mbon,
    convergence_epoch,
    evaluate,
    lr_plateau,
    PlateauScheduler,
    softmax_xent,
    train,
)

__version__ = "0.1.0"
