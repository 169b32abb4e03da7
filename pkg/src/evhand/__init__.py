"""Event camera + RGB fusion for 3D hand mesh reconstruction."""

__version__ = "0.1.0"

from .events import (
    Event,
    EventStream,
    SimulatorConfig,
    StackedEventFrame,
    add_temporal_noise,
    bin_stream,
    read_evb,
    simulate_events,
    slice_window,
    stack_events,
    write_evb,
)
from .hand_model import (
    HandMesh,
    HandModelData,
    ManoParams,
    load_model,
    make_desk_model,
    mano_forward,
    save_model,
    to_coarse,
)
from .degrade import (
    DegradationConfig,
    PairDescriptor,
    apply_degrader,
    compute_descriptor,
    degrade_background_overflow,
    degrade_motion_blur,
    degrade_overexposure,
)
from .losses import joint_loss, total_loss, vertex_loss
from .metrics import (
    MetricReport,
    count_params,
    mpjpe,
    mpvpe,
    pa_mpjpe,
    pck_auc,
    procrustes_align,
)
from .network import (
    FusionMeshModel,
    NetworkConfig,
    RecurrentState,
    desk_config,
    load_checkpoint,
    save_checkpoint,
)
from .training import SampleSequence, TrainConfig, desk_train_config, train

__all__ = [name for name in dir() if not name.startswith("_")]
