"""spikegait: closed-loop quadruped gait control with a spiking-population
reservoir, online least-squares readout training, a coupled-oscillator
pattern generator, CMA-ES gait search and a surrogate compliant body."""

from .body import BodyParams, BodyState, apply_disturbance, body_step, read_sensors
from .cmaes import (
    CmaEs,
    CmaesConfig,
    GaitSearchSpace,
    bounding_search_space,
    optimize_gait,
    walking_search_space,
)
from .cpg import (
    CouplingSpec,
    GaitDefinition,
    LegProfile,
    OscillatorParams,
    OscillatorState,
    coupled_step,
    oscillator_step,
    phase_filter,
    target_trajectories,
)
from .experiments import (
    ControlInputPlan,
    ExperimentConfig,
    Report,
    bounding_gait,
    build_system,
    default_config,
    export_traces,
    run_evaluation,
    run_experiment,
    run_gait_generation,
    run_gait_search,
    run_gait_transition,
    run_speed_control,
    walking_gait,
)
from .force_learning import (
    ClosedLoopSystem,
    MixSchedule,
    Program,
    RlsLearner,
    TrainingDiverged,
    mix_motor_command,
    rls_update,
    simulate,
    train_gait,
)
from .interface import (
    IntegratorParams,
    LowPassState,
    MonitorBank,
    NoiseSpec,
    SensorCalibration,
    corrupt_and_filter,
    encode_sensor,
    readout_signal,
)
from .lif import (
    LifParams,
    LifState,
    NoiseDrive,
    Population,
    PopulationSpec,
    lif_step,
)
from .reservoir import (
    Reservoir,
    ReservoirTopology,
    build_reservoir,
    build_topology,
    connectivity_stats,
    load_topology,
    save_topology,
)
from .trace import Trace

__version__ = "0.1.0"
