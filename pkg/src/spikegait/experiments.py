"""Experiment orchestration: configs, runners, reports, trace export.

Four experiment kinds are supported:

* ``gait-generation``: train one gait, then run it closed loop with a
  freeze disturbance and measure waveform error, frequency, periodicity
  and recovery.
* ``speed-control``: train the same gait at several frequencies, each
  paired with a DC control level, then sweep the control input and
  measure the output frequency per level.
* ``gait-transition``: train two gaits paired with two control levels,
  then toggle the control input and classify the output against each
  gait's template.
* ``gait-search``: optimize gait parameters against distance travelled by
  the surrogate body under open-loop targets.

Every run derives all randomness from one master seed and records a seed
manifest, so a run is bitwise reproducible from its config snapshot plus
the manifest. The ``ci`` scale profile (small reservoir, short phases)
exists so the full property suite runs in minutes; ``full`` matches the
reference setup (300x40 populations, 40 s + 40 s schedules, 600x100 for
gait transition).
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .body import BodyParams, BodyState, body_step
from .cmaes import (
    CmaesConfig,
    GaitSearchResult,
    bounding_search_space,
    optimize_gait,
    walking_search_space,
)
from .cpg import (
    CouplingSpec,
    GaitDefinition,
    LegProfile,
    coupled_step,
    phase_filter,
    target_trajectories,
)
from .force_learning import (
    ClosedLoopSystem,
    MixSchedule,
    Program,
    RlsLearner,
    TrainingDiverged,
    save_weights,
    simulate,
)
from .interface import LowPassState, MonitorBank, NoiseSpec, SensorCalibration
from .lif import IntraWiring, LifParams, NoiseDrive, PopulationSpec
from .metrics import (
    classify_gait,
    closed_loop_nrmse,
    cycle_correlation,
    gait_template,
    measure_frequency_hz,
    pair_correlation,
)
from .reservoir import Reservoir, build_topology
from .trace import Trace

__all__ = [
    "ReservoirConfig",
    "SensorConfig",
    "TrainingConfig",
    "SearchConfig",
    "ExperimentConfig",
    "ControlInputPlan",
    "default_config",
    "walking_gait",
    "bounding_gait",
    "seed_manifest",
    "build_system",
    "build_segment_program",
    "Report",
    "run_gait_generation",
    "run_speed_control",
    "run_gait_transition",
    "run_gait_search",
    "run_evaluation",
    "run_experiment",
    "export_traces",
]

logger = logging.getLogger(__name__)

KINDS = ("gait-generation", "speed-control", "gait-transition", "gait-search")


def walking_gait(frequency_hz: float = 1.44) -> GaitDefinition:
    """Default walking gait: legs a quarter cycle apart, stance-heavy duty."""
    return GaitDefinition(
        frequency_hz=frequency_hz,
        front=LegProfile(amplitude=40.0, duty=0.6, offset=0.0),
        hind=LegProfile(amplitude=40.0, duty=0.6, offset=0.0),
        coupling=CouplingSpec(po_fr=180.0, po_hl=270.0, po_hr=90.0),
    )


def bounding_gait(frequency_hz: float = 1.44) -> GaitDefinition:
    """Default bounding gait: front pair in phase, hind pair in phase."""
    return GaitDefinition(
        frequency_hz=frequency_hz,
        front=LegProfile(amplitude=30.0, duty=0.5, offset=0.0),
        hind=LegProfile(amplitude=50.0, duty=0.5, offset=0.0),
        coupling=CouplingSpec(po_fr=0.0, po_hl=180.0, po_hr=180.0),
    )


@dataclass
class ReservoirConfig:
    n_populations: int = 300
    neurons_per_population: int = 40
    excitatory_fraction: float = 0.8
    lattice_dims: tuple[int, int, int] | None = None
    inter_weight: float = 0.25
    weight_scale: float = 0.8  # global excitability knob on inter-population weights
    delay_ms: float = 100.0
    noise_mean: float = 0.0
    noise_sd: float = 2.0
    w_exc_to_inh: float = 0.3
    w_inh_to_exc: float = -1.2
    p_exc_to_inh: float = 0.1
    p_inh_to_exc: float = 0.1


@dataclass
class SensorConfig:
    gain: float = 0.08  # nA per degree
    offset: float | None = None  # None -> knee rest angle
    clamp: tuple[float, float] = (-1.5, 1.5)
    lowpass_cutoff_hz: float = 5.0
    noise_gaussian_sd: float = 1.0  # degrees, training only
    noise_impulse_probability: float = 0.01
    noise_impulse_amplitude: float = 10.0


@dataclass
class TrainingConfig:
    alpha: float = 50.0
    update_period: int = 2
    warmup_s: float = 1.0  # no learner updates while the network fills up
    target_noise_gaussian_sd: float = 1.0
    target_noise_impulse_probability: float = 0.01
    target_noise_impulse_amplitude: float = 10.0
    divergence_limit: float = 500.0
    learn_in_closed_loop: bool = True
    ramp: str = "linear"


@dataclass
class SearchConfig:
    space: str = "walking"  # or "bounding"
    generations: int = 20
    population: int = 25
    rollout_s: float = 10.0
    rollout_dt_ms: float = 2.0
    workers: int = 1


@dataclass
class ExperimentConfig:
    kind: str = "gait-generation"
    scale: str = "ci"
    seed: int = 1234
    dt_ms: float = 1.0
    reservoir: ReservoirConfig = field(default_factory=ReservoirConfig)
    sensors: SensorConfig = field(default_factory=SensorConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    search: SearchConfig = field(default_factory=SearchConfig)
    body: BodyParams = field(default_factory=BodyParams)
    gaits: list[GaitDefinition] = field(default_factory=lambda: [walking_gait()])
    frequencies: list[float] = field(default_factory=lambda: [1.0, 1.44, 2.0])
    control_levels: list[float] = field(default_factory=lambda: [0.1, 0.2, 0.3])
    open_s: float = 40.0  # per training segment
    mix_s: float = 20.0
    closed_s: float = 40.0
    eval_s: float = 60.0  # clean closed-loop evaluation window
    eval_segment_s: float = 15.0  # per control level / per toggle segment
    disturbance_freeze_s: float = 2.0
    recovery_window_s: float = 15.0
    stability_s: float = 0.0  # extra constant-input hold (gait transition)
    record_spikes_every: int = 0

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown experiment kind {self.kind!r}")
        if self.scale not in ("full", "ci"):
            raise ValueError(f"unknown scale {self.scale!r}")

    @property
    def schedule(self) -> MixSchedule:
        return MixSchedule(self.open_s, self.mix_s, self.closed_s, self.training.ramp)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["gaits"] = [g.to_dict() for g in self.gaits]
        d["schema_version"] = 1
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        data.pop("schema_version", None)
        kind = data.get("kind", "gait-generation")
        scale = data.get("scale", "ci")
        cfg = default_config(kind, scale)
        for name in ("seed", "dt_ms", "open_s", "mix_s", "closed_s", "eval_s",
                     "eval_segment_s", "disturbance_freeze_s", "recovery_window_s",
                     "stability_s", "record_spikes_every", "frequencies",
                     "control_levels"):
            if name in data:
                setattr(cfg, name, data[name])
        for name, klass in (("reservoir", ReservoirConfig), ("sensors", SensorConfig),
                            ("training", TrainingConfig), ("search", SearchConfig),
                            ("body", BodyParams)):
            if name in data:
                base = asdict(getattr(cfg, name))
                sub = dict(data[name])
                if name == "reservoir" and sub.get("lattice_dims") is not None:
                    sub["lattice_dims"] = tuple(sub["lattice_dims"])
                if name == "sensors" and "clamp" in sub:
                    sub["clamp"] = tuple(sub["clamp"])
                base.update(sub)
                setattr(cfg, name, klass(**base))
        if "gaits" in data:
            cfg.gaits = [GaitDefinition.from_dict(g) for g in data["gaits"]]
        return cfg


def default_config(kind: str, scale: str = "ci", seed: int = 1234) -> ExperimentConfig:
    """Scale- and kind-appropriate defaults."""
    cfg = ExperimentConfig(kind=kind, scale=scale, seed=seed)
    if kind == "gait-transition":
        cfg.gaits = [walking_gait(), bounding_gait()]
        cfg.control_levels = [0.1, 0.3]
    if kind == "speed-control":
        cfg.control_levels = [0.1, 0.2, 0.3]

    if scale == "full":
        if kind == "gait-transition":
            cfg.reservoir = ReservoirConfig(n_populations=600, neurons_per_population=100)
            cfg.open_s, cfg.mix_s, cfg.closed_s = 40.0, 20.0, 40.0  # x2 gaits = 200 s
            cfg.eval_segment_s = 20.0
        elif kind == "speed-control":
            cfg.open_s, cfg.mix_s = 30.0, 10.0
            cfg.closed_s = 200.0 / 3.0 - 40.0  # 200 s total across 3 levels
            cfg.eval_segment_s = 20.0
        else:
            cfg.open_s, cfg.mix_s, cfg.closed_s = 40.0, 20.0, 40.0
        cfg.eval_s = 60.0
        cfg.search = SearchConfig()
    else:  # ci profile: small reservoir, short phases, suite runs in minutes
        cfg.reservoir = ReservoirConfig(n_populations=100, neurons_per_population=20)
        if kind == "gait-transition":
            cfg.open_s, cfg.mix_s, cfg.closed_s = 10.0, 5.0, 5.0
            cfg.eval_segment_s = 10.0
        elif kind == "speed-control":
            cfg.open_s, cfg.mix_s, cfg.closed_s = 8.0, 4.0, 3.0
            cfg.eval_segment_s = 10.0
        else:
            cfg.open_s, cfg.mix_s, cfg.closed_s = 10.0, 10.0, 10.0
            cfg.eval_s = 30.0
        cfg.recovery_window_s = 15.0
        cfg.search = SearchConfig(generations=8, rollout_s=5.0)
    return cfg


@dataclass(frozen=True)
class ControlInputPlan:
    """Piecewise-constant control levels: ordered (t_start_s, level) pairs."""

    segments: tuple[tuple[float, float], ...]

    def __post_init__(self) -> None:
        starts = [s for s, _ in self.segments]
        if starts != sorted(starts) or len(set(starts)) != len(starts):
            raise ValueError("control segments must be ordered and non-overlapping")

    def level_at(self, t_s: float) -> float:
        level = self.segments[0][1]
        for start, lv in self.segments:
            if t_s >= start:
                level = lv
            else:
                break
        return level

    def as_array(self, n_rows: int, dt_ms: float) -> np.ndarray:
        t = np.arange(n_rows) * (dt_ms * 1e-3)
        return np.array([self.level_at(ts) for ts in t])


def seed_manifest(master_seed: int) -> dict:
    """Named integer seeds derived from the master seed (fixed scheme)."""
    state = np.random.SeedSequence(master_seed).generate_state(6, dtype=np.uint64)
    names = ("topology", "reservoir_noise", "sensor_noise", "target_noise",
             "search", "spare")
    return {
        "scheme": "v1",
        "master_seed": int(master_seed),
        "derived": {name: int(state[i]) for i, name in enumerate(names)},
    }


def input_population_indices(n_populations: int) -> tuple[list[int], int]:
    """Four sensor populations spread through the lattice plus one control."""
    sensors = [int(i * n_populations / 5) for i in range(4)]
    control = int(4 * n_populations / 5)
    return sensors, control


def build_system(config: ExperimentConfig) -> tuple[ClosedLoopSystem, dict]:
    """Construct the reservoir, interface and body from a config."""
    manifest = seed_manifest(config.seed)
    derived = manifest["derived"]
    r = config.reservoir

    pop_spec = PopulationSpec(
        n_neurons=r.neurons_per_population,
        excitatory_fraction=r.excitatory_fraction,
        neuron_params=LifParams(),
        noise=NoiseDrive(mean=r.noise_mean, sd=r.noise_sd,
                         rng_stream=derived["reservoir_noise"]),
        intra=IntraWiring(r.p_exc_to_inh, r.p_inh_to_exc,
                          r.w_exc_to_inh, r.w_inh_to_exc),
    )
    topology = build_topology(
        r.n_populations,
        pop_spec,
        lattice_dims=r.lattice_dims,
        seed=derived["topology"],
        inter_weight=r.inter_weight,
        weight_scale=r.weight_scale,
        delay_ms=r.delay_ms,
    )
    sensors, control = input_population_indices(r.n_populations)
    reservoir = Reservoir(
        topology,
        pop_spec,
        dt_ms=config.dt_ms,
        input_populations=sensors + [control],
        noise_seed=derived["reservoir_noise"],
    )

    s = config.sensors
    offset = s.offset if s.offset is not None else config.body.knee_rest_angle
    cal = SensorCalibration(gain=s.gain, offset=offset,
                            clamp_low=s.clamp[0], clamp_high=s.clamp[1])
    sensor_noise = NoiseSpec(
        gaussian_sd=s.noise_gaussian_sd,
        impulse_probability=s.noise_impulse_probability,
        impulse_amplitude=s.noise_impulse_amplitude,
        seed=derived["sensor_noise"],
    )
    target_noise = NoiseSpec(
        gaussian_sd=config.training.target_noise_gaussian_sd,
        impulse_probability=config.training.target_noise_impulse_probability,
        impulse_amplitude=config.training.target_noise_impulse_amplitude,
        seed=derived["target_noise"],
    )
    system = ClosedLoopSystem(
        reservoir=reservoir,
        monitors=MonitorBank(r.n_populations),
        body_params=config.body,
        body_state=BodyState.at_rest(config.body),
        sensor_populations=sensors,
        control_population=control,
        sensor_calibrations=[cal] * 4,
        sensor_noise=sensor_noise,
        sensor_filters=[LowPassState(cutoff_hz=s.lowpass_cutoff_hz) for _ in range(4)],
        target_noise=target_noise,
        divergence_limit=config.training.divergence_limit,
    )
    return system, manifest


def build_segment_program(
    segments: list[tuple[GaitDefinition, float, float | None]], dt_ms: float
) -> tuple[np.ndarray, np.ndarray | None, list[int]]:
    """Continuous target/control arrays across gait segments.

    ``segments`` is a list of (gait, duration_s, control_level). The
    oscillators keep their phase/radius state across boundaries so target
    waveforms stay continuous when only frequency or coupling changes.
    Returns (targets, control, segment start ticks); control is None when
    every level is None.
    """
    states = segments[0][0].locked_states()
    rows_targets: list[np.ndarray] = []
    rows_control: list[float] = []
    boundaries: list[int] = []
    tick = 0
    for gait, duration_s, level in segments:
        boundaries.append(tick)
        duties = gait.duties()
        offsets = gait.offsets()
        n_k = int(round(duration_s * 1000.0 / dt_ms))
        for _ in range(n_k):
            row = np.empty(4)
            for i in range(4):
                row[i] = states[i].r * math.cos(
                    phase_filter(states[i].phi, duties[i])
                ) + offsets[i]
            rows_targets.append(row)
            rows_control.append(0.0 if level is None else level)
            states = coupled_step(states, gait, dt_ms)
            tick += 1
    # closing row
    gait, _, level = segments[-1]
    duties = gait.duties()
    offsets = gait.offsets()
    row = np.empty(4)
    for i in range(4):
        row[i] = states[i].r * math.cos(phase_filter(states[i].phi, duties[i])) + offsets[i]
    rows_targets.append(row)
    rows_control.append(0.0 if level is None else level)

    targets = np.asarray(rows_targets)
    if all(level is None for _, _, level in segments):
        control = None
    else:
        control = np.asarray(rows_control)
    return targets, control, boundaries


@dataclass
class Report:
    """Everything a run produced; traces/weights are exported separately."""

    kind: str
    status: str
    config: dict
    config_hash: str
    seed_manifest: dict
    metrics: dict
    simulated_s: float
    wall_s: float
    traces: dict[str, Trace] = field(default_factory=dict)
    weights: np.ndarray | None = None
    alpha: float | None = None
    schedule: MixSchedule | None = None
    best_gait: GaitDefinition | None = None
    search_result: GaitSearchResult | None = None

    def to_json_dict(self) -> dict:
        return {
            "schema_version": 1,
            "kind": self.kind,
            "status": self.status,
            "config_hash": self.config_hash,
            "seed_manifest": self.seed_manifest,
            "metrics": self.metrics,
            "simulated_s": self.simulated_s,
            "wall_s": self.wall_s,
        }


def config_hash(config: ExperimentConfig) -> str:
    blob = json.dumps(config.to_dict(), sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


def _train(
    config: ExperimentConfig,
    system: ClosedLoopSystem,
    segments: list[tuple[GaitDefinition, float, float | None]],
) -> tuple[np.ndarray, Trace, RlsLearner]:
    """Assemble the phased training program and run the learner over it."""
    tr = config.training
    n_seg = len(segments)
    phased: list[tuple[GaitDefinition, float, float | None]] = []
    for dur in (config.open_s, config.mix_s, config.closed_s):
        if dur > 0.0:
            phased.extend((g, dur, lv) for g, _, lv in segments)
    targets, control, _ = build_segment_program(
        [(g, d, lv) for g, d, lv in phased], config.dt_ms
    )
    schedule = MixSchedule(
        config.open_s * n_seg, config.mix_s * n_seg, config.closed_s * n_seg, tr.ramp
    )
    program = Program.from_schedule(
        targets, schedule, config.dt_ms,
        control=control,
        update_period=tr.update_period,
        learn_in_closed_loop=tr.learn_in_closed_loop,
    )
    warmup_ticks = int(round(tr.warmup_s * 1000.0 / config.dt_ms))
    program.learn[:warmup_ticks] = False

    learner = RlsLearner(
        n_features=system.n_populations,
        n_readouts=4,
        alpha=tr.alpha,
        update_period=tr.update_period,
    )
    trace = simulate(system, program, learner=learner,
                     spike_downsample=config.record_spikes_every)
    return learner.averaged_weights, trace, learner


def _eval_program(
    config: ExperimentConfig,
    segments: list[tuple[GaitDefinition, float, float | None]],
    disturbances: dict[int, tuple[str, dict]] | None = None,
) -> Program:
    """Closed-loop evaluation: beta = 1, learner off, clean sensors."""
    targets, control, _ = build_segment_program(segments, config.dt_ms)
    n_rows = targets.shape[0]
    program = Program(
        targets=targets,
        control=control,
        beta=np.ones(n_rows),
        learn=np.zeros(n_rows, dtype=bool),
        dt_ms=config.dt_ms,
        disturbances=disturbances or {},
        corrupt_sensors=False,
        corrupt_targets=False,
    )
    return program


def _periodicity(readouts: np.ndarray, dt_ms: float) -> tuple[float, float]:
    """(median adjacent-cycle correlation, worst channel) at the measured period."""
    f = measure_frequency_hz(readouts[:, 0], dt_ms)
    if not math.isfinite(f) or f <= 0.0:
        return math.nan, math.nan
    period = max(2, int(round(1000.0 / (f * dt_ms))))
    per_channel = [cycle_correlation(readouts[:, c], period) for c in range(4)]
    return float(np.median(per_channel)), float(np.min(per_channel))


def _recovery_time_s(
    readouts: np.ndarray, dt_ms: float, frequency_hz: float, threshold: float = 0.9
) -> float:
    """Seconds from the start of ``readouts`` until cyclic output returns.

    Slides a three-cycle window one cycle at a time; reports the start of
    the first window whose adjacent cycles correlate above threshold.
    Infinity when no window qualifies.
    """
    period = max(2, int(round(1000.0 / (frequency_hz * dt_ms))))
    window = 3 * period
    start = 0
    while start + window <= readouts.shape[0]:
        segment = readouts[start : start + window]
        per_channel = [cycle_correlation(segment[:, c], period) for c in range(4)]
        if np.min(per_channel) > threshold:
            return start * dt_ms * 1e-3
        start += period
    return math.inf


def run_gait_generation(config: ExperimentConfig) -> Report:
    """Train one gait, evaluate it closed loop with a freeze disturbance."""
    t0 = time.monotonic()
    system, manifest = build_system(config)
    gait = config.gaits[0]
    report = Report(
        kind=config.kind, status="ok", config=config.to_dict(),
        config_hash=config_hash(config), seed_manifest=manifest,
        metrics={}, simulated_s=0.0, wall_s=0.0,
        alpha=config.training.alpha, schedule=config.schedule,
    )
    try:
        weights, train_trace, _ = _train(config, system, [(gait, 0.0, None)])
    except TrainingDiverged as exc:
        report.status = "diverged"
        report.metrics["divergence"] = str(exc)
        report.traces["train"] = exc.trace
        report.wall_s = time.monotonic() - t0
        return report
    report.weights = weights
    report.traces["train"] = train_trace

    freeze_ms = config.disturbance_freeze_s * 1000.0
    clean_ticks = int(round(config.eval_s * 1000.0 / config.dt_ms))
    eval_total_s = (
        config.eval_s + config.disturbance_freeze_s + config.recovery_window_s
    )
    program = _eval_program(
        config,
        [(gait, eval_total_s, None)],
        disturbances={clean_ticks: ("freeze-then-release", {"duration_ms": freeze_ms})},
    )
    try:
        eval_trace = simulate(system, program, weights=weights)
    except TrainingDiverged as exc:
        report.status = "diverged"
        report.metrics["divergence"] = str(exc)
        report.traces["eval"] = exc.trace
        report.wall_s = time.monotonic() - t0
        return report
    report.traces["eval"] = eval_trace

    dt = config.dt_ms
    settle = int(round(2000.0 / dt))  # skip the first 2 s of the eval window
    clean = eval_trace.readouts()[settle:clean_ticks]
    med_corr, min_corr = _periodicity(clean, dt)
    # Waveform error over the last ten cycles (phase drift from the small
    # self-paced frequency offset is scored by the frequency criterion, not
    # smeared into the waveform error).
    ten_cycles = int(round(10.0 * 1000.0 / (gait.frequency_hz * dt)))
    window = clean[-ten_cycles:] if clean.shape[0] > ten_cycles else clean
    nrmse_per, measured_hz = closed_loop_nrmse(window, gait, dt)
    full_hz = measure_frequency_hz(clean[:, 0], dt)
    if math.isfinite(full_hz):
        measured_hz = full_hz

    release_tick = clean_ticks + int(round(freeze_ms / dt))
    post = eval_trace.readouts()[release_tick:]
    recovery_s = _recovery_time_s(post, dt, gait.frequency_hz)

    report.metrics.update(
        {
            "nrmse": {leg: float(nrmse_per[i]) for i, leg in enumerate(("fl", "fr", "hl", "hr"))},
            "nrmse_max": float(np.max(nrmse_per)),
            "frequency_hz": {"trained": gait.frequency_hz, "measured": measured_hz},
            "cycle_correlation_median": med_corr,
            "cycle_correlation_min": min_corr,
            "recovery_s": recovery_s,
            "recovered": recovery_s <= config.recovery_window_s,
            "front_pair_correlation": pair_correlation(clean[:, 0], clean[:, 1]),
            "hind_pair_correlation": pair_correlation(clean[:, 2], clean[:, 3]),
        }
    )
    report.simulated_s = float(train_trace.t[-1]) + float(eval_trace.t[-1])
    report.wall_s = time.monotonic() - t0
    return report


def run_speed_control(
    config: ExperimentConfig, plan: ControlInputPlan | None = None
) -> Report:
    """Train (control level, frequency) pairs, then sweep the control input."""
    if len(config.frequencies) < 3 or len(config.control_levels) < len(config.frequencies):
        raise ValueError("speed control needs >= 3 (level, frequency) pairs")
    t0 = time.monotonic()
    system, manifest = build_system(config)
    base = config.gaits[0]
    pairs = list(zip(config.control_levels, config.frequencies))
    train_segments = [
        (replace(base, frequency_hz=f), 0.0, level) for level, f in pairs
    ]
    report = Report(
        kind=config.kind, status="ok", config=config.to_dict(),
        config_hash=config_hash(config), seed_manifest=manifest,
        metrics={}, simulated_s=0.0, wall_s=0.0,
        alpha=config.training.alpha, schedule=config.schedule,
    )
    try:
        weights, train_trace, _ = _train(config, system, train_segments)
    except TrainingDiverged as exc:
        report.status = "diverged"
        report.metrics["divergence"] = str(exc)
        report.traces["train"] = exc.trace
        report.wall_s = time.monotonic() - t0
        return report
    report.weights = weights
    report.traces["train"] = train_trace

    if plan is None:
        eval_pairs = pairs
    else:
        eval_pairs = [
            (lv, config.frequencies[config.control_levels.index(lv)])
            for _, lv in plan.segments
        ]
    eval_segments = [
        (replace(base, frequency_hz=f), config.eval_segment_s, level)
        for level, f in eval_pairs
    ]
    program = _eval_program(config, eval_segments)
    try:
        eval_trace = simulate(system, program, weights=weights)
    except TrainingDiverged as exc:
        report.status = "diverged"
        report.metrics["divergence"] = str(exc)
        report.traces["eval"] = exc.trace
        report.wall_s = time.monotonic() - t0
        return report
    report.traces["eval"] = eval_trace

    dt = config.dt_ms
    seg_ticks = int(round(config.eval_segment_s * 1000.0 / dt))
    skip = int(round(0.3 * seg_ticks))  # settle after each level switch
    table = []
    for i, (level, f_trained) in enumerate(eval_pairs):
        seg = eval_trace.readouts()[i * seg_ticks + skip : (i + 1) * seg_ticks, 0]
        measured = measure_frequency_hz(seg, dt)
        half = seg.shape[0] // 2
        f1 = measure_frequency_hz(seg[:half], dt)
        f2 = measure_frequency_hz(seg[half:], dt)
        drift = abs(f2 - f1) / measured if math.isfinite(measured) and measured > 0 else math.nan
        table.append(
            {
                "control_level": level,
                "trained_hz": f_trained,
                "measured_hz": measured,
                "rel_error": abs(measured - f_trained) / f_trained
                if math.isfinite(measured)
                else math.nan,
                "drift": drift,
            }
        )
    by_level = sorted(table, key=lambda row: row["control_level"])
    measured_seq = [row["measured_hz"] for row in by_level]
    monotone = all(
        math.isfinite(a) and math.isfinite(b) and a < b
        for a, b in zip(measured_seq, measured_seq[1:])
    )
    report.metrics.update(
        {
            "frequency_table": table,
            "max_rel_error": max(
                (row["rel_error"] for row in table), default=math.nan
            ),
            "max_drift": max((row["drift"] for row in table), default=math.nan),
            "monotone": monotone,
        }
    )
    report.simulated_s = float(train_trace.t[-1]) + float(eval_trace.t[-1])
    report.wall_s = time.monotonic() - t0
    return report


def run_gait_transition(
    config: ExperimentConfig, plan: ControlInputPlan | None = None
) -> Report:
    """Train two gaits on two control levels; toggle and classify."""
    if len(config.gaits) < 2 or len(config.control_levels) < 2:
        raise ValueError("gait transition needs two gaits and two control levels")
    t0 = time.monotonic()
    system, manifest = build_system(config)
    gaits = config.gaits[:2]
    levels = config.control_levels[:2]
    labels = ("walk", "bound")
    train_segments = [(g, 0.0, lv) for g, lv in zip(gaits, levels)]
    report = Report(
        kind=config.kind, status="ok", config=config.to_dict(),
        config_hash=config_hash(config), seed_manifest=manifest,
        metrics={}, simulated_s=0.0, wall_s=0.0,
        alpha=config.training.alpha, schedule=config.schedule,
    )
    try:
        weights, train_trace, _ = _train(config, system, train_segments)
    except TrainingDiverged as exc:
        report.status = "diverged"
        report.metrics["divergence"] = str(exc)
        report.traces["train"] = exc.trace
        report.wall_s = time.monotonic() - t0
        return report
    report.weights = weights
    report.traces["train"] = train_trace

    if plan is None:
        toggle_order = [0, 1, 0]
    else:
        toggle_order = [levels.index(lv) for _, lv in plan.segments]
    eval_segments = [
        (gaits[i], config.eval_segment_s, levels[i]) for i in toggle_order
    ]
    if config.stability_s > 0.0:
        eval_segments.append((gaits[toggle_order[-1]], config.stability_s,
                              levels[toggle_order[-1]]))
    program = _eval_program(config, eval_segments)
    try:
        eval_trace = simulate(system, program, weights=weights)
    except TrainingDiverged as exc:
        report.status = "diverged"
        report.metrics["divergence"] = str(exc)
        report.traces["eval"] = exc.trace
        report.wall_s = time.monotonic() - t0
        return report
    report.traces["eval"] = eval_trace

    dt = config.dt_ms
    templates = {labels[i]: gait_template(gaits[i], dt) for i in range(2)}
    seg_ticks = int(round(config.eval_segment_s * 1000.0 / dt))
    period_ticks = int(round(1000.0 / (gaits[0].frequency_hz * dt)))
    flip_budget = 5 * period_ticks

    segments_report = []
    readouts = eval_trace.readouts()
    for seg_idx, gait_idx in enumerate(toggle_order):
        commanded = labels[gait_idx]
        start = seg_idx * seg_ticks
        held = readouts[start + flip_budget : start + seg_ticks]
        held_label, held_scores = classify_gait(held, templates)

        latency_ticks = None
        if seg_idx > 0:
            window = 2 * period_ticks
            probe = start
            while probe + window <= start + seg_ticks:
                label, _ = classify_gait(readouts[probe : probe + window], templates)
                if label == commanded:
                    latency_ticks = probe - start
                    break
                probe += period_ticks // 4
        segments_report.append(
            {
                "commanded": commanded,
                "classified": held_label,
                "scores": {k: float(v) for k, v in held_scores.items()},
                "flip_latency_cycles": None
                if latency_ticks is None
                else latency_ticks / period_ticks,
            }
        )

    stability = None
    if config.stability_s > 0.0:
        hold_start = len(toggle_order) * seg_ticks
        hold = readouts[hold_start:]
        commanded = labels[toggle_order[-1]]
        window = 4 * period_ticks
        labels_over_time = []
        probe = hold_start + flip_budget
        while probe + window <= readouts.shape[0]:
            label, _ = classify_gait(readouts[probe : probe + window], templates)
            labels_over_time.append(label)
            probe += window
        stability = {
            "commanded": commanded,
            "stable": all(lb == commanded for lb in labels_over_time),
            "n_windows": len(labels_over_time),
        }

    all_correct = all(s["classified"] == s["commanded"] for s in segments_report)
    flips_ok = all(
        s["flip_latency_cycles"] is not None and s["flip_latency_cycles"] <= 5.0
        for s in segments_report[1:]
    )
    report.metrics.update(
        {
            "segments": segments_report,
            "all_segments_correct": all_correct,
            "flips_within_5_cycles": flips_ok,
            "stability": stability,
        }
    )
    report.simulated_s = float(train_trace.t[-1]) + float(eval_trace.t[-1])
    report.wall_s = time.monotonic() - t0
    return report


def rollout_fitness(
    gait: GaitDefinition, body_params: BodyParams, rollout_s: float, dt_ms: float
) -> float:
    """Distance from origin after driving the body open loop with the gait."""
    traj = target_trajectories(gait, rollout_s, dt_ms)
    state = BodyState.at_rest(body_params)
    for k in range(traj.n_rows - 1):
        state = body_step(state, body_params, traj.angles[k], dt_ms)
    return state.distance_from_origin


def run_gait_search(config: ExperimentConfig) -> Report:
    """Optimize gait parameters against the surrogate body."""
    t0 = time.monotonic()
    manifest = seed_manifest(config.seed)
    sc = config.search
    space = {"walking": walking_search_space, "bounding": bounding_search_space}[sc.space]()
    cma_config = CmaesConfig(
        dimension=space.dimension,
        population=sc.population,
        max_generations=sc.generations,
        seed=manifest["derived"]["search"],
    )

    def evaluator(gait: GaitDefinition) -> float:
        return rollout_fitness(gait, config.body, sc.rollout_s, sc.rollout_dt_ms)

    result = optimize_gait(space, evaluator, cma_config, workers=sc.workers)
    report = Report(
        kind=config.kind, status="ok", config=config.to_dict(),
        config_hash=config_hash(config), seed_manifest=manifest,
        metrics={
            "best_fitness_m": result.best_fitness,
            "generation0_best_m": result.history[0]["best"],
            "generations": len(result.history),
            "improved": result.best_fitness > result.history[0]["best"],
        },
        simulated_s=sc.generations * sc.population * sc.rollout_s,
        wall_s=time.monotonic() - t0,
        best_gait=result.best_gait,
        search_result=result,
    )
    return report


def run_evaluation(
    config: ExperimentConfig,
    weights: np.ndarray,
    warmup_open_s: float = 3.0,
    warmup_mix_s: float = 3.0,
) -> Report:
    """Closed-loop evaluation of stored weights on a fresh system.

    The cold reservoir is entrained first: a short open-loop window, a
    mixing ramp, then the measured closed-loop window.
    """
    t0 = time.monotonic()
    system, manifest = build_system(config)
    gait = config.gaits[0]
    total_s = warmup_open_s + warmup_mix_s + config.eval_s
    targets, control, _ = build_segment_program([(gait, total_s, None)], config.dt_ms)
    schedule = MixSchedule(warmup_open_s, warmup_mix_s, config.eval_s)
    program = Program.from_schedule(targets, schedule, config.dt_ms, control=control)
    program.learn[:] = False
    program.corrupt_sensors = False
    program.corrupt_targets = False

    report = Report(
        kind=config.kind, status="ok", config=config.to_dict(),
        config_hash=config_hash(config), seed_manifest=manifest,
        metrics={}, simulated_s=total_s, wall_s=0.0,
    )
    try:
        trace = simulate(system, program, weights=weights)
    except TrainingDiverged as exc:
        report.status = "diverged"
        report.metrics["divergence"] = str(exc)
        report.traces["eval"] = exc.trace
        report.wall_s = time.monotonic() - t0
        return report
    report.traces["eval"] = trace
    dt = config.dt_ms
    closed_start = int(round((warmup_open_s + warmup_mix_s + 1.0) * 1000.0 / dt))
    closed = trace.readouts()[closed_start:]
    nrmse_per, measured_hz = closed_loop_nrmse(closed, gait, dt)
    med_corr, min_corr = _periodicity(closed, dt)
    report.metrics.update(
        {
            "nrmse": {leg: float(nrmse_per[i]) for i, leg in enumerate(("fl", "fr", "hl", "hr"))},
            "nrmse_max": float(np.max(nrmse_per)),
            "frequency_hz": {"trained": gait.frequency_hz, "measured": measured_hz},
            "cycle_correlation_median": med_corr,
            "cycle_correlation_min": min_corr,
        }
    )
    report.wall_s = time.monotonic() - t0
    return report


def run_experiment(config: ExperimentConfig) -> Report:
    """Dispatch on the configured kind."""
    runner = {
        "gait-generation": run_gait_generation,
        "speed-control": run_speed_control,
        "gait-transition": run_gait_transition,
        "gait-search": run_gait_search,
    }[config.kind]
    return runner(config)


def _downsample_plot_csv(path: Path, trace: Trace, max_rows: int = 2000) -> None:
    """Plot-ready CSV of targets vs readouts, down-sampled."""
    stride = max(1, trace.n_rows // max_rows) if trace.n_rows else 1
    cols = (["t"] + [f"target_{leg}" for leg in ("fl", "fr", "hl", "hr")]
            + [f"readout_{leg}" for leg in ("fl", "fr", "hl", "hr")])
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(cols)
        for k in range(0, trace.n_rows, stride):
            row = trace.data[k]
            writer.writerow([repr(v) for v in np.concatenate(([row[0]], row[1:9]))])


def export_traces(report: Report, directory) -> list[Path]:
    """Write the report, config snapshot, seed manifest and all traces.

    Empty traces still produce a header-only CSV. Returns the files written.
    """
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
        probe = directory / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise OSError(f"cannot write to {directory}: {exc}") from exc

    written: list[Path] = []

    def emit(name: str, writer) -> None:
        path = directory / name
        writer(path)
        written.append(path)

    emit("report.json", lambda p: p.write_text(json.dumps(report.to_json_dict(), indent=2)))
    emit("config.json", lambda p: p.write_text(json.dumps(report.config, indent=2)))
    emit("seeds.json", lambda p: p.write_text(json.dumps(report.seed_manifest, indent=2)))

    for name, trace in report.traces.items():
        emit(f"trace_{name}.csv", lambda p, tr=trace: tr.to_csv(p))
        emit(f"plot_{name}.csv", lambda p, tr=trace: _downsample_plot_csv(p, tr))
        if trace.spikes is not None:
            emit(
                f"spikes_{name}.csv",
                lambda p, tr=trace: np.savetxt(p, tr.spikes, fmt="%d", delimiter=","),
            )

    if report.weights is not None:
        emit(
            "weights.json",
            lambda p: save_weights(
                p, report.weights, report.alpha or 0.0, report.schedule
            ),
        )
    if report.best_gait is not None:
        emit(
            "gait_best.json",
            lambda p: p.write_text(json.dumps(report.best_gait.to_dict(), indent=2)),
        )
    if report.search_result is not None:
        emit("cmaes_log.csv", lambda p: report.search_result.write_log(p))
    return written
