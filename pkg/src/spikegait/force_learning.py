"""Online least-squares training of readout weights (FORCE) and the
closed-loop simulation engine.

The learner is recursive least squares over the monitor-potential vector
x(t): with P initialized to I/alpha and w to zero,

    k = P x / (1 + x' P x)
    P <- P - k (P x)'
    w_i <- w_i - e_i k        (e_i = readout_i - target_i)

which clamps the instantaneous error small from the first update and,
after one pass over a batch, equals the ridge solution
(X'X + alpha I)^{-1} X'Y exactly. One P is shared by the four readouts
(they see the same x stream); each readout keeps its own weight vector.

Training runs open loop first (targets drive the actuators), then the
readout is blended in by a mixing coefficient beta rising from 0 to 1,
then the loop is closed. By default the learner updates through the open
and mixing phases and freezes when the loop is closed. Sensor and target
signals are noise-corrupted during learning to make the closed loop
robust.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .body import BodyParams, BodyState, apply_disturbance, body_step, read_sensors
from .interface import (
    LowPassState,
    MonitorBank,
    NoiseSpec,
    SensorCalibration,
    corrupt_and_filter,
    encode_sensor,
)
from .reservoir import Reservoir
from .trace import Trace

__all__ = [
    "RlsLearner",
    "rls_update",
    "MixSchedule",
    "mix_motor_command",
    "ClosedLoopSystem",
    "Program",
    "TrainingDiverged",
    "simulate",
    "train_gait",
    "save_weights",
    "load_weights",
]

logger = logging.getLogger(__name__)


class RlsLearner:
    """Shared inverse-correlation matrix, one weight vector per readout."""

    def __init__(
        self,
        n_features: int,
        n_readouts: int = 4,
        alpha: float = 50.0,
        update_period: int = 2,
        resymmetrize_every: int = 1000,
    ):
        if alpha <= 0.0:
            raise ValueError(f"alpha must be > 0, got {alpha}")
        if update_period < 1:
            raise ValueError("update_period must be >= 1")
        self.n_features = n_features
        self.n_readouts = n_readouts
        self.alpha = alpha
        self.update_period = update_period
        self.resymmetrize_every = resymmetrize_every
        self.w = np.zeros((n_readouts, n_features))
        self.P = np.eye(n_features) / alpha
        self.n_updates = 0
        self.n_skipped = 0
        # optional tail averaging: accumulating the weight iterates late in
        # training returns a steadier readout than the last noisy snapshot
        self.averaging = False
        self._w_sum = np.zeros_like(self.w)
        self._n_averaged = 0

    def update(self, x: np.ndarray, errors: np.ndarray) -> None:
        """One recursive update. Non-finite inputs skip the update."""
        x = np.asarray(x, dtype=float)
        errors = np.asarray(errors, dtype=float)
        if x.shape != (self.n_features,):
            raise ValueError(f"state shape {x.shape} != ({self.n_features},)")
        if errors.shape != (self.n_readouts,):
            raise ValueError(f"errors shape {errors.shape} != ({self.n_readouts},)")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(errors))):
            self.n_skipped += 1
            logger.warning("non-finite learner input at update %d; skipped", self.n_updates)
            return
        px = self.P @ x
        k = px / (1.0 + x @ px)
        self.P -= np.outer(k, px)
        self.w -= errors[:, None] * k[None, :]
        self.n_updates += 1
        if self.averaging:
            self._w_sum += self.w
            self._n_averaged += 1
        if self.resymmetrize_every and self.n_updates % self.resymmetrize_every == 0:
            self.P = 0.5 * (self.P + self.P.T)

    @property
    def averaged_weights(self) -> np.ndarray:
        """Mean of the weight iterates seen while ``averaging`` was on
        (falls back to the current weights if never enabled)."""
        if self._n_averaged == 0:
            return self.w.copy()
        return self._w_sum / self._n_averaged


def rls_update(learner: RlsLearner, x: np.ndarray, errors: np.ndarray) -> RlsLearner:
    """Functional alias for ``learner.update``; mutates and returns the learner."""
    learner.update(x, errors)
    return learner


@dataclass(frozen=True)
class MixSchedule:
    """Open-loop / mixing / closed-loop phase durations (seconds).

    beta(t) is 0 throughout open loop, ramps monotonically across the
    mixing window (linear by default, smoothstep optional) and is 1
    throughout closed loop.
    """

    open_s: float = 40.0
    mix_s: float = 20.0
    closed_s: float = 40.0
    ramp: str = "linear"

    def __post_init__(self) -> None:
        if min(self.open_s, self.mix_s, self.closed_s) < 0.0:
            raise ValueError("phase durations must be >= 0")
        if self.ramp not in ("linear", "smoothstep"):
            raise ValueError(f"unknown ramp shape {self.ramp!r}")

    @property
    def total_s(self) -> float:
        return self.open_s + self.mix_s + self.closed_s

    def beta(self, t_s: float) -> float:
        if t_s < self.open_s:
            return 0.0
        if t_s >= self.open_s + self.mix_s:
            return 1.0
        u = (t_s - self.open_s) / self.mix_s
        if self.ramp == "smoothstep":
            return u * u * (3.0 - 2.0 * u)
        return u

    def phase(self, t_s: float) -> str:
        if t_s < self.open_s:
            return "open-loop"
        if t_s < self.open_s + self.mix_s:
            return "mixing"
        return "closed-loop"


def mix_motor_command(
    target: np.ndarray | float,
    readout: np.ndarray | float,
    schedule: MixSchedule,
    t_s: float,
):
    """Blend target and readout per the schedule at time ``t_s``."""
    b = schedule.beta(t_s)
    return (1.0 - b) * target + b * readout


class TrainingDiverged(RuntimeError):
    """A readout left the plausible motor range; carries the partial trace."""

    def __init__(self, message: str, trace: Trace, tick: int):
        super().__init__(message)
        self.trace = trace
        self.tick = tick


@dataclass
class ClosedLoopSystem:
    """Everything the loop touches: network, interface, body, noise streams."""

    reservoir: Reservoir
    monitors: MonitorBank
    body_params: BodyParams
    body_state: BodyState
    sensor_populations: list[int]  # 4 population indices, LEG order
    control_population: int | None
    sensor_calibrations: list[SensorCalibration]
    sensor_noise: NoiseSpec
    sensor_filters: list[LowPassState]
    target_noise: NoiseSpec
    divergence_limit: float = 500.0
    sensor_noise_rng: np.random.Generator = None
    target_noise_rng: np.random.Generator = None

    def __post_init__(self) -> None:
        if len(self.sensor_populations) != 4 or len(self.sensor_calibrations) != 4:
            raise ValueError("need exactly four sensor channels")
        if len(self.sensor_filters) != 4:
            raise ValueError("need one low-pass state per sensor")
        if self.sensor_noise_rng is None:
            self.sensor_noise_rng = self.sensor_noise.make_rng()
        if self.target_noise_rng is None:
            self.target_noise_rng = self.target_noise.make_rng()

    @property
    def dt(self) -> float:
        return self.reservoir.dt

    @property
    def n_populations(self) -> int:
        return self.reservoir.n_populations


@dataclass
class Program:
    """One contiguous run of the loop.

    ``targets`` has one row per tick boundary (n_ticks + 1 rows);
    ``control`` the control DC level per row (nA) or None; ``beta`` the
    mixing coefficient per row; ``learn`` whether the learner may update
    at that tick; ``disturbances`` maps tick index -> (kind, kwargs),
    applied before that tick executes.
    """

    targets: np.ndarray
    control: np.ndarray | None
    beta: np.ndarray
    learn: np.ndarray
    dt_ms: float
    disturbances: dict[int, tuple[str, dict]] = field(default_factory=dict)
    corrupt_sensors: bool = True
    corrupt_targets: bool = True

    def __post_init__(self) -> None:
        n = self.targets.shape[0]
        if self.targets.shape != (n, 4):
            raise ValueError(f"targets must be (rows, 4), got {self.targets.shape}")
        for name in ("beta", "learn"):
            arr = getattr(self, name)
            if arr.shape[0] != n:
                raise ValueError(f"{name} rows {arr.shape[0]} != targets rows {n}")
        if self.control is not None and self.control.shape[0] != n:
            raise ValueError("control rows do not match targets rows")

    @property
    def n_ticks(self) -> int:
        return self.targets.shape[0] - 1

    @classmethod
    def from_schedule(
        cls,
        targets: np.ndarray,
        schedule: MixSchedule,
        dt_ms: float,
        control: np.ndarray | None = None,
        update_period: int = 2,
        learn_in_closed_loop: bool = False,
    ) -> "Program":
        n_rows = targets.shape[0]
        t_s = np.arange(n_rows) * (dt_ms * 1e-3)
        beta = np.array([schedule.beta(t) for t in t_s])
        phases = [schedule.phase(t) for t in t_s]
        learn = np.array(
            [
                (ph != "closed-loop" or learn_in_closed_loop)
                and (k % update_period == 0)
                for k, ph in enumerate(phases)
            ]
        )
        return cls(targets=targets, control=control, beta=beta, learn=learn, dt_ms=dt_ms)


def _corrupt(value: float, spec: NoiseSpec, rng: np.random.Generator) -> float:
    if spec.impulse_probability > 0.0 and rng.random() < spec.impulse_probability:
        sign = 1.0 if rng.random() < 0.5 else -1.0
        return value + sign * spec.impulse_amplitude
    if spec.gaussian_sd > 0.0:
        return value + rng.normal(0.0, spec.gaussian_sd)
    return value


def simulate(
    system: ClosedLoopSystem,
    program: Program,
    learner: RlsLearner | None = None,
    weights: np.ndarray | None = None,
    trace: Trace | None = None,
    spike_downsample: int = 0,
) -> Trace:
    """Run the loop for the whole program; returns the trace.

    Each tick: read sensors, corrupt + low-pass them, encode to DC
    currents, step the reservoir, update the monitors, form the readouts,
    optionally update the learner against the (noisy) targets, blend the
    motor command, step the body. Raises ``TrainingDiverged`` when any
    readout magnitude exceeds the divergence limit.
    """
    if learner is None and weights is None:
        raise ValueError("need a learner or fixed weights")
    if learner is not None and weights is not None:
        raise ValueError("pass either a learner or fixed weights, not both")
    dt = program.dt_ms
    if dt != system.dt:
        raise ValueError(f"program dt {dt} != system dt {system.dt}")
    n_ticks = program.n_ticks
    if trace is None:
        trace = Trace(
            n_ticks + 1,
            spike_downsample=spike_downsample,
            n_populations=system.n_populations,
        )

    w = learner.w if learner is not None else np.asarray(weights, dtype=float)
    if w.shape != (4, system.n_populations):
        raise ValueError(f"weights shape {w.shape} != (4, {system.n_populations})")

    body = system.body_state
    readouts = np.zeros(4)
    x = system.monitors.potentials

    for k in range(n_ticks + 1):
        t_ms = k * dt
        t_s = t_ms * 1e-3
        if k in program.disturbances:
            kind, kwargs = program.disturbances[k]
            body = apply_disturbance(body, kind, **kwargs)

        sensors_raw = read_sensors(body)
        sensors_filt = np.empty(4)
        for i in range(4):
            if program.corrupt_sensors:
                sensors_filt[i] = corrupt_and_filter(
                    sensors_raw[i],
                    system.sensor_noise,
                    system.sensor_noise_rng,
                    system.sensor_filters[i],
                    dt,
                )
            else:
                sensors_filt[i] = system.sensor_filters[i].apply(sensors_raw[i], dt)

        target = program.targets[k]
        control_level = float(program.control[k]) if program.control is not None else 0.0
        beta = float(program.beta[k])

        trace.set_row(
            k, t_s, target, readouts, sensors_raw, sensors_filt,
            control_level, beta, body.x, body.y, body.heading,
            body.distance_from_origin,
        )
        if k == n_ticks:
            break  # closing row only

        currents = {
            system.sensor_populations[i]: encode_sensor(
                sensors_filt[i], system.sensor_calibrations[i]
            )
            for i in range(4)
        }
        if system.control_population is not None and program.control is not None:
            currents[system.control_population] = control_level

        counts = system.reservoir.step(currents)
        if trace.spikes is not None and k % trace.spike_downsample == 0:
            trace.spikes[k // trace.spike_downsample] = counts
        x = system.monitors.update(counts, dt)
        readouts = w @ x

        peak = float(np.max(np.abs(readouts)))
        if peak > system.divergence_limit:
            system.body_state = body
            raise TrainingDiverged(
                f"readout reached {peak:.1f} deg at t={t_s:.3f} s "
                f"(limit {system.divergence_limit}); aborting",
                trace, k,
            )

        if program.corrupt_targets:
            noisy_target = np.array(
                [_corrupt(tv, system.target_noise, system.target_noise_rng) for tv in target]
            )
        else:
            noisy_target = target

        if learner is not None and program.learn[k]:
            # tail-average the weight iterates once the loop is closed
            learner.averaging = beta >= 1.0
            learner.update(x, readouts - noisy_target)

        command = (1.0 - beta) * noisy_target + beta * readouts
        body = body_step(body, system.body_params, command, dt)

    system.body_state = body
    return trace


def train_gait(
    system: ClosedLoopSystem,
    targets: np.ndarray,
    schedule: MixSchedule,
    alpha: float = 50.0,
    update_period: int = 2,
    control: np.ndarray | None = None,
    learn_in_closed_loop: bool = False,
) -> tuple[np.ndarray, Trace]:
    """Train readout weights over the schedule; returns (weights, trace).

    ``targets`` must cover the whole schedule (rows = total ticks + 1). A
    zero-duration schedule returns zero weights and an initial-row-only
    trace.
    """
    needed = int(round(schedule.total_s * 1000.0 / system.dt))
    if needed == 0:
        return np.zeros((4, system.n_populations)), Trace(0)
    if targets.shape[0] < needed + 1:
        raise ValueError(
            f"targets cover {targets.shape[0] - 1} ticks, schedule needs {needed}"
        )
    learner = RlsLearner(
        n_features=system.n_populations,
        n_readouts=4,
        alpha=alpha,
        update_period=update_period,
    )
    program = Program.from_schedule(
        targets[: needed + 1],
        schedule,
        system.dt,
        control=None if control is None else control[: needed + 1],
        update_period=update_period,
        learn_in_closed_loop=learn_in_closed_loop,
    )
    trace = simulate(system, program, learner=learner)
    return learner.w.copy(), trace


def save_weights(
    path,
    weights: np.ndarray,
    alpha: float,
    schedule: MixSchedule | None = None,
    extra: dict | None = None,
) -> None:
    """Versioned structured-text snapshot of trained readout weights."""
    data = {
        "schema_version": 1,
        "n_populations": int(np.asarray(weights).shape[1]),
        "n_readouts": int(np.asarray(weights).shape[0]),
        "alpha": alpha,
        "schedule": None
        if schedule is None
        else {"open_s": schedule.open_s, "mix_s": schedule.mix_s,
              "closed_s": schedule.closed_s, "ramp": schedule.ramp},
        "weights": np.asarray(weights).tolist(),
    }
    if extra:
        data.update(extra)
    with open(path, "w") as f:
        json.dump(data, f)


def load_weights(path) -> tuple[np.ndarray, dict]:
    with open(path) as f:
        data = json.load(f)
    w = np.asarray(data["weights"], dtype=float)
    return w, data
