"""Bridging spikes and analog signals.

Monitor neurons are non-spiking leaky integrators (infinite threshold),
one per population, fed by that population's excitatory spikes with unit
weight; their potentials are the reservoir state. A readout is a weighted
sum of monitor potentials, which is mathematically identical to feeding
the weighted spike counts into one integrator with the same constants, so
the potential can serve directly as a motor signal (1 mV is read as 1
degree of joint angle).

Sensors go the other way: an affine, clamped map turns a joint angle into
a DC current for a dedicated input population. During learning the sensor
values can be corrupted (gaussian + impulse noise) and are smoothed by a
first-order low-pass before encoding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "IntegratorParams",
    "MonitorBank",
    "readout_signal",
    "SensorCalibration",
    "encode_sensor",
    "NoiseSpec",
    "LowPassState",
    "corrupt_and_filter",
]


@dataclass(frozen=True)
class IntegratorParams:
    """Constants of the non-spiking monitor/readout integrators.

    The infinite threshold means they never fire and never reset; the
    membrane is a pure leaky integrator of its synaptic current.
    """

    v_rest: float = 0.0
    capacitance: float = 0.2
    tau_membrane: float = 30.0
    tau_synapse: float = 5.5

    @property
    def v_threshold(self) -> float:
        return math.inf

    @property
    def resistance(self) -> float:
        return self.tau_membrane / self.capacitance


class MonitorBank:
    """One leaky integrator per population, unit input weight.

    ``update`` feeds each integrator its population's spike count for the
    step and returns the potential vector. The update is linear in the
    spike input: counts land in the synaptic current at the end of the
    step (mirroring the one-step synaptic delay of the spiking layer) and
    drive the membrane from the next step on.
    """

    def __init__(
        self,
        n_channels: int,
        params: IntegratorParams | None = None,
        input_weight: float = 1.0,
    ):
        self.params = params or IntegratorParams()
        self.n_channels = n_channels
        self.input_weight = input_weight
        self.v = np.zeros(n_channels)
        self.i_syn = np.zeros(n_channels)

    def update(self, spike_counts: np.ndarray, dt: float = 1.0) -> np.ndarray:
        """Advance all integrators one step; returns a copy of the potentials (mV)."""
        counts = np.asarray(spike_counts, dtype=float)
        if counts.shape != (self.n_channels,):
            raise ValueError(
                f"expected {self.n_channels} spike counts, got shape {counts.shape}"
            )
        p = self.params
        decay_m = math.exp(-dt / p.tau_membrane)
        v_inf = p.v_rest + p.resistance * self.i_syn
        self.v += (v_inf - self.v) * (1.0 - decay_m)
        self.i_syn *= math.exp(-dt / p.tau_synapse)
        self.i_syn += self.input_weight * counts
        return self.v.copy()

    @property
    def potentials(self) -> np.ndarray:
        return self.v.copy()


def readout_signal(weights: np.ndarray, monitor_potentials: np.ndarray) -> np.ndarray:
    """Motor signal(s) as the weighted sum of monitor potentials.

    ``weights`` is (n_readouts, n_populations) or (n_populations,). Because
    the integrators are linear, this equals routing the weighted spike
    counts into an identical integrator per readout.
    """
    w = np.asarray(weights, dtype=float)
    x = np.asarray(monitor_potentials, dtype=float)
    if w.shape[-1] != x.shape[0]:
        raise ValueError(f"weight dim {w.shape[-1]} != state dim {x.shape[0]}")
    return w @ x


@dataclass(frozen=True)
class SensorCalibration:
    """Affine, clamped map from a sensor value (degrees) to a DC current (nA)."""

    gain: float = 0.02
    offset: float = 0.0
    clamp_low: float = -1.0
    clamp_high: float = 1.0

    def __post_init__(self) -> None:
        if not math.isfinite(self.gain) or self.gain == 0.0:
            raise ValueError(f"gain must be finite and nonzero, got {self.gain}")
        if self.clamp_low > self.clamp_high:
            raise ValueError("clamp_low must not exceed clamp_high")


def encode_sensor(value: float, cal: SensorCalibration) -> float:
    """Encode one sensor reading as a DC current (nA)."""
    if not math.isfinite(value):
        raise ValueError(f"sensor value must be finite, got {value}")
    current = cal.gain * (value - cal.offset)
    return min(max(current, cal.clamp_low), cal.clamp_high)


@dataclass(frozen=True)
class NoiseSpec:
    """Corruption applied to an analog signal during learning.

    With probability ``impulse_probability`` the sample is replaced by the
    clean value displaced by exactly +/- ``impulse_amplitude``; otherwise a
    gaussian sample of sd ``gaussian_sd`` is added.
    """

    gaussian_sd: float = 0.0
    impulse_probability: float = 0.0
    impulse_amplitude: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if not (0.0 <= self.impulse_probability <= 1.0):
            raise ValueError("impulse_probability must lie in [0, 1]")
        if self.gaussian_sd < 0.0:
            raise ValueError("gaussian_sd must be >= 0")

    def make_rng(self) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(np.random.SeedSequence(self.seed)))


@dataclass
class LowPassState:
    """First-order low-pass filter memory for one channel.

    ``cutoff_hz`` may be ``math.inf``, which makes the filter an identity.
    The per-step blend is ``1 - exp(-2*pi*cutoff*dt)`` (exact pole mapping).
    """

    cutoff_hz: float = 5.0
    value: float = 0.0
    primed: bool = False

    def __post_init__(self) -> None:
        if self.cutoff_hz <= 0.0:
            raise ValueError(f"cutoff must be > 0, got {self.cutoff_hz}")

    def alpha(self, dt: float) -> float:
        if math.isinf(self.cutoff_hz):
            return 1.0
        return 1.0 - math.exp(-2.0 * math.pi * self.cutoff_hz * dt * 1e-3)

    def apply(self, x: float, dt: float) -> float:
        if not self.primed:
            # Start from the first sample instead of an arbitrary zero.
            self.value = x
            self.primed = True
            return self.value
        self.value += self.alpha(dt) * (x - self.value)
        return self.value


def corrupt_and_filter(
    value: float,
    noise: NoiseSpec,
    rng: np.random.Generator,
    lp: LowPassState,
    dt: float,
) -> float:
    """Noise-corrupt one sample, then low-pass it.

    Deterministic for a fixed rng stream. ``dt`` in ms.
    """
    if dt <= 0.0:
        raise ValueError(f"dt must be > 0, got {dt}")
    x = value
    if noise.impulse_probability > 0.0 and rng.random() < noise.impulse_probability:
        sign = 1.0 if rng.random() < 0.5 else -1.0
        x = value + sign * noise.impulse_amplitude
    elif noise.gaussian_sd > 0.0:
        x = value + rng.normal(0.0, noise.gaussian_sd)
    return lp.apply(x, dt)
