"""Leaky integrate-and-fire neurons with exponentially decaying synaptic currents.

Discrete-time simulation with a fixed step. Each sub-state is integrated
exactly over one step: the total input current is held constant while the
membrane relaxes exponentially toward the corresponding steady state, and
the synaptic current decays exponentially with its own time constant. For a
constant input this reproduces the continuous solution at every step
boundary, so a steady current I settles the membrane at
``v_rest + I * tau_membrane / capacitance``.

Units: potentials in mV, currents in nA, capacitance in nF, times in ms.
A synaptic weight w means "one presynaptic spike adds w (nA) to the target's
synaptic current".
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "LifParams",
    "LifState",
    "NoiseDrive",
    "IntraWiring",
    "PopulationSpec",
    "lif_step",
    "lif_advance",
    "build_intra_weights",
    "Population",
]


@dataclass(frozen=True)
class LifParams:
    """Membrane and synapse constants of one neuron.

    ``v_threshold`` may be ``math.inf``, in which case the neuron never
    spikes and behaves as a pure leaky integrator. The input resistance is
    ``tau_membrane / capacitance`` (MOhm).
    """

    v_rest: float = -65.0
    v_threshold: float = -50.0
    v_reset: float = -75.0
    capacitance: float = 0.2
    tau_membrane: float = 30.0
    t_refractory: float = 2.0
    tau_synapse: float = 0.5

    def __post_init__(self) -> None:
        if self.capacitance <= 0.0:
            raise ValueError(f"capacitance must be > 0, got {self.capacitance}")
        if self.tau_membrane <= 0.0 or self.tau_synapse <= 0.0:
            raise ValueError("membrane and synapse time constants must be > 0")
        if self.t_refractory < 0.0:
            raise ValueError(f"t_refractory must be >= 0, got {self.t_refractory}")
        if math.isfinite(self.v_threshold) and self.v_reset >= self.v_threshold:
            raise ValueError(
                f"v_reset ({self.v_reset}) must lie below v_threshold "
                f"({self.v_threshold})"
            )

    @property
    def resistance(self) -> float:
        """Input resistance in MOhm (mV per nA)."""
        return self.tau_membrane / self.capacitance


@dataclass
class LifState:
    """Instantaneous state of one neuron."""

    v: float
    i_syn: float = 0.0
    refractory_remaining: float = 0.0

    @classmethod
    def resting(cls, params: LifParams) -> "LifState":
        return cls(v=params.v_rest, i_syn=0.0, refractory_remaining=0.0)


@dataclass(frozen=True)
class NoiseDrive:
    """Per-neuron white-noise current, one fresh sample per step.

    ``sd`` is in nA (the source material leaves the unit open; nA is the
    assumption used throughout this package and it is config-exposed).
    ``rng_stream`` identifies the seeded stream so runs are reproducible.
    """

    mean: float = 0.0
    sd: float = 2.0
    rng_stream: int = 0

    def __post_init__(self) -> None:
        if self.sd < 0.0:
            raise ValueError(f"noise sd must be >= 0, got {self.sd}")


@dataclass(frozen=True)
class IntraWiring:
    """Within-population connectivity: E->I and I->E only.

    Connection probabilities are per neuron pair; weights are the nA added
    to the target's synaptic current per spike. Magnitudes are repo
    defaults (the source material fixes only the probabilities).
    """

    p_exc_to_inh: float = 0.1
    p_inh_to_exc: float = 0.1
    w_exc_to_inh: float = 0.3
    w_inh_to_exc: float = -1.2


@dataclass(frozen=True)
class PopulationSpec:
    """Size, composition and drive of one population."""

    n_neurons: int = 40
    excitatory_fraction: float = 0.8
    neuron_params: LifParams = field(default_factory=LifParams)
    noise: NoiseDrive = field(default_factory=NoiseDrive)
    intra: IntraWiring = field(default_factory=IntraWiring)

    def __post_init__(self) -> None:
        if self.n_neurons < 1:
            raise ValueError("population needs at least one neuron")
        if not (0.0 < self.excitatory_fraction <= 1.0):
            raise ValueError(
                f"excitatory_fraction must be in (0, 1], got {self.excitatory_fraction}"
            )

    @property
    def n_excitatory(self) -> int:
        return max(1, int(round(self.excitatory_fraction * self.n_neurons)))


def lif_advance(
    v: np.ndarray,
    refractory: np.ndarray,
    drive: np.ndarray,
    params: LifParams,
    dt: float,
) -> np.ndarray:
    """Advance membrane potentials one step in place; return the spike mask.

    ``drive`` is the total input current (nA) held constant over the step.
    Refractory neurons stay clamped at ``v_reset`` while their counters run
    down; neurons crossing threshold are reset and enter refractoriness.
    Synaptic-current decay is the caller's responsibility (it is a separate
    sub-state with its own inputs).
    """
    in_ref = refractory > 0.0
    if in_ref.any():
        refractory[in_ref] -= dt
        np.maximum(refractory, 0.0, out=refractory)
        active = ~in_ref
    else:
        active = slice(None)

    decay = math.exp(-dt / params.tau_membrane)
    v_inf = params.v_rest + params.resistance * drive
    if isinstance(active, slice):
        v += (v_inf - v) * (1.0 - decay)
    else:
        v[active] += (v_inf[active] - v[active]) * (1.0 - decay)

    if math.isfinite(params.v_threshold):
        spiked = (v >= params.v_threshold)
        if not isinstance(active, slice):
            spiked &= active
        if spiked.any():
            v[spiked] = params.v_reset
            refractory[spiked] = params.t_refractory
    else:
        spiked = np.zeros(v.shape, dtype=bool)
    return spiked


def lif_step(
    state: LifState, params: LifParams, i_ext: float, dt: float
) -> tuple[LifState, bool]:
    """Advance one neuron by ``dt`` under external current ``i_ext``.

    Returns the new state and whether the neuron spiked this step. The
    effective drive is ``i_syn + i_ext``; afterwards the synaptic current
    decays with ``tau_synapse``.
    """
    if not math.isfinite(i_ext):
        raise ValueError(f"external current must be finite, got {i_ext}")
    if dt <= 0.0:
        raise ValueError(f"dt must be > 0, got {dt}")
    if params.t_refractory > 0.0 and dt > params.t_refractory:
        raise ValueError(
            f"dt ({dt}) must not exceed the refractory period "
            f"({params.t_refractory}) or refractoriness is unresolvable"
        )

    v = np.array([state.v])
    refractory = np.array([state.refractory_remaining])
    drive = np.array([state.i_syn + i_ext])
    spiked = lif_advance(v, refractory, drive, params, dt)
    i_syn = state.i_syn * math.exp(-dt / params.tau_synapse)
    return LifState(float(v[0]), i_syn, float(refractory[0])), bool(spiked[0])


def build_intra_weights(
    n_neurons: int,
    n_excitatory: int,
    wiring: IntraWiring,
    rng: np.random.Generator,
) -> np.ndarray:
    """Dense (target, source) weight matrix for one population.

    Excitatory neurons occupy indices [0, n_excitatory); the rest are
    inhibitory. Only E->I and I->E pairs may connect, each independently
    with the configured probability.
    """
    w = np.zeros((n_neurons, n_neurons))
    n_inh = n_neurons - n_excitatory
    if n_inh > 0:
        ei = rng.random((n_inh, n_excitatory)) < wiring.p_exc_to_inh
        w[n_excitatory:, :n_excitatory] = ei * wiring.w_exc_to_inh
        ie = rng.random((n_excitatory, n_inh)) < wiring.p_inh_to_exc
        w[:n_excitatory, n_excitatory:] = ie * wiring.w_inh_to_exc
    return w


class Population:
    """A group of LIF neurons stepped as one unit.

    Every step each neuron receives its synaptic current, the shared
    external current and one fresh noise sample. Spikes are delivered
    through the intra-population wiring with an effective one-step delay
    (they enter the targets' synaptic currents for the next step). Wiring
    and the noise stream are pure functions of ``spec`` and the seeds, so
    two populations built alike evolve identically.
    """

    def __init__(self, spec: PopulationSpec, wiring_seed: int = 0):
        self.spec = spec
        self.params = spec.neuron_params
        n = spec.n_neurons
        self.n_neurons = n
        self.n_excitatory = spec.n_excitatory
        self.excitatory = np.zeros(n, dtype=bool)
        self.excitatory[: self.n_excitatory] = True

        wiring_rng = np.random.Generator(
            np.random.Philox(np.random.SeedSequence(wiring_seed))
        )
        self.weights = build_intra_weights(n, self.n_excitatory, spec.intra, wiring_rng)
        self._noise_rng = np.random.Generator(
            np.random.Philox(np.random.SeedSequence(spec.noise.rng_stream))
        )

        self.v = np.full(n, self.params.v_rest)
        self.i_syn = np.zeros(n)
        self.refractory = np.zeros(n)

    def step(self, external_current: float = 0.0, dt: float = 1.0) -> int:
        """Advance every neuron by ``dt``; return this step's excitatory spike count."""
        if not math.isfinite(external_current):
            raise ValueError(f"external current must be finite, got {external_current}")
        noise = self.spec.noise
        drive = self.i_syn + external_current
        if noise.sd > 0.0:
            drive = drive + self._noise_rng.normal(noise.mean, noise.sd, self.n_neurons)
        elif noise.mean != 0.0:
            drive = drive + noise.mean

        spiked = lif_advance(self.v, self.refractory, drive, self.params, dt)
        self.i_syn *= math.exp(-dt / self.params.tau_synapse)
        if spiked.any():
            self.i_syn += self.weights @ spiked.astype(float)
        return int(np.count_nonzero(spiked & self.excitatory))

    def run(self, n_steps: int, external_current: float = 0.0, dt: float = 1.0) -> np.ndarray:
        """Convenience loop; returns the excitatory spike count per step."""
        counts = np.empty(n_steps, dtype=np.int64)
        for k in range(n_steps):
            counts[k] = self.step(external_current, dt)
        return counts
