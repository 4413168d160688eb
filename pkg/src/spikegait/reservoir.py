"""Lattice of spiking populations with distance-dependent delayed coupling.

Populations sit on integer sites of a 3-D lattice (unit spacing, raster
fill). For every ordered pair of distinct populations, each excitatory
source neuron connects to each excitatory target neuron independently
with probability ``0.3 * exp(-D**2)``, D the Euclidean distance between
the sites. All such synapses share one fixed transmission delay (default
100 ms) and one weight (default 0.25 nA, times a global rescale knob used
to tune excitability). Construction is a pure function of (parameters,
seed).

Stepping is clocked: a spike emitted at step k is delivered into the
targets' synaptic currents exactly ``delay/dt`` steps later via a ring
buffer; within-population wiring acts on the next step. Populations are
mutually independent within a tick (the implementation advances them as
one vectorized state), so results do not depend on any caller-side
parallelism across reservoir instances.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .lif import PopulationSpec, build_intra_weights, lif_advance

__all__ = [
    "CONNECTIVITY_COEFF",
    "ReservoirTopology",
    "default_lattice_dims",
    "lattice_positions",
    "connection_probability",
    "build_topology",
    "Reservoir",
    "build_reservoir",
    "connectivity_stats",
    "save_topology",
    "load_topology",
]

CONNECTIVITY_COEFF = 0.3  # p(D) = CONNECTIVITY_COEFF * exp(-D^2)

# Pairs whose expected synapse count falls below this are not sampled.
_NEGLIGIBLE_EXPECTED = 1e-9


def connection_probability(distance: float) -> float:
    """Per neuron pair connection probability at lattice distance ``distance``."""
    return CONNECTIVITY_COEFF * math.exp(-(distance**2))


def default_lattice_dims(n_populations: int) -> tuple[int, int, int]:
    """3x3 cross-section, deep enough to hold all populations."""
    return (3, 3, max(1, math.ceil(n_populations / 9)))


def lattice_positions(dims: tuple[int, int, int], n_populations: int) -> np.ndarray:
    """Integer lattice coordinates, sites filled in raster order."""
    lx, ly, lz = dims
    if lx * ly * lz < n_populations:
        raise ValueError(
            f"lattice {dims} has {lx * ly * lz} sites, needs {n_populations}"
        )
    idx = np.arange(n_populations)
    return np.column_stack((idx % lx, (idx // lx) % ly, idx // (lx * ly)))


@dataclass
class ReservoirTopology:
    """Positions plus the inter-population synapse list.

    Synapse arrays are parallel: ``src[i] -> tgt[i]`` are global neuron
    indices (population p occupies indices [p*n, (p+1)*n), excitatory
    first), all with weight ``weight[i]`` (nA) and the shared delay.
    """

    n_populations: int
    neurons_per_population: int
    n_excitatory: int
    lattice_dims: tuple[int, int, int]
    positions: np.ndarray  # (P, 3) int
    src: np.ndarray  # (S,) int64
    tgt: np.ndarray  # (S,) int64
    weight: np.ndarray  # (S,) float
    delay_ms: float
    seed: int

    @property
    def n_neurons(self) -> int:
        return self.n_populations * self.neurons_per_population

    @property
    def n_synapses(self) -> int:
        return self.src.shape[0]

    def synapses(self):
        """Iterate (source, target, weight, delay) tuples."""
        for i in range(self.n_synapses):
            yield (int(self.src[i]), int(self.tgt[i]), float(self.weight[i]), self.delay_ms)

    def population_of(self, neuron: np.ndarray | int) -> np.ndarray | int:
        return neuron // self.neurons_per_population


def build_topology(
    n_populations: int,
    pop_spec: PopulationSpec,
    lattice_dims: tuple[int, int, int] | None = None,
    seed: int = 0,
    inter_weight: float = 0.25,
    weight_scale: float = 1.0,
    delay_ms: float = 100.0,
) -> ReservoirTopology:
    """Wire the lattice. Pure function of its arguments."""
    if n_populations < 1:
        raise ValueError("need at least one population")
    dims = lattice_dims or default_lattice_dims(n_populations)
    positions = lattice_positions(dims, n_populations)

    n = pop_spec.n_neurons
    n_exc = pop_spec.n_excitatory
    rng = np.random.Generator(
        np.random.Philox(np.random.SeedSequence(seed).spawn(1)[0])
    )

    w = inter_weight * weight_scale
    pos = positions.astype(float)
    src_list: list[np.ndarray] = []
    tgt_list: list[np.ndarray] = []
    n_pairs = n_exc * n_exc
    for a in range(n_populations):
        d2 = np.sum((pos - pos[a]) ** 2, axis=1)
        probs = CONNECTIVITY_COEFF * np.exp(-d2)
        for b in range(n_populations):
            if b == a:
                continue
            p = probs[b]
            if p * n_pairs < _NEGLIGIBLE_EXPECTED:
                continue
            k = rng.binomial(n_pairs, p)
            if k == 0:
                continue
            flat = rng.choice(n_pairs, size=k, replace=False)
            src_list.append(a * n + flat // n_exc)
            tgt_list.append(b * n + flat % n_exc)

    if src_list:
        src = np.concatenate(src_list).astype(np.int64)
        tgt = np.concatenate(tgt_list).astype(np.int64)
    else:
        src = np.empty(0, dtype=np.int64)
        tgt = np.empty(0, dtype=np.int64)
    return ReservoirTopology(
        n_populations=n_populations,
        neurons_per_population=n,
        n_excitatory=n_exc,
        lattice_dims=dims,
        positions=positions,
        src=src,
        tgt=tgt,
        weight=np.full(src.shape[0], w),
        delay_ms=delay_ms,
        seed=seed,
    )


def connectivity_stats(topology: ReservoirTopology) -> dict[float, dict]:
    """Observed vs expected synapse counts per pair distance.

    Groups ordered population pairs by distance; for each group returns
    the number of pairs, observed and expected synapse counts, the
    binomial standard deviation, and the z-score. Useful as a build-time
    sanity check that the wiring follows the distance law.
    """
    pos = topology.positions.astype(float)
    n_exc = topology.n_excitatory
    src_pop = topology.src // topology.neurons_per_population
    tgt_pop = topology.tgt // topology.neurons_per_population

    counts: dict[tuple[int, int], int] = {}
    for a, b in zip(src_pop, tgt_pop):
        counts[(int(a), int(b))] = counts.get((int(a), int(b)), 0) + 1

    stats: dict[float, dict] = {}
    n_pairs_per = n_exc * n_exc
    for a in range(topology.n_populations):
        d = np.sqrt(np.sum((pos - pos[a]) ** 2, axis=1))
        for b in range(topology.n_populations):
            if b == a:
                continue
            key = round(float(d[b]), 9)
            entry = stats.setdefault(
                key, {"pairs": 0, "observed": 0, "expected": 0.0, "sd": 0.0}
            )
            entry["pairs"] += 1
            entry["observed"] += counts.get((a, b), 0)
    for key, entry in stats.items():
        p = connection_probability(key)
        trials = entry["pairs"] * n_pairs_per
        entry["expected"] = trials * p
        entry["sd"] = math.sqrt(trials * p * (1.0 - p))
        entry["z"] = (
            (entry["observed"] - entry["expected"]) / entry["sd"]
            if entry["sd"] > 0.0
            else 0.0
        )
    return stats


def save_topology(path, topology: ReservoirTopology) -> None:
    """Snapshot positions + synapse list as structured text (JSON)."""
    data = {
        "schema_version": 1,
        "n_populations": topology.n_populations,
        "neurons_per_population": topology.neurons_per_population,
        "n_excitatory": topology.n_excitatory,
        "lattice_dims": list(topology.lattice_dims),
        "delay_ms": topology.delay_ms,
        "seed": topology.seed,
        "positions": topology.positions.tolist(),
        "synapses": {
            "src": topology.src.tolist(),
            "tgt": topology.tgt.tolist(),
            "weight": topology.weight.tolist(),
        },
    }
    with open(path, "w") as f:
        json.dump(data, f, separators=(",", ":"))


def load_topology(path) -> ReservoirTopology:
    with open(path) as f:
        data = json.load(f)
    syn = data["synapses"]
    return ReservoirTopology(
        n_populations=data["n_populations"],
        neurons_per_population=data["neurons_per_population"],
        n_excitatory=data["n_excitatory"],
        lattice_dims=tuple(data["lattice_dims"]),
        positions=np.asarray(data["positions"], dtype=np.int64),
        src=np.asarray(syn["src"], dtype=np.int64),
        tgt=np.asarray(syn["tgt"], dtype=np.int64),
        weight=np.asarray(syn["weight"], dtype=float),
        delay_ms=data["delay_ms"],
        seed=data["seed"],
    )


class Reservoir:
    """The full spiking network advanced one control tick at a time.

    Input currents are injected per population (every member receives the
    same DC). ``step`` returns this tick's excitatory spike count per
    population, which is what the monitors consume.
    """

    def __init__(
        self,
        topology: ReservoirTopology,
        pop_spec: PopulationSpec,
        dt_ms: float = 1.0,
        input_populations: list[int] | None = None,
        noise_seed: int | None = None,
    ):
        if pop_spec.n_neurons != topology.neurons_per_population:
            raise ValueError("population spec does not match topology")
        self.topology = topology
        self.spec = pop_spec
        self.params = pop_spec.neuron_params
        self.dt = dt_ms

        P = topology.n_populations
        n = topology.neurons_per_population
        N = P * n
        self.n_populations = P
        self.n_neurons = N

        delay_steps = topology.delay_ms / dt_ms
        if abs(delay_steps - round(delay_steps)) > 1e-9 or round(delay_steps) < 1:
            raise ValueError(
                f"delay ({topology.delay_ms} ms) must be a positive integer "
                f"multiple of dt ({dt_ms} ms)"
            )
        self.delay_steps = int(round(delay_steps))

        root = np.random.SeedSequence(topology.seed)
        children = root.spawn(P + 2)  # [0] used by build_topology
        self._intra_children = children[1 : P + 1]

        blocks = []
        for p in range(P):
            rng = np.random.Generator(np.random.Philox(self._intra_children[p]))
            blocks.append(
                sp.csr_matrix(
                    build_intra_weights(n, topology.n_excitatory, pop_spec.intra, rng)
                )
            )
        self.w_intra = sp.block_diag(blocks, format="csr")
        self.w_delay = sp.csr_matrix(
            (topology.weight, (topology.tgt, topology.src)), shape=(N, N)
        )

        if noise_seed is None:
            noise_entropy = children[P + 1]
        else:
            noise_entropy = np.random.SeedSequence(noise_seed)
        self._noise_rng = np.random.Generator(np.random.Philox(noise_entropy))

        exc = np.zeros(N, dtype=bool)
        for p in range(P):
            exc[p * n : p * n + topology.n_excitatory] = True
        self.excitatory = exc
        pop_of = np.arange(N) // n
        rows = pop_of[exc]
        cols = np.arange(N)[exc]
        self._pool = sp.csr_matrix(
            (np.ones(rows.shape[0]), (rows, cols)), shape=(P, N)
        )

        self.input_populations = (
            None if input_populations is None else sorted(set(input_populations))
        )

        self.v = np.full(N, self.params.v_rest)
        self.i_syn = np.zeros(N)
        self.refractory = np.zeros(N)
        self.ring = np.zeros((self.delay_steps, N))
        self.step_index = 0
        self._syn_decay = math.exp(-dt_ms / self.params.tau_synapse)

    def population_slice(self, pop: int) -> slice:
        n = self.topology.neurons_per_population
        return slice(pop * n, (pop + 1) * n)

    def step(self, injected_currents: dict[int, float] | None = None,
             dt: float | None = None) -> np.ndarray:
        """Advance one tick; returns per-population excitatory spike counts."""
        if dt is not None and dt != self.dt:
            raise ValueError(
                f"reservoir was built for dt={self.dt} ms, cannot step at {dt} ms"
            )
        drive = self.i_syn.copy()
        if injected_currents:
            for pop, cur in injected_currents.items():
                if not (0 <= pop < self.n_populations):
                    raise ValueError(f"unknown population {pop}")
                if self.input_populations is not None and pop not in self.input_populations:
                    raise ValueError(
                        f"population {pop} is not a designated input population"
                    )
                if not math.isfinite(cur):
                    raise ValueError(f"injected current must be finite, got {cur}")
                drive[self.population_slice(pop)] += cur

        noise = self.spec.noise
        if noise.sd > 0.0:
            drive += self._noise_rng.normal(noise.mean, noise.sd, self.n_neurons)
        elif noise.mean != 0.0:
            drive += noise.mean

        slot = self.step_index % self.delay_steps
        arrivals = self.ring[slot]
        self.i_syn += arrivals
        drive += arrivals

        spiked = lif_advance(self.v, self.refractory, drive, self.params, self.dt)
        spk = spiked.astype(float)

        self.i_syn *= self._syn_decay
        self.i_syn += self.w_intra @ spk
        self.ring[slot] = self.w_delay @ spk  # lands at step_index + delay_steps

        self.step_index += 1
        counts = self._pool @ spk
        return counts.astype(np.int64)

    @property
    def time_ms(self) -> float:
        return self.step_index * self.dt


def build_reservoir(
    n_populations: int,
    pop_spec: PopulationSpec,
    lattice_dims: tuple[int, int, int] | None = None,
    seed: int = 0,
    inter_weight: float = 0.25,
    weight_scale: float = 1.0,
    delay_ms: float = 100.0,
    dt_ms: float = 1.0,
    input_populations: list[int] | None = None,
    noise_seed: int | None = None,
) -> Reservoir:
    """Build topology and network in one call."""
    topology = build_topology(
        n_populations,
        pop_spec,
        lattice_dims=lattice_dims,
        seed=seed,
        inter_weight=inter_weight,
        weight_scale=weight_scale,
        delay_ms=delay_ms,
    )
    return Reservoir(
        topology,
        pop_spec,
        dt_ms=dt_ms,
        input_populations=input_populations,
        noise_seed=noise_seed,
    )
