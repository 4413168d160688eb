"""Lattice wiring statistics, delay exactness, determinism, snapshots."""

import math

import numpy as np
import pytest

from spikegait.lif import NoiseDrive, PopulationSpec
from spikegait.reservoir import (
    Reservoir,
    build_reservoir,
    build_topology,
    connection_probability,
    connectivity_stats,
    default_lattice_dims,
    lattice_positions,
    load_topology,
    save_topology,
)


def quiet_spec(n=40):
    return PopulationSpec(n_neurons=n, noise=NoiseDrive(mean=0.0, sd=0.0))


class TestTopology:
    def test_connection_probability_values(self):
        assert connection_probability(1.0) == pytest.approx(0.3 * math.exp(-1.0))
        assert connection_probability(3.0) == pytest.approx(0.3 * math.exp(-9.0))

    def test_distant_pairs_effectively_unconnected(self):
        # expected synapses across one ordered pair of 40-neuron populations
        # at distance 3: 32 * 32 * 0.3 e^-9 < 0.05
        expected = 32 * 32 * connection_probability(3.0)
        assert expected < 0.05

    def test_default_lattice_dims(self):
        assert default_lattice_dims(300) == (3, 3, 34)
        assert default_lattice_dims(9) == (3, 3, 1)

    def test_lattice_too_small_rejected(self):
        with pytest.raises(ValueError):
            lattice_positions((3, 3, 2), 19)
        with pytest.raises(ValueError):
            build_topology(19, quiet_spec(), lattice_dims=(3, 3, 2), seed=0)

    def test_positions_unique(self):
        topo = build_topology(30, quiet_spec(), seed=1)
        assert len({tuple(p) for p in topo.positions}) == 30

    def test_build_is_pure_function_of_seed(self):
        a = build_topology(24, quiet_spec(), seed=7)
        b = build_topology(24, quiet_spec(), seed=7)
        c = build_topology(24, quiet_spec(), seed=8)
        assert np.array_equal(a.src, b.src) and np.array_equal(a.tgt, b.tgt)
        assert not (len(a.src) == len(c.src) and np.array_equal(a.src, c.src))

    def test_all_synapses_excitatory_to_excitatory_across_populations(self):
        spec = quiet_spec()
        topo = build_topology(24, spec, seed=3)
        n = spec.n_neurons
        n_exc = spec.n_excitatory
        src_pop, tgt_pop = topo.src // n, topo.tgt // n
        assert np.all(src_pop != tgt_pop)  # no self-pair (D=0 impossible)
        assert np.all(topo.src % n < n_exc)  # excitatory sources only
        assert np.all(topo.tgt % n < n_exc)  # excitatory targets only
        assert np.all(topo.weight > 0.0)

    def test_connectivity_statistics_within_3_sigma(self):
        # 4x4x3 lattice: plenty of ordered pairs at D in {1, sqrt(2), 2}
        topo = build_topology(48, quiet_spec(), lattice_dims=(4, 4, 3), seed=5)
        stats = connectivity_stats(topo)
        for d in (1.0, math.sqrt(2.0), 2.0):
            key = round(d, 9)
            entry = stats[key]
            assert entry["pairs"] >= 30
            assert abs(entry["z"]) < 3.0

    def test_synapse_iterator(self):
        topo = build_topology(12, quiet_spec(), seed=6, delay_ms=50.0)
        first = next(iter(topo.synapses()))
        assert len(first) == 4
        assert first[3] == 50.0


class TestReservoirStepping:
    def test_silent_reservoir_stays_silent(self):
        res = build_reservoir(12, quiet_spec(20), seed=1, dt_ms=1.0)
        for _ in range(300):
            counts = res.step()
            assert np.all(counts == 0)
        assert np.all(res.ring == 0.0)

    def test_spike_arrives_after_exactly_the_delay(self):
        spec = quiet_spec(20)
        delay = 100.0
        res = build_reservoir(12, spec, seed=2, delay_ms=delay, dt_ms=1.0,
                              input_populations=[0], weight_scale=1.0)
        # find a target population connected to population 0
        src_pop = res.topology.src // spec.n_neurons
        tgt_pop = res.topology.tgt // spec.n_neurons
        targets = np.unique(tgt_pop[src_pop == 0])
        assert targets.size > 0
        probe = int(targets[0])
        sl = res.population_slice(probe)

        kick_ticks = (5, 6, 7)
        spike_tick = None
        arrival_tick = None
        for k in range(200):
            current = {0: 5.0} if k in kick_ticks else None
            counts = res.step(current)
            if spike_tick is None and counts[0] > 0:
                spike_tick = k
            if spike_tick is not None and arrival_tick is None and probe != 0:
                if np.any(res.i_syn[sl] > 0.0):
                    arrival_tick = k
        assert spike_tick is not None and arrival_tick is not None
        assert arrival_tick - spike_tick == int(delay)  # exactly delay/dt steps

    def test_no_influence_before_the_delay(self):
        # twin runs with a one-tick perturbation diverge in other
        # populations no earlier than the transmission delay
        spec = PopulationSpec(n_neurons=20, noise=NoiseDrive(sd=2.0, rng_stream=1))
        delay = 40.0

        def run(perturb):
            res = build_reservoir(12, spec, seed=4, delay_ms=delay, dt_ms=1.0,
                                  input_populations=[0], noise_seed=99)
            series = []
            for k in range(120):
                current = {0: 5.0} if (perturb and k == 10) else None
                series.append(res.step(current))
            return np.array(series)

        a, b = run(False), run(True)
        others = np.arange(1, 12)
        diff_ticks = np.where(np.any(a[:, others] != b[:, others], axis=1))[0]
        assert diff_ticks.size > 0
        assert diff_ticks[0] >= 10 + int(delay)

    def test_deterministic_across_runs(self):
        spec = PopulationSpec(n_neurons=20, noise=NoiseDrive(sd=2.0, rng_stream=1))

        def run():
            res = build_reservoir(10, spec, seed=5, delay_ms=20.0, noise_seed=42)
            return np.array([res.step() for _ in range(400)])

        assert np.array_equal(run(), run())

    def test_unknown_population_rejected(self):
        res = build_reservoir(6, quiet_spec(10), seed=6, delay_ms=10.0)
        with pytest.raises(ValueError):
            res.step({17: 1.0})

    def test_non_designated_population_rejected(self):
        res = build_reservoir(6, quiet_spec(10), seed=6, delay_ms=10.0,
                              input_populations=[2])
        with pytest.raises(ValueError):
            res.step({3: 1.0})
        res.step({2: 1.0})  # designated input accepted

    def test_nonfinite_current_rejected(self):
        res = build_reservoir(6, quiet_spec(10), seed=6, delay_ms=10.0)
        with pytest.raises(ValueError):
            res.step({0: math.inf})

    def test_wrong_dt_rejected(self):
        res = build_reservoir(6, quiet_spec(10), seed=6, delay_ms=10.0, dt_ms=1.0)
        with pytest.raises(ValueError):
            res.step(None, dt=0.5)

    def test_delay_must_be_multiple_of_dt(self):
        with pytest.raises(ValueError):
            build_reservoir(6, quiet_spec(10), seed=7, delay_ms=10.5, dt_ms=1.0)


class TestSnapshot:
    def test_topology_roundtrip(self, tmp_path):
        topo = build_topology(18, quiet_spec(20), seed=9, delay_ms=30.0)
        path = tmp_path / "topology.json"
        save_topology(path, topo)
        again = load_topology(path)
        assert again.n_populations == topo.n_populations
        assert again.lattice_dims == topo.lattice_dims
        assert np.array_equal(again.positions, topo.positions)
        assert np.array_equal(again.src, topo.src)
        assert np.array_equal(again.tgt, topo.tgt)
        assert np.array_equal(again.weight, topo.weight)
        assert again.delay_ms == topo.delay_ms and again.seed == topo.seed

    def test_reloaded_topology_reproduces_dynamics(self, tmp_path):
        spec = PopulationSpec(n_neurons=10, noise=NoiseDrive(sd=2.0, rng_stream=3))
        topo = build_topology(8, spec, seed=11, delay_ms=10.0)
        path = tmp_path / "topology.json"
        save_topology(path, topo)
        a = Reservoir(topo, spec, dt_ms=1.0, noise_seed=5)
        b = Reservoir(load_topology(path), spec, dt_ms=1.0, noise_seed=5)
        for _ in range(200):
            assert np.array_equal(a.step(), b.step())
