import hashlib
import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dance.costfn import CostFunctionSpec, cost_hw, cost_of
from dance.costmodel import AcceleratorConfig, evaluate_network
from dance.oracle import (HwSpace, dataset_columns, enumerate_space, generate_dataset, optimal_hw,
                          read_dataset, records_to_dataset, write_dataset)
from dance.workload import (ArchSpace, ConvLayerSpec, decode_network, network_layers,
                            sample_random_network)

LAT_ONLY = CostFunctionSpec.linear(1, 0, 0)
AREA_ONLY = CostFunctionSpec.linear(0, 0, 1)
SPACE = HwSpace()
ARCH = ArchSpace()


def test_enumerate_space():
    cfgs = enumerate_space(SPACE)
    assert len(cfgs) == 4335 == len(SPACE)
    assert cfgs[0] == AcceleratorConfig("WS", 8, 8, 4)
    assert len(set(cfgs)) == len(cfgs)
    keys = [(c.df_index, c.pe_x, c.pe_y, c.rf_size) for c in cfgs]
    assert keys == sorted(keys)
    for i in (0, 17, 999, 4334):
        assert SPACE.index_of(cfgs[i]) == i
        assert SPACE.from_onehot(SPACE.onehot(cfgs[i])) == cfgs[i]


def test_pointwise_latency_only_prefers_widest_pe_x():
    layer = ConvLayerSpec(1, 64, 512, 8, 8, 1, 1)
    accel, _ = optimal_hw([layer], LAT_ONLY)
    assert accel.pe_x == 24


def test_area_only_minimum():
    accel, m = optimal_hw([ConvLayerSpec(1, 8, 16, 16, 16, 3, 3)], AREA_ONLY)
    assert (accel.pe_x, accel.pe_y, accel.rf_size) == (8, 8, 4)
    assert accel == AcceleratorConfig("WS", 8, 8, 4)  # first wins on ties
    assert m.area == 640800


def test_empty_layers_rejected():
    with pytest.raises(ValueError):
        optimal_hw([], LAT_ONLY)


def test_oracle_dominates_random_configs():
    rng = np.random.default_rng(7)
    cfgs = enumerate_space(SPACE)
    for spec in (CostFunctionSpec.edap(), CostFunctionSpec.parse("latency")):
        for seed in range(20):
            layers = network_layers(sample_random_network(ARCH, seed), ARCH)
            accel, m = optimal_hw(layers, spec)
            best = cost_of(m, spec)
            assert best == pytest.approx(cost_of(evaluate_network(layers, accel), spec), rel=1e-12)
            for j in rng.choice(len(cfgs), 50, replace=False):
                assert best <= cost_of(evaluate_network(layers, cfgs[j]), spec) * (1 + 1e-12)


def test_brute_force_agrees_on_small_space():
    space = HwSpace(pe_x_values=(8, 16, 24), pe_y_values=(8, 24), rf_values=(4, 64))
    layers = network_layers(sample_random_network(ARCH, 3), ARCH)
    spec = CostFunctionSpec.edap()
    costs = [cost_of(evaluate_network(layers, c), spec) for c in enumerate_space(space)]
    accel, _ = optimal_hw(layers, spec, space)
    assert accel == enumerate_space(space)[int(np.argmin(costs))]


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000), factor=st.floats(0.1, 10))
def test_permutation_rescale_and_threads_invariance(seed, factor):
    layers = network_layers(sample_random_network(ARCH, seed), ARCH)
    ref, _ = optimal_hw(layers, LAT_ONLY)
    assert optimal_hw(layers[::-1], LAT_ONLY)[0] == ref
    assert optimal_hw(layers, LAT_ONLY.scaled(factor))[0] == ref
    assert optimal_hw(layers, LAT_ONLY, threads=3)[0] == ref
    edap = CostFunctionSpec.edap()
    assert optimal_hw(layers, edap, threads=4)[0] == optimal_hw(layers, edap)[0]


def test_dataset_counting_and_optimality():
    recs = generate_dataset(1, n_random=8, rng_seed=0)
    assert [r.kind for r in recs] == ["opt"] + ["rand"] * 8
    spec = CostFunctionSpec.edap()
    opt = cost_of(recs[0].costs, spec)
    assert all(opt <= cost_of(r.costs, spec) for r in recs[1:])


def test_dataset_costs_reproduce():
    recs = generate_dataset(5, rng_seed=1, cost_fn=CostFunctionSpec.parse("latency"))
    for r in recs:
        arch = decode_network(r.arch_onehot.reshape(ARCH.positions, -1), ARCH)
        m = evaluate_network(network_layers(arch, ARCH), SPACE.from_onehot(r.hw_onehot))
        assert m.latency == pytest.approx(r.costs.latency, rel=1e-12)
        assert m.energy == pytest.approx(r.costs.energy, rel=1e-12)
        assert m.area == r.costs.area
    ds = records_to_dataset(recs)
    assert np.sum(ds.kind == "opt") * 8 == np.sum(ds.kind == "rand")


def test_dataset_file_deterministic_and_readable(tmp_path):
    a = write_dataset(tmp_path / "a.csv", generate_dataset(4, rng_seed=3), ARCH, SPACE)
    b = write_dataset(tmp_path / "b.csv", generate_dataset(4, rng_seed=3, threads=2), ARCH, SPACE)
    assert a == b == hashlib.sha256((tmp_path / "a.csv").read_bytes()).hexdigest()
    header = (tmp_path / "a.csv").read_text().splitlines()[0].split(",")
    assert header == dataset_columns(ARCH, SPACE)
    assert len(header) == 2 + 42 + 42 + 3
    ds = read_dataset(tmp_path / "a.csv")
    assert len(ds) == 36
    tr, va = ds.split(0.25, seed=0)
    assert not set(tr.net_id) & set(va.net_id)
    assert len(tr) + len(va) == len(ds)


def test_distinct_networks_and_errors():
    recs = generate_dataset(30, n_random=0, rng_seed=2)
    assert len({tuple(r.arch_onehot) for r in recs}) == 30
    with pytest.raises(ValueError):
        generate_dataset(0)
    with pytest.raises(ValueError):
        HwSpace(rf_values=(4, 4))
