"""Acceptance criteria 1-9, one PASS/FAIL line each (also echoed in the terminal summary)."""
import json
import time

import numpy as np
import pytest

from dance.cli import main
from dance.costfn import PRESETS, CostFunctionSpec
from dance.costmodel import (DEFAULT_CONSTANTS, AcceleratorConfig, access_counts, area,
                             evaluate_network, layer_costs, macs)
from dance.cosearch import (SearchConfig, hardware_cost, make_task, relaxed_arch_encoding,
                            retrain_accuracy, search)
from dance.evaluator import (CostEstNet, EvaluatorModel, EvaluatorTrainConfig, HwGenNet,
                             accuracy_report, head_labels, train_evaluator)
from dance.nn import (BatchNorm1d, Dense, ResidualMLP, Tensor, ce_loss_multi_head, gradcheck,
                      gumbel_softmax, msre_loss, relu, sample_gumbel)
from dance.oracle import (HwSpace, enumerate_space, generate_dataset, optimal_hw,
                          records_to_dataset)
from dance.workload import (ZERO, ArchSpace, ConvLayerSpec, encode_network, network_layers,
                            sample_random_network)

from conftest import RESULTS

ARCH, HW = ArchSpace(), HwSpace()
RUN_LIMIT = 300.0  # seconds per smoke-scale search run


def verdict(n, ok: bool, detail: str):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} ({detail})"
    RESULTS.append(line)
    print(line)
    assert ok, line


def edap(m) -> float:
    return m.latency * m.energy * m.area


# 1 -- gradient correctness ------------------------------------------------------------------

def test_criterion_1_gradients(smoke_evaluator):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    worst_layer = 0.0

    def check(f, params, tol=1e-4, **kw):
        rep = gradcheck(f, params, rel_tol=tol, **kw)
        assert rep.passed, str(rep)
        return rep.worst

    d1, d2 = Dense(5, 9, rng), Dense(9, 3, rng)
    d2.bias.data += 2.0
    x, y = rng.normal(size=(6, 5)), rng.uniform(1, 3, size=(6, 3))
    worst_layer = max(worst_layer, check(lambda: msre_loss(d2(relu(d1(x))), y),
                                         {**d1.named_parameters("a."), **d2.named_parameters("b.")}))
    for training in (True, False):
        bn = BatchNorm1d(4)
        bn.train(training)
        xb, w = Tensor(rng.normal(size=(7, 4)), requires_grad=True), rng.normal(size=(7, 4))
        mean, var = bn.running_mean.copy(), bn.running_var.copy()

        def f_bn():
            bn.running_mean, bn.running_var = mean.copy(), var.copy()
            return (bn(xb) * w).sum()
        worst_layer = max(worst_layer, check(f_bn, {"x": xb, **bn.named_parameters()}))
    for batchnorm in (False, True):
        net = ResidualMLP(6, 8, 3, rng, batchnorm=batchnorm)
        xr, w = rng.normal(size=(5, 6)), rng.normal(size=(5, 3))
        # a short step keeps central differences from straddling a ReLU kink
        worst_layer = max(worst_layer, check(lambda: (net(xr) * w).sum(), net.named_parameters(),
                                             max_entries=8, h=1e-6))
    logits = Tensor(rng.normal(size=(4, 5)), requires_grad=True)
    g, w = sample_gumbel((4, 5), rng), rng.normal(size=(4, 5))
    worst_layer = max(worst_layer, check(lambda: (gumbel_softmax(logits, 0.7, noise=g) * w).sum(),
                                         [logits]))
    labels = [rng.integers(0, 5, size=4), rng.integers(0, 5, size=4)]
    worst_layer = max(worst_layer, check(
        lambda: ce_loss_multi_head([logits, logits * 2.0], labels), [logits]))

    # full evaluator: both nets' training losses w.r.t. their parameters
    data = records_to_dataset(generate_dataset(4, rng_seed=3))
    hw_net = HwGenNet(ARCH.encoding_size, HW.head_sizes, width=8, seed=1)
    noise = sample_gumbel((len(data), sum(HW.head_sizes)), rng)
    hl = head_labels(data.hw, HW.head_sizes)

    def f_hwgen():
        # CE on log_softmax((logits + g) / tau), the hardware-generation training loss
        heads = hw_net.split((hw_net.logits(data.arch) + noise) * (1.0 / 0.5))
        return ce_loss_multi_head(heads, hl)
    worst_eval = check(f_hwgen, hw_net.named_parameters(), tol=1e-3, max_entries=10)
    ce_net = CostEstNet(ARCH.encoding_size + HW.onehot_size, width=8, seed=2)
    ce_net.fit_scaler(data.costs)
    xin = np.hstack([data.arch, data.hw])
    worst_eval = max(worst_eval, check(lambda: msre_loss(ce_net(xin), data.costs),
                                       ce_net.named_parameters(), tol=1e-3, max_entries=10))

    # end to end: cost_hw(evaluator(relaxed encoding(alpha))), frozen Gumbel noise
    alpha = Tensor(rng.normal(size=(ARCH.positions, 7)), requires_grad=True)
    ga = sample_gumbel((ARCH.positions, 7), rng)
    ge = sample_gumbel((1, sum(HW.head_sizes)), rng)
    for spec in (CostFunctionSpec.edap(), PRESETS["latency"]):
        worst_eval = max(worst_eval, check(
            lambda: hardware_cost(smoke_evaluator, relaxed_arch_encoding(alpha, "soft", 1.0, noise=ga),
                                  spec, noise=ge), {"alpha": alpha}, tol=1e-3))
    secs = time.perf_counter() - t0
    verdict(1, worst_layer < 1e-4 and worst_eval < 1e-3 and secs < 60,
            f"layers max rel err {worst_layer:.2e}, evaluator/end-to-end {worst_eval:.2e}, {secs:.1f}s")


# 2 -- oracle invariants -----------------------------------------------------------------------

def _random_layer(rng) -> ConvLayerSpec:
    depthwise = bool(rng.random() < 0.4)
    c = int(rng.integers(1, 97))
    k = c if depthwise else int(rng.integers(1, 97))
    r = int(rng.choice([1, 3, 5, 7]))
    hw = int(rng.integers(1, 33))
    return ConvLayerSpec(int(rng.integers(1, 3)), c, k, hw, hw, r, r,
                         stride=int(rng.choice([1, 2])), depthwise=depthwise)


def test_criterion_2_oracle_invariants():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    const = DEFAULT_CONSTANTS
    pes, rfs = np.array(HW.pe_x_values), np.array(HW.rf_values)
    violations, pairs = [], 0
    for i in range(1200):
        layer = _random_layer(rng)
        df = HW.dataflows[i % 3]
        pe_x, pe_y, rf = (int(rng.choice(pes)), int(rng.choice(pes)), int(rng.choice(rfs)))
        pairs += 1
        counts = [access_counts(layer, AcceleratorConfig(df, pe_x, pe_y, int(v))) for v in rfs]
        gb = [c.gb_weights + c.gb_inputs + c.gb_outputs for c in counts]
        if np.any(np.diff(gb) > 0):
            violations.append(("gb-vs-rf", layer, df))
        d = AcceleratorConfig(df, 8, 8, 4).df_index
        lat_x, _ = layer_costs(layer, d, pes, pe_y, rf, const)
        lat_y, _ = layer_costs(layer, d, pe_x, pes, rf, const)
        if np.any(np.diff(lat_x) > 0) or np.any(np.diff(lat_y) > 0):
            violations.append(("latency-vs-pe", layer, df))
        _, en = layer_costs(layer, d, pe_x, pe_y, rf, const)
        if not en >= const.e_mac * macs(layer) * 1e-9:
            violations.append(("energy-floor", layer, df))
        if not (np.all(np.diff(area(pes, pe_y, rf, const)) > 0)
                and np.all(np.diff(area(pe_x, pe_y, rfs, const)) > 0)):
            violations.append(("area", pe_x, pe_y, rf))
    for accel in enumerate_space(HW)[::17]:
        zero = evaluate_network([], accel)
        if zero.as_array().tolist() != [0.0, 0.0, area(accel.pe_x, accel.pe_y, accel.rf_size)]:
            violations.append(("zero-network", accel))
    secs = time.perf_counter() - t0
    verdict(2, not violations and pairs >= 1000 and secs < 60,
            f"{pairs} random (layer, config) pairs, {len(violations)} violations, {secs:.1f}s")


# 3 -- oracle optimality -----------------------------------------------------------------------

def test_criterion_3_oracle_optimality():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    space = enumerate_space(HW)
    spec = CostFunctionSpec.edap()
    failures = 0
    for _ in range(20):
        layers = network_layers(sample_random_network(ARCH, rng), ARCH)
        _, best = optimal_hw(layers, spec, HW, threads=2)
        for j in rng.choice(len(space), size=50, replace=False):
            if edap(evaluate_network(layers, space[int(j)])) < edap(best):
                failures += 1
    secs = time.perf_counter() - t0
    verdict(3, failures == 0 and secs < 60,
            f"20 networks x 50 configs, {failures} dominated optima, {secs:.1f}s")


# 4-6 -- evaluator at full scale ---------------------------------------------------------------

@pytest.fixture(scope="module")
def full_evaluator():
    """20,000-network dataset, default training configuration, with the no-forwarding ablation."""
    t0 = time.perf_counter()
    cost = CostFunctionSpec.parse("linear:3.3,0.8,1e-6")
    data = records_to_dataset(generate_dataset(20000, rng_seed=0, cost_fn=cost))
    model, val = train_evaluator(data, ARCH, HW, cost, EvaluatorTrainConfig())
    return model, val, time.perf_counter() - t0


@pytest.mark.slow
def test_criterion_4_evaluator_fidelity(full_evaluator):
    model, val, secs = full_evaluator
    rep = accuracy_report(model, val)
    hw_min = min(rep.hwgen.values())
    ff_min = min(rep.costest_ff.values())
    e2e_min = min(rep.overall.values())
    print(rep.to_csv())
    verdict(4, hw_min >= 90 and ff_min >= 95 and e2e_min >= 90 and secs <= 1800,
            f"hwgen min head {hw_min:.2f}%, cost est. with forwarding min {ff_min:.2f}%, "
            f"end-to-end min {e2e_min:.2f}%, {secs:.0f}s")


@pytest.mark.slow
def test_criterion_5_forwarding_gain(full_evaluator):
    model, val, _ = full_evaluator
    rep = accuracy_report(model, val)
    gain = rep.mean_forwarding_gain()
    verdict(5, gain >= 1.0, f"mean accuracy gain from feature forwarding {gain:.2f} pp")


@pytest.mark.slow
def test_criterion_6_surrogate_speedup(full_evaluator):
    model = full_evaluator[0]
    rng = np.random.default_rng(6)
    archs = [sample_random_network(ARCH, rng) for _ in range(100)]
    encs = np.stack([encode_network(a, ARCH).ravel() for a in archs])
    layers = [network_layers(a, ARCH) for a in archs]
    spec = model.cost_fn

    def best_of_3(fn):
        times = []
        for _ in range(3):
            t0 = time.perf_counter()
            fn()
            times.append((time.perf_counter() - t0) / 100)
        return min(times)

    # per-network cost of evaluating the 100 networks as one batch, vs one oracle call each
    t_eval = best_of_3(lambda: model.predict(encs))
    t_single = best_of_3(lambda: [model.predict(e) for e in encs])
    t_oracle = best_of_3(lambda: [optimal_hw(ls, spec, HW, threads=1) for ls in layers])
    ratio = t_oracle / t_eval
    verdict(6, ratio >= 100, f"evaluator {t_eval * 1e3:.3f} ms per network batched "
            f"({t_single * 1e3:.3f} ms one at a time, {t_oracle / t_single:.0f}x) vs exhaustive "
            f"search {t_oracle * 1e3:.2f} ms per network, {ratio:.0f}x")


# 7-9 -- search at smoke scale -----------------------------------------------------------------

def _outcome(run_dir):
    """(oracle EDAP, retrained accuracy, Zero count) of a pipeline run; collapsed runs cost
    the stem-only network at its own optimum."""
    final = run_dir / "final.json"
    if final.exists():
        f = json.loads(final.read_text())
        return f["edap"], f["accuracy"], f["arch"].count("Zero")
    f = json.loads((run_dir / "collapsed.json").read_text())
    _, m = optimal_hw(network_layers([ZERO] * ARCH.positions, ARCH), CostFunctionSpec.edap(), HW)
    return edap(m), f["accuracy"], f["arch"].count("Zero")


def _run_config(run_dir) -> SearchConfig:
    return SearchConfig.from_dict(json.loads((run_dir / "arch.json").read_text())["search"]["config"])


@pytest.mark.slow
def test_criterion_7_search_behaviour(smoke_pipeline):
    runs = smoke_pipeline / "runs"
    lams = sorted(float(p.name.split("_l")[1]) for p in runs.glob("dance_l*"))
    costs = [_outcome(runs / f"dance_l{lam:g}")[0] for lam in lams]
    mono = all(b <= a for a, b in zip(costs, costs[1:]))

    # (b) the largest lambda2 again, warm-up switched off
    top = runs / f"dance_l{lams[-1]:g}"
    cfg = _run_config(top)
    cfg.warmup_epochs = 0
    model = EvaluatorModel.load(smoke_pipeline / "evaluator" / "model.bin")
    t0 = time.perf_counter()
    res = search(make_task(cfg), None, model, cfg)
    acc_nowarm = retrain_accuracy(res.final_arch, make_task(cfg), cfg)
    secs_b = time.perf_counter() - t0
    _, acc_warm, zeros_warm = _outcome(top)
    warm_ok = res.zero_count >= zeros_warm and acc_warm >= acc_nowarm

    # (c) lambda2 = 0 is plain NAS, bit for bit
    base = _run_config(runs / "no_penalty")
    t0 = time.perf_counter()
    a = search(make_task(base), None, model, SearchConfig.from_dict(
        {**base.to_dict(), "loss_variant": "dance", "lambda2": 0.0}))
    b = search(make_task(base), None, None, SearchConfig.from_dict(
        {**base.to_dict(), "loss_variant": "nas", "lambda2": 0.0}))
    secs_c = (time.perf_counter() - t0) / 2
    same = np.array_equal(a.alpha_trace, b.alpha_trace) and a.final_arch == b.final_arch
    verdict(7, mono and warm_ok and same and max(secs_b, secs_c) <= RUN_LIMIT,
            f"(a) EDAP over lambda2 {lams}: {', '.join(f'{c:.4g}' for c in costs)}; "
            f"(b) Zero/accuracy with warm-up {zeros_warm}/{acc_warm:.2f}%, "
            f"without {res.zero_count}/{acc_nowarm:.2f}%; (c) lambda2=0 equals NAS: {same}")


@pytest.mark.slow
def test_criterion_8_method_comparison(smoke_pipeline):
    runs = smoke_pipeline / "runs"
    edd_dir = next(runs.glob("edd_original_l*"))
    lam = edd_dir.name.split("_l")[1]
    dance_cost, dance_acc, _ = _outcome(runs / f"dance_l{lam}")
    nas_cost, nas_acc, _ = _outcome(runs / "no_penalty")
    edd_cost, edd_acc, edd_zeros = _outcome(edd_dir)
    dance_drop, edd_drop = nas_acc - dance_acc, nas_acc - edd_acc
    ok = (dance_cost <= nas_cost and dance_drop <= 2.0
          and edd_cost < nas_cost and edd_drop > dance_drop)
    verdict(8, ok, f"lambda2 {lam}: dance EDAP {dance_cost:.4g} acc {dance_acc:.2f}%, "
            f"no-penalty EDAP {nas_cost:.4g} acc {nas_acc:.2f}%, edd_original EDAP {edd_cost:.4g} "
            f"acc {edd_acc:.2f}% ({edd_zeros} Zero)")


@pytest.mark.slow
def test_criterion_9_reproducibility(smoke_pipeline, tmp_path):
    t0 = time.perf_counter()
    out = tmp_path / "run2"
    assert main(["pipeline", "--preset", "smoke", "--seed", "1", "--out", str(out)]) == 0
    secs = time.perf_counter() - t0
    same = (out / "report.csv").read_bytes() == (smoke_pipeline / "report.csv").read_bytes()
    verdict(9, same, f"report.csv byte-identical across two smoke pipelines: {same}, "
            f"second run {secs:.0f}s")
