"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run with -s (or read captured output on failure) to see the verdict lines;
under plain -v the per-criterion test names serve the same purpose. The
heavyweight fixtures are shared: one full-budget default run backs the
frozen-backbone check, and one five-seed suite of reduced-budget runs backs
both the negative-transfer and the gate-entropy criteria.
"""

import json
import math
import time
from dataclasses import replace

import numpy as np
import pytest

from gatedlora import adapters, analysis, cli
from gatedlora import backbone as bb
from gatedlora import tensor as T
from gatedlora.checkpoint import load_checkpoint, save_checkpoint
from gatedlora.config import RunConfig
from gatedlora.router import GranularityMap, RoutingMode, route
from gatedlora.synthdata import Batch, SynthSpec, generate
from gatedlora.tensor import Tensor
from gatedlora.training import (
    TrainConfig,
    joint_loss,
    make_optimizer,
    train,
    train_separate_per_task,
)

SUITE_SEEDS = range(5)
LN8 = 2.0794415416798357


def _verdict(criterion: str, ok: bool, detail: str) -> None:
    print(f"criterion {criterion}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, f"criterion {criterion}: {detail}"


@pytest.fixture(scope="module")
def default_run():
    """Full default-budget training run, the real thing with no shortcuts."""
    spec = SynthSpec()
    config = TrainConfig()
    dataset = generate(spec)
    started = time.perf_counter()
    result = train(config, dataset)
    return {"result": result, "config": config, "spec": spec,
            "seconds": time.perf_counter() - started}


@pytest.fixture(scope="module")
def seed_suite():
    """Per-seed runs of every variant the directional criteria compare.

    Budget is trimmed (200 train samples per cell, 12 epochs) because the
    criteria fix the grid shape and conflict level, not the sample count;
    the wall-clock bound covers the whole sweep.
    """
    started = time.perf_counter()
    suites = []
    for seed in SUITE_SEEDS:
        spec = SynthSpec(n_train=200, n_dev=40, n_test=100, seed=seed)
        dataset = generate(spec)
        base = TrainConfig(epochs=12, seed=seed)
        suites.append({
            "dataset": dataset,
            "tea": train(base, dataset),
            "nomoe": train(replace(base, mode=RoutingMode.NO_MOE, n_experts=1), dataset),
            "taskonly": train(replace(base, mode=RoutingMode.TASK_ONLY), dataset),
            "eraonly": train(replace(base, mode=RoutingMode.ERA_ONLY), dataset),
            "pertask": train_separate_per_task(base, dataset),
        })
    return {"suites": suites, "seconds": time.perf_counter() - started}


def test_criterion_1_gradient_correctness(capsys):
    started = time.perf_counter()
    report = bb.gradient_check()  # 10 seeds, both gate wirings
    exit_code = cli.main(["gradcheck"])
    elapsed = time.perf_counter() - started
    ok = report["max_rel_err"] <= 1e-5 and exit_code == 0 and elapsed < 60
    with capsys.disabled():
        _verdict("1 gradient correctness", ok,
                 f"max rel err {report['max_rel_err']:.3e} over "
                 f"{report['tensors_checked']} tensors, {elapsed:.1f}s")


def _random_layer(n_experts: int, rng: np.random.Generator) -> adapters.AdapterLayer:
    base = adapters.FrozenLinear(
        Tensor(rng.normal(size=(5, 6))), Tensor(rng.normal(size=5))
    )
    layer = adapters.build_adapter_layer(rng, base, rank=4, n_experts=n_experts,
                                         dropout_rate=0.0)
    for e in layer.experts:
        e.A.data[...] = rng.normal(size=e.A.shape)
        e.B.data[...] = rng.normal(size=e.B.shape)
    return layer


def test_criterion_2_structural_equivalences():
    rng = np.random.default_rng(0)
    x = Tensor(rng.normal(size=(7, 6)))

    # a: single expert under unit gates vs plain low-rank forward
    layer1 = _random_layer(1, rng)
    ones = Tensor(np.ones(1))
    ga = adapters.gated_forward(layer1, x, ones, ones).data
    plain = adapters.lora_forward(layer1, x).data
    diff_a = float(np.max(np.abs(ga - plain)))

    # b: one-hot gates on expert k vs that expert alone
    layer4 = _random_layer(4, rng)
    k = 2
    hot = np.zeros(4)
    hot[k] = 1.0
    gb = adapters.gated_forward(layer4, x, Tensor(hot), Tensor(hot)).data
    e = layer4.experts[k]
    solo = (
        adapters._base_out(layer4, x).data
        + layer4.lam * (x.data @ e.A.data.T @ e.B.data.T)
    )
    diff_b = float(np.max(np.abs(gb - solo)))

    # c: no-mixture run vs single-expert dual-gate run, step for step
    spec = SynthSpec(n_tasks=2, d_in=6, n_train=16, n_dev=8, n_test=8,
                     classes_per_task=(2, 3), seed=5)
    dataset = generate(spec)
    tiny = TrainConfig(epochs=2, batch_size=8, rank=4, n_experts=1, dropout_rate=0.0,
                       d_model=8, d_t=4, d_e=4, d_h=6, seed=5)
    run_no = train(replace(tiny, mode=RoutingMode.NO_MOE), dataset)
    run_unit = train(replace(tiny, mode=RoutingMode.SEPARATE_GATES), dataset)
    losses_equal = run_no.train_loss == run_unit.train_loss
    names_no = bb.named_tensors(run_no.model)
    names_unit = bb.named_tensors(run_unit.model)
    tensors_equal = all(
        names_no[n].data.tobytes() == names_unit[n].data.tobytes() for n in names_no
    )

    ok = diff_a <= 1e-12 and diff_b <= 1e-12 and losses_equal and tensors_equal
    _verdict("2 structural equivalences", ok,
             f"unit-gate diff {diff_a:.1e}, one-hot diff {diff_b:.1e}, "
             f"trajectories {'identical' if losses_equal and tensors_equal else 'DIVERGED'}")


def test_criterion_3_parameter_count_identity():
    rng = np.random.default_rng(1)
    rank, d_in, d_out = 8, 16, 32
    counts = {}
    for n in (1, 2, 4, 8):
        base = adapters.FrozenLinear(Tensor(np.zeros((d_out, d_in))), None)
        layer = adapters.build_adapter_layer(rng, base, rank=rank, n_experts=n)
        counts[n] = adapters.trainable_param_count(layer)
    expected = rank * (d_in + d_out)
    ok = all(c == expected for c in counts.values())
    _verdict("3 parameter-count identity", ok, f"counts {counts}, expected {expected}")


def test_criterion_4_frozen_backbone_invariance(default_run):
    result = default_run["result"]  # train() itself re-checks the frozen set
    fresh = bb.build_model(
        default_run["config"].seed,
        bb.BackboneConfig(d_in=default_run["spec"].d_in,
                          head_widths=default_run["spec"].head_widths),
        n_eras=default_run["spec"].n_eras,
        rank=default_run["config"].rank,
        n_experts=default_run["config"].n_experts,
        mode=default_run["config"].mode,
    )
    trained = bb.named_tensors(result.model)
    rebuilt = bb.named_tensors(fresh)
    frozen_names = [n for n in trained if ".base." in n]
    ok = bool(frozen_names) and all(
        trained[n].data.tobytes() == rebuilt[n].data.tobytes() for n in frozen_names
    )
    _verdict("4 frozen-backbone invariance", ok,
             f"{len(frozen_names)} frozen tensors bit-identical after "
             f"{result.steps} steps ({default_run['seconds']:.0f}s)")


def test_criterion_5_routing_contracts():
    worst_sum = 0.0
    for mode in RoutingMode:
        n = 1 if mode is RoutingMode.NO_MOE else 8
        model = bb.build_model(
            0, bb.BackboneConfig(d_in=6, head_widths={t: 2 for t in range(4)}, d_model=8),
            n_eras=2, rank=n, n_experts=n, mode=mode, d_t=4, d_e=4, d_h=6,
        )
        for t in range(4):
            for e in range(2):
                w_t, w_e = route(model.routers[0], mode, t, e, model.granularity)
                worst_sum = max(worst_sum,
                                abs(float(np.sum(w_t.data)) - 1.0),
                                abs(float(np.sum(w_e.data)) - 1.0))
    sums_ok = worst_sum <= 1e-12

    model = bb.build_model(
        0, bb.BackboneConfig(d_in=6, head_widths={t: 2 for t in range(4)}, d_model=8),
        n_eras=2, rank=8, n_experts=8, mode=RoutingMode.SEPARATE_GATES, d_t=4, d_e=4, d_h=6,
    )
    model.routers[0].W_T.data[:] = 0.0
    model.routers[0].W_E.data[:] = 0.0
    w_t, w_e = route(model.routers[0], model.mode, 1, 1, model.granularity)
    uniform_ok = np.all(w_t.data == 0.125) and np.all(w_e.data == 0.125)

    model = bb.build_model(
        0, bb.BackboneConfig(d_in=6, head_widths={t: 2 for t in range(4)}, d_model=8),
        n_eras=2, rank=8, n_experts=8, mode=RoutingMode.SEPARATE_GATES, d_t=4, d_e=4, d_h=6,
    )
    params = bb.trainable_parameters(model)
    rng = np.random.default_rng(2)
    for name, p in params:
        if ".expert" in name:  # zero-init B would silence the router gradient
            p.data[...] = rng.normal(scale=0.3, size=p.shape)
    opt = make_optimizer(TrainConfig(), params)
    v_t_before = model.routers[0].V_t.data.copy()
    v_e_before = model.routers[0].V_e.data.copy()
    batch = Batch(x=Tensor(rng.normal(size=(4, 6))), labels=np.zeros(4, dtype=np.int64),
                  task_id=0, era_id=0)
    with T.Tape():
        loss = joint_loss(model, batch)
        T.backward(loss)
    grad_local = np.all(model.routers[0].V_t.grad[1:] == 0.0)
    opt.step()
    locality_ok = (
        grad_local
        and np.array_equal(model.routers[0].V_t.data[1:], v_t_before[1:])
        and np.array_equal(model.routers[0].V_e.data[1:], v_e_before[1:])
        and not np.array_equal(model.routers[0].V_t.data[0], v_t_before[0])
    )

    ok = sums_ok and uniform_ok and locality_ok
    _verdict("5 routing contracts", ok,
             f"worst gate-sum error {worst_sum:.1e}, zero-projection uniform "
             f"{bool(uniform_ok)}, embedding locality {bool(locality_ok)}")


def _per_task_mean_accuracy(pertask) -> float:
    accs = []
    for result in pertask.values():
        accs.extend(m.accuracy for m in result.test_metrics.values())
    return float(np.mean(accs))


def test_criterion_6_negative_transfer(seed_suite):
    wins_joint_hurts = 0
    wins_gating_helps = 0
    rows = []
    for entry in seed_suite["suites"]:
        nomoe = entry["nomoe"].mean_test_accuracy
        tea = entry["tea"].mean_test_accuracy
        solo = _per_task_mean_accuracy(entry["pertask"])
        wins_joint_hurts += nomoe < solo
        wins_gating_helps += tea > nomoe
        rows.append(f"joint {nomoe:.3f} vs solo {solo:.3f} vs gated {tea:.3f}")
    elapsed = seed_suite["seconds"]
    ok = wins_joint_hurts >= 4 and wins_gating_helps >= 4 and elapsed < 600
    _verdict("6 negative transfer", ok,
             f"joint<solo {wins_joint_hurts}/5, gated>joint {wins_gating_helps}/5, "
             f"{elapsed:.0f}s; " + "; ".join(rows))


def test_criterion_7_smoothness(seed_suite):
    uniform = an_matrix([np.full(8, 0.125)])
    onehot_row = np.zeros(8)
    onehot_row[0] = 1.0
    onehot = an_matrix([onehot_row])
    u = analysis.smoothness(uniform)
    o = analysis.smoothness(onehot)
    oracles_ok = (
        u.variance == 0.0 and abs(u.entropy - LN8) <= 1e-12 and u.max_min == 0.0
        and o.entropy == 0.0 and o.max_min == 1.0
    )

    wins = 0
    rows = []
    for entry in seed_suite["suites"]:
        samples = entry["dataset"].train
        ent_tea = analysis.mean_gate_entropy(entry["tea"].model, samples)
        ent_task = analysis.mean_gate_entropy(entry["taskonly"].model, samples)
        ent_era = analysis.mean_gate_entropy(entry["eraonly"].model, samples)
        wins += ent_tea < ent_task and ent_tea < ent_era
        rows.append(f"dual {ent_tea:.3f} vs task-only {ent_task:.3f} / era-only {ent_era:.3f}")
    ok = oracles_ok and wins >= 4
    _verdict("7 smoothness", ok,
             f"oracles {'exact' if oracles_ok else 'WRONG'}, dual-gate entropy "
             f"lowest {wins}/5; " + "; ".join(rows))


def an_matrix(rows):
    w = np.asarray(rows, dtype=np.float64)
    return analysis.UtilizationMatrix(axis="task", group_ids=list(range(len(w))), weights=w)


def test_criterion_8_determinism_and_persistence(tmp_path, default_run):
    config = {
        "seed": 3,
        "data": {"n_tasks": 2, "d_in": 6, "n_train": 16, "n_dev": 8, "n_test": 8,
                 "classes_per_task": [2, 3]},
        "model": {"d_model": 8, "d_t": 4, "d_e": 4, "d_h": 6},
        "train": {"epochs": 2, "rank": 4, "n_experts": 2, "batch_size": 8},
    }
    cfg_path = tmp_path / "run.json"
    cfg_path.write_text(json.dumps(config))
    a, b = tmp_path / "a", tmp_path / "b"
    code_a = cli.main(["train", "--config", str(cfg_path), "--out", str(a)])
    code_b = cli.main(["train", "--config", str(cfg_path), "--out", str(b)])
    csv_ok = (
        code_a == 0 and code_b == 0
        and (a / "metrics.csv").read_bytes() == (b / "metrics.csv").read_bytes()
        and (a / "train_loss.csv").read_bytes() == (b / "train_loss.csv").read_bytes()
    )

    ck_path = tmp_path / "full.bin"
    save_checkpoint(ck_path, default_run["result"].model, RunConfig())
    loaded = load_checkpoint(ck_path)
    named = bb.named_tensors(default_run["result"].model)
    roundtrip_ok = set(loaded.tensors) == set(named) and all(
        loaded.tensors[n].tobytes() == named[n].data.tobytes() for n in named
    )

    ok = csv_ok and roundtrip_ok
    _verdict("8 determinism and persistence", ok,
             f"metric CSVs byte-identical {bool(csv_ok)}, checkpoint round trip "
             f"bit-exact over {len(named)} tensors {bool(roundtrip_ok)}")


def test_criterion_9_ablation_completeness(tmp_path):
    config = {
        "seed": 0,
        "data": {"n_train": 20, "n_dev": 8, "n_test": 8},
        "train": {"epochs": 1},
    }
    cfg_path = tmp_path / "run.json"
    cfg_path.write_text(json.dumps(config))
    out = tmp_path / "grid"
    code = cli.main(["ablate", "--config", str(cfg_path), "--out", str(out)])
    lines = (out / "ablation.csv").read_text().splitlines()
    variants = {tuple(line.split(",")[:2]) for line in lines[1:]}
    expected = {
        ("no-moe", "n/a"),
        ("era-only", "n/a"),
        ("task-only", "coarse"), ("task-only", "fine"),
        ("separate", "coarse"), ("separate", "fine"),
        ("concat", "coarse"), ("concat", "fine"),
    }
    cells_per_variant = {v: sum(1 for line in lines[1:] if tuple(line.split(",")[:2]) == v)
                         for v in variants}
    ok = (
        code == 0
        and lines[0] == "variant,granularity,cell,accuracy,loss"
        and variants == expected
        and all(c == 8 for c in cells_per_variant.values())
    )
    _verdict("9 ablation completeness", ok,
             f"{len(variants)} variant rows, 8 cells each: "
             f"{sorted(v[0] + '/' + v[1] for v in variants)}")
