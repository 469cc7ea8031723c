"""Acceptance suite: one test per release criterion, each printing a
PASS/FAIL line (run with ``pytest tests/test_acceptance.py -v -s``)."""

import struct
import time
from contextlib import contextmanager

import numpy as np
import pytest

from featstack.classifier import (
    TrainConfig,
    load_model,
    save_model,
    softmax_loss_grad,
    svm_loss_grad,
    train_linear,
)
from featstack.ensemble import ScoreMatrix, mean_scores
from featstack.errors import FormatError
from featstack.joint import (
    Head,
    TransferRecipe,
    TrunkConfig,
    init_trunk,
    joint_loss_and_grads,
    run_transfer_experiment,
)
from featstack.stacking import StackSpec, accuracy_weights, enumerate_subsets
from featstack.store import (
    FeatureMatrix,
    complementary_pair_spec,
    generate_synthetic,
    read_feature_file,
    write_feature_file,
)
from featstack.sweep import GridSpec, grid_configs, run_sweep
from oracles import (
    central_difference_grad,
    max_relative_error,
    richardson_central_grad,
)

PARALLELISM = 2


@contextmanager
def criterion(name):
    try:
        yield
    except BaseException:
        print(f"[ACCEPTANCE] {name}: FAIL")
        raise
    print(f"[ACCEPTANCE] {name}: PASS")


def _kink_safe_instance(seed, n_tasks):
    """Random trunk/heads/batch whose rectifier pre-activations all sit at
    least 1e-2 from zero, so sub-1e-3 finite-difference bumps stay on one
    side of every kink (the gradient is only defined off the kink)."""
    for attempt in range(200):
        rng = np.random.default_rng((seed, attempt))
        trunk = init_trunk(
            TrunkConfig(input_dim=5, hidden_sizes=(4,), seed=seed * 1000 + attempt)
        )
        heads, xs, ys = {}, {}, {}
        for t in range(n_tasks):
            tid = f"t{t}"
            heads[tid] = Head(W=rng.normal(size=(3, 4)), b=rng.normal(size=3))
            xs[tid] = rng.normal(size=(8, 5))
            ys[tid] = rng.integers(0, 3, size=8)
        X = np.concatenate([xs[tid] for tid in sorted(xs)], axis=0)
        z = X @ trunk.weights[0].T + trunk.biases[0]
        if np.abs(z).min() >= 1e-2:
            return trunk, heads, xs, ys
    raise AssertionError("no kink-safe instance found")


def test_gradient_correctness():
    with criterion("gradient correctness (svm, softmax, trunk, joint) < 1e-6"):
        start = time.monotonic()
        for seed in range(20):
            rng = np.random.default_rng(seed)
            scores = rng.normal(size=(8, 5))
            y = rng.integers(0, 5, size=8)

            _, g = svm_loss_grad(scores, y)
            n = central_difference_grad(lambda s: svm_loss_grad(s, y)[0], scores)
            assert max_relative_error(g, n) < 1e-6

            _, g = softmax_loss_grad(scores, y)
            n = central_difference_grad(lambda s: softmax_loss_grad(s, y)[0], scores)
            assert max_relative_error(g, n) < 1e-6

            # shared trunk with one and with two softmax heads
            for n_tasks in (1, 2):
                trunk, heads, xs, ys = _kink_safe_instance(seed, n_tasks)
                reg = 0.05
                _, _, (dWs, dbs), _ = joint_loss_and_grads(trunk, heads, xs, ys, reg)
                for l in range(len(trunk.weights)):
                    def f_w(theta, l=l):
                        t2 = trunk.copy()
                        t2.weights[l] = theta
                        return joint_loss_and_grads(t2, heads, xs, ys, reg)[0]

                    assert max_relative_error(
                        dWs[l], richardson_central_grad(f_w, trunk.weights[l])
                    ) < 1e-6

                    def f_b(theta, l=l):
                        t2 = trunk.copy()
                        t2.biases[l] = theta
                        return joint_loss_and_grads(t2, heads, xs, ys, reg)[0]

                    assert max_relative_error(
                        dbs[l], richardson_central_grad(f_b, trunk.biases[l])
                    ) < 1e-6
        elapsed = time.monotonic() - start
        assert elapsed < 10.0, f"gradient checks took {elapsed:.1f}s"


def test_stacking_beats_singles():
    with criterion("stacking beats singles (5-seed medians, < 60 s)"):
        start = time.monotonic()
        grid = GridSpec()
        singles = {"netA": [], "netB": []}
        stacked = []
        for seed in range(5):
            bundle = generate_synthetic(complementary_pair_spec(), seed=seed)
            for nid in ("netA", "netB"):
                res = run_sweep(bundle, StackSpec((nid,)), grid, parallelism=PARALLELISM)
                singles[nid].append(res.winner.val_accuracy)
            res = run_sweep(
                bundle, StackSpec(("netA", "netB")), grid, parallelism=PARALLELISM
            )
            stacked.append(res.winner.val_accuracy)
        elapsed = time.monotonic() - start
        assert np.median(singles["netA"]) <= 0.60
        assert np.median(singles["netB"]) <= 0.60
        assert np.median(stacked) >= 0.90
        assert elapsed < 60.0, f"stacking comparison took {elapsed:.1f}s"


def test_hyperparameter_grid_defaults():
    with criterion("standard grid: exactly 32 configs with the published values"):
        configs = grid_configs(GridSpec(), stack_size=2)
        assert len(configs) == 32
        assert {c.lr0 for c in configs} == {1e-2, 5e-2, 1e-3, 2e-3}
        assert {c.reg for c in configs} == {0.01, 0.1, 1.0, 10.0}
        assert {c.epochs for c in configs} == {300, 400}
        assert all(c.decay == 0.98 for c in configs)


def test_subset_combinatorics():
    with criterion("subset enumeration: worked pair and 2^5-1"):
        pair = enumerate_subsets(["NIN", "VGG16"])
        assert [s.network_ids for s in pair] == [
            ("NIN",),
            ("VGG16",),
            ("NIN", "VGG16"),
        ]
        assert len(enumerate_subsets(["n1", "n2", "n3", "n4", "n5"])) == 31


def test_weighted_stack_worked_example():
    with criterion("accuracy-ratio weights: {0.3, 0.6} -> {0.5, 1.0} exactly"):
        weights = accuracy_weights({"GoogLeNet": 0.3, "VGG16": 0.6})
        assert weights == {"GoogLeNet": 0.5, "VGG16": 1.0}


def test_dropout_policy():
    with criterion("auto dropout: off for 2-network stacks, on for 3"):
        two = grid_configs(GridSpec(dropout="auto"), stack_size=2)
        three = grid_configs(GridSpec(dropout="auto"), stack_size=3)
        assert not any(c.dropout_enabled for c in two)
        assert all(c.dropout_enabled for c in three)


def test_joint_training_orderings():
    with criterion("joint-training transfer orderings (5-seed medians, < 5 min)"):
        start = time.monotonic()
        result = run_transfer_experiment(TransferRecipe(), parallelism=PARALLELISM)
        elapsed = time.monotonic() - start

        b_on_a = result.median("B", "trunkA")
        b_on_ab = result.median("B", "trunkAB")
        b_on_b = result.median("B", "trunkB")
        assert b_on_a < b_on_ab, f"expected B|A < B|AB, got {b_on_a} vs {b_on_ab}"
        assert b_on_ab >= b_on_b - 0.05, f"B|AB {b_on_ab} not within 5 points of B|B {b_on_b}"

        c_on_d = result.median("C", "trunkD")
        c_on_ab = result.median("C", "trunkAB")
        c_on_a = result.median("C", "trunkA")
        assert c_on_d > c_on_ab > c_on_a, (
            f"expected C|D > C|AB > C|A, got {c_on_d} > {c_on_ab} > {c_on_a}"
        )
        assert elapsed < 300.0, f"transfer experiment took {elapsed:.1f}s"


def test_determinism_under_parallelism():
    with criterion("bit-identical reruns at any parallelism"):
        from featstack.reporting import serialize_report

        bundle = generate_synthetic(complementary_pair_spec(samples_per_class=40), seed=7)
        grid = GridSpec(lrs=(0.05, 0.01), regs=(0.01, 0.1), epoch_choices=(15,))
        spec = StackSpec(("netA", "netB"))
        runs = [
            run_sweep(bundle, spec, grid, parallelism=p, base_seed=11) for p in (1, 2, 4)
        ]
        reference = runs[0]
        for other in runs[1:]:
            assert other.winner_index == reference.winner_index
            assert other.winner_model.W.tobytes() == reference.winner_model.W.tobytes()
            assert other.winner_model.b.tobytes() == reference.winner_model.b.tobytes()
            assert serialize_report(other, "json") == serialize_report(reference, "json")
            assert serialize_report(other, "csv") == serialize_report(reference, "csv")

        data = __import__("featstack.sweep", fromlist=["prepare_stacked"]).prepare_stacked(
            bundle, spec
        )
        cfg = TrainConfig(lr0=0.05, reg=0.1, epochs=10, seed=3, dropout_enabled=True)
        a = train_linear(data, cfg)
        b = train_linear(data, cfg)
        assert a.W.tobytes() == b.W.tobytes()
        assert a.history == b.history


def test_file_format_round_trips_and_rejections(tmp_path):
    with criterion("bit-exact file round trips; corrupt files rejected"):
        rng = np.random.default_rng(0)
        m = FeatureMatrix("netX", "dsY", rng.normal(size=(7, 5)).astype(np.float32))
        write_feature_file(m, tmp_path / "m.feat")
        back = read_feature_file(tmp_path / "m.feat")
        assert back.data.tobytes() == m.data.tobytes()
        assert (back.network_id, back.dataset_id) == ("netX", "dsY")

        (tmp_path / "bad.feat").write_bytes(b"XXXXXXXX" + b"\0" * 32)
        with pytest.raises(FormatError, match="not a feature file"):
            read_feature_file(tmp_path / "bad.feat")
        (tmp_path / "cut.feat").write_bytes((tmp_path / "m.feat").read_bytes()[:20])
        with pytest.raises(FormatError, match="corrupt"):
            read_feature_file(tmp_path / "cut.feat")

        toy_X = rng.normal(size=(12, 4))
        toy_y = rng.integers(0, 3, size=12)
        from featstack.classifier import SplitData

        model = train_linear(
            SplitData(toy_X, toy_y, toy_X, toy_y, num_classes=3),
            TrainConfig(lr0=0.05, reg=0.01, epochs=5, seed=1),
            stack_spec=StackSpec(("netX",)),
        )
        save_model(model, tmp_path / "m.bin")
        loaded = load_model(tmp_path / "m.bin")
        assert loaded.W.tobytes() == model.W.tobytes()
        assert loaded.b.tobytes() == model.b.tobytes()
        save_model(loaded, tmp_path / "m2.bin")
        assert (tmp_path / "m.bin").read_bytes() == (tmp_path / "m2.bin").read_bytes()

        (tmp_path / "bad.bin").write_bytes(b"NOTMODL" + b"\0" * 16)
        with pytest.raises(FormatError, match="not a model file"):
            load_model(tmp_path / "bad.bin")
        blob = (tmp_path / "m.bin").read_bytes()
        (tmp_path / "cut.bin").write_bytes(blob[:-3])
        (tmp_path / "cut.bin.json").write_bytes((tmp_path / "m.bin.json").read_bytes())
        with pytest.raises(FormatError, match="corrupt"):
            load_model(tmp_path / "cut.bin")


def test_ensemble_properties():
    with criterion("ensemble mean identity and scale-invariant argmax"):
        rng = np.random.default_rng(5)
        base = rng.normal(size=(9, 4))
        identical = [ScoreMatrix(base.copy(), f"s{i}") for i in range(4)]
        assert np.array_equal(mean_scores(identical).scores, base)

        members = [ScoreMatrix(rng.normal(size=(9, 4)), f"m{i}") for i in range(3)]
        reference = np.argmax(mean_scores(members).scores, axis=1)
        for scale in (0.001, 0.5, 3.0, 1e4):
            scaled = [ScoreMatrix(m.scores * scale, m.source) for m in members]
            assert np.array_equal(
                np.argmax(mean_scores(scaled).scores, axis=1), reference
            )
