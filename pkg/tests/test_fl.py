import json

import numpy as np
import pytest

from cityfabric import fl
from cityfabric.emulator import GroundTruthLabel
from cityfabric.errors import AllClientsEmpty, DimensionMismatch
from cityfabric.model import FlClientSpec, FlSettings


def gt(tid, cls, ts=0):
    return GroundTruthLabel("s0", ts, tid, cls, (0.1, 0.1, 0.2, 0.2))


def small_settings(**over):
    base = dict(
        tau=0.30,
        window_s=20,
        duration_min=5,
        target_frames=None,
        epochs=2,
        lr=0.05,
        rounds=2,
        seed=3,
        noise_rate=0.05,
        feature_dim=32,
        lambda_per_min=120.0,
        dwell_frames=8.0,
        fps=25,
        latency_mean_s={"tierA": 6.3, "tierB": 4.0},
        clients=(
            FlClientSpec("edge-a", "tierA", n_streams=2, seed=1),
            FlClientSpec("edge-b", "tierB", n_streams=3, seed=2),
        ),
    )
    base.update(over)
    return FlSettings(**base)


# -- stratified sampling -------------------------------------------------------


def test_sampling_rule_450_frames_over_150_minutes():
    rng = np.random.default_rng(0)
    frames = fl.sample_frames(150, 20, fps=25, rng=rng)
    assert len(frames) == 150 * 60 // 20 == 450


def test_sampling_single_window():
    rng = np.random.default_rng(0)
    frames = fl.sample_frames(1, 60, fps=25, rng=rng)
    assert len(frames) == 1
    assert 0 <= frames[0] < 60 * 25


def test_target_frames_override_reproduces_45():
    rng = np.random.default_rng(0)
    frames = fl.sample_frames(150, 20, fps=25, rng=rng, target_frames=45)
    assert len(frames) == 45
    # one frame inside each of 45 equal windows
    total = 150 * 60 * 25
    for i, k in enumerate(frames):
        assert (i * total) // 45 <= k < ((i + 1) * total) // 45


def test_sampling_deterministic_under_seed():
    a = fl.sample_frames(10, 20, 25, np.random.default_rng(42))
    b = fl.sample_frames(10, 20, 25, np.random.default_rng(42))
    assert a == b


# -- label oracle ---------------------------------------------------------------


def test_noiseless_high_confidence_oracle_matches_ground_truth():
    oracle = fl.LabelOracle(class_count=4, tau=0.3, noise_rate=0.0,
                            conf_correct=(5000.0, 1.0))  # confidence ~ 1
    objects = [gt(i, i % 4) for i in range(40)]
    items, _ = fl.pseudo_label(oracle, objects, np.random.default_rng(0))
    assert len(items) == 40
    assert all(it.class_idx == it.true_class_idx for it in items)
    assert all(it.confidence >= 0.3 for it in items)


def test_low_confidence_below_tau_drops_everything():
    # Beta(2, 5000) concentrates near 0 -> all below tau
    oracle = fl.LabelOracle(class_count=4, tau=0.3, noise_rate=0.0,
                            conf_correct=(2.0, 5000.0))
    objects = [gt(i, 0) for i in range(50)]
    items, _ = fl.pseudo_label(oracle, objects, np.random.default_rng(0))
    assert items == []


def test_noise_rate_flips_labels_to_other_classes():
    oracle = fl.LabelOracle(class_count=4, tau=0.01, noise_rate=1.0)
    objects = [gt(i, 1) for i in range(100)]
    items, _ = fl.pseudo_label(oracle, objects, np.random.default_rng(0))
    assert items  # some survive tau
    assert all(it.class_idx != it.true_class_idx for it in items)


def test_every_retained_confidence_at_least_tau():
    oracle = fl.LabelOracle(class_count=8, tau=0.45, noise_rate=0.2)
    objects = [gt(i, i % 8) for i in range(300)]
    items, _ = fl.pseudo_label(oracle, objects, np.random.default_rng(1))
    assert all(it.confidence >= 0.45 for it in items)
    assert len(items) < 300  # tau actually filters


def test_latency_distribution_means_match_tiers():
    means = {}
    for tier, mean in (("a", 6.3), ("b", 4.0)):
        oracle = fl.LabelOracle(class_count=2, latency_mean_s=mean)
        rng = np.random.default_rng(7)
        draws = [fl.pseudo_label(oracle, [], rng)[1] for _ in range(4000)]
        means[tier] = float(np.mean(draws))
    assert means["a"] == pytest.approx(6.3, rel=0.05)
    assert means["b"] == pytest.approx(4.0, rel=0.05)


# -- fedavg ----------------------------------------------------------------------


def u(name, vec, n):
    return fl.ClientUpdate(name, fl.ModelWeights(values=np.asarray(vec, dtype=float)), n)


def test_fedavg_identical_updates_fixed_point():
    w = [1.5, -2.0, 0.25]
    out = fl.fedavg([u("a", w, 4), u("b", w, 9)])
    assert np.array_equal(out.values, np.array(w))


def test_fedavg_weighted_mean_arithmetic():
    out = fl.fedavg([u("a", [0.0, 0.0], 1), u("b", [4.0, 4.0], 3)])
    assert np.allclose(out.values, [3.0, 3.0])


def test_fedavg_matches_brute_force_oracle():
    rng = np.random.default_rng(0)
    for _ in range(25):
        k = int(rng.integers(2, 10))
        dim = int(rng.integers(3, 30))
        ups = [
            u(f"c{i}", rng.normal(size=dim), int(rng.integers(1, 500)))
            for i in range(k)
        ]
        out = fl.fedavg(ups)
        total = sum(up.n_samples for up in ups)
        for j in range(dim):
            expect = sum(up.weights.values[j] * up.n_samples for up in ups) / total
            assert abs(out.values[j] - expect) <= 1e-12


def test_fedavg_invariant_under_sample_count_scaling():
    rng = np.random.default_rng(1)
    ups = [u(f"c{i}", rng.normal(size=8), n) for i, n in enumerate([3, 5, 9])]
    scaled = [fl.ClientUpdate(x.client_id, x.weights, x.n_samples * 17) for x in ups]
    assert np.allclose(fl.fedavg(ups).values, fl.fedavg(scaled).values, atol=1e-12)


def test_fedavg_skips_empty_and_rejects_all_empty():
    rng = np.random.default_rng(2)
    w = rng.normal(size=4)
    out = fl.fedavg([u("a", w, 5), u("b", rng.normal(size=4), 0)])
    assert np.array_equal(out.values, w)
    with pytest.raises(AllClientsEmpty):
        fl.fedavg([u("a", w, 0)])


def test_fedavg_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        fl.fedavg([u("a", [1.0, 2.0], 1), u("b", [1.0], 1)])


# -- training ----------------------------------------------------------------------


def make_dataset(space, n=200, seed=0):
    rng = np.random.default_rng(seed)
    items = [
        fl.LabeledItem(
            class_idx=int(rng.integers(0, space.class_count)),
            bbox=tuple(rng.uniform(0.05, 0.3, size=4)),
            confidence=0.9,
            stream_id="s0",
            ts_ms=i,
            true_class_idx=0,
        )
        for i in range(n)
    ]
    # true_class drives features; make it match the label for learnability
    items = [
        fl.LabeledItem(it.class_idx, it.bbox, it.confidence, it.stream_id, it.ts_ms,
                       it.class_idx)
        for it in items
    ]
    ds = fl.ClientDataset(client_id="c", items=items, n_frames=n)
    return ds


def test_single_client_federated_equals_centralized_exactly():
    space = fl.FeatureSpace(class_count=4, dim=16, seed=5)
    ds = make_dataset(space, n=150, seed=3)
    global_w = fl.init_weights(space)
    update = fl.local_train(global_w, ds, space, epochs=3, lr=0.05, seed=77)
    agg = fl.fedavg([update])
    # centralized oracle: same dataset, same seed, same function
    rng = np.random.default_rng((77, 0xFEA7))
    x = space.features(ds.items, rng)
    y = np.array([it.class_idx for it in ds.items])
    central = fl.train_classifier(global_w, x, y, space, epochs=3, lr=0.05, seed=77)
    assert np.array_equal(agg.values, central.values)
    assert update.n_samples == 150


def test_empty_dataset_skips_round():
    space = fl.FeatureSpace(class_count=3, dim=8, seed=1)
    ds = fl.ClientDataset(client_id="empty")
    update = fl.local_train(fl.init_weights(space), ds, space, 2, 0.05, seed=1)
    assert update.n_samples == 0


def test_training_improves_holdout_accuracy():
    space = fl.FeatureSpace(class_count=4, dim=16, seed=2)
    ds = make_dataset(space, n=400, seed=4)
    w0 = fl.init_weights(space)
    x_eval, y_eval = space.holdout(per_class=50)
    acc0 = fl.accuracy(w0, x_eval, y_eval, space)
    update = fl.local_train(w0, ds, space, epochs=5, lr=0.05, seed=6)
    acc1 = fl.accuracy(update.weights, x_eval, y_eval, space)
    assert acc1 > acc0 + 0.2


# -- full rounds -----------------------------------------------------------------


def test_data_volume_ratio_follows_stream_counts():
    s = small_settings(
        target_frames=9,
        clients=(
            FlClientSpec("c28", "tierA", n_streams=28, seed=1),
            FlClientSpec("c40", "tierB", n_streams=40, seed=2),
        ),
        rounds=1,
        lambda_per_min=6.0,
    )
    clients = fl.build_clients(s, class_count=4)
    oracle = fl.LabelOracle(class_count=4, tau=s.tau, noise_rate=s.noise_rate)
    ds28 = fl.collect_client_dataset(clients[0], s, oracle, round_idx=0)
    ds40 = fl.collect_client_dataset(clients[1], s, oracle, round_idx=0)
    assert ds28.n_frames == 28 * 9
    assert ds40.n_frames == 40 * 9
    assert ds40.n_frames * 28 == ds28.n_frames * 40  # exact 40/28 ratio


def test_run_rounds_produces_log_and_learns(tmp_path):
    out = tmp_path / "rounds.jsonl"
    s = small_settings(rounds=3, target_frames=12)
    report = fl.run_rounds(s, class_count=8, out_jsonl=out)
    assert len(report["accuracy_by_round"]) == 3
    # learning signal: final >= first (noise tolerated on tiny data)
    assert report["accuracy_by_round"][-1] >= report["accuracy_by_round"][0]
    lines = [json.loads(l) for l in out.read_text().splitlines()]
    per_client = [r for r in lines if "client_id" in r]
    aggregates = [r for r in lines if r.get("aggregate")]
    assert len(aggregates) == 3
    assert len(per_client) == 3 * 2
    for r in per_client:
        assert len(r["class_histogram"]) == 8
        assert r["train_time_s"] >= 0
        assert r["label_latency_s"] > 0


def test_run_rounds_schedule_restricts_participation(tmp_path):
    s = small_settings(rounds=2, target_frames=6)
    report = fl.run_rounds(
        s, class_count=4, out_jsonl=tmp_path / "r.jsonl",
        schedule=[["edge-a"], ["edge-b"]],
    )
    recs = [r for r in report["records"] if "client_id" in r]
    assert [r["client_id"] for r in recs] == ["edge-a", "edge-b"]


def test_run_rounds_requires_clients():
    with pytest.raises(ValueError):
        fl.run_rounds(small_settings(clients=()), class_count=4)


def test_non_iid_histograms_differ():
    mix_a = (0.7, 0.1, 0.1, 0.1)
    mix_b = (0.1, 0.1, 0.1, 0.7)
    s = small_settings(
        clients=(
            FlClientSpec("a", "tierA", n_streams=2, seed=1, class_mix=mix_a),
            FlClientSpec("b", "tierB", n_streams=2, seed=2, class_mix=mix_b),
        ),
        rounds=1,
        target_frames=40,
        noise_rate=0.0,
    )
    report = fl.run_rounds(s, class_count=4)
    hists = {r["client_id"]: r["class_histogram"] for r in report["records"]
             if "client_id" in r}
    ha, hb = np.array(hists["a"], dtype=float), np.array(hists["b"], dtype=float)
    assert ha[0] / ha.sum() > 0.5
    assert hb[3] / hb.sum() > 0.5
