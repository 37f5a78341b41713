"""Continuous federated-learning loop simulation.

Per round, every client: (1) draws temporally stratified frames from its
streams (one uniform frame per window), (2) pseudo-labels the frames'
ground-truth objects through a confidence-thresholded label oracle standing
in for the foundation-model annotator, (3) fine-tunes the stand-in detector
(a multiclass linear classifier over 64-dim synthetic features) from the
current global weights, and returns (weights, |D_k|). The server aggregates
with sample-count-weighted FedAvg and broadcasts.

Non-IIDness comes from per-client class mixes in the clients' traffic
processes. Annotation latency is simulated (never slept) and feeds the
round-timing report only.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import AllClientsEmpty, DimensionMismatch
from .emulator import GroundTruthLabel, TrafficProcess, frame_ground_truth
from .model import FlClientSpec, FlSettings, StreamDescriptor

logger = logging.getLogger(__name__)

_FEATURE_SALT = 0x5851F42D4C957F2D


@dataclass(frozen=True)
class LabelOracle:
    """Ground-truth-plus-noise stand-in for foundation-model labeling.

    Emits the true class with probability 1 - noise_rate, else a uniformly
    chosen other class. Confidence is Beta-distributed (separate parameters
    for correct and confused labels); items below tau are dropped.
    """

    class_count: int
    tau: float = 0.30
    noise_rate: float = 0.10
    conf_correct: tuple[float, float] = (8.0, 2.0)
    conf_wrong: tuple[float, float] = (4.0, 4.0)
    latency_mean_s: float = 5.0
    latency_sigma: float = 0.35

    def __post_init__(self):
        if not (0.0 < self.tau < 1.0):
            raise ValueError(f"tau must be in (0,1), got {self.tau}")


@dataclass(frozen=True)
class LabeledItem:
    class_idx: int
    bbox: tuple[float, float, float, float]
    confidence: float
    stream_id: str
    ts_ms: int
    true_class_idx: int


@dataclass
class ClientDataset:
    client_id: str
    items: list[LabeledItem] = field(default_factory=list)
    n_frames: int = 0
    label_latency_s: float = 0.0  # simulated annotation wall time

    def __len__(self) -> int:
        return len(self.items)

    def class_histogram(self, class_count: int) -> list[int]:
        hist = [0] * class_count
        for it in self.items:
            hist[it.class_idx] += 1
        return hist


@dataclass(frozen=True)
class ModelWeights:
    values: np.ndarray  # flat float64

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise ValueError("weights must be finite")


@dataclass(frozen=True)
class ClientUpdate:
    client_id: str
    weights: ModelWeights
    n_samples: int


def sample_frames(
    duration_min: int,
    window_s: int,
    fps: int,
    rng: np.random.Generator,
    target_frames: int | None = None,
) -> list[int]:
    """One uniformly chosen frame index per non-overlapping window.

    Default windows are ``window_s`` long (only full windows count). With
    ``target_frames`` the duration is split into exactly that many equal
    windows instead, matching deployments that quote a per-stream frame
    budget rather than a window length.
    """
    total_frames = duration_min * 60 * fps
    if target_frames is not None:
        n_windows = target_frames
        bounds = [(i * total_frames) // n_windows for i in range(n_windows + 1)]
    else:
        n_windows = (duration_min * 60) // window_s
        bounds = [i * window_s * fps for i in range(n_windows + 1)]
    return [int(rng.integers(bounds[i], bounds[i + 1])) for i in range(n_windows)]


def pseudo_label(
    oracle: LabelOracle,
    objects: Sequence[GroundTruthLabel],
    rng: np.random.Generator,
) -> tuple[list[LabeledItem], float]:
    """Label one frame's objects; returns (retained items, simulated latency)."""
    items = []
    for obj in objects:
        if oracle.noise_rate > 0 and rng.random() < oracle.noise_rate:
            offset = int(rng.integers(1, oracle.class_count))
            label = (obj.class_idx + offset) % oracle.class_count
            a, b = oracle.conf_wrong
        else:
            label = obj.class_idx
            a, b = oracle.conf_correct
        conf = float(rng.beta(a, b))
        if conf < oracle.tau:
            continue
        items.append(
            LabeledItem(
                class_idx=label,
                bbox=obj.bbox,
                confidence=conf,
                stream_id=obj.stream_id,
                ts_ms=obj.ts_ms,
                true_class_idx=obj.class_idx,
            )
        )
    # lognormal with the configured mean: mu = ln(mean) - sigma^2/2
    mu = math.log(oracle.latency_mean_s) - oracle.latency_sigma**2 / 2.0
    latency = float(rng.lognormal(mu, oracle.latency_sigma))
    return items, latency


# -- stand-in detector --------------------------------------------------------


class FeatureSpace:
    """Deterministic 64-dim synthetic features from (class, bbox, item noise).

    feature = prototype[class] + bbox @ projection + N(0, noise_scale).
    All clients of a scenario share one feature space (same seed).
    """

    def __init__(self, class_count: int, dim: int = 64, seed: int = 0, noise_scale: float = 0.6):
        rng = np.random.default_rng((seed, _FEATURE_SALT))
        self.class_count = class_count
        self.dim = dim
        self.noise_scale = noise_scale
        self.prototypes = rng.normal(0.0, 1.0, size=(class_count, dim))
        self.projection = rng.normal(0.0, 0.5, size=(4, dim))

    def features(self, items: Sequence[LabeledItem], rng: np.random.Generator) -> np.ndarray:
        if not items:
            return np.zeros((0, self.dim))
        cls = np.array([it.true_class_idx for it in items])
        bbox = np.array([it.bbox for it in items])
        noise = rng.normal(0.0, self.noise_scale, size=(len(items), self.dim))
        return self.prototypes[cls] + bbox @ self.projection + noise

    def holdout(self, per_class: int, seed: int = 12345) -> tuple[np.ndarray, np.ndarray]:
        """Balanced labeled evaluation set drawn from the same recipe."""
        rng = np.random.default_rng((seed, _FEATURE_SALT, 99))
        labels = np.repeat(np.arange(self.class_count), per_class)
        bbox = rng.uniform(0.05, 0.4, size=(len(labels), 4))
        noise = rng.normal(0.0, self.noise_scale, size=(len(labels), self.dim))
        return self.prototypes[labels] + bbox @ self.projection + noise, labels

    def weight_dim(self) -> int:
        return self.class_count * self.dim + self.class_count


def init_weights(space: FeatureSpace) -> ModelWeights:
    return ModelWeights(values=np.zeros(space.weight_dim()))


def _unpack(weights: ModelWeights, space: FeatureSpace) -> tuple[np.ndarray, np.ndarray]:
    c, d = space.class_count, space.dim
    w = weights.values[: c * d].reshape(c, d)
    b = weights.values[c * d :]
    return w, b


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def train_classifier(
    global_weights: ModelWeights,
    x: np.ndarray,
    y: np.ndarray,
    space: FeatureSpace,
    epochs: int,
    lr: float,
    seed: int,
    batch_size: int = 32,
) -> ModelWeights:
    """Mini-batch cross-entropy SGD from the given starting point.

    This same function is both the client fine-tuning step and the
    centralized-training oracle: federated training with one client must
    equal calling it directly.
    """
    w, b = (a.copy() for a in _unpack(global_weights, space))
    rng = np.random.default_rng(seed)
    n = len(y)
    onehot = np.zeros((n, space.class_count))
    onehot[np.arange(n), y] = 1.0
    for _ in range(epochs):
        order = rng.permutation(n)
        for lo in range(0, n, batch_size):
            idx = order[lo : lo + batch_size]
            xb, yb = x[idx], onehot[idx]
            p = _softmax(xb @ w.T + b)
            err = (p - yb) / len(idx)
            w -= lr * err.T @ xb
            b -= lr * err.sum(axis=0)
    return ModelWeights(values=np.concatenate([w.ravel(), b.ravel()]))


def accuracy(weights: ModelWeights, x: np.ndarray, y: np.ndarray, space: FeatureSpace) -> float:
    w, b = _unpack(weights, space)
    pred = np.argmax(x @ w.T + b, axis=1)
    return float(np.mean(pred == y))


def local_train(
    global_weights: ModelWeights,
    dataset: ClientDataset,
    space: FeatureSpace,
    epochs: int,
    lr: float,
    seed: int,
) -> ClientUpdate:
    """Fine-tune on a client's pseudo-labeled data; empty clients skip."""
    if len(dataset) == 0:
        return ClientUpdate(dataset.client_id, global_weights, 0)
    rng = np.random.default_rng((seed, 0xFEA7))
    x = _client_features(dataset, space, rng)
    y = np.array([it.class_idx for it in dataset.items])
    weights = train_classifier(global_weights, x, y, space, epochs, lr, seed)
    return ClientUpdate(dataset.client_id, weights, len(dataset))


def _client_features(dataset: ClientDataset, space: FeatureSpace, rng) -> np.ndarray:
    return space.features(dataset.items, rng)


def fedavg(updates: Sequence[ClientUpdate]) -> ModelWeights:
    """Sample-count-weighted elementwise average of client weights."""
    live = [u for u in updates if u.n_samples > 0]
    if not live:
        raise AllClientsEmpty("no participating client carried samples")
    dim = live[0].weights.values.shape[0]
    for u in live:
        if u.weights.values.shape[0] != dim:
            raise DimensionMismatch(
                f"update from {u.client_id} has dim {u.weights.values.shape[0]}, expected {dim}"
            )
    total = sum(u.n_samples for u in live)
    out = np.zeros(dim)
    for u in live:
        out += (u.n_samples / total) * u.weights.values
    return ModelWeights(values=out)


# -- round loop ---------------------------------------------------------------


@dataclass
class FlClient:
    spec: FlClientSpec
    streams: list[StreamDescriptor]
    processes: dict[str, TrafficProcess]


def build_clients(settings: FlSettings, class_count: int) -> list[FlClient]:
    """Materialize client stream fleets from the scenario's fl section."""
    clients = []
    for ci, spec in enumerate(settings.clients):
        mix = spec.class_mix
        if mix is None:
            mix = tuple(1.0 / class_count for _ in range(class_count))
        streams = []
        procs = {}
        for si in range(spec.n_streams):
            sid = f"{spec.client_id}-s{si:03d}"
            desc = StreamDescriptor(
                stream_id=sid,
                junction_id=f"fl-{spec.client_id}",
                fps=settings.fps,
                trace_seed=(settings.seed * 1_000_003 + ci * 1009 + si),
            )
            streams.append(desc)
            procs[sid] = TrafficProcess(
                base_per_min=settings.lambda_per_min,
                class_mix=mix,
                dwell_frames=settings.dwell_frames,
            )
        clients.append(FlClient(spec=spec, streams=streams, processes=procs))
    return clients


def collect_client_dataset(
    client: FlClient,
    settings: FlSettings,
    oracle_base: LabelOracle,
    round_idx: int,
) -> ClientDataset:
    """Stratified-sample all of a client's streams and pseudo-label them."""
    latency_mean = dict(settings.latency_mean_s).get(
        client.spec.tier, oracle_base.latency_mean_s
    )
    oracle = LabelOracle(
        class_count=oracle_base.class_count,
        tau=settings.tau,
        noise_rate=settings.noise_rate,
        conf_correct=oracle_base.conf_correct,
        conf_wrong=oracle_base.conf_wrong,
        latency_mean_s=latency_mean,
        latency_sigma=oracle_base.latency_sigma,
    )
    ds = ClientDataset(client_id=client.spec.client_id)
    for si, desc in enumerate(client.streams):
        rng = np.random.default_rng(
            (settings.seed, round_idx, client.spec.seed, si)
        )
        frames = sample_frames(
            settings.duration_min,
            settings.window_s,
            desc.fps,
            rng,
            target_frames=settings.target_frames,
        )
        proc = client.processes[desc.stream_id]
        for k in frames:
            objects = frame_ground_truth(desc, proc, k, settings.duration_min * 60)
            items, latency = pseudo_label(oracle, objects, rng)
            ds.items.extend(items)
            ds.label_latency_s += latency
            ds.n_frames += 1
    return ds


def run_rounds(
    settings: FlSettings,
    class_count: int,
    out_jsonl: str | Path | None = None,
    schedule: Sequence[Sequence[str]] | None = None,
) -> dict:
    """Run the federated loop; returns the round log as a dict.

    ``schedule`` optionally restricts participation per round (client ids);
    default is all clients every round. Aggregation is a barrier: all
    participating updates complete before FedAvg runs.
    """
    if not settings.clients:
        raise ValueError("fl settings carry no clients")
    clients = build_clients(settings, class_count)
    space = FeatureSpace(class_count, dim=settings.feature_dim, seed=settings.seed)
    oracle = LabelOracle(
        class_count=class_count, tau=settings.tau, noise_rate=settings.noise_rate
    )
    x_eval, y_eval = space.holdout(per_class=60, seed=settings.seed)
    global_weights = init_weights(space)
    records: list[dict] = []
    round_acc: list[float] = []
    for r in range(settings.rounds):
        allowed = set(schedule[r]) if schedule is not None else None
        updates = []
        for client in clients:
            if allowed is not None and client.spec.client_id not in allowed:
                continue
            t0 = time.perf_counter()
            ds = collect_client_dataset(client, settings, oracle, r)
            update = local_train(
                global_weights,
                ds,
                space,
                settings.epochs,
                settings.lr,
                seed=(settings.seed * 31 + r * 7 + client.spec.seed),
            )
            train_time = time.perf_counter() - t0
            updates.append(update)
            records.append(
                {
                    "round": r,
                    "client_id": client.spec.client_id,
                    "tier": client.spec.tier,
                    "n_streams": client.spec.n_streams,
                    "n_frames": ds.n_frames,
                    "n_samples": update.n_samples,
                    "class_histogram": ds.class_histogram(class_count),
                    "label_latency_s": round(ds.label_latency_s, 3),
                    "train_time_s": round(train_time, 4),
                }
            )
        global_weights = fedavg(updates)
        acc = accuracy(global_weights, x_eval, y_eval, space)
        round_acc.append(acc)
        records.append(
            {
                "round": r,
                "aggregate": True,
                "participants": len([u for u in updates if u.n_samples > 0]),
                "total_samples": sum(u.n_samples for u in updates),
                "global_accuracy": round(acc, 4),
            }
        )
        logger.info("fl round %d: accuracy %.4f", r, acc)
    if out_jsonl is not None:
        path = Path(out_jsonl)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as f:
            for rec in records:
                f.write(json.dumps(rec) + "\n")
    return {
        "rounds": settings.rounds,
        "accuracy_by_round": round_acc,
        "records": records,
        "final_weights": global_weights,
    }
