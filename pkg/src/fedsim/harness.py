"""The experiment driver.

Users are split into a pretraining group (initializes the global model and
feature scale), a training group (the simulated federated devices), and a
held-out test group (never trains, only measures generalization). Each
training user's windows are split into shards that all devices work through in
lockstep; after every shard the server runs a block of communication rounds
and then broadcasts the result so devices can re-personalize. The whole
pipeline repeats with derived seeds and averages.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .client import ClientNode, NodeConfig
from .data import SensorStream
from .errors import ConfigurationError
from .features import (
    FeatureSample,
    LabelSource,
    Standardizer,
    apply_standardizer,
    extract_features,
    fit_standardizer,
    segment,
)
from .nn import AdamState, ModelWeights, build_network, forward_batch, make_layer_specs, train
from .protocol import GlobalModelState, RoundConfig, run_round
from .rng import derive_seed, rng_from

log = logging.getLogger("fedsim.harness")

ABLATIONS = ("full", "al_only", "lp_only", "full_labels_fedavg", "no_personalization")

_PARTITION_TAG = 11
_SHARD_TAG = 13
_PRETRAIN_TAG = 3
_ROUND_TAG = 17


@dataclass(frozen=True)
class NetworkSettings:
    hidden: tuple[int, ...] = (128, 64, 32, 16)
    learning_rate: float = 1e-3
    epochs: int = 10
    batch_size: int = 30
    pretrain_epochs: int = 10


@dataclass(frozen=True)
class SemisupSettings:
    threshold_step: float = 0.01
    gamma: float = 20.0
    reliability_threshold: float = 0.9
    max_graph_size: int = 2000
    question_choices: int = 2
    max_iterations: int = 30
    mass_floor: float = 1e-12


@dataclass(frozen=True)
class FeatureSettings:
    window_len: int = 128
    overlap: float = 0.5


@dataclass(frozen=True)
class ExperimentConfig:
    fractions: tuple[float, float, float] = (0.15, 0.65, 0.20)  # pretrain, train, test
    shards_per_user: int = 3
    client_fraction: float = 0.3
    rounds_per_update: int = 10
    personal_layers: int = 2
    ablation: str = "full"
    repeats: int = 10
    master_seed: int = 0
    network: NetworkSettings = NetworkSettings()
    semisup: SemisupSettings = SemisupSettings()
    features: FeatureSettings = FeatureSettings()
    pretrain_seed_cap: int = 200
    uniform_weighting: bool = False
    early_stop_patience: int | None = None
    threads: int = 1

    def __post_init__(self):
        if any(f < 0 for f in self.fractions) or abs(sum(self.fractions) - 1.0) > 1e-9:
            raise ConfigurationError(f"fractions must be non-negative and sum to 1, got {self.fractions}")
        if self.shards_per_user < 1:
            raise ConfigurationError(f"shards_per_user must be >= 1, got {self.shards_per_user}")
        if self.ablation not in ABLATIONS:
            raise ConfigurationError(f"ablation must be one of {ABLATIONS}, got '{self.ablation}'")
        if self.repeats < 1:
            raise ConfigurationError(f"repeats must be >= 1, got {self.repeats}")
        if self.master_seed < 0:
            raise ConfigurationError("master_seed must be non-negative")


@dataclass(frozen=True)
class Shard:
    user_id: str
    shard_index: int
    samples: tuple[FeatureSample, ...]


@dataclass(frozen=True)
class MetricRow:
    repeat: int
    shard: int  # 0 is the pretrained baseline, shards are 1-based
    round: int  # 0 during classification phases
    split: str  # "Tr" | "Ts"
    metric: str
    activity: str | None
    value: float | None


CSV_HEADER = ("repeat", "shard", "round", "split", "metric", "activity", "value")


class ExperimentReport:
    """Long-format metric rows plus repeat-averaged aggregates."""

    def __init__(self, activities: list[str], config: ExperimentConfig):
        self.activities = list(activities)
        self.config = config
        self.rows: list[MetricRow] = []
        self.partitions: list[dict[str, list[str]]] = []  # one dict per repeat

    def add(self, row: MetricRow) -> None:
        self.rows.append(row)

    def values(self, *, split: str, metric: str, shard: int | None = None,
               round_: int | None = None, activity: str | None = None) -> list[float]:
        out = []
        for r in self.rows:
            if r.split != split or r.metric != metric or r.activity != activity:
                continue
            if shard is not None and r.shard != shard:
                continue
            if round_ is not None and r.round != round_:
                continue
            if r.value is not None:
                out.append(r.value)
        return out

    def mean(self, **kwargs) -> float:
        vals = self.values(**kwargs)
        if not vals:
            raise KeyError(f"no metric rows match {kwargs}")
        return float(np.mean(vals))

    def ts_baseline_mean(self) -> float:
        return self.mean(split="Ts", metric="macro_f1", shard=0, round_=0)

    def ts_final_mean(self) -> float:
        last_shard = self.config.shards_per_user
        rounds = [r.round for r in self.rows
                  if r.split == "Ts" and r.shard == last_shard and r.metric == "macro_f1"]
        if not rounds:
            raise KeyError("no test rounds recorded")
        return self.mean(split="Ts", metric="macro_f1", shard=last_shard, round_=max(rounds))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(CSV_HEADER)
            for r in self.rows:
                writer.writerow([
                    r.repeat, r.shard, r.round, r.split, r.metric,
                    r.activity if r.activity is not None else "",
                    repr(r.value) if r.value is not None else "",
                ])

    def summary(self) -> dict:
        sh = self.config.shards_per_user
        def stats(metric):
            means, stds = [], []
            for s in range(1, sh + 1):
                vals = self.values(split="Tr", metric=metric, shard=s)
                means.append(float(np.mean(vals)))
                stds.append(float(np.std(vals)))
            return {"per_shard_mean": means, "per_shard_std": stds}

        ts_curve = []
        for s in range(1, sh + 1):
            for k in range(1, self.config.rounds_per_update + 1):
                vals = self.values(split="Ts", metric="macro_f1", shard=s, round_=k)
                if vals:
                    ts_curve.append({"shard": s, "round": k, "mean": float(np.mean(vals))})
        return {
            "repeats": self.config.repeats,
            "shards_per_user": sh,
            "rounds_per_update": self.config.rounds_per_update,
            "ablation": self.config.ablation,
            "activities": self.activities,
            "tr_macro_f1": stats("macro_f1"),
            "tr_question_rate": stats("question_rate"),
            "ts_macro_f1": {
                "baseline_mean": self.ts_baseline_mean(),
                "final_mean": self.ts_final_mean(),
                "curve": ts_curve,
            },
        }


def macro_f1(predictions, truths, n_classes: int) -> float:
    """Unweighted mean of per-class F1 over the classes that actually occur.

    A class absent from both predictions and truths is excluded; a class with
    zero precision and recall contributes 0.
    """
    scores = per_class_f1(predictions, truths, n_classes)
    if not scores:
        return 0.0
    return float(np.mean(list(scores.values())))


def per_class_f1(predictions, truths, n_classes: int) -> dict[int, float]:
    preds = np.asarray(predictions)
    truth = np.asarray(truths)
    scores: dict[int, float] = {}
    for c in range(n_classes):
        in_pred = bool((preds == c).any())
        in_truth = bool((truth == c).any())
        if not in_pred and not in_truth:
            continue
        tp = int(((preds == c) & (truth == c)).sum())
        fp = int(((preds == c) & (truth != c)).sum())
        fn = int(((preds != c) & (truth == c)).sum())
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        scores[c] = f1
    return scores


def partition_users(users: list[str], fractions, seed: int):
    """Disjoint exhaustive split; sizes round(f*n) with the remainder going to
    the training group."""
    ordered = sorted(users)
    n = len(ordered)
    f_pre, f_train, f_test = fractions
    n_pre = int(math.floor(f_pre * n + 0.5))
    n_test = int(math.floor(f_test * n + 0.5))
    n_train = n - n_pre - n_test
    if n_train < 0:
        raise ConfigurationError(f"fractions {fractions} oversubscribe {n} users")
    rng = rng_from(seed) if isinstance(seed, int) else rng_from(*seed)
    shuffled = [ordered[i] for i in rng.permutation(n)]
    return (
        sorted(shuffled[:n_pre]),
        sorted(shuffled[n_pre : n_pre + n_train]),
        sorted(shuffled[n_pre + n_train :]),
    )


def make_shards(user_id: str, samples: list[FeatureSample], sh: int, seed: int) -> list[Shard]:
    """Random near-equal split of one user's windows into sh shards.

    Shard sizes differ by at most one; within a shard windows keep their
    temporal order.
    """
    rng = rng_from(seed) if isinstance(seed, int) else rng_from(*seed)
    order = rng.permutation(len(samples))
    pieces = np.array_split(order, sh)
    shards = []
    for i, piece in enumerate(pieces):
        picked = [samples[j] for j in sorted(piece)]
        shards.append(Shard(user_id=user_id, shard_index=i, samples=tuple(picked)))
    return shards


def _stratified_seed_sample(samples: list[FeatureSample], cap: int, seed: int) -> list[FeatureSample]:
    """Class-stratified subset of at most cap samples (proportional shares)."""
    if len(samples) <= cap:
        return list(samples)
    by_class: dict[int, list[FeatureSample]] = {}
    for s in samples:
        by_class.setdefault(int(s.true_label), []).append(s)
    classes = sorted(by_class)
    quota = {c: max(1, int(round(cap * len(by_class[c]) / len(samples)))) for c in classes}
    while sum(quota.values()) > cap:
        biggest = max(classes, key=lambda c: quota[c])
        quota[biggest] -= 1
    rng = rng_from(seed, 21)
    picked = []
    for c in classes:
        pool = by_class[c]
        take = min(quota[c], len(pool))
        idx = rng.choice(len(pool), size=take, replace=False)
        picked.extend(pool[i] for i in sorted(idx))
    return picked


def pretrain(
    pt_samples: list[FeatureSample],
    n_classes: int,
    network: NetworkSettings,
    seed: int,
    seed_cap: int = 200,
) -> tuple[GlobalModelState, list[FeatureSample]]:
    """Fit the shared standardizer, train the initial global model on the
    pretraining data, and pick the labeled samples every device's graph starts
    with."""
    if not pt_samples:
        raise ConfigurationError("pretraining partition is empty")
    standardizer = fit_standardizer(pt_samples)
    scaled = [apply_standardizer(standardizer, s) for s in pt_samples]
    input_dim = scaled[0].features.shape[0]
    weights = build_network(input_dim, n_classes, list(network.hidden),
                            seed=derive_seed(seed, _PRETRAIN_TAG, 0))
    adam = AdamState.for_model(weights, learning_rate=network.learning_rate)
    data = [(s.features, int(s.true_label)) for s in scaled]
    train(weights, adam, data, network.pretrain_epochs, network.batch_size,
          rng_seed=derive_seed(seed, _PRETRAIN_TAG, 1))
    chosen = _stratified_seed_sample(scaled, seed_cap, derive_seed(seed, _PRETRAIN_TAG, 2))
    seeds = [
        FeatureSample(
            features=s.features,
            window_id=f"pt:{s.window_id}",
            true_label=s.true_label,
            assigned_label=int(s.true_label),
            label_source=LabelSource.PRETRAINING,
        )
        for s in chosen
    ]
    state = GlobalModelState(
        weights=weights,
        version=0,
        standardizer=standardizer,
        layer_spec=make_layer_specs(input_dim, n_classes, list(network.hidden)),
    )
    return state, seeds


def prepare_user_samples(
    streams: list[SensorStream],
    activities: list[str],
    feats: FeatureSettings,
) -> dict[str, list[FeatureSample]]:
    """Segment and featurize every stream; window labels become class indices."""
    label_index = {name: i for i, name in enumerate(activities)}
    per_user: dict[str, list[FeatureSample]] = {}
    for stream in streams:
        samples = []
        for window in segment(stream, feats.window_len, feats.overlap):
            if window.true_label not in label_index:
                continue
            fs = extract_features(window)
            fs.true_label = label_index[window.true_label]
            samples.append(fs)
        per_user[stream.user_id] = samples
    return per_user


@dataclass
class _AblationPlan:
    al_enabled: bool
    lp_enabled: bool
    personal_layers: int
    oracle_labels_all: bool


def _plan_for(cfg: ExperimentConfig) -> _AblationPlan:
    l = cfg.personal_layers
    return {
        "full": _AblationPlan(True, True, l, False),
        "al_only": _AblationPlan(True, False, l, False),
        "lp_only": _AblationPlan(False, True, l, False),
        "full_labels_fedavg": _AblationPlan(False, False, 0, True),
        "no_personalization": _AblationPlan(True, True, 0, False),
    }[cfg.ablation]


def _evaluate(weights: ModelWeights, x: np.ndarray, y: np.ndarray, n_classes: int) -> float:
    probs = forward_batch(weights, x)
    preds = np.argmax(probs, axis=1)
    return macro_f1(preds, y, n_classes)


def run_experiment(cfg: ExperimentConfig, streams: list[SensorStream], activities: list[str]) -> ExperimentReport:
    """Run the full shard-synchronous federated simulation, `repeats` times."""
    activities = sorted(activities)
    n_classes = len(activities)
    plan = _plan_for(cfg)
    per_user = prepare_user_samples(streams, activities, cfg.features)
    for user_id in sorted(per_user):
        if len(per_user[user_id]) < cfg.shards_per_user:
            raise ConfigurationError(
                f"user {user_id} has {len(per_user[user_id])} windows, fewer than "
                f"{cfg.shards_per_user} shards"
            )
    report = ExperimentReport(activities, cfg)
    for repeat in range(cfg.repeats):
        _run_one_repeat(cfg, plan, per_user, activities, repeat, report)
    return report


def _run_one_repeat(cfg, plan, per_user, activities, repeat, report):
    n_classes = len(activities)
    exp_seed = cfg.master_seed + repeat
    users = sorted(per_user)
    pt_users, tr_users, ts_users = partition_users(
        users, cfg.fractions, seed=derive_seed(exp_seed, _PARTITION_TAG)
    )
    report.partitions.append({"pretrain": pt_users, "train": tr_users, "test": ts_users})
    if not pt_users or not tr_users:
        raise ConfigurationError(
            f"partition left a group empty (pretrain={len(pt_users)}, train={len(tr_users)}); "
            "use more users or different fractions"
        )

    pt_samples = [s for u in pt_users for s in per_user[u]]
    global_state, seed_nodes = pretrain(
        pt_samples, n_classes, cfg.network, seed=exp_seed, seed_cap=cfg.pretrain_seed_cap
    )
    standardizer = global_state.standardizer

    ts_samples = [s for u in ts_users for s in per_user[u]]
    if ts_samples:
        ts_x = np.stack([apply_standardizer(standardizer, s).features for s in ts_samples])
        ts_y = np.asarray([int(s.true_label) for s in ts_samples])
    else:
        ts_x = ts_y = None

    def ts_f1(weights) -> float | None:
        if ts_x is None:
            return None
        return _evaluate(weights, ts_x, ts_y, n_classes)

    baseline = ts_f1(global_state.weights)
    report.add(MetricRow(repeat, 0, 0, "Ts", "macro_f1", None, baseline))

    node_cfg = NodeConfig(
        personal_layers=plan.personal_layers,
        question_choices=cfg.semisup.question_choices,
        threshold_step=cfg.semisup.threshold_step,
        gamma=cfg.semisup.gamma,
        reliability_threshold=cfg.semisup.reliability_threshold,
        max_graph_size=cfg.semisup.max_graph_size,
        max_iterations=cfg.semisup.max_iterations,
        mass_floor=cfg.semisup.mass_floor,
        learning_rate=cfg.network.learning_rate,
        al_enabled=plan.al_enabled,
    )
    nodes: dict[str, ClientNode] = {}
    uidx = {u: i for i, u in enumerate(users)}
    for u in tr_users:
        node = ClientNode(u, global_state, node_cfg)
        node.seed_storage([dataclasses.replace(s) for s in seed_nodes])
        nodes[u] = node

    shards = {
        u: make_shards(u, per_user[u], cfg.shards_per_user,
                       seed=derive_seed(exp_seed, _SHARD_TAG, uidx[u]))
        for u in tr_users
    }

    for shard_i in range(cfg.shards_per_user):
        preds_all: list[int] = []
        truths_all: list[int] = []
        questions = 0
        windows = 0
        for u in tr_users:
            node = nodes[u]
            for raw in shards[u][shard_i].samples:
                sample = apply_standardizer(standardizer, raw)
                prediction, event = node.classify_window(sample)
                preds_all.append(prediction.top_class)
                truths_all.append(int(sample.true_label))
                windows += 1
                if plan.oracle_labels_all:
                    node.label_window(sample.window_id, int(sample.true_label))
                elif event is not None:
                    node.answer_question(event.window_id, int(sample.true_label))
                    questions += 1

        shard_no = shard_i + 1
        report.add(MetricRow(repeat, shard_no, 0, "Tr", "macro_f1", None,
                             macro_f1(preds_all, truths_all, n_classes)))
        report.add(MetricRow(repeat, shard_no, 0, "Tr", "question_rate", None,
                             questions / windows if windows else 0.0))
        class_scores = per_class_f1(preds_all, truths_all, n_classes)
        for c, name in enumerate(activities):
            report.add(MetricRow(repeat, shard_no, 0, "Tr", "f1", name, class_scores.get(c)))

        round_cfg = RoundConfig(
            client_fraction=cfg.client_fraction,
            rounds_per_update=cfg.rounds_per_update,
            seed=derive_seed(exp_seed, _ROUND_TAG, shard_i),
        )
        best_ts = -1.0
        stale = 0
        for k in range(cfg.rounds_per_update):
            global_state, metrics = run_round(
                global_state, nodes, round_cfg, k,
                epochs=cfg.network.epochs,
                batch_size=cfg.network.batch_size,
                enable_propagation=plan.lp_enabled,
                uniform_weighting=cfg.uniform_weighting,
                threads=cfg.threads,
            )
            score = ts_f1(global_state.weights)
            report.add(MetricRow(repeat, shard_no, k + 1, "Ts", "macro_f1", None, score))
            if cfg.early_stop_patience is not None and score is not None:
                if score > best_ts + 1e-12:
                    best_ts = score
                    stale = 0
                else:
                    stale += 1
                    if stale >= cfg.early_stop_patience:
                        log.info("repeat %d shard %d: test F1 plateaued, stopping after round %d",
                                 repeat, shard_no, k + 1)
                        break

        for u in tr_users:
            nodes[u].apply_global_update(global_state)
