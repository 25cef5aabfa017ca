"""The two semi-automatic labeling mechanisms a device runs on its own data:

* uncertainty-driven querying with a threshold that adapts to feedback, and
* kernel label propagation over the device's store of feature samples.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .features import FeatureSample, LabelSource
from .nn import Prediction


@dataclass
class ActiveLearningState:
    """Dynamic confidence threshold for querying, plus usage counters.

    The threshold starts at 1 (query almost everything) and shrinks
    multiplicatively whenever the user confirms a prediction.
    """

    threshold: float = 1.0
    step: float = 0.01
    questions_asked: int = 0
    windows_seen: int = 0

    def __post_init__(self):
        if not 0.0 < self.threshold <= 1.0:
            raise ConfigurationError(f"threshold must be in (0, 1], got {self.threshold}")
        if self.step <= 0.0:
            raise ConfigurationError(f"step must be > 0, got {self.step}")


def should_query(prediction: Prediction, state: ActiveLearningState) -> bool:
    """True when the top probability falls strictly below the threshold."""
    state.windows_seen += 1
    return prediction.top_prob < state.threshold


def build_question(prediction: Prediction, k: int = 2) -> list[int]:
    """Top-k classes by probability, descending; ties break to the lower index."""
    probs = prediction.probabilities
    order = sorted(range(len(probs)), key=lambda i: (-probs[i], i))
    return order[:k]


def record_feedback(state: ActiveLearningState, predicted: int, truth: int) -> ActiveLearningState:
    """Shrink the threshold on a confirmed prediction, grow it (capped at 1) otherwise."""
    if truth == predicted:
        state.threshold = state.threshold * (1.0 - state.step)
    else:
        state.threshold = min(1.0, state.threshold * (1.0 + state.step))
    state.questions_asked += 1
    return state


def kernel_matrix(a: np.ndarray, b: np.ndarray, gamma: float) -> np.ndarray:
    """RBF similarity exp(-gamma * squared euclidean distance), pairwise."""
    aa = np.einsum("ij,ij->i", a, a)
    bb = np.einsum("ij,ij->i", b, b)
    d2 = np.maximum(aa[:, None] + bb[None, :] - 2.0 * (a @ b.T), 0.0)
    return np.exp(-gamma * d2)


class PropagationGraph:
    """Per-device store of labeled and unlabeled feature samples.

    Nodes keep insertion order, which doubles as their age for pruning and as
    the stable processing order for propagation sweeps.
    """

    def __init__(
        self,
        gamma: float = 20.0,
        reliability_threshold: float = 0.9,
        max_size: int = 2000,
        max_iterations: int = 30,
        mass_floor: float = 1e-12,
    ):
        if gamma <= 0.0:
            raise ConfigurationError(f"gamma must be > 0, got {gamma}")
        if not 0.5 < reliability_threshold < 1.0:
            raise ConfigurationError(
                f"reliability_threshold must be in (0.5, 1), got {reliability_threshold}"
            )
        if max_size < 1:
            raise ConfigurationError(f"max_size must be >= 1, got {max_size}")
        self.gamma = gamma
        self.reliability_threshold = reliability_threshold
        self.max_size = max_size
        self.max_iterations = max_iterations
        self.mass_floor = mass_floor
        self.nodes: list[FeatureSample] = []
        self._by_id: dict[str, FeatureSample] = {}

    def __len__(self) -> int:
        return len(self.nodes)

    def add(self, sample: FeatureSample) -> None:
        if sample.window_id in self._by_id:
            raise ConfigurationError(f"duplicate window_id in graph: {sample.window_id}")
        self.nodes.append(sample)
        self._by_id[sample.window_id] = sample

    def find(self, window_id: str) -> FeatureSample | None:
        return self._by_id.get(window_id)

    def labeled_nodes(self) -> list[FeatureSample]:
        return [s for s in self.nodes if s.is_labeled]

    def unlabeled_nodes(self) -> list[FeatureSample]:
        return [s for s in self.nodes if not s.is_labeled]


def propagate_labels(graph: PropagationGraph) -> int:
    """Assign labels to unlabeled nodes by kernel-weighted votes from labeled ones.

    Each sweep scores every unlabeled node against the labeled set as it stood
    at the start of the sweep; a node is labeled only when the winning class
    holds at least reliability_threshold of the kernel mass and that mass is
    above the numeric floor. Sweeps repeat until nothing new is assigned, so
    freshly propagated labels act as sources in later sweeps.
    """
    if not graph.labeled_nodes():
        raise ValueError("label propagation requires at least one labeled node")
    total = 0
    for _ in range(graph.max_iterations):
        labeled = graph.labeled_nodes()
        unlabeled = graph.unlabeled_nodes()
        if not unlabeled:
            break
        sources = np.stack([s.features for s in labeled])
        source_labels = np.asarray([s.assigned_label for s in labeled])
        targets = np.stack([s.features for s in unlabeled])
        k = kernel_matrix(targets, sources, graph.gamma)
        mass = k.sum(axis=1)
        classes = np.unique(source_labels)
        scores = np.stack([k[:, source_labels == c].sum(axis=1) for c in classes], axis=1)
        assigned_now = 0
        with np.errstate(invalid="ignore", divide="ignore"):
            normalized = scores / mass[:, None]
        best_idx = np.argmax(normalized, axis=1)
        best_score = normalized[np.arange(len(unlabeled)), best_idx]
        for i, sample in enumerate(unlabeled):
            if mass[i] >= graph.mass_floor and best_score[i] >= graph.reliability_threshold:
                sample.assigned_label = int(classes[best_idx[i]])
                sample.label_source = LabelSource.PROPAGATED
                assigned_now += 1
        total += assigned_now
        if assigned_now == 0:
            break
    return total


def prune_graph(graph: PropagationGraph) -> PropagationGraph:
    """Drop the oldest evictable nodes until the graph fits max_size.

    Eviction order: unlabeled first, then propagated labels; user feedback and
    pretraining nodes go only when they alone exceed the capacity.
    """
    excess = len(graph.nodes) - graph.max_size
    if excess <= 0:
        return graph
    doomed: set[str] = set()
    tiers = (
        (LabelSource.NONE,),
        (LabelSource.PROPAGATED,),
        (LabelSource.USER_FEEDBACK, LabelSource.PRETRAINING),
    )
    for tier in tiers:
        if excess <= 0:
            break
        for sample in graph.nodes:
            if excess <= 0:
                break
            if sample.label_source in tier:
                doomed.add(sample.window_id)
                excess -= 1
    graph.nodes = [s for s in graph.nodes if s.window_id not in doomed]
    graph._by_id = {s.window_id: s for s in graph.nodes}
    return graph
