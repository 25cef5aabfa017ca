"""A simulated user device.

Each node owns two copies of the activity model: the plain one whose weights
go to the server, and the personalized one used for classification, whose last
few layers survive global updates and never leave the device. The node also
owns its sample store (a propagation graph) and the adaptive query threshold.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigurationError
from .features import FeatureSample, LabelSource
from .nn import AdamState, ModelWeights, forward, train
from .semisup import (
    ActiveLearningState,
    PropagationGraph,
    build_question,
    prune_graph,
    record_feedback,
    should_query,
)


@dataclass(frozen=True)
class QuestionEvent:
    """A pending query to the user: which window, what was predicted, and the
    candidate activities shown as shortcuts."""

    window_id: str
    predicted_class: int
    candidates: list[int]


@dataclass(frozen=True)
class NodeConfig:
    personal_layers: int = 2
    question_choices: int = 2
    threshold_step: float = 0.01
    gamma: float = 20.0
    reliability_threshold: float = 0.9
    max_graph_size: int = 2000
    max_iterations: int = 30
    mass_floor: float = 1e-12
    learning_rate: float = 1e-3
    al_enabled: bool = True


class ClientNode:
    def __init__(self, client_id: str, global_state, cfg: NodeConfig = NodeConfig()):
        if cfg.personal_layers < 0:
            raise ConfigurationError(f"personal_layers must be >= 0, got {cfg.personal_layers}")
        self.client_id = client_id
        self.cfg = cfg
        self.local_model: ModelWeights = global_state.weights.copy()
        self.personalized_model: ModelWeights = global_state.weights.copy()
        self.local_adam = AdamState.for_model(self.local_model, learning_rate=cfg.learning_rate)
        self.personalized_adam = AdamState.for_model(
            self.personalized_model, learning_rate=cfg.learning_rate
        )
        self.storage = PropagationGraph(
            gamma=cfg.gamma,
            reliability_threshold=cfg.reliability_threshold,
            max_size=cfg.max_graph_size,
            max_iterations=cfg.max_iterations,
            mass_floor=cfg.mass_floor,
        )
        self.al_state = ActiveLearningState(step=cfg.threshold_step)
        self.pending_questions: dict[str, int] = {}

    def eligible(self) -> bool:
        """Availability hook; the simulator treats every device as available."""
        return True

    def seed_storage(self, samples: list[FeatureSample]) -> None:
        """Install shared pretraining samples as labeled propagation sources."""
        for sample in samples:
            self.storage.add(sample)

    def classify_window(self, sample: FeatureSample):
        """Classify with the personalized model, store the window, maybe ask.

        Returns (prediction, question-or-None). The sample lands in storage
        unlabeled; pruning keeps the store within its size cap.
        """
        prediction = forward(self.personalized_model, sample.features)
        self.storage.add(sample)
        prune_graph(self.storage)
        event = None
        if self.cfg.al_enabled and should_query(prediction, self.al_state):
            candidates = build_question(prediction, self.cfg.question_choices)
            self.pending_questions[sample.window_id] = prediction.top_class
            event = QuestionEvent(sample.window_id, prediction.top_class, candidates)
        return prediction, event

    def answer_question(self, window_id: str, truth: int) -> None:
        """Attach the user's answer to the stored window and adapt the threshold."""
        if window_id not in self.pending_questions:
            raise ValueError(f"no pending question for window {window_id}")
        predicted = self.pending_questions.pop(window_id)
        sample = self.storage.find(window_id)
        if sample is not None:
            sample.assigned_label = int(truth)
            sample.label_source = LabelSource.USER_FEEDBACK
        record_feedback(self.al_state, predicted, truth)

    def label_window(self, window_id: str, truth: int) -> None:
        """Directly label a stored window (the fully-supervised baseline path)."""
        sample = self.storage.find(window_id)
        if sample is None:
            raise ValueError(f"window {window_id} not in storage")
        sample.assigned_label = int(truth)
        sample.label_source = LabelSource.USER_FEEDBACK

    def apply_global_update(self, global_state) -> None:
        """Adopt the new global weights.

        The plain model takes them wholesale. The personalized model takes all
        but its last `personal_layers` weight-bearing layers, which stay as
        they are. Optimizer moments are reset because they refer to the old
        weights.
        """
        incoming = global_state.weights
        n_layers = incoming.n_layers
        keep_from = n_layers - min(self.cfg.personal_layers, n_layers)
        self.local_model = incoming.copy()
        for i in range(keep_from):
            self.personalized_model.layers[i] = incoming.layers[i].copy()
        self.personalized_model.version = incoming.version
        self.local_adam = AdamState.for_model(self.local_model, learning_rate=self.cfg.learning_rate)
        self.personalized_adam = AdamState.for_model(
            self.personalized_model, learning_rate=self.cfg.learning_rate
        )

    def training_samples(self) -> list[FeatureSample]:
        """Labeled samples that count for local training: user feedback and
        propagated labels. Pretraining nodes only seed propagation."""
        return [
            s
            for s in self.storage.nodes
            if s.label_source in (LabelSource.USER_FEEDBACK, LabelSource.PROPAGATED)
        ]

    def local_train(self, epochs: int, batch_size: int, rng_seed: int = 0):
        """Train both models on this device's labeled samples.

        Returns (plain model weights copy, labeled sample count), or None when
        there is nothing to train on (the node abstains from the round). The
        personalized model's weights never leave the node.
        """
        labeled = self.training_samples()
        if not labeled:
            return None
        data = [(s.features, s.assigned_label) for s in labeled]
        train(self.local_model, self.local_adam, data, epochs, batch_size, rng_seed)
        train(self.personalized_model, self.personalized_adam, data, epochs, batch_size, rng_seed)
        return self.local_model.copy(), len(labeled)
