import numpy as np
import pytest

from fedsim.features import FeatureSample, LabelSource, Standardizer
from fedsim.nn import build_network, make_layer_specs
from fedsim.protocol import GlobalModelState


def make_global_state(input_dim=4, n_classes=3, hidden=(6, 5), seed=0):
    weights = build_network(input_dim, n_classes, list(hidden), seed=seed)
    return GlobalModelState(
        weights=weights,
        version=0,
        standardizer=Standardizer(mean=np.zeros(input_dim), std=np.ones(input_dim)),
        layer_spec=make_layer_specs(input_dim, n_classes, list(hidden)),
    )


def labeled_sample(features, window_id, label, source=LabelSource.USER_FEEDBACK):
    return FeatureSample(
        features=np.asarray(features, dtype=np.float64),
        window_id=window_id,
        true_label=label,
        assigned_label=label,
        label_source=source,
    )


def clustered_client_data(rng, n_classes, per_class, dim, spread=0.4):
    """Labeled samples around one center per class."""
    centers = rng.normal(scale=2.0, size=(n_classes, dim))
    samples = []
    for c in range(n_classes):
        for i in range(per_class):
            samples.append((centers[c] + rng.normal(scale=spread, size=dim), c))
    return samples


@pytest.fixture
def global_state():
    return make_global_state()
