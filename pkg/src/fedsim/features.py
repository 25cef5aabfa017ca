"""Sliding-window segmentation of inertial streams and per-axis statistical
features, plus the z-score standardizer shared by all simulated devices."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .errors import ConfigurationError, NumericError

N_FEATURES_PER_AXIS = 11

FEATURE_NAMES = (
    "mean",
    "variance",
    "std",
    "median",
    "mean_square",
    "kurtosis",
    "skewness",
    "zero_crossing_rate",
    "peak_count",
    "energy",
    "range",
)


class LabelSource(str, Enum):
    NONE = "none"
    USER_FEEDBACK = "user_feedback"
    PROPAGATED = "propagated"
    PRETRAINING = "pretraining"


@dataclass
class FeatureSample:
    """One segmented window reduced to a feature vector.

    true_label is the oracle's ground truth and is never read by the models;
    assigned_label is whatever label the device has obtained for training.
    """

    features: np.ndarray
    window_id: str
    true_label: object = None
    assigned_label: int | None = None
    label_source: LabelSource = LabelSource.NONE

    def __post_init__(self):
        if (self.assigned_label is None) != (self.label_source == LabelSource.NONE):
            raise ConfigurationError(
                f"assigned_label must be present exactly when label_source != none "
                f"(window {self.window_id})"
            )

    @property
    def is_labeled(self) -> bool:
        return self.label_source != LabelSource.NONE


@dataclass(frozen=True)
class Window:
    """A fixed-length slice of one user's stream with its majority label."""

    user_id: str
    window_id: str
    index: int
    values: np.ndarray  # (window_len, n_axes)
    true_label: object


def segment(stream, window_len: int, overlap_fraction: float) -> list[Window]:
    """Sliding windows of window_len samples; stride is window_len*(1-overlap).

    A trailing partial window is dropped. The window label is the majority of
    its per-sample labels; on a tie it is the label of the window's last sample.
    """
    if window_len < 4:
        raise ConfigurationError(f"window_len must be >= 4, got {window_len}")
    if not 0.0 <= overlap_fraction < 1.0:
        raise ConfigurationError(f"overlap_fraction must be in [0, 1), got {overlap_fraction}")
    values = np.asarray(stream.values, dtype=np.float64)
    labels = list(stream.labels)
    n = len(values)
    if n < window_len:
        return []
    stride = max(1, int(round(window_len * (1.0 - overlap_fraction))))
    windows = []
    for start in range(0, n - window_len + 1, stride):
        chunk_labels = labels[start : start + window_len]
        counts = Counter(chunk_labels)
        best = max(counts.values())
        tied = [lab for lab, c in counts.items() if c == best]
        label = tied[0] if len(tied) == 1 else chunk_labels[-1]
        windows.append(
            Window(
                user_id=stream.user_id,
                window_id=f"{stream.user_id}:{start}",
                index=start,
                values=values[start : start + window_len],
                true_label=label,
            )
        )
    return windows


def _axis_features(x: np.ndarray) -> list[float]:
    n = x.size
    mean = float(x.mean())
    centered = x - mean
    variance = float(centered @ centered) / n
    std = float(np.sqrt(variance))
    median = float(np.median(x))
    mean_square = float(x @ x) / n
    if variance > 0.0:
        m3 = float(np.mean(centered**3))
        m4 = float(np.mean(centered**4))
        kurtosis = m4 / variance**2 - 3.0
        skewness = m3 / variance**1.5
    else:
        kurtosis = 0.0
        skewness = 0.0
    signs = np.sign(centered)
    zcr = float(np.count_nonzero(signs[:-1] * signs[1:] < 0)) / (n - 1)
    peaks = int(np.count_nonzero((x[1:-1] > x[:-2]) & (x[1:-1] > x[2:])))
    energy = float(np.mean(centered**2))
    value_range = float(x.max() - x.min())
    return [
        mean,
        variance,
        std,
        median,
        mean_square,
        kurtosis,
        skewness,
        zcr,
        float(peaks),
        energy,
        value_range,
    ]


def extract_features(window: Window) -> FeatureSample:
    """11 statistics per axis, concatenated axis by axis in a fixed order."""
    values = np.asarray(window.values, dtype=np.float64)
    if values.size == 0:
        raise ConfigurationError("cannot extract features from an empty window")
    if not np.isfinite(values).all():
        raise NumericError(f"non-finite samples in window {window.window_id}")
    feats = []
    for axis in range(values.shape[1]):
        feats.extend(_axis_features(values[:, axis]))
    return FeatureSample(
        features=np.asarray(feats, dtype=np.float64),
        window_id=window.window_id,
        true_label=window.true_label,
    )


@dataclass(frozen=True)
class Standardizer:
    """Per-dimension z-score parameters; zero-variance dimensions map to 0."""

    mean: np.ndarray
    std: np.ndarray


def fit_standardizer(samples: list[FeatureSample]) -> Standardizer:
    if len(samples) < 2:
        raise ConfigurationError(f"standardizer needs >= 2 samples, got {len(samples)}")
    x = np.stack([s.features for s in samples])
    return Standardizer(mean=x.mean(axis=0), std=x.std(axis=0))


def apply_standardizer(std: Standardizer, sample: FeatureSample) -> FeatureSample:
    live = std.std > 0.0
    denom = np.where(live, std.std, 1.0)
    scaled = np.where(live, (sample.features - std.mean) / denom, 0.0)
    return replace(sample, features=scaled)
