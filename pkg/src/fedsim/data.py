"""Dataset ingestion: the WISDM raw text format, a header-driven long-format
CSV, and a seeded synthetic generator for desk-scale experiments."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DataFormatError
from .rng import rng_from

log = logging.getLogger("fedsim.data")


@dataclass
class SensorStream:
    """Time-ordered multi-axis samples for one user, labeled per sample."""

    user_id: str
    timestamps: np.ndarray  # (n,) int64, milliseconds
    values: np.ndarray  # (n, n_axes) float64
    labels: list  # (n,) activity names

    @property
    def n_axes(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class ColumnMap:
    user: str
    activity: str
    timestamp: str
    axes: tuple[str, ...]


@dataclass(frozen=True)
class DatasetManifest:
    source: str  # wisdm_raw | generic_csv | synthetic
    activities: tuple[str, ...]
    columns: ColumnMap | None = None
    sampling_rate_hz: float = 20.0

    def __post_init__(self):
        if not self.activities:
            raise ConfigurationError("activity whitelist must not be empty")
        if self.columns is not None and len(self.columns.axes) < 1:
            raise ConfigurationError("need at least one axis column")


@dataclass
class LoadReport:
    valid: int = 0
    skipped: int = 0


def _group_streams(rows: dict[str, list]) -> list[SensorStream]:
    streams = []
    for user_id in sorted(rows):
        recs = sorted(rows[user_id], key=lambda r: r[0])
        ts = np.asarray([r[0] for r in recs], dtype=np.int64)
        values = np.asarray([r[2] for r in recs], dtype=np.float64)
        labels = [r[1] for r in recs]
        streams.append(SensorStream(user_id, ts, values, labels))
    return streams


def load_wisdm(path, manifest: DatasetManifest, report: LoadReport | None = None) -> list[SensorStream]:
    """Parse the raw WISDM text format: `user,activity,timestamp,x,y,z;`.

    The public file is dirty: trailing semicolons, blank lines, concatenated
    records, missing fields. Anything unparseable is skipped and counted,
    never aborting the file.
    """
    report = report if report is not None else LoadReport()
    whitelist = set(manifest.activities)
    rows: dict[str, list] = {}
    text = Path(path).read_text()
    for line in text.splitlines():
        for chunk in line.split(";"):
            chunk = chunk.strip().rstrip(",")
            if not chunk:
                continue
            parts = [p.strip() for p in chunk.split(",")]
            if len(parts) != 6:
                report.skipped += 1
                continue
            try:
                user, activity = parts[0], parts[1]
                ts = int(float(parts[2]))
                xyz = [float(parts[3]), float(parts[4]), float(parts[5])]
            except ValueError:
                report.skipped += 1
                continue
            if not user or not activity:
                report.skipped += 1
                continue
            report.valid += 1
            if activity not in whitelist:
                continue
            rows.setdefault(user, []).append((ts, activity, xyz))
    if report.valid == 0:
        raise DataFormatError(f"{path}: no parseable records")
    if report.skipped:
        log.info("%s: skipped %d malformed records", path, report.skipped)
    return _group_streams(rows)


def load_generic_csv(path, manifest: DatasetManifest, report: LoadReport | None = None) -> list[SensorStream]:
    """Load a long-format CSV using the manifest's column mapping."""
    if manifest.columns is None:
        raise ConfigurationError("generic_csv requires a column mapping")
    report = report if report is not None else LoadReport()
    cols = manifest.columns
    whitelist = set(manifest.activities)
    rows: dict[str, list] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for name in (cols.user, cols.activity, cols.timestamp, *cols.axes):
            if name not in header:
                raise DataFormatError(f"{path}: missing mapped column '{name}'")
        for record in reader:
            try:
                user = record[cols.user].strip()
                activity = record[cols.activity].strip()
                ts = int(float(record[cols.timestamp]))
                axes = [float(record[a]) for a in cols.axes]
            except (ValueError, AttributeError, TypeError):
                report.skipped += 1
                continue
            if not user or not activity:
                report.skipped += 1
                continue
            report.valid += 1
            if activity not in whitelist:
                continue
            rows.setdefault(user, []).append((ts, activity, axes))
    if report.valid == 0:
        raise DataFormatError(f"{path}: no parseable records")
    if report.skipped:
        log.info("%s: skipped %d malformed records", path, report.skipped)
    return _group_streams(rows)


def write_generic_csv(streams: list[SensorStream], path, columns: ColumnMap | None = None) -> None:
    """Serialize streams back to the long CSV form (floats round-trip exactly)."""
    if columns is None:
        n_axes = streams[0].n_axes if streams else 0
        columns = ColumnMap("user", "activity", "timestamp", tuple(f"axis{i}" for i in range(n_axes)))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([columns.user, columns.activity, columns.timestamp, *columns.axes])
        for stream in streams:
            for ts, label, row in zip(stream.timestamps, stream.labels, stream.values):
                writer.writerow([stream.user_id, label, int(ts), *[repr(float(v)) for v in row]])


@dataclass(frozen=True)
class SyntheticSpec:
    """Knobs for the seeded generator.

    Every class has a global archetype (frequency, per-axis amplitude and
    offset of a noisy sinusoid); every user gets a personal perturbation
    (amplitude scale, offsets, noise level) so the same activity looks a
    little different on every device.
    """

    n_users: int = 20
    n_classes: int = 5
    windows_per_user: int = 60
    n_axes: int = 3
    samples_per_window: int = 32
    seed: int = 7
    cycle_spacing: float = 1.0
    amp_scale_range: tuple[float, float] = (0.7, 1.3)
    user_offset_std: float = 0.25
    noise_range: tuple[float, float] = (0.05, 0.2)
    sample_period_ms: int = 50


def _split_evenly(total: int, parts: int) -> list[int]:
    base, extra = divmod(total, parts)
    return [base + (1 if i < extra else 0) for i in range(parts)]


def synth_generate(
    n_users: int,
    n_classes: int,
    windows_per_user: int,
    n_axes: int,
    seed: int,
    spec: SyntheticSpec | None = None,
) -> list[SensorStream]:
    """Deterministic synthetic streams; labels are exact, one per sample."""
    if n_users < 1 or n_classes < 2 or windows_per_user < 1 or n_axes < 1:
        raise ConfigurationError("synthetic generator needs users>=1, classes>=2, windows>=1, axes>=1")
    spec = spec or SyntheticSpec()
    spw = spec.samples_per_window
    arch_rng = rng_from(seed, 0)
    base_amp = arch_rng.uniform(0.5, 1.5, size=(n_classes, n_axes))
    base_offset = arch_rng.uniform(-0.5, 0.5, size=(n_classes, n_axes))
    cycles = 1.0 + spec.cycle_spacing * np.arange(n_classes)  # distinct dominant frequency per class
    t = np.arange(spw)
    streams = []
    for u in range(n_users):
        user_rng = rng_from(seed, 1, u)
        amp_scale = user_rng.uniform(*spec.amp_scale_range)
        user_offset = user_rng.normal(0.0, spec.user_offset_std, size=n_axes)
        noise = user_rng.uniform(*spec.noise_range)
        counts = _split_evenly(windows_per_user, n_classes)
        class_seq = np.repeat(np.arange(n_classes), counts)
        user_rng.shuffle(class_seq)
        chunks = []
        labels: list[str] = []
        for c in class_seq:
            phases = user_rng.uniform(0.0, 2.0 * np.pi, size=n_axes)
            window = np.empty((spw, n_axes))
            for a in range(n_axes):
                window[:, a] = (
                    base_offset[c, a]
                    + user_offset[a]
                    + amp_scale * base_amp[c, a] * np.sin(2.0 * np.pi * cycles[c] * t / spw + phases[a])
                    + user_rng.normal(0.0, noise, size=spw)
                )
            chunks.append(window)
            labels.extend([f"activity{c}"] * spw)
        values = np.vstack(chunks)
        timestamps = np.arange(len(values), dtype=np.int64) * spec.sample_period_ms
        streams.append(SensorStream(f"user{u:02d}", timestamps, values, labels))
    return streams


def synthetic_activities(n_classes: int) -> tuple[str, ...]:
    return tuple(f"activity{c}" for c in range(n_classes))
