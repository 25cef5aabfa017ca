"""JSON run configuration: defaults for every knob, strict validation with
field-precise errors, and full resolution so a resolved config replays the
exact same run."""

from __future__ import annotations

import json
from pathlib import Path

from .data import (
    ColumnMap,
    DatasetManifest,
    SensorStream,
    SyntheticSpec,
    load_generic_csv,
    load_wisdm,
    synth_generate,
    synthetic_activities,
)
from .errors import ConfigurationError
from .harness import (
    ABLATIONS,
    ExperimentConfig,
    FeatureSettings,
    NetworkSettings,
    SemisupSettings,
)

WISDM_DEFAULT_ACTIVITIES = ["Downstairs", "Jogging", "Sitting", "Standing", "Upstairs", "Walking"]

_TOP_KEYS = {
    "dataset", "output_dir", "partition_fractions", "shards_per_user", "repeats",
    "master_seed", "client_fraction", "rounds_per_update", "personal_layers",
    "ablation", "network", "semisup", "features", "early_stop_patience",
    "uniform_weighting",
}


def _fail(path: str, message: str):
    raise ConfigurationError(f"config.{path}: {message}" if path else f"config: {message}")


def _check_keys(section: dict, allowed: set, path: str):
    for key in section:
        if key not in allowed:
            _fail(path, f"unknown key '{key}'")


def _get(section: dict, key: str, default, path: str, types, check=None):
    value = section.get(key, default)
    allowed = types if isinstance(types, tuple) else (types,)
    where = f"{path}.{key}" if path else key
    if isinstance(value, bool) and bool not in allowed:
        _fail(where, f"expected {types}, got bool")
    if not isinstance(value, allowed):
        _fail(where, f"expected {types}, got {type(value).__name__}")
    if check is not None:
        ok, msg = check(value)
        if not ok:
            _fail(where, msg)
    return value


def _positive(v):
    return v > 0, f"must be > 0, got {v}"


def _non_negative(v):
    return v >= 0, f"must be >= 0, got {v}"


def _fraction(v):
    return 0.0 < v <= 1.0, f"must be in (0, 1], got {v}"


def _resolve_dataset(raw: dict) -> dict:
    if not isinstance(raw, dict):
        _fail("dataset", "must be an object")
    source = raw.get("source")
    if source not in ("synthetic", "wisdm_raw", "generic_csv"):
        _fail("dataset.source", f"must be synthetic, wisdm_raw, or generic_csv, got {source!r}")
    out = {"source": source}
    if source == "synthetic":
        _check_keys(raw, {"source", "n_users", "n_classes", "windows_per_user", "n_axes",
                          "samples_per_window", "seed"}, "dataset")
        out["n_users"] = _get(raw, "n_users", 20, "dataset", int, _positive)
        out["n_classes"] = _get(raw, "n_classes", 5, "dataset", int,
                                lambda v: (v >= 2, f"must be >= 2, got {v}"))
        out["windows_per_user"] = _get(raw, "windows_per_user", 60, "dataset", int, _positive)
        out["n_axes"] = _get(raw, "n_axes", 3, "dataset", int, _positive)
        out["samples_per_window"] = _get(raw, "samples_per_window", 32, "dataset", int,
                                         lambda v: (v >= 4, f"must be >= 4, got {v}"))
        out["seed"] = _get(raw, "seed", 7, "dataset", int, _non_negative)
        return out
    if source == "wisdm_raw":
        _check_keys(raw, {"source", "path", "activities", "sampling_rate_hz"}, "dataset")
        if "path" not in raw:
            _fail("dataset.path", "required for wisdm_raw")
        out["path"] = _get(raw, "path", None, "dataset", str)
        out["activities"] = _get(raw, "activities", list(WISDM_DEFAULT_ACTIVITIES), "dataset", list)
        out["sampling_rate_hz"] = float(_get(raw, "sampling_rate_hz", 20.0, "dataset", (int, float), _positive))
        return out
    _check_keys(raw, {"source", "path", "columns", "activities", "sampling_rate_hz"}, "dataset")
    if "path" not in raw:
        _fail("dataset.path", "required for generic_csv")
    if "columns" not in raw or not isinstance(raw["columns"], dict):
        _fail("dataset.columns", "required object for generic_csv")
    cols = raw["columns"]
    _check_keys(cols, {"user", "activity", "timestamp", "axes"}, "dataset.columns")
    for key in ("user", "activity", "timestamp"):
        if not isinstance(cols.get(key), str):
            _fail(f"dataset.columns.{key}", "required string")
    axes = cols.get("axes")
    if not isinstance(axes, list) or not axes or not all(isinstance(a, str) for a in axes):
        _fail("dataset.columns.axes", "required non-empty list of column names")
    if "activities" not in raw or not isinstance(raw["activities"], list) or not raw["activities"]:
        _fail("dataset.activities", "required non-empty list for generic_csv")
    out["path"] = _get(raw, "path", None, "dataset", str)
    out["columns"] = {"user": cols["user"], "activity": cols["activity"],
                      "timestamp": cols["timestamp"], "axes": list(axes)}
    out["activities"] = list(raw["activities"])
    out["sampling_rate_hz"] = float(_get(raw, "sampling_rate_hz", 20.0, "dataset", (int, float), _positive))
    return out


def resolve_config(raw: dict) -> dict:
    """Fill in every default and validate; unknown keys are rejected."""
    if not isinstance(raw, dict):
        raise ConfigurationError("config: top level must be a JSON object")
    _check_keys(raw, _TOP_KEYS, "")
    if "dataset" not in raw:
        _fail("dataset", "required")
    if "output_dir" not in raw:
        _fail("output_dir", "required")
    dataset = _resolve_dataset(raw["dataset"])

    out: dict = {"dataset": dataset}
    out["output_dir"] = _get(raw, "output_dir", None, "", str)

    fractions = raw.get("partition_fractions", {})
    if not isinstance(fractions, dict):
        _fail("partition_fractions", "must be an object")
    _check_keys(fractions, {"pretrain", "train", "test"}, "partition_fractions")
    resolved_fracs = {
        "pretrain": float(_get(fractions, "pretrain", 0.15, "partition_fractions", (int, float), _non_negative)),
        "train": float(_get(fractions, "train", 0.65, "partition_fractions", (int, float), _non_negative)),
        "test": float(_get(fractions, "test", 0.20, "partition_fractions", (int, float), _non_negative)),
    }
    if abs(sum(resolved_fracs.values()) - 1.0) > 1e-9:
        _fail("partition_fractions", f"must sum to 1, got {sum(resolved_fracs.values())}")
    out["partition_fractions"] = resolved_fracs

    out["shards_per_user"] = _get(raw, "shards_per_user", 3, "", int, _positive)
    out["repeats"] = _get(raw, "repeats", 10, "", int, _positive)
    out["master_seed"] = _get(raw, "master_seed", 0, "", int, _non_negative)
    out["client_fraction"] = float(_get(raw, "client_fraction", 0.3, "", (int, float), _fraction))
    out["rounds_per_update"] = _get(raw, "rounds_per_update", 10, "", int, _positive)
    out["personal_layers"] = _get(raw, "personal_layers", 2, "", int, _non_negative)
    ablation = _get(raw, "ablation", "full", "", str)
    if ablation not in ABLATIONS:
        _fail("ablation", f"must be one of {list(ABLATIONS)}, got '{ablation}'")
    out["ablation"] = ablation

    network = raw.get("network", {})
    if not isinstance(network, dict):
        _fail("network", "must be an object")
    _check_keys(network, {"hidden_layers", "learning_rate", "epochs", "batch_size",
                          "pretrain_epochs"}, "network")
    hidden = network.get("hidden_layers", [128, 64, 32, 16])
    if (not isinstance(hidden, list) or not hidden
            or not all(isinstance(h, int) and h > 0 for h in hidden)):
        _fail("network.hidden_layers", "must be a non-empty list of positive ints")
    out["network"] = {
        "hidden_layers": list(hidden),
        "learning_rate": float(_get(network, "learning_rate", 1e-3, "network", (int, float), _positive)),
        "epochs": _get(network, "epochs", 10, "network", int, _non_negative),
        "batch_size": _get(network, "batch_size", 30, "network", int, _positive),
        "pretrain_epochs": _get(network, "pretrain_epochs", 10, "network", int, _non_negative),
    }

    semisup = raw.get("semisup", {})
    if not isinstance(semisup, dict):
        _fail("semisup", "must be an object")
    _check_keys(semisup, {"threshold_step", "gamma", "reliability_threshold", "max_graph_size",
                          "question_choices", "max_iterations", "mass_floor"}, "semisup")
    out["semisup"] = {
        "threshold_step": float(_get(semisup, "threshold_step", 0.01, "semisup", (int, float), _positive)),
        "gamma": float(_get(semisup, "gamma", 20.0, "semisup", (int, float), _positive)),
        "reliability_threshold": float(_get(
            semisup, "reliability_threshold", 0.9, "semisup", (int, float),
            lambda v: (0.5 < v < 1.0, f"must be in (0.5, 1), got {v}"))),
        "max_graph_size": _get(semisup, "max_graph_size", 2000, "semisup", int, _positive),
        "question_choices": _get(semisup, "question_choices", 2, "semisup", int, _positive),
        "max_iterations": _get(semisup, "max_iterations", 30, "semisup", int, _positive),
        "mass_floor": float(_get(semisup, "mass_floor", 1e-12, "semisup", (int, float), _non_negative)),
    }

    feats = raw.get("features", {})
    if not isinstance(feats, dict):
        _fail("features", "must be an object")
    _check_keys(feats, {"window_len", "overlap"}, "features")
    if dataset["source"] == "synthetic":
        default_window, default_overlap = dataset["samples_per_window"], 0.0
    else:
        default_window, default_overlap = 128, 0.5
    out["features"] = {
        "window_len": _get(feats, "window_len", default_window, "features", int,
                           lambda v: (v >= 4, f"must be >= 4, got {v}")),
        "overlap": float(_get(feats, "overlap", default_overlap, "features", (int, float),
                              lambda v: (0.0 <= v < 1.0, f"must be in [0, 1), got {v}"))),
    }

    patience = raw.get("early_stop_patience")
    if patience is not None and (not isinstance(patience, int) or patience < 1):
        _fail("early_stop_patience", f"must be a positive int or null, got {patience!r}")
    out["early_stop_patience"] = patience
    out["uniform_weighting"] = _get(raw, "uniform_weighting", False, "", bool)
    return out


def load_config(path) -> dict:
    """Read and resolve a JSON config file."""
    text = Path(path).read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config: invalid JSON in {path}: {exc}") from exc
    return resolve_config(raw)


def to_experiment_config(resolved: dict, threads: int = 1) -> ExperimentConfig:
    fr = resolved["partition_fractions"]
    net = resolved["network"]
    semi = resolved["semisup"]
    feats = resolved["features"]
    return ExperimentConfig(
        fractions=(fr["pretrain"], fr["train"], fr["test"]),
        shards_per_user=resolved["shards_per_user"],
        client_fraction=resolved["client_fraction"],
        rounds_per_update=resolved["rounds_per_update"],
        personal_layers=resolved["personal_layers"],
        ablation=resolved["ablation"],
        repeats=resolved["repeats"],
        master_seed=resolved["master_seed"],
        network=NetworkSettings(
            hidden=tuple(net["hidden_layers"]),
            learning_rate=net["learning_rate"],
            epochs=net["epochs"],
            batch_size=net["batch_size"],
            pretrain_epochs=net["pretrain_epochs"],
        ),
        semisup=SemisupSettings(
            threshold_step=semi["threshold_step"],
            gamma=semi["gamma"],
            reliability_threshold=semi["reliability_threshold"],
            max_graph_size=semi["max_graph_size"],
            question_choices=semi["question_choices"],
            max_iterations=semi["max_iterations"],
            mass_floor=semi["mass_floor"],
        ),
        features=FeatureSettings(window_len=feats["window_len"], overlap=feats["overlap"]),
        early_stop_patience=resolved["early_stop_patience"],
        uniform_weighting=resolved["uniform_weighting"],
        threads=threads,
    )


def load_dataset(dataset_cfg: dict) -> tuple[list[SensorStream], list[str]]:
    """Materialize the configured dataset and its activity names."""
    source = dataset_cfg["source"]
    if source == "synthetic":
        spec = SyntheticSpec(samples_per_window=dataset_cfg["samples_per_window"],
                             seed=dataset_cfg["seed"])
        streams = synth_generate(
            dataset_cfg["n_users"], dataset_cfg["n_classes"],
            dataset_cfg["windows_per_user"], dataset_cfg["n_axes"],
            seed=dataset_cfg["seed"], spec=spec,
        )
        return streams, list(synthetic_activities(dataset_cfg["n_classes"]))
    if source == "wisdm_raw":
        manifest = DatasetManifest(
            source=source,
            activities=tuple(dataset_cfg["activities"]),
            sampling_rate_hz=dataset_cfg["sampling_rate_hz"],
        )
        return load_wisdm(dataset_cfg["path"], manifest), list(manifest.activities)
    cols = dataset_cfg["columns"]
    manifest = DatasetManifest(
        source=source,
        activities=tuple(dataset_cfg["activities"]),
        columns=ColumnMap(cols["user"], cols["activity"], cols["timestamp"], tuple(cols["axes"])),
        sampling_rate_hz=dataset_cfg["sampling_rate_hz"],
    )
    return load_generic_csv(dataset_cfg["path"], manifest), list(manifest.activities)
