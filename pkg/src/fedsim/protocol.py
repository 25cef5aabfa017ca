"""Server-side orchestration: client sampling, pairwise-masked summation, and
weighted averaging of local model weights.

The masking scheme is dropout-free: for every unordered pair of participants a
shared seeded mask tensor is added to one side and subtracted from the other,
so individual uploads look like noise while their sum equals the plaintext sum.
Uploads are pre-scaled by each client's labeled sample count, which keeps the
counts in the clear (they weight the average) without exposing raw weights.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, NumericError, ShapeError
from .nn import LayerParams, LayerSpec, ModelWeights
from .features import Standardizer
from .rng import derive_seed, rng_from
from .semisup import propagate_labels

log = logging.getLogger("fedsim.protocol")

_TRAIN_TAG = 5
_MASK_TAG = 7


@dataclass(frozen=True)
class RoundConfig:
    """How communication rounds sample clients."""

    client_fraction: float
    rounds_per_update: int
    seed: int

    def __post_init__(self):
        if not 0.0 < self.client_fraction <= 1.0:
            raise ConfigurationError(
                f"client_fraction must be in (0, 1], got {self.client_fraction}"
            )
        if self.rounds_per_update < 1:
            raise ConfigurationError(
                f"rounds_per_update must be >= 1, got {self.rounds_per_update}"
            )


@dataclass
class ClientUpdate:
    """What the server receives from one client: masked, sample-count-scaled
    layer tensors plus the count itself."""

    client_id: str
    masked_weights: list[LayerParams]
    sample_count: int


@dataclass
class GlobalModelState:
    """Server-held model with the shared feature scale and layer layout."""

    weights: ModelWeights
    version: int
    standardizer: Standardizer
    layer_spec: list[LayerSpec]


def select_clients(eligible: list, cfg: RoundConfig, round_index: int) -> list:
    """Uniform sample without replacement of ceil(fraction * n) clients.

    Deterministic in (cfg.seed, round_index); returned sorted by id.
    """
    ordered = sorted(eligible)
    if not ordered:
        return []
    k = math.ceil(cfg.client_fraction * len(ordered))
    rng = rng_from(cfg.seed, round_index)
    picked = rng.choice(len(ordered), size=k, replace=False)
    return sorted(ordered[i] for i in picked)


def derive_pair_seeds(client_ids: list, base_seed: int) -> dict[tuple, int]:
    """One shared mask seed per unordered client pair."""
    ordered = sorted(client_ids)
    seeds = {}
    for i, a in enumerate(ordered):
        for j in range(i + 1, len(ordered)):
            seeds[(a, ordered[j])] = derive_seed(base_seed, _MASK_TAG, i, j)
    return seeds


def _check_same_shapes(tensor_lists: list[list[LayerParams]]) -> None:
    first = tensor_lists[0]
    for other in tensor_lists[1:]:
        if len(other) != len(first):
            raise ShapeError("client updates disagree on layer count")
        for a, b in zip(first, other):
            if a.weights.shape != b.weights.shape or a.bias.shape != b.bias.shape:
                raise ShapeError(
                    f"client updates disagree on layer shapes: "
                    f"{a.weights.shape} vs {b.weights.shape}"
                )


def mask_updates(
    raw_updates: list[tuple[str, ModelWeights, int]],
    pairwise_seeds: dict[tuple, int],
) -> list[ClientUpdate]:
    """Scale each update by its sample count and cancel-out pairwise masks.

    For clients i < j the pair's mask is added to i's tensors and subtracted
    from j's, so the sum over all masked updates equals the sum of the scaled
    plaintext updates (exactly in real arithmetic, to ~1e-12 in floats).
    """
    if not raw_updates:
        return []
    ordered = sorted(raw_updates, key=lambda u: u[0])
    _check_same_shapes([u[1].layers for u in ordered])
    masked: dict[str, list[LayerParams]] = {}
    for client_id, weights, count in ordered:
        if count < 1:
            raise ConfigurationError(f"client {client_id}: sample_count must be >= 1")
        masked[client_id] = [
            LayerParams(count * l.weights, count * l.bias) for l in weights.layers
        ]
    ids = [u[0] for u in ordered]
    for i, a in enumerate(ids):
        for j in range(i + 1, len(ids)):
            b = ids[j]
            rng = rng_from(pairwise_seeds[(a, b)])
            for la, lb in zip(masked[a], masked[b]):
                mw = rng.standard_normal(la.weights.shape)
                mb = rng.standard_normal(la.bias.shape)
                la.weights += mw
                la.bias += mb
                lb.weights -= mw
                lb.bias -= mb
    return [
        ClientUpdate(client_id, masked[client_id], count)
        for client_id, _, count in ordered
    ]


def aggregate(updates: list[ClientUpdate], current_version: int = 0) -> ModelWeights:
    """Sample-count-weighted average of the (masked) updates.

    Summation runs in ascending client_id order so results are bit-reproducible.
    """
    if not updates:
        raise ValueError("cannot aggregate an empty update set")
    ordered = sorted(updates, key=lambda u: u.client_id)
    _check_same_shapes([u.masked_weights for u in ordered])
    total = sum(u.sample_count for u in ordered)
    acc = [
        LayerParams(np.zeros_like(l.weights), np.zeros_like(l.bias))
        for l in ordered[0].masked_weights
    ]
    for update in ordered:
        for a, l in zip(acc, update.masked_weights):
            a.weights += l.weights
            a.bias += l.bias
    layers = [LayerParams(a.weights / total, a.bias / total) for a in acc]
    result = ModelWeights(layers, version=current_version + 1)
    if not result.all_finite():
        raise NumericError("aggregated weights contain non-finite values")
    return result


@dataclass
class RoundMetrics:
    """Bookkeeping for one communication round."""

    round_index: int
    selected: list = field(default_factory=list)
    participants: list = field(default_factory=list)
    abstained: list = field(default_factory=list)
    total_samples: int = 0
    propagated: int = 0
    skipped: bool = False


def run_round(
    global_state: GlobalModelState,
    clients: dict,
    cfg: RoundConfig,
    round_index: int,
    *,
    epochs: int,
    batch_size: int,
    enable_propagation: bool = True,
    uniform_weighting: bool = False,
    threads: int = 1,
) -> tuple[GlobalModelState, RoundMetrics]:
    """One communication round.

    Selected clients receive the global weights, run label propagation over
    their stores, train both their models, and upload the plain (non
    personalized) model. Clients with no labeled training samples abstain but
    still keep the weights they received. If everyone abstains the round is
    skipped and the global state is returned unchanged.
    """
    eligible = sorted(cid for cid, node in clients.items() if node.eligible())
    selected = select_clients(eligible, cfg, round_index)
    index_of = {cid: i for i, cid in enumerate(sorted(clients))}
    metrics = RoundMetrics(round_index=round_index, selected=list(selected))

    def _client_work(cid):
        node = clients[cid]
        node.apply_global_update(global_state)
        propagated = 0
        if enable_propagation and node.storage.labeled_nodes():
            propagated = propagate_labels(node.storage)
        seed = derive_seed(cfg.seed, round_index, _TRAIN_TAG, index_of[cid])
        result = node.local_train(epochs=epochs, batch_size=batch_size, rng_seed=seed)
        return cid, propagated, result

    if threads > 1 and len(selected) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(_client_work, selected))
    else:
        outcomes = [_client_work(cid) for cid in selected]

    raw_updates = []
    for cid, propagated, result in sorted(outcomes, key=lambda o: o[0]):
        metrics.propagated += propagated
        if result is None:
            metrics.abstained.append(cid)
            continue
        weights, count = result
        if uniform_weighting:
            count = 1
        raw_updates.append((cid, weights, count))
        metrics.participants.append(cid)
        metrics.total_samples += count

    if not raw_updates:
        log.warning("round %d: every selected client abstained; keeping global v%d",
                    round_index, global_state.version)
        metrics.skipped = True
        return global_state, metrics

    pair_base = derive_seed(cfg.seed, round_index)
    seeds = derive_pair_seeds([u[0] for u in raw_updates], pair_base)
    updates = mask_updates(raw_updates, seeds)
    new_weights = aggregate(updates, current_version=global_state.version)
    new_state = GlobalModelState(
        weights=new_weights,
        version=new_weights.version,
        standardizer=global_state.standardizer,
        layer_spec=global_state.layer_spec,
    )
    return new_state, metrics
