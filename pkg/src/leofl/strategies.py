"""Ground-station update rules: synchronous FedAvg, FedAsync and FedSat.

Every strategy exposes ``on_connect(satellite_id, delivered, wall_time)``, which
mirrors one satellite connection: the optional uploaded update is incorporated
first, then the station decides whether to hand out the current global model.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np

from .learning import ParamVector

log = logging.getLogger(__name__)


class ProtocolViolation(Exception):
    """An update arrived that the current protocol state cannot accept."""


class StalenessError(ValueError):
    pass


@dataclass
class ConnectResult:
    send: ParamVector | None = None  # global model handed to the satellite, tagged with its epoch
    updated: bool = False  # whether the global model changed during this connection
    received: bool = False  # whether the uploaded update was accepted


def hinged_staleness(delta_t: float, epsilon: float, a: float, t_max: float) -> float:
    """Weight 1 up to ``(1 + epsilon) * t_max``, then ``1 / (1 + a * excess)``."""
    if delta_t < 0:
        raise ValueError("staleness time must be non-negative")
    if a <= 0:
        raise ValueError("staleness slope a must be positive")
    hinge = (1.0 + epsilon) * t_max
    if delta_t <= hinge:
        return 1.0
    return 1.0 / (1.0 + a * (delta_t - hinge))


@dataclass(frozen=True)
class HingedStaleness:
    epsilon: float
    a: float
    t_max: float

    def __call__(self, delta_t: float) -> float:
        return hinged_staleness(delta_t, self.epsilon, self.a, self.t_max)


def weights_from_sizes(sizes: Mapping[int, int], ids: Iterable[int] | None = None) -> dict[int, float]:
    """Dataset-size weights ``n_k / sum n_k`` over ``ids`` (all keys by default)."""
    ids = list(sizes if ids is None else ids)
    total = sum(sizes[k] for k in ids)
    if total <= 0:
        raise ValueError("weights need a positive total sample count")
    return {k: sizes[k] / total for k in ids}


def schedule_all(satellite_ids: Iterable[int]) -> Callable[[float], set[int]]:
    ids = frozenset(satellite_ids)

    def policy(wall_time: float) -> set[int]:
        return set(ids)

    return policy


def schedule_fedavg(satellite_ids: Iterable[int], wall_time: float = 0.0, policy=None) -> set[int]:
    """Workers for the next synchronous epoch; full participation unless ``policy`` says otherwise."""
    ids = set(satellite_ids)
    if not ids:
        raise ValueError("cannot schedule an empty constellation")
    chosen = set(policy(wall_time)) if policy else ids
    if not chosen or not chosen <= ids:
        raise ValueError("schedule must be a non-empty subset of the constellation")
    return chosen


@dataclass
class FedAvgState:
    global_model: ParamVector
    sizes: dict[int, int]
    schedule: Callable[[float], set[int]] | None = None
    epoch: int = 1
    to_send: set[int] = field(default_factory=set)
    to_receive: set[int] = field(default_factory=set)
    accumulator: np.ndarray | None = None
    weights: dict[int, float] = field(default_factory=dict)

    def __post_init__(self):
        self.global_model = self.global_model.copy(self.epoch)
        self._start_epoch(0.0)

    def _start_epoch(self, wall_time: float) -> None:
        scheduled = schedule_fedavg(self.sizes, wall_time, self.schedule)
        self.to_send = set(scheduled)
        self.to_receive = set(scheduled)
        self.weights = weights_from_sizes(self.sizes, scheduled)
        self.accumulator = np.zeros_like(self.global_model.values)


class FedAvg:
    """Synchronous ground-station FedAvg: every scheduled satellite must receive, then return."""

    name = "fedavg"

    def __init__(self, initial: ParamVector, sizes: Mapping[int, int], schedule=None):
        self.state = FedAvgState(initial, dict(sizes), schedule)

    @property
    def global_model(self) -> ParamVector:
        return self.state.global_model

    @property
    def epoch(self) -> int:
        return self.state.epoch

    def on_connect(self, satellite_id: int, delivered: ParamVector | None, wall_time: float) -> ConnectResult:
        st = self.state
        result = ConnectResult()
        if delivered is not None:
            try:
                self._receive(satellite_id, delivered)
                result.received = True
            except ProtocolViolation as exc:
                log.warning("fedavg: %s", exc)
            if result.received and not st.to_send and not st.to_receive:
                st.global_model = ParamVector(st.accumulator, st.epoch + 1)
                st.epoch += 1
                st._start_epoch(wall_time)
                result.updated = True
        if satellite_id in st.to_send:
            st.to_send.discard(satellite_id)
            result.send = st.global_model.copy(st.epoch)
        return result

    def _receive(self, satellite_id: int, delivered: ParamVector) -> None:
        st = self.state
        if satellite_id not in st.to_receive or satellite_id in st.to_send:
            raise ProtocolViolation(f"update from satellite {satellite_id} not expected in epoch {st.epoch}")
        if delivered.source_epoch != st.epoch:
            raise ProtocolViolation(
                f"stale update from satellite {satellite_id}: tag {delivered.source_epoch}, epoch {st.epoch}"
            )
        st.accumulator += st.weights[satellite_id] * delivered.values
        st.to_receive.discard(satellite_id)


def fedavg_aggregate(updates: Mapping[int, np.ndarray], sizes: Mapping[int, int]) -> np.ndarray:
    """Direct weighted average of the updates, weights proportional to dataset size."""
    w = weights_from_sizes(sizes, updates)
    return sum(w[k] * np.asarray(updates[k], dtype=float) for k in updates)


@dataclass
class FedAsyncState:
    global_model: ParamVector
    base_mix: float
    staleness: Callable[[float], float] | None = None
    schedule_threshold: float = 0.0
    epoch: int = 0
    epoch_times: dict[int, float] = field(default_factory=lambda: {0: 0.0})

    def __post_init__(self):
        if not 0.0 < self.base_mix <= 1.0:
            raise ValueError("base mixing weight must lie in (0, 1]")
        if self.schedule_threshold < 0:
            raise ValueError("schedule threshold must be >= 0")
        self.global_model = self.global_model.copy(self.epoch)

    def mixing_weight(self, tag: int, wall_time: float) -> float:
        if self.staleness is None:
            return self.base_mix
        return self.base_mix * self.staleness(wall_time - self.epoch_times[tag])


def fedasync_update(state: FedAsyncState, delivered: ParamVector, wall_time: float) -> ParamVector:
    """Mix one update into the global model and advance the epoch."""
    tag = delivered.source_epoch
    if tag > state.epoch:
        raise StalenessError(f"update tagged {tag} is newer than the current epoch {state.epoch}")
    alpha = state.mixing_weight(tag, wall_time)
    mixed = (1.0 - alpha) * state.global_model.values + alpha * delivered.values
    state.epoch += 1
    state.epoch_times[state.epoch] = wall_time
    state.global_model = ParamVector(mixed, state.epoch)
    return state.global_model


def schedule_fedasync(state: FedAsyncState, next_contact: float | None, wall_time: float) -> bool:
    """Hand out work only if the predicted mixing weight at the next pass clears the threshold.

    ``next_contact`` is the predicted start of the satellite's next pass, or
    ``None`` when none is known; the model sent now would carry the current epoch.
    """
    if state.schedule_threshold <= 0:
        return True
    if next_contact is None:
        return False
    delta = next_contact - state.epoch_times[state.epoch]
    alpha = state.base_mix * (state.staleness(delta) if state.staleness else 1.0)
    return alpha >= state.schedule_threshold


class FedAsync:
    name = "fedasync"

    def __init__(
        self,
        initial: ParamVector,
        base_mix: float,
        staleness=None,
        schedule_threshold: float = 0.0,
        next_contact: Callable[[int, float], float | None] | None = None,
    ):
        self.state = FedAsyncState(initial, base_mix, staleness, schedule_threshold)
        self.next_contact = next_contact

    @property
    def global_model(self) -> ParamVector:
        return self.state.global_model

    @property
    def epoch(self) -> int:
        return self.state.epoch

    def on_connect(self, satellite_id: int, delivered: ParamVector | None, wall_time: float) -> ConnectResult:
        result = ConnectResult()
        if delivered is not None:
            fedasync_update(self.state, delivered, wall_time)
            result.received = result.updated = True
        upcoming = self.next_contact(satellite_id, wall_time) if self.next_contact else None
        if schedule_fedasync(self.state, upcoming, wall_time):
            result.send = self.state.global_model.copy(self.state.epoch)
        return result


@dataclass
class FedSatState:
    global_model: ParamVector
    weights: dict[int, float]
    epoch: int = 0
    last_update: dict[int, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.global_model = self.global_model.copy(self.epoch)
        for k in self.weights:
            self.last_update.setdefault(k, self.global_model.values.copy())


def fedsat_update(state: FedSatState, satellite_id: int, delivered: ParamVector) -> ParamVector:
    """Swap satellite ``k``'s cached contribution for its new update."""
    if satellite_id not in state.weights:
        raise KeyError(f"unknown satellite {satellite_id}")
    previous = state.last_update[satellite_id]
    new = state.global_model.values - state.weights[satellite_id] * (previous - delivered.values)
    state.last_update[satellite_id] = delivered.values.copy()
    state.epoch += 1
    state.global_model = ParamVector(new, state.epoch)
    return state.global_model


class FedSat:
    """Unrolled FedAvg: each arriving update replaces that satellite's previous contribution."""

    name = "fedsat"

    def __init__(self, initial: ParamVector, sizes: Mapping[int, int]):
        self.state = FedSatState(initial, weights_from_sizes(sizes))

    @property
    def global_model(self) -> ParamVector:
        return self.state.global_model

    @property
    def epoch(self) -> int:
        return self.state.epoch

    def on_connect(self, satellite_id: int, delivered: ParamVector | None, wall_time: float) -> ConnectResult:
        result = ConnectResult()
        if delivered is not None:
            fedsat_update(self.state, satellite_id, delivered)
            result.received = result.updated = True
        result.send = self.state.global_model.copy(self.state.epoch)
        return result


def staleness_slope(form: str, factor: float, epsilon: float, t_max: float) -> float:
    """Slope ``a`` of the hinged staleness function built from ``factor * (1 + epsilon) * t_max``.

    ``verbatim`` uses that product (seconds) directly as the slope; ``reciprocal``
    uses its inverse so that ``a * t`` is dimensionless.
    """
    scale = factor * (1.0 + epsilon) * t_max
    if form == "verbatim":
        return scale
    if form == "reciprocal":
        return 1.0 / scale
    raise ValueError(f"unknown staleness slope form {form!r}")

