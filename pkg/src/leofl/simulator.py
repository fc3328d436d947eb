"""Discrete-event simulation of ground-assisted federated learning.

Contact windows come from the orbital model; at each contact a satellite
connects, uploads its unsent result (if any), and receives a new global model
if the strategy schedules it. Training runs between contacts.
"""

from __future__ import annotations

import bisect
import csv
import enum
import heapq
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import orbital
from .config import ScenarioConfig
from .data import Dataset, PartitionMode, load_mnist, partition, standardize, synth_dataset
from .learning import ParamVector, TrainConfig, evaluate, local_train, zeros
from .strategies import FedAsync, FedAvg, FedSat, HingedStaleness, staleness_slope

log = logging.getLogger(__name__)

CSV_HEADER = ("time_s", "epoch", "strategy", "accuracy", "loss")


class EventKind(enum.IntEnum):
    # Value order is the tie-break order for simultaneous events.
    CONTACT_END = 0
    COMPUTE_DONE = 1
    CONTACT_START = 2


@dataclass(frozen=True, order=True)
class SimEvent:
    time: float
    kind: EventKind
    satellite_id: int


@dataclass
class SatelliteRuntime:
    id: int
    shell_id: int
    dataset: Dataset
    rng: np.random.Generator
    windows: list[orbital.ContactWindow]
    visible: bool = False
    exchanged_this_pass: bool = False
    pending_result: ParamVector | None = None
    sent_flag: bool = True
    # (received model, epoch tag, done time) while a local training task is running
    current_task: tuple[ParamVector, int, float] | None = None

    @property
    def busy(self) -> bool:
        return self.current_task is not None

    def next_rise_after(self, t: float) -> float | None:
        rises = [w.rise_time for w in self.windows]
        i = bisect.bisect_right(rises, t)
        return rises[i] if i < len(rises) else None

    def window_at(self, t: float) -> orbital.ContactWindow | None:
        for w in self.windows:
            if w.rise_time <= t <= w.set_time:
                return w
        return None


@dataclass
class MetricsRecord:
    wall_time: float
    global_epoch: int
    test_accuracy: float
    test_loss: float
    strategy: str


def compute_done_time(contact_end: float, next_contact_start: float | None, duration: float = 0.0) -> float:
    """When a task received during a pass ending at ``contact_end`` finishes.

    Training starts when the pass ends and takes ``duration`` seconds. A
    duration that overruns the next pass start only triggers a warning; the
    result is then delivered at the first connection after it is ready.
    """
    if next_contact_start is not None and contact_end > next_contact_start:
        raise ValueError("contact end lies after the next contact start")
    done = contact_end + duration
    if next_contact_start is not None and done > next_contact_start:
        log.warning(
            "compute duration %.0f s exceeds revisit gap %.0f s; result deferred",
            duration,
            next_contact_start - contact_end,
        )
    return done


def evaluation_hook(strategy, test: Dataset, wall_time: float) -> MetricsRecord:
    acc, loss = evaluate(strategy.global_model, test)
    return MetricsRecord(wall_time, strategy.epoch, acc, loss, strategy.name)


class Simulation:
    """Event loop binding satellites, their contact windows and one strategy."""

    def __init__(
        self,
        runtimes: list[SatelliteRuntime],
        strategy,
        test: Dataset,
        train_cfg: TrainConfig,
        horizon: float,
        compute_duration: float = 0.0,
        exchange_delay: float = 0.0,
    ):
        if horizon <= 0:
            raise ValueError("horizon must be positive")
        self.sats = {rt.id: rt for rt in runtimes}
        self.strategy = strategy
        self.test = test
        self.train_cfg = train_cfg
        self.horizon = horizon
        self.compute_duration = compute_duration
        self.exchange_delay = exchange_delay
        self.records: list[MetricsRecord] = []
        self.event_log: list[dict] = []
        self._queue: list[SimEvent] = []
        self.now = 0.0

    def _push(self, time: float, kind: EventKind, sat_id: int) -> None:
        if time <= self.horizon:
            heapq.heappush(self._queue, SimEvent(time, kind, sat_id))

    def _log(self, action: str, sat_id: int | None, **extra) -> None:
        entry = {"t": self.now, "action": action, "sat": sat_id}
        entry.update(extra)
        self.event_log.append(entry)

    def run(self) -> list[MetricsRecord]:
        for rt in self.sats.values():
            for w in rt.windows:
                self._push(w.rise_time, EventKind.CONTACT_START, rt.id)
                self._push(w.set_time, EventKind.CONTACT_END, rt.id)
        self.records.append(evaluation_hook(self.strategy, self.test, 0.0))

        while self._queue:
            ev = heapq.heappop(self._queue)
            self.now = ev.time
            rt = self.sats[ev.satellite_id]
            if ev.kind is EventKind.CONTACT_START:
                rt.visible = True
                rt.exchanged_this_pass = False
                self._log("contact_start", rt.id)
                self._try_connect(rt)
            elif ev.kind is EventKind.CONTACT_END:
                rt.visible = False
                self._log("contact_end", rt.id)
            else:
                self._finish_task(rt)
        return self.records

    def _try_connect(self, rt: SatelliteRuntime) -> None:
        if not rt.visible or rt.busy:
            return
        has_result = rt.pending_result is not None and not rt.sent_flag
        if rt.exchanged_this_pass and not has_result:
            return
        rt.exchanged_this_pass = True
        delivered = rt.pending_result if has_result else None
        if delivered is not None:
            if delivered.source_epoch > self.strategy.epoch:
                raise RuntimeError("causality violated: update tag ahead of the global epoch")
            rt.sent_flag = True

        res = self.strategy.on_connect(rt.id, delivered, self.now)
        if delivered is not None:
            self._log("upload", rt.id, tag=delivered.source_epoch, accepted=res.received)
        if res.updated:
            self._log("global_update", None, epoch=self.strategy.epoch)
            self.records.append(evaluation_hook(self.strategy, self.test, self.now))
        if res.send is not None:
            self._log("download", rt.id, epoch=res.send.source_epoch)
            self._start_task(rt, res.send)

    def _start_task(self, rt: SatelliteRuntime, model: ParamVector) -> None:
        window = rt.window_at(self.now)
        contact_end = window.set_time if window is not None else self.now
        done = compute_done_time(contact_end, rt.next_rise_after(contact_end), self.compute_duration)
        done += self.exchange_delay
        rt.current_task = (model, model.source_epoch, done)
        self._push(done, EventKind.COMPUTE_DONE, rt.id)

    def _finish_task(self, rt: SatelliteRuntime) -> None:
        model, tag, _ = rt.current_task
        rt.pending_result = local_train(model, tag, rt.dataset, self.train_cfg, rt.rng)
        rt.sent_flag = False
        rt.current_task = None
        self._log("compute_done", rt.id, tag=tag)
        # A satellite that finishes while in view connects right away.
        self._try_connect(rt)


def load_datasets(cfg: ScenarioConfig) -> tuple[Dataset, Dataset]:
    data = cfg.data
    if data.source == "mnist":
        train, test = load_mnist(data.mnist_dir)
    else:
        s = data.synthetic
        pooled = synth_dataset(s.classes, s.per_class + s.test_per_class, s.dim, s.seed, s.separation)
        labels = pooled.labels
        test_idx = np.concatenate([np.flatnonzero(labels == c)[: s.test_per_class] for c in range(s.classes)])
        mask = np.ones(len(labels), dtype=bool)
        mask[test_idx] = False
        train, test = pooled.subset(mask), pooled.subset(np.sort(test_idx))
    if data.scaling == "standardize":
        train, test = standardize(train, test)
    return train, test


def build_strategy(cfg: ScenarioConfig, initial: ParamVector, sizes: dict[int, int], runtimes=None):
    st = cfg.strategy
    if st.name == "fedavg":
        return FedAvg(initial, sizes)
    if st.name == "fedsat":
        return FedSat(initial, sizes)
    staleness = None
    if st.staleness is not None:
        t_max = cfg.max_period()
        a = staleness_slope(st.staleness.a_form, st.staleness.a_factor, st.staleness.epsilon, t_max)
        staleness = HingedStaleness(st.staleness.epsilon, a, t_max)
    next_contact = None
    if runtimes is not None:
        by_id = {rt.id: rt for rt in runtimes}
        next_contact = lambda sat_id, t: by_id[sat_id].next_rise_after(t)  # noqa: E731
    return FedAsync(initial, st.base_mix, staleness, st.schedule_threshold, next_contact)


def build_simulation(cfg: ScenarioConfig, seed: int | None = None, datasets=None) -> Simulation:
    """Assemble a ready-to-run simulation; ``datasets`` may pass a preloaded (train, test) pair."""
    seed = cfg.simulation.seed if seed is None else seed
    sats = cfg.satellites()
    if not sats:
        raise ValueError("scenario has no satellites")
    gs = cfg.ground()
    horizon = cfg.simulation.horizon_s
    train, test = datasets if datasets is not None else load_datasets(cfg)
    spec = cfg.partition_spec()
    if spec.mode is PartitionMode.CLASS_SPLIT:
        spec.validate(train.class_count)
    local = partition(train, [(s.id, s.shell_id) for s in sats], spec)

    streams = np.random.SeedSequence(seed).spawn(len(sats))
    runtimes = [
        SatelliteRuntime(
            id=s.id,
            shell_id=s.shell_id,
            dataset=local[s.id],
            rng=np.random.default_rng(stream),
            windows=orbital.contact_windows(gs, s, 0.0, horizon),
        )
        for s, stream in zip(sats, streams)
    ]
    initial = zeros(train.dim, train.class_count)
    sizes = {s.id: len(local[s.id]) for s in sats}
    strategy = build_strategy(cfg, initial, sizes, runtimes)
    return Simulation(
        runtimes,
        strategy,
        test,
        cfg.train_config(seed),
        horizon,
        cfg.simulation.compute_duration_s,
        cfg.simulation.exchange_delay_s,
    )


def run(cfg: ScenarioConfig, seed: int | None = None, datasets=None) -> list[MetricsRecord]:
    return build_simulation(cfg, seed, datasets).run()


def format_records(records: list[MetricsRecord]) -> str:
    lines = [",".join(CSV_HEADER)]
    for r in records:
        lines.append(
            f"{r.wall_time:.6g},{r.global_epoch},{r.strategy},{r.test_accuracy:.6g},{r.test_loss:.6g}"
        )
    return "\n".join(lines) + "\n"


def write_metrics_csv(records: list[MetricsRecord], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_records(records))


def read_metrics_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_event_log(events: list[dict], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for e in events:
            fh.write(json.dumps(e, sort_keys=True) + "\n")
