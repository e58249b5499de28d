"""In-process simulation of the predictor/explainer xApp pair.

The predictor stage runs the model on each window, stores the window in
a bounded shared data layer, and publishes an inference event on a
message bus. The explainer stage subscribes, fetches the window by id,
produces an attribution under a latency budget, and logs one explanation
event per cycle. Stages can run on two threads (bus-mediated, with
bounded backpressure) or strictly sequentially for bit-reproducible
output; explanation content depends only on (seed, cycle), never on
arrival timing.
"""

from __future__ import annotations

import json
import threading
import time
from collections import OrderedDict, deque
from dataclasses import dataclass, field

from .errors import ConfigurationError, XaiRanError
from .explain import Attribution, BaselineSpec, Method, explain
from .fidelity import LocalR2, NeighborhoodConfig, local_r2
from .latency import Budget, CycleTimings, LatencyRecord, measure_cycle
from .model import ModelParams, Normalizer, forward
from .trace import KpmSample, window_iter


class IntegrityError(XaiRanError):
    """A consumed event references a window the data layer no longer has."""


@dataclass(frozen=True)
class InferenceEvent:
    cycle: int
    window_id: int
    prediction: float
    publish_ts: float      # perf_counter seconds


@dataclass
class ExplanationEvent:
    cycle: int
    prediction: float
    attribution: Attribution | None
    latency: LatencyRecord
    fidelity: LocalR2 | None = None

    def to_json(self, canonical: bool = False) -> str:
        obj = {
            "cycle": self.cycle,
            "prediction": self.prediction,
            "method": self.latency.method.value,
            "e": ([float(v) for v in self.attribution.e.ravel()]
                  if self.attribution is not None else None),
        }
        if self.fidelity is not None:
            obj["r2"] = self.fidelity.reported
        if not canonical:
            obj.update({
                "t_inf": self.latency.t_inf, "t_xai": self.latency.t_xai,
                "t_comm": self.latency.t_comm, "t_total": self.latency.t_total,
                "within_budget": self.latency.within_budget,
            })
        return json.dumps(obj)


class MessageBus:
    """Minimal in-process topic bus: in-order, at-least-once delivery,
    bounded buffering with oldest-dropped accounting."""

    def __init__(self, capacity: int = 1024):
        self.capacity = capacity
        self._topics: dict[str, deque] = {}
        self._lock = threading.Lock()
        self.dropped: dict[str, int] = {}

    def register(self, topic: str) -> None:
        with self._lock:
            self._topics.setdefault(topic, deque())
            self.dropped.setdefault(topic, 0)

    def _queue(self, topic: str) -> deque:
        if topic not in self._topics:
            raise ConfigurationError(f"unknown topic {topic!r}")
        return self._topics[topic]

    def publish(self, topic: str, message) -> None:
        with self._lock:
            q = self._queue(topic)
            if len(q) >= self.capacity:
                q.popleft()
                self.dropped[topic] += 1
            q.append((time.perf_counter(), message))

    def poll(self, topic: str):
        """Oldest pending message as (delivery latency seconds, message),
        or None."""
        with self._lock:
            q = self._queue(topic)
            if not q:
                return None
            published, message = q.popleft()
        return time.perf_counter() - published, message


class SharedDataLayer:
    """Bounded window-id -> KpmWindow map; oldest entry evicted."""

    def __init__(self, capacity: int = 256):
        self.capacity = capacity
        self._store: OrderedDict = OrderedDict()
        self._lock = threading.Lock()

    def put(self, window_id: int, window) -> None:
        with self._lock:
            self._store[window_id] = window
            while len(self._store) > self.capacity:
                self._store.popitem(last=False)

    def get(self, window_id: int):
        with self._lock:
            if window_id not in self._store:
                raise IntegrityError(f"window {window_id} not in shared data layer")
            return self._store[window_id]


@dataclass
class PipelineOptions:
    method: Method = Method.HYBRID
    k: int = 5
    m: int = 16
    seed: int = 0
    baseline: BaselineSpec = field(default_factory=BaselineSpec)
    budget: Budget = field(default_factory=Budget)
    online_fidelity: bool = False
    fidelity_cfg: NeighborhoodConfig = field(default_factory=NeighborhoodConfig)
    threaded: bool = False
    max_cycles: int | None = None
    explainer_queue: int = 64


@dataclass
class PipelineLog:
    events: list[ExplanationEvent] = field(default_factory=list)
    inferences: int = 0
    dropped: int = 0
    budget_violations: int = 0

    def summary(self) -> dict:
        return {
            "inferences": self.inferences,
            "explanations": len(self.events),
            "dropped": self.dropped,
            "budget_violations": self.budget_violations,
        }

    def write_jsonl(self, path, canonical: bool = False) -> None:
        with open(path, "w", newline="\n") as fh:
            for ev in self.events:
                fh.write(ev.to_json(canonical=canonical) + "\n")
            fh.write(json.dumps({"summary": self.summary()}) + "\n")


def _explain_cycle(params, norm, window, opts: PipelineOptions, cycle: int,
                   comm_latency: float, log: PipelineLog) -> ExplanationEvent:
    t0 = time.perf_counter()
    prediction, _cache = forward(params, window, norm)
    t1 = time.perf_counter()
    attribution = None
    if opts.method is not Method.NONE:
        attribution = explain(opts.method, params, window, norm, opts.baseline,
                              k=opts.k, m=opts.m, seed=opts.seed ^ cycle)
        t2 = time.perf_counter()
    else:
        t2 = t1
    record = measure_cycle(
        CycleTimings(t0, t1, t1, t2, t2, t2 + comm_latency),
        method=opts.method, cycle=cycle, budget=opts.budget,
        k_or_m=(attribution.meta.get("k", attribution.meta.get("m"))
                if attribution else None),
        n_forward_evals=attribution.meta.get("n_forward_evals", 0) if attribution else 0,
    )
    if not record.within_budget:
        log.budget_violations += 1
    event = ExplanationEvent(cycle=cycle, prediction=prediction,
                             attribution=attribution, latency=record)
    if opts.online_fidelity and attribution is not None:
        cfg = NeighborhoodConfig(opts.fidelity_cfg.n_samples,
                                 opts.fidelity_cfg.perturb_std,
                                 opts.fidelity_cfg.seed ^ cycle)
        event.fidelity = local_r2(params, window, norm, attribution, cfg, opts.baseline)
    return event


def run_pipeline(
    trace: list[KpmSample], params: ModelParams, norm: Normalizer,
    opts: PipelineOptions = PipelineOptions(), w: int = 5, horizon: int = 1,
) -> PipelineLog:
    """Run the two-stage loop over every prediction window of the trace."""
    windows = [win for win, _ in window_iter(trace, w=w, horizon=horizon)]
    if opts.max_cycles is not None:
        windows = windows[: opts.max_cycles]
    if not windows:
        raise ConfigurationError("trace yields no prediction windows")
    return (_run_threaded if opts.threaded else _run_sequential)(
        windows, params, norm, opts)


def _run_sequential(windows, params, norm, opts) -> PipelineLog:
    bus = MessageBus()
    bus.register("inference")
    sdl = SharedDataLayer()
    log = PipelineLog()
    for cycle, window in enumerate(windows):
        prediction, _ = forward(params, window, norm)
        sdl.put(cycle, window)
        bus.publish("inference",
                    InferenceEvent(cycle, cycle, prediction, time.perf_counter()))
        latency, event = bus.poll("inference")
        log.inferences += 1
        fetched = sdl.get(event.window_id)
        log.events.append(_explain_cycle(params, norm, fetched, opts,
                                         event.cycle, latency, log))
    return log


def _run_threaded(windows, params, norm, opts) -> PipelineLog:
    bus = MessageBus()
    bus.register("inference")
    sdl = SharedDataLayer()
    log = PipelineLog()
    pending: deque = deque()
    lock = threading.Lock()
    done = threading.Event()

    def predictor():
        for cycle, window in enumerate(windows):
            prediction, _ = forward(params, window, norm)
            sdl.put(cycle, window)
            bus.publish("inference",
                        InferenceEvent(cycle, cycle, prediction, time.perf_counter()))
            log.inferences += 1
        done.set()

    def enqueue(item):
        # Bounded explainer queue; oldest unexplained event drops on overflow.
        with lock:
            if len(pending) >= opts.explainer_queue:
                pending.popleft()
                log.dropped += 1
            pending.append(item)

    def router():
        while True:
            item = bus.poll("inference")
            if item is not None:
                enqueue(item)
                continue
            if done.is_set():
                item = bus.poll("inference")
                if item is None:
                    return
                enqueue(item)
                continue
            time.sleep(1e-5)

    results: dict[int, ExplanationEvent] = {}

    def explainer():
        while True:
            with lock:
                item = pending.popleft() if pending else None
            if item is None:
                if done.is_set() and router_thread is not None \
                        and not router_thread.is_alive() and not pending:
                    return
                time.sleep(1e-5)
                continue
            latency, event = item
            window = sdl.get(event.window_id)
            results[event.cycle] = _explain_cycle(
                params, norm, window, opts, event.cycle, latency, log)

    router_thread = threading.Thread(target=router)
    threads = [threading.Thread(target=predictor), router_thread,
               threading.Thread(target=explainer)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    log.dropped += bus.dropped.get("inference", 0)
    log.events = [results[c] for c in sorted(results)]
    return log
