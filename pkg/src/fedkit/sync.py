"""Master algorithms coordinating participant time advance.

Three disciplines:

* conservative: time-stepped global barrier with per-route lookahead; the
  trace is a deterministic function of (experiment, seed) and independent of
  link latency, which only ever costs wall-clock time.
* best effort: participants free-run at their own step on a virtual wall
  clock; consumers hold the latest-arrived value (zero-order hold) and mark
  samples stale past one consumer step.  Link latency leaks into results by
  design; that is the fidelity/latency trade this mode demonstrates.
* waveform relaxation: windowed Jacobi fixed-point iteration exchanging
  whole waveforms sampled on the macro grid until the L-inf change drops
  under tolerance.

A post-hoc causality checker replays the consumption log against each
route's minimum modeled latency.
"""

from __future__ import annotations

import heapq
import json
import logging
import time as _time
from concurrent.futures import ThreadPoolExecutor
from concurrent.futures import TimeoutError as FutureTimeout
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from . import model as im
from .errors import ParticipantFault, ParticipantTimeout
from .experiment import (
    CommandKind,
    DomainKind,
    Experiment,
    Route,
    StageMachine,
    SyncMode,
    WRConfig,
)
from .hub import Hub, Run, RunState, TraceStore
from .netem import LinkScheduler
from .plant import SimParticipant, build_participant

log = logging.getLogger(__name__)

NS_PER_S = 1_000_000_000


@dataclass(frozen=True)
class TimeGrant:
    run_id: str
    granted_until_ns: int
    barrier_round: int
    wall_time_ns: int = 0


@dataclass(frozen=True)
class Consumption:
    """One input consumption: the sample applied for sim time used_at."""

    consumer: str
    topic: str
    used_at_ns: int
    produced_at_ns: int
    src_site: str
    dst_site: str
    delay_steps: int
    quality: im.Quality = im.Quality.GOOD


@dataclass(frozen=True)
class CausalityViolation:
    consumer: str
    topic: str
    used_at_ns: int
    produced_at_ns: int
    min_arrival_ns: int


@dataclass(frozen=True)
class WRIteration:
    window_index: int
    iteration: int
    residual: float
    converged: bool


@dataclass
class RunResult:
    run_id: str
    mode: SyncMode
    experiment: Experiment
    store: TraceStore
    grants: list[TimeGrant] = field(default_factory=list)
    consumptions: list[Consumption] = field(default_factory=list)
    staleness_steps: list[float] = field(default_factory=list)
    wr_log: list[WRIteration] = field(default_factory=list)
    final_stage: str = ""

    def topic_series(self, topic: str) -> tuple[np.ndarray, np.ndarray]:
        rows = self.store.query(topic)
        t = np.array([r.sample.sim_time_ns for r in rows], dtype=np.int64)
        v = np.array([float(r.sample.value) for r in rows])
        return t, v

    def resolved_document(self) -> dict[str, Any]:
        doc = json.loads(json.dumps(self.experiment.raw))  # deep copy
        desc = self.experiment.description
        doc["seed"] = desc.seed
        for i, route in enumerate(desc.routes):
            if i < len(doc.get("routes", [])):
                doc["routes"][i]["delay_steps"] = route.delay_steps
        return doc

    def summary(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "run_id": self.run_id,
            "mode": self.mode.value,
            "seed": self.experiment.description.seed,
            "macro_step_ns": self.experiment.description.macro_step_ns,
            "duration_ns": self.experiment.description.duration_ns,
            "rows": len(self.store),
            "trace_sha256": self.store.content_hash(),
            "final_stage": self.final_stage,
            "experiment": self.resolved_document(),
        }
        if self.staleness_steps:
            stale = np.array(self.staleness_steps)
            out["staleness"] = {
                "count": int(stale.size),
                "median_steps": float(np.median(stale)),
                "p99_steps": float(np.percentile(stale, 99)),
            }
        if self.wr_log:
            windows = {entry.window_index for entry in self.wr_log}
            converged = {w for w in windows if any(e.converged for e in self.wr_log if e.window_index == w)}
            out["wr"] = {
                "windows": len(windows),
                "converged": len(converged),
                "max_iterations": max(e.iteration for e in self.wr_log),
            }
        return out

    def export(self, out_dir: str | Path) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        written: dict[str, Path] = {}
        trace = out / "trace.csv"
        trace.write_text(self.store.to_csv(), encoding="utf-8")
        written["trace"] = trace
        if self.grants:
            grants = out / "grants.csv"
            lines = ["barrier_round,granted_until_ns,wall_time_ns"]
            lines += [f"{g.barrier_round},{g.granted_until_ns},{g.wall_time_ns}" for g in self.grants]
            grants.write_text("\n".join(lines) + "\n", encoding="utf-8")
            written["grants"] = grants
        if self.wr_log:
            wr = out / "wr_log.csv"
            lines = ["window_index,iteration,residual,converged"]
            lines += [f"{e.window_index},{e.iteration},{e.residual!r},{str(e.converged).lower()}" for e in self.wr_log]
            wr.write_text("\n".join(lines) + "\n", encoding="utf-8")
            written["wr_log"] = wr
        summary = out / "summary.json"
        summary.write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        written["summary"] = summary
        return written


# ---------------------------------------------------------------------------
# Shared runner scaffolding
# ---------------------------------------------------------------------------

class _Federation:
    """Participants, routes, setpoints, and the stage machine for one run."""

    def __init__(self, exp: Experiment, hub: Hub | None, participants: Mapping[str, SimParticipant] | None):
        self.exp = exp
        self.desc = exp.description
        self.hub = hub if hub is not None else Hub(exp.registry, wall_clock=lambda: 0)
        seed = self.desc.seed
        if participants is None:
            participants = {
                pid: build_participant(exp.registry.participants[pid], seed) for pid in self.desc.participants
            }
        self.participants = dict(participants)
        self.sessions = {pid: self.hub.register(exp.registry.participants[pid]) for pid in self.participants}
        self.routes_to: dict[str, list[Route]] = {}
        self.routes_from: dict[tuple[str, str], list[Route]] = {}
        for route in self.desc.routes:
            self.routes_to.setdefault(route.dst.participant, []).append(route)
            self.routes_from.setdefault((route.src.participant, route.src.topic), []).append(route)
        known = {t for p in exp.registry.participants.values() for t in p.offers}
        known |= {e.name for e in exp.registry.model.entries if e.kind is im.Kind.SETPOINT}
        self.machine = StageMachine(self.desc, known_topics=known)
        # critical intra-site HIL exchange never traverses hub paths
        self.hil_critical_topics: set[str] = set()
        for route in self.desc.routes:
            src = exp.registry.participants.get(route.src.participant)
            dst = exp.registry.participants.get(route.dst.participant)
            if src is None or dst is None or src.site_id != dst.site_id:
                continue
            if DomainKind.HIL_REALTIME in (src.domain_kind, dst.domain_kind):
                self.hil_critical_topics.add(route.src.topic)
                self.hil_critical_topics.add(route.dst.topic)
        self.setpoints: dict[str, float] = {}
        self.setpoint_applied_at: dict[str, int] = {}
        self.observations: dict[str, im.SignalSample] = {}
        self.run: Run | None = None
        self.stop = False

    def site_of(self, pid: str) -> str:
        part = self.exp.registry.participants.get(pid)
        return part.site_id if part is not None else ""

    def close(self) -> None:
        for session in self.sessions.values():
            self.hub.unregister(session)

    def begin(self) -> Run:
        self.run = self.hub.start_run(self.desc.id)
        return self.run

    def apply_commands(self, commands, now_ns: int, source: str) -> None:
        for command in commands:
            if command.kind is CommandKind.STOP_EXPERIMENT:
                self.stop = True
            elif command.kind is CommandKind.SET_VALUE:
                topic = str(command.arguments["topic"])
                value = float(command.arguments["value"])
                self.set_setpoint(topic, value, now_ns, source)

    def set_setpoint(self, topic: str, value: float, now_ns: int, source: str) -> None:
        self.setpoints[topic] = value
        self.setpoint_applied_at[topic] = now_ns
        seq = int(self.setpoint_applied_at.get(f"__seq__{topic}", -1)) + 1
        self.setpoint_applied_at[f"__seq__{topic}"] = seq
        entry = self.exp.registry.model.entry(topic)
        unit = entry.unit if entry is not None else im.DIMENSIONLESS
        sample = im.SignalSample(topic, now_ns, value, unit, source=source, seq=seq)
        self.hub.record_sample(self.run, sample)
        self.observations[topic] = sample

    def drain_operator_setpoints(self, now_ns: int) -> None:
        """Apply operator set_value commands queued on the hub at this boundary."""
        pending, self.run.pending_setpoints = self.run.pending_setpoints, []
        for sample in pending:
            self.set_setpoint(sample.topic, float(sample.value), now_ns, sample.source)

    def stage_boundary(self, now_ns: int) -> None:
        self.run.sim_time_ns = now_ns
        self.drain_operator_setpoints(now_ns)
        actions = self.machine.step(self.observations, now_ns)
        self.apply_commands(actions, now_ns, f"stage:{self.machine.current}")
        if self.run.stop_requested:
            self.stop = True

    def publish(self, pid: str, topic: str, value: float, t_ns: int, seq: int,
                quality: im.Quality = im.Quality.GOOD) -> im.SignalSample | None:
        if topic in self.hil_critical_topics:
            return None  # critical SCADA loop stays on-site
        entry = self.exp.registry.model.entry(topic)
        unit = entry.unit if entry is not None else im.DIMENSIONLESS
        sample = im.SignalSample(topic, t_ns, value, unit, source=pid, seq=seq, quality=quality)
        self.hub.record_sample(self.run, sample)
        self.observations[topic] = sample
        return sample

    def zero_delay_order(self) -> list[str]:
        """Topological order over delay_steps == 0 edges (validator ensured acyclic)."""
        order = sorted(self.participants)
        edges = [(r.src.participant, r.dst.participant) for r in self.desc.routes if r.delay_steps == 0]
        if not edges:
            return order
        incoming: dict[str, int] = {pid: 0 for pid in order}
        adj: dict[str, list[str]] = {pid: [] for pid in order}
        for src, dst in edges:
            if src in adj and dst in incoming:
                adj[src].append(dst)
                incoming[dst] += 1
        ready = sorted(pid for pid in order if incoming[pid] == 0)
        result: list[str] = []
        while ready:
            pid = ready.pop(0)
            result.append(pid)
            for nxt in adj[pid]:
                incoming[nxt] -= 1
                if incoming[nxt] == 0:
                    ready.append(nxt)
                    ready.sort()
        return result if len(result) == len(order) else order


def _step_with_watchdog(executor, participant, inputs, t_ns, dt_ns, watchdog_s):
    future = executor.submit(participant.step, inputs, t_ns, dt_ns)
    try:
        return future.result(timeout=watchdog_s)
    except FutureTimeout:
        raise ParticipantTimeout(
            f"participant {participant.id} missed the {watchdog_s:.3g} s watchdog at t={t_ns} ns"
        ) from None
    except Exception as exc:
        if isinstance(exc, (ParticipantTimeout, ParticipantFault)):
            raise
        raise ParticipantFault(f"participant {participant.id}: {exc}") from exc


# ---------------------------------------------------------------------------
# Conservative lockstep barrier
# ---------------------------------------------------------------------------

def run_conservative(
    exp: Experiment,
    participants: Mapping[str, SimParticipant] | None = None,
    hub: Hub | None = None,
    watchdog_s: float = 30.0,
    pace: float = 0.0,
) -> RunResult:
    """Time-stepped global barrier with one-route-delay lookahead.

    The coordinator grants t_{k+1} only after every routed input for t_{k+1}
    is buffered; inputs for a route with delay d are the producer's outputs
    at t_{k+1-d}.  ``pace`` > 0 sleeps each round to track wall time (serve
    mode); zero runs as fast as possible.
    """
    fed = _Federation(exp, hub, participants)
    desc = fed.desc
    macro = desc.macro_step_ns
    n_rounds = desc.duration_ns // macro
    run = fed.begin()
    result = RunResult(run_id=run.run_id, mode=SyncMode.CONSERVATIVE, experiment=exp, store=run.store)

    history: dict[tuple[str, str], dict[int, float]] = {}
    order = fed.zero_delay_order()
    try:
        _conservative_loop(fed, result, history, order, n_rounds, macro, watchdog_s, pace)
        fed.hub.finish_run(run.run_id, RunState.STOPPED if fed.stop else RunState.COMPLETED)
    except BaseException:
        fed.hub.finish_run(run.run_id, RunState.FAULTED)
        raise
    finally:
        fed.close()
    result.final_stage = fed.machine.current
    return result


def _conservative_loop(fed, result, history, order, n_rounds, macro, watchdog_s, pace):
    run = fed.run
    with ThreadPoolExecutor(max_workers=max(4, len(fed.participants))) as executor:
        # initial outputs at t=0
        fed.apply_commands(fed.machine.start(0), 0, f"stage:{fed.machine.current}")
        for pid in order:
            for topic, value in fed.participants[pid].initial_outputs().items():
                history[(pid, topic)] = {0: value}
                fed.publish(pid, topic, value, 0, seq=0)
        for k in range(n_rounds):
            t_k = k * macro
            target = t_k + macro
            fed.stage_boundary(t_k)
            if fed.stop:
                break
            round_outputs: dict[str, dict[str, float]] = {}
            for pid in order:
                participant = fed.participants[pid]
                inputs: dict[str, float] = {}
                for topic in participant.descriptor.requires:
                    if topic in fed.setpoints:
                        inputs[topic] = fed.setpoints[topic]
                for route in fed.routes_to.get(pid, []):
                    produced_at = target - route.delay_steps * macro
                    key = (route.src.participant, route.src.topic)
                    if route.delay_steps == 0:
                        value = round_outputs.get(route.src.participant, {}).get(route.src.topic)
                        if value is None:
                            value = history.get(key, {}).get(produced_at)
                    else:
                        value = history.get(key, {}).get(produced_at)
                    if value is None:
                        inputs[route.dst.topic] = participant.default_input(route.dst.topic)
                        continue
                    inputs[route.dst.topic] = value
                    result.consumptions.append(
                        Consumption(
                            consumer=pid,
                            topic=route.dst.topic,
                            used_at_ns=target,
                            produced_at_ns=produced_at,
                            src_site=fed.site_of(route.src.participant),
                            dst_site=fed.site_of(pid),
                            delay_steps=route.delay_steps,
                        )
                    )
                outputs = _step_with_watchdog(executor, participant, inputs, t_k, macro, watchdog_s)
                round_outputs[pid] = outputs
            for pid in order:
                for topic, value in round_outputs[pid].items():
                    history.setdefault((pid, topic), {})[target] = value
                    if topic in fed.exp.registry.participants[pid].offers:
                        fed.publish(pid, topic, value, target, seq=k + 1)
            result.grants.append(TimeGrant(run.run_id, target, barrier_round=k + 1))
            run.sim_time_ns = target
            if pace > 0:
                _time.sleep(macro / NS_PER_S * pace)


# ---------------------------------------------------------------------------
# Best-effort free run (virtual wall clock)
# ---------------------------------------------------------------------------

_ARRIVAL, _BOUNDARY, _STEP = 0, 1, 2


def run_best_effort(
    exp: Experiment,
    participants: Mapping[str, SimParticipant] | None = None,
    hub: Hub | None = None,
) -> RunResult:
    """Free-running exchange on a deterministic virtual wall clock.

    Sim time equals virtual wall time for every participant (1:1 pacing);
    messages traverse the inter-site netem links, so latency and loss leak
    straight into consumed values.  Consumers hold the latest arrival
    (zero-order hold), flagged stale when older than one consumer step and
    bad before the first arrival.
    """
    fed = _Federation(exp, hub, participants)
    desc = fed.desc
    run = fed.begin()
    result = RunResult(run_id=run.run_id, mode=SyncMode.BEST_EFFORT, experiment=exp, store=run.store)

    schedulers: dict[tuple[str, str], LinkScheduler] = {}
    for site_id in desc.sites:
        site = exp.registry.sites.get(site_id)
        if site is None:
            continue
        for peer, link in site.links.items():
            schedulers[(site_id, peer)] = LinkScheduler(link, desc.seed)

    latest: dict[tuple[str, str], tuple[float, int]] = {}  # (consumer, topic) -> (value, produced_at)
    seqs: dict[str, int] = {}
    heap: list[tuple[int, int, int, tuple]] = []
    counter = 0

    def push(t_ns: int, kind: int, payload: tuple):
        nonlocal counter
        heapq.heappush(heap, (t_ns, kind, counter, payload))
        counter += 1

    def emit(pid: str, outputs: Mapping[str, float], t_ns: int):
        for topic, value in outputs.items():
            if topic in exp.registry.participants[pid].offers:
                seq = seqs.get(f"{pid}/{topic}", -1) + 1
                seqs[f"{pid}/{topic}"] = seq
                fed.publish(pid, topic, value, t_ns, seq=seq)
            for route in fed.routes_from.get((pid, topic), []):
                src_site = fed.site_of(pid)
                dst_site = fed.site_of(route.dst.participant)
                if src_site == dst_site:
                    push(t_ns, _ARRIVAL, (route.dst.participant, route.dst.topic, value, t_ns))
                else:
                    sched = schedulers.get((src_site, dst_site))
                    if sched is None:
                        push(t_ns, _ARRIVAL, (route.dst.participant, route.dst.topic, value, t_ns))
                        continue
                    delivery = sched.schedule((route.dst.participant, route.dst.topic, value, t_ns), t_ns)
                    if not delivery.dropped:
                        push(delivery.deliver_time_ns, _ARRIVAL, delivery.message)

    fed.apply_commands(fed.machine.start(0), 0, f"stage:{fed.machine.current}")
    for pid in sorted(fed.participants):
        emit(pid, fed.participants[pid].initial_outputs(), 0)
    for t in range(0, desc.duration_ns + 1, desc.macro_step_ns):
        if t > 0:
            push(t, _BOUNDARY, ())
    try:
        _best_effort_loop(fed, result, heap, push, emit, latest)
        fed.hub.finish_run(run.run_id, RunState.STOPPED if fed.stop else RunState.COMPLETED)
    except BaseException:
        fed.hub.finish_run(run.run_id, RunState.FAULTED)
        raise
    finally:
        fed.close()
    result.final_stage = fed.machine.current
    return result


def _best_effort_loop(fed, result, heap, push, emit, latest):
    desc = fed.desc
    run = fed.run
    with ThreadPoolExecutor(max_workers=max(4, len(fed.participants))) as executor:
        for pid in sorted(fed.participants):
            push(0, _STEP, (pid,))
        while heap:
            t_ns, kind, _, payload = heapq.heappop(heap)
            if kind == _ARRIVAL:
                consumer, topic, value, produced_at = payload
                latest[(consumer, topic)] = (float(value), produced_at)
                continue
            if kind == _BOUNDARY:
                fed.stage_boundary(t_ns)
                if fed.stop:
                    break
                continue
            (pid,) = payload
            participant = fed.participants[pid]
            step_ns = participant.descriptor.step_ns
            target = t_ns + step_ns
            if target > desc.duration_ns:
                continue
            inputs: dict[str, float] = {}
            for topic in participant.descriptor.requires:
                if topic in fed.setpoints:
                    inputs[topic] = fed.setpoints[topic]
            for route in fed.routes_to.get(pid, []):
                held = latest.get((pid, route.dst.topic))
                if held is None:
                    inputs[route.dst.topic] = participant.default_input(route.dst.topic)
                    quality = im.Quality.BAD
                    continue
                value, produced_at = held
                inputs[route.dst.topic] = value
                age = target - produced_at
                quality = im.Quality.STALE if age > step_ns else im.Quality.GOOD
                result.consumptions.append(
                    Consumption(
                        consumer=pid,
                        topic=route.dst.topic,
                        used_at_ns=target,
                        produced_at_ns=produced_at,
                        src_site=fed.site_of(route.src.participant),
                        dst_site=fed.site_of(pid),
                        delay_steps=route.delay_steps,
                        quality=quality,
                    )
                )
                result.staleness_steps.append(age / step_ns)
            outputs = _step_with_watchdog(executor, participant, inputs, t_ns, step_ns, 30.0)
            emit(pid, outputs, target)
            run.sim_time_ns = max(run.sim_time_ns, target)
            if target + step_ns <= desc.duration_ns:
                push(target, _STEP, (pid,))


# ---------------------------------------------------------------------------
# Waveform relaxation (Jacobi)
# ---------------------------------------------------------------------------

def run_wr(
    exp: Experiment,
    cfg: WRConfig | None = None,
    participants: Mapping[str, SimParticipant] | None = None,
    hub: Hub | None = None,
) -> RunResult:
    """Windowed Jacobi waveform relaxation over the experiment wiring.

    Per window, all subsystems integrate the full window against the previous
    iterate's input waveforms, then exchange complete waveforms; the window
    converges when the L-inf change of every exchanged waveform drops under
    cfg.tol.  Hitting max_iter flags the window and the run continues.
    """
    cfg = cfg if cfg is not None else exp.description.wr
    if cfg is None:
        raise ValueError("waveform relaxation requires a WRConfig")
    fed = _Federation(exp, hub, participants)
    desc = fed.desc
    macro = desc.macro_step_ns
    run = fed.begin()
    result = RunResult(run_id=run.run_id, mode=SyncMode.WAVEFORM_RELAXATION, experiment=exp, store=run.store)

    exchanged: list[tuple[str, str]] = []  # (producer pid, topic)
    for route in desc.routes:
        key = (route.src.participant, route.src.topic)
        if key not in exchanged:
            exchanged.append(key)
    try:
        _wr_loop(fed, result, cfg, exchanged)
        fed.hub.finish_run(run.run_id, RunState.STOPPED if fed.stop else RunState.COMPLETED)
    except BaseException:
        fed.hub.finish_run(run.run_id, RunState.FAULTED)
        raise
    finally:
        fed.close()
    result.final_stage = fed.machine.current
    return result


def _wr_loop(fed, result, cfg, exchanged):
    exp = fed.exp
    desc = fed.desc
    macro = desc.macro_step_ns
    run = fed.run
    fed.apply_commands(fed.machine.start(0), 0, f"stage:{fed.machine.current}")
    for pid in sorted(fed.participants):
        for topic, value in fed.participants[pid].initial_outputs().items():
            if topic in exp.registry.participants[pid].offers:
                fed.publish(pid, topic, value, 0, seq=0)

    t0 = 0
    window_index = 0
    seq = 1
    while t0 < desc.duration_ns and not fed.stop:
        fed.stage_boundary(t0)
        if fed.stop:
            break
        t1 = min(t0 + cfg.window_ns, desc.duration_ns)
        grid = np.arange(t0, t1 + 1, macro, dtype=np.int64)
        saved = {pid: fed.participants[pid].save_state() for pid in fed.participants}
        # initial guess: constant extrapolation of the window-start value
        waves: dict[tuple[str, str], np.ndarray] = {}
        for pid, topic in exchanged:
            start = fed.participants[pid].current_outputs().get(topic, 0.0)
            waves[(pid, topic)] = np.full(len(grid), start, dtype=float)
        converged = False
        iterations = 0
        for iteration in range(1, cfg.max_iter + 1):
            iterations = iteration
            new_waves: dict[tuple[str, str], np.ndarray] = {}
            for pid in sorted(fed.participants):
                participant = fed.participants[pid]
                participant.restore_state(saved[pid])
                input_waveforms: dict[str, np.ndarray] = {}
                for route in fed.routes_to.get(pid, []):
                    input_waveforms[route.dst.topic] = waves[(route.src.participant, route.src.topic)]
                for topic in participant.descriptor.requires:
                    if topic not in input_waveforms:
                        value = fed.setpoints.get(topic, participant.default_input(topic))
                        input_waveforms[topic] = np.full(len(grid), value, dtype=float)
                outputs = participant.integrate_window(grid, input_waveforms)
                for pid_topic in exchanged:
                    if pid_topic[0] == pid and pid_topic[1] in outputs:
                        new_waves[pid_topic] = outputs[pid_topic[1]]
            residual = 0.0
            for key in exchanged:
                if key in new_waves:
                    residual = max(residual, float(np.max(np.abs(new_waves[key] - waves[key]))))
                    waves[key] = new_waves[key]
            converged = residual < cfg.tol
            result.wr_log.append(WRIteration(window_index, iteration, residual, converged))
            if converged:
                break
        if not converged:
            log.warning("wr window %d not converged after %d iterations (residual %.3e)",
                        window_index, iterations, result.wr_log[-1].residual)
        # commit: states already sit at the window end from the last iteration
        for pid in sorted(fed.participants):
            participant = fed.participants[pid]
            for topic in exp.registry.participants[pid].offers:
                wave = waves.get((pid, topic))
                if wave is None:
                    value = participant.current_outputs().get(topic)
                    if value is None:
                        continue
                    wave = np.full(len(grid), value)
                for j in range(1, len(grid)):
                    fed.publish(pid, topic, float(wave[j]), int(grid[j]), seq=seq + j - 1)
        seq += len(grid) - 1
        result.grants.append(TimeGrant(run.run_id, int(t1), barrier_round=window_index + 1))
        run.sim_time_ns = int(t1)
        t0 = int(t1)
        window_index += 1


def run_experiment(
    exp: Experiment,
    mode: SyncMode | str | None = None,
    hub: Hub | None = None,
    seed: int | None = None,
    pace: float = 0.0,
) -> RunResult:
    """Dispatch to the experiment's (or an overridden) sync discipline."""
    from dataclasses import replace as dc_replace

    if seed is not None and seed != exp.description.seed:
        exp = Experiment(
            description=dc_replace(exp.description, seed=seed),
            registry=exp.registry,
            raw=exp.raw,
        )
    chosen = SyncMode(mode) if mode is not None else exp.description.sync_mode
    if chosen is SyncMode.CONSERVATIVE:
        return run_conservative(exp, hub=hub, pace=pace)
    if chosen is SyncMode.BEST_EFFORT:
        return run_best_effort(exp, hub=hub)
    return run_wr(exp, hub=hub)


# ---------------------------------------------------------------------------
# Post-hoc causality checking
# ---------------------------------------------------------------------------

def detect_causality_violations(result: RunResult, exp: Experiment | None = None) -> list[CausalityViolation]:
    """Replay the consumption log against each sample's minimum modeled latency.

    Conservative (and WR) samples travel the logical sync grid, so the floor
    is delay_steps * macro_step; best-effort samples travel the netem links,
    so the floor is the link's nominal base delay for inter-site hops.
    """
    exp = exp if exp is not None else result.experiment
    desc = exp.description
    macro = desc.macro_step_ns
    violations: list[CausalityViolation] = []
    for c in result.consumptions:
        if result.mode is SyncMode.BEST_EFFORT:
            if c.src_site != c.dst_site:
                link = exp.registry.link(c.src_site, c.dst_site)
                min_latency = link.min_delay_ns if link is not None else 0
            else:
                min_latency = 0
        else:
            min_latency = c.delay_steps * macro
        min_arrival = c.produced_at_ns + min_latency
        if c.used_at_ns < min_arrival:
            violations.append(
                CausalityViolation(
                    consumer=c.consumer,
                    topic=c.topic,
                    used_at_ns=c.used_at_ns,
                    produced_at_ns=c.produced_at_ns,
                    min_arrival_ns=min_arrival,
                )
            )
    return violations
