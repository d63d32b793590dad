"""Discrete-event simulator of local execution and offloading through shared
wireless channels to per-user edge VMs.

Route of an offloaded task: per-(user, channel) uplink FIFO, transmission
under egalitarian processor sharing with the other active uplinks on the
same (base station, channel), dedicated edge VM FIFO, then a per-(base
station, channel) downlink FIFO for the result, shared across base stations
active on that channel.  Local tasks run on the user's own CPU FIFO.

Every queue is FIFO and unbounded; servers never idle while their queue is
non-empty.  Transmission rates are re-latched whenever a transmitter starts
or finishes, with in-flight progress settled as residual bits.
"""

from __future__ import annotations

import csv
import io
import itertools
from collections import deque
from dataclasses import dataclass, field
from enum import IntEnum
from heapq import heappop, heappush
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, SimulationError
from .ioutil import atomic_write_text, fmt
from .workload import DistributionSpec, Task


def exec_time(size_bits: float, intensity_cpb: float, cpu_hz: float) -> float:
    """Seconds to run size * intensity cycles at cpu_hz cycles/s."""
    if size_bits <= 0 or intensity_cpb <= 0 or cpu_hz <= 0:
        raise ValueError(
            f"exec_time needs positive inputs, got size={size_bits}, "
            f"intensity={intensity_cpb}, cpu_hz={cpu_hz}"
        )
    return size_bits * intensity_cpb / cpu_hz


def cpu_energy(kappa: float, size_bits: float, intensity_cpb: float, cpu_hz: float) -> float:
    """Joules burned computing locally: kappa * cycles * f^2."""
    if kappa <= 0 or size_bits <= 0 or intensity_cpb <= 0 or cpu_hz <= 0:
        raise ValueError(
            f"cpu_energy needs positive inputs, got kappa={kappa}, size={size_bits}, "
            f"intensity={intensity_cpb}, cpu_hz={cpu_hz}"
        )
    return kappa * size_bits * intensity_cpb * cpu_hz * cpu_hz


def tx_energy(duration_s: float, power_w: float) -> float:
    """Joules spent transmitting for duration_s at power_w."""
    if duration_s < 0 or power_w < 0:
        raise ValueError(f"tx_energy needs non-negative inputs, got {duration_s}, {power_w}")
    return duration_s * power_w


def rx_energy(duration_s: float, power_w: float) -> float:
    """Joules spent receiving for duration_s at power_w."""
    if duration_s < 0 or power_w < 0:
        raise ValueError(f"rx_energy needs non-negative inputs, got {duration_s}, {power_w}")
    return duration_s * power_w


def fair_share_rate(nominal_bps: float, gain: float, n_active: int) -> float:
    """Instantaneous rate of one transmitter under egalitarian sharing."""
    if n_active < 1:
        raise SimulationError(f"n_active must be >= 1, got {n_active}")
    if not 0.0 < gain <= 1.0:
        raise ValueError(f"gain must be in (0, 1], got {gain}")
    if nominal_bps <= 0:
        raise ValueError(f"nominal_bps must be > 0, got {nominal_bps}")
    return gain * nominal_bps / n_active


@dataclass(frozen=True)
class ChannelConfig:
    """One carrier: nominal rates, transmit/receive powers, gain draw rule."""

    uplink_rate_bps: float
    downlink_rate_bps: float
    uplink_power_w: float
    downlink_power_w: float
    gain: DistributionSpec = field(default_factory=lambda: DistributionSpec.uniform(0.6, 1.0))
    carrier_mhz: float = 0.0

    def validate(self, name: str = "channel") -> None:
        for f_name in ("uplink_rate_bps", "downlink_rate_bps", "uplink_power_w", "downlink_power_w"):
            if getattr(self, f_name) <= 0:
                raise ConfigError(f"{name}.{f_name} must be > 0, got {getattr(self, f_name)}")
        self.gain.validate(f"{name}.gain")
        sup = self.gain.support()
        if sup is None or sup[0] <= 0.0 or sup[1] > 1.0:
            raise ConfigError(f"{name}.gain support must lie in (0, 1], got {sup}")


def default_channels() -> Tuple[ChannelConfig, ...]:
    """Three carriers with increasing nominal rate and radio power."""
    rows = [
        (700.0, 10e6, 10e6, 0.8, 0.4),
        (1500.0, 30e6, 30e6, 1.0, 0.5),
        (2600.0, 75e6, 75e6, 1.2, 0.6),
    ]
    return tuple(
        ChannelConfig(
            uplink_rate_bps=up,
            downlink_rate_bps=dn,
            uplink_power_w=pu,
            downlink_power_w=pd,
            carrier_mhz=mhz,
        )
        for mhz, up, dn, pu, pd in rows
    )


@dataclass(frozen=True)
class NodeConfig:
    """Population sizes, CPU speeds, energy constant, result size rule."""

    n_users: int = 5
    n_base_stations: int = 3
    n_channels: int = 3
    user_cpu_hz: float = 1e9
    edge_vm_hz: float = 4e9
    kappa: float = 1e-27
    result_size_ratio: float = 0.1
    association: Optional[Tuple[int, ...]] = None

    def validate(self) -> None:
        for f_name in ("n_users", "n_base_stations", "n_channels"):
            if getattr(self, f_name) < 1:
                raise ConfigError(f"{f_name} must be >= 1, got {getattr(self, f_name)}")
        for f_name in ("user_cpu_hz", "edge_vm_hz", "kappa"):
            if getattr(self, f_name) <= 0:
                raise ConfigError(f"{f_name} must be > 0, got {getattr(self, f_name)}")
        if self.result_size_ratio < 0:
            raise ConfigError(f"result_size_ratio must be >= 0, got {self.result_size_ratio}")
        assoc = self.resolved_association()
        if len(assoc) != self.n_users:
            raise ConfigError(
                f"association must map all {self.n_users} users, got {len(assoc)} entries"
            )
        for k, bs in enumerate(assoc):
            if not 0 <= bs < self.n_base_stations:
                raise ConfigError(f"association[{k}] = {bs} is not a base station index")

    def resolved_association(self) -> Tuple[int, ...]:
        if self.association is not None:
            return tuple(int(b) for b in self.association)
        return tuple(k % self.n_base_stations for k in range(self.n_users))


class EventKind(IntEnum):
    TASK_ARRIVAL = 0
    LOCAL_EXEC_DONE = 1
    UPLINK_RATE_CHANGE = 2
    UPLINK_DONE = 3
    EDGE_EXEC_DONE = 4
    DOWNLINK_RATE_CHANGE = 5
    DOWNLINK_DONE = 6


@dataclass(frozen=True)
class TaskOutcome:
    """Realized (or projected) fate of one task: timing decomposition,
    energy decomposition, and deadline verdict.  action 0 is local, action
    c in 1..C is offloading through channel c."""

    task_id: int
    user_id: int
    action: int
    arrival_s: float
    size_bits: float
    intensity_cpb: float
    deadline_s: float
    d1_s: float
    d2_s: float
    d3_s: float
    d4_s: float
    t_exec_s: float
    t_up_s: float
    t_down_s: float
    total_s: float
    e_cpu_j: float
    e_tx_j: float
    e_rx_j: float
    e_total_j: float
    met_deadline: bool


OUTCOME_COLUMNS = (
    "task_id",
    "user_id",
    "action",
    "arrival_s",
    "size_bits",
    "intensity_cpb",
    "deadline_s",
    "d1_s",
    "d2_s",
    "d3_s",
    "d4_s",
    "t_exec_s",
    "t_up_s",
    "t_down_s",
    "T_s",
    "e_cpu_J",
    "e_tx_J",
    "e_rx_J",
    "e_total_J",
    "met_deadline",
)

_OUTCOME_FIELDS = (
    "task_id",
    "user_id",
    "action",
    "arrival_s",
    "size_bits",
    "intensity_cpb",
    "deadline_s",
    "d1_s",
    "d2_s",
    "d3_s",
    "d4_s",
    "t_exec_s",
    "t_up_s",
    "t_down_s",
    "total_s",
    "e_cpu_j",
    "e_tx_j",
    "e_rx_j",
    "e_total_j",
    "met_deadline",
)


def outcomes_to_csv_text(outcomes: Sequence[TaskOutcome]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(OUTCOME_COLUMNS)
    for out in outcomes:
        writer.writerow([fmt(getattr(out, f)) for f in _OUTCOME_FIELDS])
    return buf.getvalue()


def write_outcomes(path: str, outcomes: Sequence[TaskOutcome]) -> None:
    atomic_write_text(path, outcomes_to_csv_text(outcomes))


class _Job:
    __slots__ = (
        "task",
        "action",
        "gains",
        "result_bits",
        "enq_t",
        "d1",
        "d2",
        "d3",
        "d4",
        "t_exec",
        "t_up",
        "t_down",
        "start_t",
        "done_t",
    )

    def __init__(self, task: Task, action: int, gains: Tuple[float, ...], result_bits: float):
        self.task = task
        self.action = action
        self.gains = gains
        self.result_bits = result_bits
        self.enq_t = 0.0
        self.d1 = 0.0
        self.d2 = 0.0
        self.d3 = 0.0
        self.d4 = 0.0
        self.t_exec = 0.0
        self.t_up = 0.0
        self.t_down = 0.0
        self.start_t = 0.0
        self.done_t = 0.0


class _Tx:
    """An in-flight transmission inside one sharing domain."""

    __slots__ = ("job", "gain", "residual", "rate", "last_settle", "elapsed", "pending_leg", "gen", "queue_key")

    def __init__(self, job: _Job, gain: float, residual: float, queue_key):
        self.job = job
        self.gain = gain
        self.residual = residual
        self.rate = 0.0
        self.last_settle = 0.0
        self.elapsed = 0.0
        self.pending_leg = 0.0
        self.gen = 0
        self.queue_key = queue_key


class _Domain:
    """Processor-sharing cell: the transmitters that split one nominal rate."""

    __slots__ = ("nominal", "members", "done_kind", "rate_change_kind", "key")

    def __init__(self, nominal: float, done_kind: EventKind, rate_change_kind: EventKind, key):
        self.nominal = nominal
        self.members: Dict[_Tx, None] = {}  # dict keeps deterministic insertion order
        self.done_kind = done_kind
        self.rate_change_kind = rate_change_kind
        self.key = key


@dataclass(frozen=True)
class Snapshot:
    """Frozen view of the system taken at one task's decision instant.

    Backlogs include the virtual residual of whatever is in service right
    now; active counts are the transmitter populations at this instant.
    Projections from a snapshot assume no further arrivals and hold those
    populations fixed.
    """

    clock: float
    task_id: int
    user_id: int
    gains: Tuple[float, ...]
    local_backlog_cycles: Tuple[float, ...]  # per user
    edge_backlog_cycles: Tuple[float, ...]  # per user
    uplink_backlog_bits: Tuple[Tuple[float, ...], ...]  # [user][channel]
    downlink_backlog_bits: Tuple[Tuple[float, ...], ...]  # [bs][channel]
    uplink_active: Tuple[Tuple[int, ...], ...]  # [bs][channel]
    uplink_self_active: Tuple[Tuple[bool, ...], ...]  # [user][channel]
    downlink_active: Tuple[int, ...]  # [channel], across base stations
    downlink_slot_active: Tuple[Tuple[bool, ...], ...]  # [bs][channel]
    node: NodeConfig
    channels: Tuple[ChannelConfig, ...]


def project_outcome(snap: Snapshot, task: Task, action: int) -> TaskOutcome:
    """Deterministic what-if outcome of taking `action` from `snap`.

    Waits are backlog work over service rate; the task's own transmission
    contends with the frozen set of other active transmitters plus itself.
    """
    if task.task_id != snap.task_id:
        raise ValueError(
            f"snapshot was taken for task {snap.task_id}, cannot project task {task.task_id}"
        )
    node = snap.node
    n_ch = len(snap.channels)
    if not 0 <= action <= n_ch:
        raise ValueError(f"action must be in [0, {n_ch}], got {action}")
    user = task.user_id
    size = task.size_bits
    d1 = d2 = d3 = d4 = 0.0
    t_up = t_down = 0.0
    e_cpu = e_tx = e_rx = 0.0
    if action == 0:
        d1 = snap.local_backlog_cycles[user] / node.user_cpu_hz
        t_exec = exec_time(size, task.intensity_cpb, node.user_cpu_hz)
        e_cpu = cpu_energy(node.kappa, size, task.intensity_cpb, node.user_cpu_hz)
        total = d1 + t_exec
    else:
        c = action - 1
        ch = snap.channels[c]
        bs = node.resolved_association()[user]
        gain = snap.gains[c]
        n_up = snap.uplink_active[bs][c] - (1 if snap.uplink_self_active[user][c] else 0) + 1
        r_up = fair_share_rate(ch.uplink_rate_bps, gain, n_up)
        d2 = snap.uplink_backlog_bits[user][c] / r_up
        t_up = size / r_up
        d3 = snap.edge_backlog_cycles[user] / node.edge_vm_hz
        t_exec = exec_time(size, task.intensity_cpb, node.edge_vm_hz)
        e_tx = tx_energy(t_up, ch.uplink_power_w)
        result_bits = node.result_size_ratio * size
        if result_bits > 0:
            n_dn = snap.downlink_active[c] - (1 if snap.downlink_slot_active[bs][c] else 0) + 1
            r_dn = fair_share_rate(ch.downlink_rate_bps, gain, n_dn)
            d4 = snap.downlink_backlog_bits[bs][c] / r_dn
            t_down = result_bits / r_dn
            e_rx = rx_energy(t_down, ch.downlink_power_w)
        total = d2 + t_up + d3 + t_exec + d4 + t_down
    return TaskOutcome(
        task_id=task.task_id,
        user_id=user,
        action=action,
        arrival_s=task.arrival_time,
        size_bits=size,
        intensity_cpb=task.intensity_cpb,
        deadline_s=task.deadline_s,
        d1_s=d1,
        d2_s=d2,
        d3_s=d3,
        d4_s=d4,
        t_exec_s=t_exec,
        t_up_s=t_up,
        t_down_s=t_down,
        total_s=total,
        e_cpu_j=e_cpu,
        e_tx_j=e_tx,
        e_rx_j=e_rx,
        e_total_j=e_tx + e_cpu + e_rx,
        met_deadline=total <= task.deadline_s,
    )


class Simulator:
    """Event-calendar simulator; ties broken by submission sequence.

    Tasks enter either through pre-scheduled arrival events (schedule_arrival
    or add_stream, in which case a policy callback picks the action) or by
    direct submit() calls at the current clock.
    """

    def __init__(
        self,
        node: NodeConfig,
        channels: Sequence[ChannelConfig],
        gain_rng: np.random.Generator,
        policy: Optional[Callable[["Simulator", Task], int]] = None,
        check_capacity: bool = False,
    ):
        node.validate()
        if len(channels) != node.n_channels:
            raise ConfigError(
                f"expected {node.n_channels} channel configs, got {len(channels)}"
            )
        for i, ch in enumerate(channels):
            ch.validate(f"channels[{i}]")
        self.node = node
        self.channels = tuple(channels)
        self.policy = policy
        self.clock = 0.0
        self._gain_rng = gain_rng
        self._check_capacity = check_capacity
        self._calendar: List[tuple] = []
        self._seq = itertools.count()
        self._halted = False
        self._streams: Dict[int, Iterator[Task]] = {}
        self._staged_gains: Dict[int, Tuple[float, ...]] = {}
        assoc = node.resolved_association()
        self._assoc = assoc
        K, N, C = node.n_users, node.n_base_stations, node.n_channels
        self._local_q: List[deque] = [deque() for _ in range(K)]
        self._local_busy: List[Optional[_Job]] = [None] * K
        self._edge_q: List[deque] = [deque() for _ in range(K)]
        self._edge_busy: List[Optional[_Job]] = [None] * K
        self._up_q: Dict[Tuple[int, int], deque] = {
            (k, c): deque() for k in range(K) for c in range(C)
        }
        self._up_tx: Dict[Tuple[int, int], Optional[_Tx]] = {
            (k, c): None for k in range(K) for c in range(C)
        }
        self._down_q: Dict[Tuple[int, int], deque] = {
            (n, c): deque() for n in range(N) for c in range(C)
        }
        self._down_tx: Dict[Tuple[int, int], Optional[_Tx]] = {
            (n, c): None for n in range(N) for c in range(C)
        }
        self._up_dom: Dict[Tuple[int, int], _Domain] = {
            (n, c): _Domain(
                self.channels[c].uplink_rate_bps,
                EventKind.UPLINK_DONE,
                EventKind.UPLINK_RATE_CHANGE,
                (n, c),
            )
            for n in range(N)
            for c in range(C)
        }
        self._down_dom: Dict[int, _Domain] = {
            c: _Domain(
                self.channels[c].downlink_rate_bps,
                EventKind.DOWNLINK_DONE,
                EventKind.DOWNLINK_RATE_CHANGE,
                c,
            )
            for c in range(C)
        }
        self.admitted = 0
        self.completed: List[TaskOutcome] = []

    # ------------------------------------------------------------------ feeds

    def schedule_arrival(self, task: Task) -> None:
        if task.arrival_time < self.clock:
            raise ValueError(
                f"task {task.task_id} arrives at {task.arrival_time} before clock {self.clock}"
            )
        self._push(task.arrival_time, EventKind.TASK_ARRIVAL, task)

    def add_stream(self, user_id: int, tasks: Iterator[Task]) -> None:
        """Register a lazy task source; the next task is pulled when the
        previous one's arrival event fires."""
        self._streams[user_id] = tasks
        first = next(tasks, None)
        if first is not None:
            self.schedule_arrival(first)

    def halt_arrivals(self) -> None:
        """Stop admitting tasks; already-scheduled arrivals are discarded."""
        self._halted = True

    # ------------------------------------------------------------- decisions

    def stage(self, task: Task) -> Tuple[float, ...]:
        """Draw this task's per-channel gains (one draw per channel, reused
        for both transmission legs).  Idempotent per task."""
        gains = self._staged_gains.get(task.task_id)
        if gains is None:
            gains = tuple(ch.gain.sample(self._gain_rng) for ch in self.channels)
            self._staged_gains[task.task_id] = gains
        return gains

    def snapshot(self, task: Task) -> Snapshot:
        """Frozen decision-time view for `task`; does not mutate the state."""
        gains = self.stage(task)
        node = self.node
        K, N, C = node.n_users, node.n_base_stations, node.n_channels
        f_u, f_e = node.user_cpu_hz, node.edge_vm_hz
        now = self.clock

        def busy_cycles(job: Optional[_Job], hz: float) -> float:
            if job is None:
                return 0.0
            return max(0.0, (job.done_t - now) * hz)

        def tx_residual(tx: Optional[_Tx]) -> float:
            if tx is None:
                return 0.0
            return max(0.0, tx.residual - tx.rate * (now - tx.last_settle))

        local = tuple(
            sum(j.task.size_bits * j.task.intensity_cpb for j in self._local_q[k])
            + busy_cycles(self._local_busy[k], f_u)
            for k in range(K)
        )
        edge = tuple(
            sum(j.task.size_bits * j.task.intensity_cpb for j in self._edge_q[k])
            + busy_cycles(self._edge_busy[k], f_e)
            for k in range(K)
        )
        up_bits = tuple(
            tuple(
                sum(j.task.size_bits for j in self._up_q[(k, c)])
                + tx_residual(self._up_tx[(k, c)])
                for c in range(C)
            )
            for k in range(K)
        )
        down_bits = tuple(
            tuple(
                sum(j.result_bits for j in self._down_q[(n, c)])
                + tx_residual(self._down_tx[(n, c)])
                for c in range(C)
            )
            for n in range(N)
        )
        up_active = tuple(
            tuple(len(self._up_dom[(n, c)].members) for c in range(C)) for n in range(N)
        )
        up_self = tuple(
            tuple(self._up_tx[(k, c)] is not None for c in range(C)) for k in range(K)
        )
        down_active = tuple(len(self._down_dom[c].members) for c in range(C))
        down_slot = tuple(
            tuple(self._down_tx[(n, c)] is not None for c in range(C)) for n in range(N)
        )
        return Snapshot(
            clock=now,
            task_id=task.task_id,
            user_id=task.user_id,
            gains=gains,
            local_backlog_cycles=local,
            edge_backlog_cycles=edge,
            uplink_backlog_bits=up_bits,
            downlink_backlog_bits=down_bits,
            uplink_active=up_active,
            uplink_self_active=up_self,
            downlink_active=down_active,
            downlink_slot_active=down_slot,
            node=node,
            channels=self.channels,
        )

    def projections(self, task: Task) -> Tuple[TaskOutcome, ...]:
        """What-if outcomes for every action, sharing one snapshot and the
        task's own gain draws."""
        snap = self.snapshot(task)
        return tuple(
            project_outcome(snap, task, a) for a in range(self.node.n_channels + 1)
        )

    # ------------------------------------------------------------- execution

    def submit(self, task: Task, action: int) -> None:
        """Admit `task` at the current clock and route it per `action`
        (0 local, c in 1..C through channel c)."""
        C = self.node.n_channels
        if not 0 <= action <= C:
            raise ValueError(f"action must be in [0, {C}], got {action}")
        if not 0 <= task.user_id < self.node.n_users:
            raise ValueError(f"user_id {task.user_id} out of range")
        if task.arrival_time != self.clock:
            raise ValueError(
                f"task {task.task_id} must be submitted at its arrival time "
                f"{task.arrival_time}, clock is {self.clock}"
            )
        gains = self.stage(task)
        del self._staged_gains[task.task_id]
        job = _Job(task, action, gains, self.node.result_size_ratio * task.size_bits)
        self.admitted += 1
        if action == 0:
            job.enq_t = self.clock
            if self._local_busy[task.user_id] is None:
                self._start_local(task.user_id, job)
            else:
                self._local_q[task.user_id].append(job)
        else:
            key = (task.user_id, action - 1)
            job.enq_t = self.clock
            if self._up_tx[key] is None:
                self._start_uplink(key, job)
            else:
                self._up_q[key].append(job)

    @property
    def has_events(self) -> bool:
        return bool(self._calendar)

    def advance(self) -> Optional[TaskOutcome]:
        """Pop and process one event; returns the outcome if a task finished."""
        if not self._calendar:
            raise SimulationError("advance() on an empty calendar")
        t, _seq, kind, payload = heappop(self._calendar)
        self.clock = t
        if kind == EventKind.TASK_ARRIVAL:
            self._handle_arrival(payload)
            return None
        if kind == EventKind.LOCAL_EXEC_DONE:
            return self._handle_local_done(payload)
        if kind == EventKind.UPLINK_DONE:
            tx, gen = payload
            if gen != tx.gen:
                return None
            self._handle_uplink_done(tx)
            return None
        if kind == EventKind.EDGE_EXEC_DONE:
            return self._handle_edge_done(payload)
        if kind == EventKind.DOWNLINK_DONE:
            tx, gen = payload
            if gen != tx.gen:
                return None
            return self._handle_downlink_done(tx)
        # rate change: settle in-flight progress, re-split the channel
        dom = payload
        if dom.members:
            self._settle(dom)
            self._relatch(dom)
        return None

    def run_to_completion(self, max_outcomes: Optional[int] = None) -> List[TaskOutcome]:
        """Drain the calendar; returns outcomes in completion order."""
        got: List[TaskOutcome] = []
        while self._calendar:
            out = self.advance()
            if out is not None:
                got.append(out)
                if max_outcomes is not None and len(got) >= max_outcomes:
                    break
        return got

    def in_flight_count(self) -> int:
        n = sum(len(q) for q in self._local_q) + sum(len(q) for q in self._edge_q)
        n += sum(j is not None for j in self._local_busy)
        n += sum(j is not None for j in self._edge_busy)
        n += sum(len(q) for q in self._up_q.values())
        n += sum(tx is not None for tx in self._up_tx.values())
        n += sum(len(q) for q in self._down_q.values())
        n += sum(tx is not None for tx in self._down_tx.values())
        return n

    # -------------------------------------------------------------- internal

    def _push(self, t: float, kind: EventKind, payload) -> None:
        heappush(self._calendar, (t, next(self._seq), kind, payload))

    def _handle_arrival(self, task: Task) -> None:
        if self._halted:
            return
        stream = self._streams.get(task.user_id)
        if stream is not None:
            nxt = next(stream, None)
            if nxt is not None:
                self.schedule_arrival(nxt)
        self.stage(task)
        if self.policy is None:
            raise SimulationError(
                "a task arrival fired but no policy callback is installed"
            )
        action = self.policy(self, task)
        self.submit(task, int(action))

    # local CPU

    def _start_local(self, user: int, job: _Job) -> None:
        job.d1 = self.clock - job.enq_t
        job.start_t = self.clock
        job.t_exec = exec_time(job.task.size_bits, job.task.intensity_cpb, self.node.user_cpu_hz)
        job.done_t = self.clock + job.t_exec
        self._local_busy[user] = job
        self._push(job.done_t, EventKind.LOCAL_EXEC_DONE, job)

    def _handle_local_done(self, job: _Job) -> TaskOutcome:
        # re-measure off the event clock so stage durations telescope to
        # completion minus arrival without cancellation error
        job.t_exec = self.clock - job.start_t
        user = job.task.user_id
        self._local_busy[user] = None
        if self._local_q[user]:
            self._start_local(user, self._local_q[user].popleft())
        return self._finalize(job)

    # uplink

    def _start_uplink(self, key: Tuple[int, int], job: _Job) -> None:
        user, c = key
        job.d2 = self.clock - job.enq_t
        tx = _Tx(job, job.gains[c], job.task.size_bits, key)
        tx.last_settle = self.clock
        self._up_tx[key] = tx
        dom = self._up_dom[(self._assoc[user], c)]
        self._settle(dom)
        dom.members[tx] = None
        self._relatch(dom)

    def _handle_uplink_done(self, tx: _Tx) -> None:
        key = tx.queue_key
        user, c = key
        job = tx.job
        # final leg as a clock difference, not the closed-form pending_leg:
        # the done event time was rounded, and only the clock version keeps
        # the stage sum consistent with completion minus arrival
        job.t_up = tx.elapsed + (self.clock - tx.last_settle)
        dom = self._up_dom[(self._assoc[user], c)]
        del dom.members[tx]
        self._up_tx[key] = None
        q = self._up_q[key]
        if q:
            self._start_uplink(key, q.popleft())
        elif dom.members:
            self._push(self.clock, dom.rate_change_kind, dom)
        job.enq_t = self.clock
        if self._edge_busy[user] is None:
            self._start_edge(user, job)
        else:
            self._edge_q[user].append(job)

    # edge VM

    def _start_edge(self, user: int, job: _Job) -> None:
        job.d3 = self.clock - job.enq_t
        job.start_t = self.clock
        job.t_exec = exec_time(job.task.size_bits, job.task.intensity_cpb, self.node.edge_vm_hz)
        job.done_t = self.clock + job.t_exec
        self._edge_busy[user] = job
        self._push(job.done_t, EventKind.EDGE_EXEC_DONE, job)

    def _handle_edge_done(self, job: _Job) -> Optional[TaskOutcome]:
        job.t_exec = self.clock - job.start_t
        user = job.task.user_id
        self._edge_busy[user] = None
        if self._edge_q[user]:
            self._start_edge(user, self._edge_q[user].popleft())
        if job.result_bits <= 0.0:
            return self._finalize(job)
        bs = self._assoc[user]
        c = job.action - 1
        key = (bs, c)
        job.enq_t = self.clock
        if self._down_tx[key] is None:
            self._start_downlink(key, job)
        else:
            self._down_q[key].append(job)
        return None

    # downlink

    def _start_downlink(self, key: Tuple[int, int], job: _Job) -> None:
        bs, c = key
        job.d4 = self.clock - job.enq_t
        tx = _Tx(job, job.gains[c], job.result_bits, key)
        tx.last_settle = self.clock
        self._down_tx[key] = tx
        dom = self._down_dom[c]
        self._settle(dom)
        dom.members[tx] = None
        self._relatch(dom)

    def _handle_downlink_done(self, tx: _Tx) -> TaskOutcome:
        key = tx.queue_key
        bs, c = key
        job = tx.job
        job.t_down = tx.elapsed + (self.clock - tx.last_settle)
        dom = self._down_dom[c]
        del dom.members[tx]
        self._down_tx[key] = None
        q = self._down_q[key]
        if q:
            self._start_downlink(key, q.popleft())
        elif dom.members:
            self._push(self.clock, dom.rate_change_kind, dom)
        return self._finalize(job)

    # shared transmission mechanics

    def _settle(self, dom: _Domain) -> None:
        now = self.clock
        for tx in dom.members:
            dt = now - tx.last_settle
            if dt > 0.0:
                tx.residual = max(0.0, tx.residual - tx.rate * dt)
                tx.elapsed += dt
                tx.last_settle = now

    def _relatch(self, dom: _Domain) -> None:
        n = len(dom.members)
        if n == 0:
            return
        total = 0.0
        for tx in dom.members:
            tx.rate = fair_share_rate(dom.nominal, tx.gain, n)
            total += tx.rate
            tx.pending_leg = tx.residual / tx.rate
            tx.gen += 1
            self._push(self.clock + tx.pending_leg, dom.done_kind, (tx, tx.gen))
        if self._check_capacity and total > dom.nominal * (1.0 + 1e-9):
            raise SimulationError(
                f"allocated {total} bps exceeds nominal {dom.nominal} bps on domain {dom.key}"
            )

    def _finalize(self, job: _Job) -> TaskOutcome:
        task = job.task
        total = self.clock - task.arrival_time
        if job.action == 0:
            e_cpu = cpu_energy(
                self.node.kappa, task.size_bits, task.intensity_cpb, self.node.user_cpu_hz
            )
            e_tx = e_rx = 0.0
        else:
            ch = self.channels[job.action - 1]
            e_cpu = 0.0
            e_tx = tx_energy(job.t_up, ch.uplink_power_w)
            e_rx = rx_energy(job.t_down, ch.downlink_power_w)
        outcome = TaskOutcome(
            task_id=task.task_id,
            user_id=task.user_id,
            action=job.action,
            arrival_s=task.arrival_time,
            size_bits=task.size_bits,
            intensity_cpb=task.intensity_cpb,
            deadline_s=task.deadline_s,
            d1_s=job.d1,
            d2_s=job.d2,
            d3_s=job.d3,
            d4_s=job.d4,
            t_exec_s=job.t_exec,
            t_up_s=job.t_up,
            t_down_s=job.t_down,
            total_s=total,
            e_cpu_j=e_cpu,
            e_tx_j=e_tx,
            e_rx_j=e_rx,
            e_total_j=e_tx + e_cpu + e_rx,
            met_deadline=total <= task.deadline_s,
        )
        self.completed.append(outcome)
        return outcome
