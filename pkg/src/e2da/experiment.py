"""Dataset generation, training and evaluation protocols, run metrics.

Dataset generation drives the live simulator under a logging policy and
records, at every arrival, the complete per-action what-if outcome set.
Replay training then samples recorded tasks uniformly, so every action's
consequence is known without re-simulating; live training instead submits
real tasks and feeds rewards back when their completion events fire.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .bandit import E2daAgent, RewardParams, compute_reward
from .baselines import ORACLES, ProjectionSet
from .errors import ConfigError
from .ioutil import atomic_write_text, fmt
from .netsim import ChannelConfig, NodeConfig, Simulator, TaskOutcome
from .rng import substream
from .workload import Task, WorkloadConfig, normalize_context, task_stream

_ACTION_FIELDS = (
    ("d1_s", "d1_s"),
    ("d2_s", "d2_s"),
    ("d3_s", "d3_s"),
    ("d4_s", "d4_s"),
    ("t_exec_s", "t_exec_s"),
    ("t_up_s", "t_up_s"),
    ("t_down_s", "t_down_s"),
    ("T_s", "total_s"),
    ("e_cpu_J", "e_cpu_j"),
    ("e_tx_J", "e_tx_j"),
    ("e_rx_J", "e_rx_j"),
    ("e_total_J", "e_total_j"),
    ("met", "met_deadline"),
)


@dataclass(frozen=True)
class DatasetRecord:
    """One logged decision point: the task plus every action's projection."""

    record_id: int
    task: Task
    outcomes: Tuple[TaskOutcome, ...]

    def projection_set(self) -> ProjectionSet:
        return ProjectionSet(self.task.task_id, self.outcomes)


class Dataset:
    """Ordered collection of records with CSV round-tripping."""

    def __init__(self, records: Sequence[DatasetRecord]):
        self.records = list(records)
        if self.records:
            n = len(self.records[0].outcomes)
            for rec in self.records:
                if len(rec.outcomes) != n:
                    raise ValueError("records disagree on the number of actions")

    def __len__(self) -> int:
        return len(self.records)

    @property
    def n_actions(self) -> int:
        if not self.records:
            raise ValueError("empty dataset has no action count")
        return len(self.records[0].outcomes)

    def to_csv_text(self) -> str:
        n_act = self.n_actions if self.records else 0
        header = [
            "record_id",
            "task_id",
            "user_id",
            "arrival_s",
            "size_bits",
            "intensity_cpb",
            "deadline_s",
        ]
        for a in range(n_act):
            header.extend(f"a{a}_{col}" for col, _ in _ACTION_FIELDS)
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        for rec in self.records:
            t = rec.task
            row = [
                fmt(rec.record_id),
                fmt(t.task_id),
                fmt(t.user_id),
                fmt(t.arrival_time),
                fmt(t.size_bits),
                fmt(t.intensity_cpb),
                fmt(t.deadline_s),
            ]
            for out in rec.outcomes:
                row.extend(fmt(getattr(out, attr)) for _, attr in _ACTION_FIELDS)
            writer.writerow(row)
        return buf.getvalue()

    def write_csv(self, path: str) -> None:
        atomic_write_text(path, self.to_csv_text())

    @classmethod
    def from_csv(cls, path: str) -> "Dataset":
        with open(path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            base_cols = 7
            per_action = len(_ACTION_FIELDS)
            n_act = (len(header) - base_cols) // per_action
            if base_cols + n_act * per_action != len(header) or n_act < 2:
                raise ValueError(f"unrecognized dataset header with {len(header)} columns")
            records = []
            for row in reader:
                task = Task(
                    task_id=int(row[1]),
                    user_id=int(row[2]),
                    arrival_time=float(row[3]),
                    size_bits=float(row[4]),
                    intensity_cpb=float(row[5]),
                    deadline_s=float(row[6]),
                )
                outcomes = []
                for a in range(n_act):
                    off = base_cols + a * per_action
                    vals = row[off : off + per_action]
                    outcomes.append(
                        TaskOutcome(
                            task_id=task.task_id,
                            user_id=task.user_id,
                            action=a,
                            arrival_s=task.arrival_time,
                            size_bits=task.size_bits,
                            intensity_cpb=task.intensity_cpb,
                            deadline_s=task.deadline_s,
                            d1_s=float(vals[0]),
                            d2_s=float(vals[1]),
                            d3_s=float(vals[2]),
                            d4_s=float(vals[3]),
                            t_exec_s=float(vals[4]),
                            t_up_s=float(vals[5]),
                            t_down_s=float(vals[6]),
                            total_s=float(vals[7]),
                            e_cpu_j=float(vals[8]),
                            e_tx_j=float(vals[9]),
                            e_rx_j=float(vals[10]),
                            e_total_j=float(vals[11]),
                            met_deadline=vals[12] == "1",
                        )
                    )
                records.append(DatasetRecord(int(row[0]), task, tuple(outcomes)))
        return cls(records)


def generate_dataset(
    node: NodeConfig,
    channels: Sequence[ChannelConfig],
    workload: WorkloadConfig,
    n_records: int,
    seed: int,
) -> Dataset:
    """Run the live system under uniform-random actions, logging every
    arrival's projection set until exactly n_records are collected."""
    if n_records < 1:
        raise ConfigError(f"n_records must be >= 1, got {n_records}")
    workload.validate()
    records: List[DatasetRecord] = []
    log_rng = substream(seed, "logging-policy")
    n_actions = node.n_channels + 1

    def logging_policy(sim: Simulator, task: Task) -> int:
        outs = sim.projections(task)
        records.append(DatasetRecord(len(records), task, outs))
        if len(records) >= n_records:
            sim.halt_arrivals()
        return int(log_rng.integers(n_actions))

    sim = Simulator(node, channels, substream(seed, "gains"), policy=logging_policy)
    for user in range(node.n_users):
        sim.add_stream(user, task_stream(workload, seed, user, node.n_users))
    while sim.has_events and len(records) < n_records:
        sim.advance()
    if len(records) < n_records:
        raise RuntimeError(
            f"arrival streams dried up after {len(records)} of {n_records} records"
        )
    return Dataset(records)


def calibrate_efficiency_scale(dataset: Dataset, percentile: float = 99.0) -> float:
    """Efficiency normalizer: the given percentile of raw bits/(s*J) over
    every recorded (task, action) pair."""
    effs = [
        out.size_bits / (out.total_s * out.e_total_j)
        for rec in dataset.records
        for out in rec.outcomes
    ]
    return float(np.percentile(np.asarray(effs), percentile))


# ------------------------------------------------------------------- metrics


@dataclass(frozen=True)
class MetricsRow:
    episode: int
    phase: str  # "train" or "test"
    reward: float
    deadline_frac: float
    energy_j: float
    response_s: float


METRICS_COLUMNS = ("episode", "phase", "reward", "deadline_frac", "energy_J", "response_s")


def metrics_to_csv_text(rows: Sequence[MetricsRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(METRICS_COLUMNS)
    for r in rows:
        writer.writerow(
            [fmt(r.episode), r.phase, fmt(r.reward), fmt(r.deadline_frac), fmt(r.energy_j), fmt(r.response_s)]
        )
    return buf.getvalue()


def write_metrics(path: str, rows: Sequence[MetricsRow]) -> None:
    atomic_write_text(path, metrics_to_csv_text(rows))


def read_metrics(path: str) -> List[MetricsRow]:
    out = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            out.append(
                MetricsRow(int(row[0]), row[1], float(row[2]), float(row[3]), float(row[4]), float(row[5]))
            )
    return out


def moving_average(values: Sequence[float], window: int) -> np.ndarray:
    """Trailing mean over min(window, i + 1) points; output length matches."""
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    arr = np.asarray(values, dtype=np.float64)
    out = np.empty_like(arr)
    csum = np.cumsum(arr)
    for i in range(len(arr)):
        lo = max(0, i - window + 1)
        span = csum[i] - (csum[lo - 1] if lo > 0 else 0.0)
        out[i] = span / (i - lo + 1)
    return out


def summarize(
    series_by_name: Mapping[str, Sequence[MetricsRow]],
    tasks_per_episode: int,
    phase: str = "test",
) -> dict:
    """Per-name means over one phase plus pairwise ratios between names."""
    per: Dict[str, dict] = {}
    for name, series in series_by_name.items():
        rows = [r for r in series if r.phase == phase]
        if not rows:
            raise ValueError(f"series {name!r} has no {phase!r} rows")
        n_tasks = len(rows) * tasks_per_episode
        per[name] = {
            "episodes": len(rows),
            "mean_episode_reward": float(np.mean([r.reward for r in rows])),
            "mean_deadline_fraction": float(np.mean([r.deadline_frac for r in rows])),
            "mean_task_energy_j": float(sum(r.energy_j for r in rows) / n_tasks),
            "mean_task_response_s": float(sum(r.response_s for r in rows) / n_tasks),
        }
    names = list(per)
    ratios: Dict[str, dict] = {}
    for i, a in enumerate(names):
        for b in names[i + 1 :]:
            entry = {}
            for short, key in (
                ("reward", "mean_episode_reward"),
                ("deadline_fraction", "mean_deadline_fraction"),
                ("energy", "mean_task_energy_j"),
                ("response", "mean_task_response_s"),
            ):
                den = per[a][key]
                entry[short] = per[b][key] / den if den != 0 else None
            ratios[f"{b}_over_{a}"] = entry
    result = {"phase": phase, "tasks_per_episode": tasks_per_episode, "agents": per}
    if ratios:
        result["ratios"] = ratios
    return result


# ------------------------------------------------------------ replay running


def run_training(
    agent: E2daAgent,
    dataset: Dataset,
    workload: WorkloadConfig,
    n_episodes: int,
    tasks_per_episode: int,
    seed: int,
    stream_salt: Tuple = (),
) -> List[MetricsRow]:
    """Replay-train the agent: each episode samples tasks uniformly from the
    dataset, acts epsilon-greedily, and learns from the recorded outcome of
    the chosen action.  Episode numbering continues from the agent's count.
    stream_salt separates the episode streams of sibling agents trained
    from one master seed."""
    ep_rng = substream(seed, "episodes", "train", *stream_salt)
    rows: List[MetricsRow] = []
    for _ in range(n_episodes):
        ep = agent.episodes_trained
        eps = agent.epsilon(ep)
        idx = ep_rng.integers(0, len(dataset), size=tasks_per_episode)
        reward_sum = energy = response = 0.0
        met = 0
        for i in idx:
            rec = dataset.records[i]
            x = normalize_context(rec.task, workload)
            a = agent.act(x, eps)
            out = rec.outcomes[a]
            r = compute_reward(out, agent.reward_params)
            agent.observe(x, a, r)
            reward_sum += r
            energy += out.e_total_j
            response += out.total_s
            met += out.met_deadline
        rows.append(
            MetricsRow(ep, "train", reward_sum, met / tasks_per_episode, energy, response)
        )
        agent.episodes_trained += 1
    return rows


def split_by_user(dataset: Dataset, n_users: int) -> List[Dataset]:
    """Per-user views of a dataset, indexed by user id."""
    buckets: List[List[DatasetRecord]] = [[] for _ in range(n_users)]
    for rec in dataset.records:
        uid = rec.task.user_id
        if not 0 <= uid < n_users:
            raise ConfigError(
                f"record {rec.record_id} belongs to user {uid}, outside the "
                f"configured 0..{n_users - 1}"
            )
        buckets[uid].append(rec)
    empty = [u for u, b in enumerate(buckets) if not b]
    if empty:
        raise ConfigError(
            f"users {empty} own no dataset records; per-user training needs "
            f"records for every user"
        )
    return [Dataset(b) for b in buckets]


def average_rows(rows_by_agent: Sequence[Sequence[MetricsRow]]) -> List[MetricsRow]:
    """Across-agent mean of aligned episode rows."""
    combined: List[MetricsRow] = []
    for group in zip(*rows_by_agent):
        first = group[0]
        if any(r.episode != first.episode or r.phase != first.phase for r in group):
            raise ValueError("metric series are not aligned on (episode, phase)")
        n = len(group)
        combined.append(
            MetricsRow(
                first.episode,
                first.phase,
                sum(r.reward for r in group) / n,
                sum(r.deadline_frac for r in group) / n,
                sum(r.energy_j for r in group) / n,
                sum(r.response_s for r in group) / n,
            )
        )
    return combined


def run_training_per_user(
    agents: Sequence[E2daAgent],
    dataset: Dataset,
    workload: WorkloadConfig,
    n_episodes: int,
    tasks_per_episode: int,
    seed: int,
) -> Tuple[List[MetricsRow], List[List[MetricsRow]]]:
    """Replay-train one agent per user, each on that user's records only
    (the shared-agent alternative trains a single model on everything).

    agents[u] handles user u.  Returns (combined, per_user): per_user[u]
    is agent u's episode series, combined averages them episode-wise so
    the result reads like a single-agent series."""
    parts = split_by_user(dataset, len(agents))
    per_user = [
        run_training(
            agent,
            part,
            workload,
            n_episodes,
            tasks_per_episode,
            seed,
            stream_salt=("user", u),
        )
        for u, (agent, part) in enumerate(zip(agents, parts))
    ]
    return average_rows(per_user), per_user


def run_evaluation(
    policy: Callable[[DatasetRecord, np.ndarray], int],
    dataset: Dataset,
    workload: WorkloadConfig,
    reward_params: RewardParams,
    n_episodes: int,
    tasks_per_episode: int,
    seed: int,
    phase: str = "test",
    stream: str = "test",
    start_episode: int = 0,
) -> List[MetricsRow]:
    """Frozen-policy rollout over dataset episodes; no learning happens."""
    ep_rng = substream(seed, "episodes", stream)
    rows: List[MetricsRow] = []
    for e in range(n_episodes):
        idx = ep_rng.integers(0, len(dataset), size=tasks_per_episode)
        reward_sum = energy = response = 0.0
        met = 0
        for i in idx:
            rec = dataset.records[i]
            x = normalize_context(rec.task, workload)
            a = policy(rec, x)
            out = rec.outcomes[a]
            reward_sum += compute_reward(out, reward_params)
            energy += out.e_total_j
            response += out.total_s
            met += out.met_deadline
        rows.append(
            MetricsRow(
                start_episode + e, phase, reward_sum, met / tasks_per_episode, energy, response
            )
        )
    return rows


def dataset_policy(
    name: str,
    agent: Optional[E2daAgent] = None,
    rng: Optional[np.random.Generator] = None,
    n_actions: Optional[int] = None,
) -> Callable[[DatasetRecord, np.ndarray], int]:
    """Decision function over dataset records for one agent name.

    The learned agent sees only the scaled context; oracles see the recorded
    projections; random sees nothing.
    """
    if name == "e2da":
        if agent is None:
            raise ValueError("e2da policy needs an agent")
        return lambda rec, x: agent.act(x, 0.0)
    if name in ORACLES:
        rule = ORACLES[name]
        return lambda rec, x: rule(rec.projection_set())
    if name == "random":
        if rng is None or n_actions is None:
            raise ValueError("random policy needs rng and n_actions")
        return lambda rec, x: int(rng.integers(n_actions))
    raise ValueError(f"unknown policy {name!r}")


# --------------------------------------------------------------- live running


def _live_rollout(
    node: NodeConfig,
    channels: Sequence[ChannelConfig],
    workload: WorkloadConfig,
    seed: int,
    n_episodes: int,
    tasks_per_episode: int,
    choose: Callable[[Simulator, Task, int], int],
    on_outcome: Optional[Callable[[TaskOutcome], None]] = None,
    phase: str = "train",
    start_episode: int = 0,
) -> Tuple[List[MetricsRow], List[TaskOutcome]]:
    """Drive the live simulator for n_episodes * tasks_per_episode decisions.

    `choose(sim, task, episode)` picks actions; rewards and metrics are
    booked to the episode each task was submitted in, when its completion
    event fires (feedback is delayed, as in the real system).
    """
    total = n_episodes * tasks_per_episode
    decided = 0
    episode_of: Dict[int, int] = {}
    stats = [[0.0, 0, 0.0, 0.0, 0] for _ in range(n_episodes)]  # reward, met, energy, response, n

    def hook(sim: Simulator, task: Task) -> int:
        nonlocal decided
        ep = decided // tasks_per_episode
        episode_of[task.task_id] = ep
        decided += 1
        if decided >= total:
            sim.halt_arrivals()
        return choose(sim, task, start_episode + ep)

    sim = Simulator(node, channels, substream(seed, "gains"), policy=hook)
    for user in range(node.n_users):
        sim.add_stream(user, task_stream(workload, seed, user, node.n_users))
    outcomes: List[TaskOutcome] = []
    while sim.has_events:
        out = sim.advance()
        if out is None:
            continue
        outcomes.append(out)
        if on_outcome is not None:
            on_outcome(out)
        ep = episode_of.pop(out.task_id)
        st = stats[ep]
        st[1] += out.met_deadline
        st[2] += out.e_total_j
        st[3] += out.total_s
        st[4] += 1
    if decided < total:
        raise RuntimeError(f"live run decided only {decided} of {total} tasks")
    rows = []
    for e, st in enumerate(stats):
        rows.append(
            MetricsRow(
                start_episode + e,
                phase,
                st[0],
                st[1] / max(st[4], 1),
                st[2],
                st[3],
            )
        )
    return rows, outcomes


def run_live_training(
    agent: E2daAgent,
    node: NodeConfig,
    channels: Sequence[ChannelConfig],
    workload: WorkloadConfig,
    n_episodes: int,
    tasks_per_episode: int,
    seed: int,
) -> List[MetricsRow]:
    """Live-mode training: the agent schedules real arrivals and observes
    each reward at the task's completion event."""
    pending: Dict[int, Tuple[np.ndarray, int, int]] = {}
    stats_rows: List[MetricsRow] = []
    start = agent.episodes_trained
    reward_by_ep: Dict[int, float] = {}

    def choose(sim: Simulator, task: Task, episode: int) -> int:
        x = normalize_context(task, workload)
        a = agent.act(x, agent.epsilon(episode))
        pending[task.task_id] = (x, a, episode)
        return a

    def on_outcome(out: TaskOutcome) -> None:
        x, a, ep = pending.pop(out.task_id)
        r = compute_reward(out, agent.reward_params)
        reward_by_ep[ep] = reward_by_ep.get(ep, 0.0) + r
        agent.observe(x, a, r)

    rows, _ = _live_rollout(
        node,
        channels,
        workload,
        seed,
        n_episodes,
        tasks_per_episode,
        choose,
        on_outcome,
        phase="train",
        start_episode=start,
    )
    for row in rows:
        stats_rows.append(
            MetricsRow(
                row.episode,
                row.phase,
                reward_by_ep.get(row.episode, 0.0),
                row.deadline_frac,
                row.energy_j,
                row.response_s,
            )
        )
    agent.episodes_trained += n_episodes
    return stats_rows


def run_live_evaluation(
    name: str,
    node: NodeConfig,
    channels: Sequence[ChannelConfig],
    workload: WorkloadConfig,
    reward_params: RewardParams,
    n_episodes: int,
    tasks_per_episode: int,
    seed: int,
    agent: Optional[E2daAgent] = None,
) -> List[MetricsRow]:
    """Live-mode frozen-policy rollout; oracle policies project at decision
    time from the current system snapshot."""
    from .baselines import ProjectionSet as PS

    rand_rng = substream(seed, "logging-policy")
    n_actions = node.n_channels + 1
    reward_by_ep: Dict[int, float] = {}
    episode_of: Dict[int, int] = {}

    def choose(sim: Simulator, task: Task, episode: int) -> int:
        episode_of[task.task_id] = episode
        if name == "e2da":
            return agent.act(normalize_context(task, workload), 0.0)
        if name in ORACLES:
            return ORACLES[name](PS(task.task_id, sim.projections(task)))
        if name == "random":
            return int(rand_rng.integers(n_actions))
        raise ValueError(f"unknown policy {name!r}")

    def on_outcome(out: TaskOutcome) -> None:
        ep = episode_of.pop(out.task_id)
        reward_by_ep[ep] = reward_by_ep.get(ep, 0.0) + compute_reward(out, reward_params)

    rows, _ = _live_rollout(
        node, channels, workload, seed, n_episodes, tasks_per_episode, choose, on_outcome, phase="test"
    )
    return [
        MetricsRow(
            r.episode, r.phase, reward_by_ep.get(r.episode, 0.0), r.deadline_frac, r.energy_j, r.response_s
        )
        for r in rows
    ]


def calibrate_efficiency_scale_live(
    node: NodeConfig,
    channels: Sequence[ChannelConfig],
    workload: WorkloadConfig,
    seed: int,
    n_tasks: int = 2000,
    percentile: float = 99.0,
) -> float:
    """Live-mode analogue of the dataset calibration: a short random-policy
    run whose realized efficiencies set the normalizer."""
    rng = substream(seed, "calibration-actions")
    n_actions = node.n_channels + 1
    _, outcomes = _live_rollout(
        node,
        channels,
        workload,
        seed,
        1,
        n_tasks,
        lambda sim, task, ep: int(rng.integers(n_actions)),
        phase="train",
    )
    effs = [o.size_bits / (o.total_s * o.e_total_j) for o in outcomes]
    return float(np.percentile(np.asarray(effs), percentile))
