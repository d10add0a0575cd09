"""Episodic joint training of the classifier ensemble and the ask/no-ask
policy over the pooled training stream.

Each episode shuffles the pooled windows, streams them one by one, lets the
policy decide which labels to buy until the budget fills, stores every
decision as a replay transition (terminal when the budget fills), takes one
Q-learning step per stored transition, and finally trains every modality
classifier on the episode's labeled pool. Models carry over between episodes;
the labeled pool does not.

Classifiers only change at episode end, so each episode evaluates the whole
ensemble over the stream once, in a single batched pass, before streaming.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import policy as pol
from .datagen import Dataset, MultiModalWindow, stack_windows
from .errors import ConfigurationError, ContractViolationError
from .fusion import ClassifierEnsemble, concat_stacks
from .models import QNetwork, train_classifier
from .policy import (
    ASK,
    CONT0,
    CONT1,
    DecisionContext,
    PolicyState,
    ReplayMemory,
    RewardSpec,
    Transition,
)


@dataclass
class TrainConfig:
    budget: int = 10
    episodes: int = 100
    epochs_per_episode: int = 10
    mode: str = CONT0
    rewards: RewardSpec = field(default_factory=RewardSpec)
    lr_q: float = 0.001
    lr_classifier: float = 0.01
    classifier_batch: int = 16
    classifier_hidden: int = 64
    q_hidden: int = 32
    sigmoid_head: bool = True
    replay_capacity: int = 10_000
    q_batch: int = 32
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_episodes: int | None = None  # defaults to episodes // 2
    clip_norm: float | None = None
    seed: int = 0

    def validate(self) -> None:
        if self.budget < 1:
            raise ConfigurationError("budget must be >= 1")
        if self.episodes < 1 or self.epochs_per_episode < 0:
            raise ConfigurationError("episodes must be >= 1 and epochs >= 0")
        if self.mode not in (CONT0, CONT1):
            raise ConfigurationError(f"unknown state mode {self.mode!r}")
        if not 0.0 <= self.eps_end <= self.eps_start <= 1.0:
            raise ConfigurationError("need 0 <= eps_end <= eps_start <= 1")

    def epsilon(self, episode: int) -> float:
        """Linear decay from eps_start to eps_end over the first half of
        training (or the configured number of episodes), then flat."""
        span = self.eps_decay_episodes
        if span is None:
            span = max(1, self.episodes // 2)
        frac = min(1.0, episode / span) if span > 0 else 1.0
        return self.eps_start + (self.eps_end - self.eps_start) * frac


@dataclass(slots=True)
class EpisodeLog:
    episode: int
    scanned: int
    acquired: int
    budget_filled: bool
    cumulative_reward: float
    mean_bellman_loss: float | None
    classifier_losses: dict[str, float | None]

    def to_json(self) -> str:
        return json.dumps(
            {
                "episode": self.episode,
                "scanned": self.scanned,
                "acquired": self.acquired,
                "budget_filled": self.budget_filled,
                "cumulative_reward": self.cumulative_reward,
                "mean_bellman_loss": self.mean_bellman_loss,
                "classifier_losses": self.classifier_losses,
            },
            sort_keys=True,
        )


@dataclass
class TrainResult:
    ensemble: ClassifierEnsemble
    qnetwork: QNetwork | None
    logs: list[EpisodeLog]
    memory: ReplayMemory | None


def write_episode_logs(logs: list[EpisodeLog], path: str) -> None:
    with open(path, "w") as fh:
        for log in logs:
            fh.write(log.to_json() + "\n")


def _pooled_stream(ds: Dataset) -> list[MultiModalWindow]:
    windows = [w for s in ds.train for w in s.windows]
    if not windows:
        raise ConfigurationError("empty training dataset")
    for w in windows:
        if w.label is None:
            raise ConfigurationError(
                f"training window {w.subject_id}/{w.index} has no label"
            )
    return windows


class _StreamTables:
    """Per-run precomputed blocks: stacked features, labels, raw-state matrix."""

    def __init__(self, ds: Dataset, windows: list[MultiModalWindow], mode: str):
        self.stacks = stack_windows(windows, ds.modalities)
        self.labels = np.asarray([w.label for w in windows], dtype=np.intp)
        self.mode = mode
        self.step_dim = pol.state_dim(mode, ds.modalities)
        if mode == CONT1:
            seqs = concat_stacks(self.stacks, [n for n, _ in ds.modalities])
            self.raw_states = seqs.reshape(len(windows), -1)
        else:
            self.raw_states = None

    def episode_eval(self, ensemble: ClassifierEnsemble):
        """One batched ensemble pass over every pooled window."""
        probs, classes, conf, votes = ensemble.evaluate_stacks(self.stacks)
        if self.mode == CONT0:
            parts = []
            for i in range(probs.shape[1]):
                parts.append(probs[:, i, :])
                parts.append(conf[:, i : i + 1])
            states = np.concatenate(parts, axis=1)
        else:
            states = self.raw_states
        return probs, conf, votes, states


def _make_state(tables: _StreamTables, states: np.ndarray, i: int) -> PolicyState:
    return PolicyState(tables.mode, states[i], tables.step_dim)


def run_mmql(ds: Dataset, config: TrainConfig) -> TrainResult:
    """Joint budgeted training of the ensemble and the Q-policy."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    windows = _pooled_stream(ds)
    ensemble = ClassifierEnsemble.create(
        ds.modalities, ds.t_steps, config.classifier_hidden, config.sigmoid_head, rng
    )
    tables = _StreamTables(ds, windows, config.mode)
    q = QNetwork(tables.step_dim, hidden=config.q_hidden, rng=rng)
    q_opt = ad.Adam(q.params(), lr=config.lr_q, clip_norm=config.clip_norm)
    memory = ReplayMemory(config.replay_capacity)
    spec = config.rewards
    n = len(windows)
    logs: list[EpisodeLog] = []

    for episode in range(config.episodes):
        epsilon = config.epsilon(episode)
        order = rng.permutation(n)
        _, _, votes, states = tables.episode_eval(ensemble)
        pool: list[int] = []
        cum_reward = 0.0
        losses: list[float] = []
        scanned = 0
        filled = False
        for pos in range(n):
            i = int(order[pos])
            scanned += 1
            state = _make_state(tables, states, i)
            action = pol.select_action(q, state, epsilon, rng)
            if action == ASK:
                pool.append(i)
            r = pol.reward(action, int(votes[i]), int(tables.labels[i]), spec)
            cum_reward += r
            if len(pool) == config.budget:
                memory.push(Transition(state, action, r, None))
                filled = True
                break
            if pos + 1 < n:
                nxt = _make_state(tables, states, int(order[pos + 1]))
                memory.push(Transition(state, action, r, nxt))
                loss = pol.q_update(q, q_opt, memory, config.q_batch, spec, rng)
                if loss is not None:
                    losses.append(loss)
            # A stream that ends before the budget fills leaves the final
            # decision without a successor; nothing is stored for it.
        clf_losses = _train_ensemble(ensemble, tables, pool, config, rng)
        logs.append(
            EpisodeLog(
                episode=episode,
                scanned=scanned,
                acquired=len(pool),
                budget_filled=filled,
                cumulative_reward=cum_reward,
                mean_bellman_loss=float(np.mean(losses)) if losses else None,
                classifier_losses=clf_losses,
            )
        )
    return TrainResult(ensemble, q, logs, memory)


def run_baseline(ds: Dataset, config: TrainConfig, strategy: str) -> TrainResult:
    """Same episodic loop with a heuristic selector and no Q-network."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    windows = _pooled_stream(ds)
    ensemble = ClassifierEnsemble.create(
        ds.modalities, ds.t_steps, config.classifier_hidden, config.sigmoid_head, rng
    )
    tables = _StreamTables(ds, windows, config.mode)
    n = len(windows)
    spec = config.rewards
    logs: list[EpisodeLog] = []

    for episode in range(config.episodes):
        order = rng.permutation(n)
        probs, conf, votes, _ = tables.episode_eval(ensemble)
        selector = pol.make_baseline_selector(strategy, config.budget, n, rng)
        pool: list[int] = []
        cum_reward = 0.0
        scanned = 0
        filled = False
        for pos in range(n):
            i = int(order[pos])
            scanned += 1
            ctx = DecisionContext(state=None, probs=probs[i], confidences=conf[i])
            action = ASK if selector.wants_label(ctx) else pol.NO_ASK
            if action == ASK:
                pool.append(i)
            cum_reward += pol.reward(action, int(votes[i]), int(tables.labels[i]), spec)
            if len(pool) == config.budget:
                filled = True
                break
        clf_losses = _train_ensemble(ensemble, tables, pool, config, rng)
        logs.append(
            EpisodeLog(
                episode=episode,
                scanned=scanned,
                acquired=len(pool),
                budget_filled=filled,
                cumulative_reward=cum_reward,
                mean_bellman_loss=None,
                classifier_losses=clf_losses,
            )
        )
    return TrainResult(ensemble, None, logs, None)


def _train_ensemble(
    ensemble: ClassifierEnsemble,
    tables: _StreamTables,
    pool: list[int],
    config: TrainConfig,
    rng: np.random.Generator,
) -> dict[str, float | None]:
    out: dict[str, float | None] = {}
    idx = np.asarray(pool, dtype=np.intp)
    for name, _ in ensemble.modalities:
        out[name] = train_classifier(
            ensemble.classifiers[name],
            tables.stacks[name][idx] if len(idx) else np.zeros((0,)),
            tables.labels[idx] if len(idx) else np.zeros((0,)),
            epochs=config.epochs_per_episode,
            lr=config.lr_classifier,
            batch_size=config.classifier_batch,
            rng=rng,
            clip_norm=config.clip_norm,
        )
    return out
