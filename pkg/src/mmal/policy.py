"""Everything around the Q-function: policy states, rewards, replay memory,
Bellman updates, exploration, and the random/uncertainty baseline selectors.

Two state constructions exist. ``cont0`` feeds the Q-network a compact
meta-state built from the classifier outputs: each modality contributes its
three class probabilities plus its confidence, giving M*(K+1) values (16 for
four modalities). ``cont1`` feeds the raw concatenated input features as a
length-T sequence. Asking costs a small negative reward; keeping a correct
prediction earns +1 and keeping a wrong one costs -1, so asking pays off
exactly where the fused prediction is unreliable.
"""

from __future__ import annotations

import bisect
from collections import deque
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .datagen import MultiModalWindow
from .errors import ContractViolationError
from .fusion import ClassifierEnsemble, concat_stacks, entropy, feature_concat
from .models import QNetwork

CONT0 = "cont0"
CONT1 = "cont1"
NO_ASK = 0
ASK = 1


@dataclass(slots=True)
class PolicyState:
    """Q-function input: a flat value vector plus how to fold it into steps."""

    mode: str
    values: np.ndarray  # flat, length = steps * step_dim
    step_dim: int

    def as_sequence(self) -> np.ndarray:
        return self.values.reshape(-1, self.step_dim)


@dataclass(slots=True)
class Transition:
    """One replay record; ``next_state is None`` marks an episode-ending
    (budget-filling) decision."""

    state: PolicyState
    action: int
    reward: float
    next_state: PolicyState | None


@dataclass
class RewardSpec:
    r_request: float = -0.05
    r_correct: float = 1.0
    r_incorrect: float = -1.0
    gamma: float = 0.9

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ContractViolationError("gamma must lie in [0, 1)")


def reward(action: int, y_pred: int, y_true: int, spec: RewardSpec) -> float:
    """Asking always costs r_request; keeping the fused prediction earns
    r_correct when it matches the oracle label and r_incorrect otherwise."""
    if action == ASK:
        return spec.r_request
    return spec.r_correct if y_pred == y_true else spec.r_incorrect


def meta_state_values(probs: np.ndarray, confidences: np.ndarray) -> np.ndarray:
    """Interleave each modality's class probabilities with its confidence."""
    m, k = probs.shape
    out = np.empty(m * (k + 1))
    for i in range(m):
        out[i * (k + 1) : i * (k + 1) + k] = probs[i]
        out[i * (k + 1) + k] = confidences[i]
    return out


def build_state(window: MultiModalWindow, ensemble: ClassifierEnsemble, mode: str) -> PolicyState:
    """Construct the policy state for one window under the given mode."""
    if set(ensemble.modality_names) - set(window.features):
        raise ContractViolationError("window does not cover the ensemble's modalities")
    if mode == CONT0:
        out = ensemble.evaluate_window(window)
        values = meta_state_values(out.probs, out.confidences)
        return PolicyState(CONT0, values, len(values))
    if mode == CONT1:
        seq = feature_concat(window, ensemble.modality_names)
        return PolicyState(CONT1, seq.ravel(), seq.shape[1])
    raise ContractViolationError(f"unknown state mode {mode!r}")


def state_dim(mode: str, modalities: list[tuple[str, int]], num_classes: int = 3) -> int:
    """Per-step input width of the Q-network for the given mode."""
    if mode == CONT0:
        return len(modalities) * (num_classes + 1)
    if mode == CONT1:
        return sum(d for _, d in modalities)
    raise ContractViolationError(f"unknown state mode {mode!r}")


def batch_states(mode: str, step_dim: int, flat_values: np.ndarray) -> np.ndarray:
    """(N, total) flat state values -> (N, L, step_dim) sequences."""
    n = flat_values.shape[0]
    return flat_values.reshape(n, -1, step_dim)


class ReplayMemory:
    """Bounded FIFO of transitions; full memory evicts oldest-first."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ContractViolationError("replay capacity must be >= 1")
        self.capacity = capacity
        self._items: deque[Transition] = deque(maxlen=capacity)

    def push(self, t: Transition) -> None:
        self._items.append(t)

    def __len__(self) -> int:
        return len(self._items)

    def sample(self, k: int, rng: np.random.Generator) -> list[Transition]:
        """Uniform batch; with replacement only when fewer than k are stored."""
        n = len(self._items)
        idx = rng.integers(0, n, size=k) if n < k else rng.choice(n, size=k, replace=False)
        return [self._items[i] for i in idx]


def bellman_target(t: Transition, q: QNetwork, spec: RewardSpec) -> float:
    """r for terminal transitions, else r + gamma * max_a Q(next, a)."""
    if t.next_state is None:
        return t.reward
    return t.reward + spec.gamma * float(np.max(q.scores(t.next_state.as_sequence())))


def q_update(
    q: QNetwork,
    optimizer: ad.Adam,
    memory: ReplayMemory,
    batch_size: int,
    spec: RewardSpec,
    rng: np.random.Generator,
) -> float | None:
    """One Adam step on the mean squared Bellman error of a sampled batch.

    Targets come from the live network but are held fixed for the step
    (semi-gradient). Empty memory is a no-op returning None.
    """
    if len(memory) == 0:
        return None
    batch = memory.sample(batch_size, rng)
    states = np.stack([t.state.as_sequence() for t in batch])
    actions = np.asarray([t.action for t in batch], dtype=np.intp)
    targets = np.asarray([t.reward for t in batch])
    live = [i for i, t in enumerate(batch) if t.next_state is not None]
    if live:
        next_states = np.stack([batch[i].next_state.as_sequence() for i in live])
        with ad.no_grad():
            next_scores = q.action_scores(next_states).data
        targets[live] += spec.gamma * next_scores.max(axis=1)
    picked = ad.gather_cols(q.action_scores(states), actions)
    diff = ad.sub(picked, ad.Tensor(targets))
    loss = ad.mean_all(ad.mul(diff, diff))
    optimizer.zero_grad()
    loss.backward()
    optimizer.step()
    return loss.item()


def select_action(
    q: QNetwork, state: PolicyState, epsilon: float, rng: np.random.Generator
) -> int:
    """Epsilon-greedy; greedy ties break toward not asking (lower index)."""
    if not 0.0 <= epsilon <= 1.0:
        raise ContractViolationError("epsilon must lie in [0, 1]")
    if epsilon > 0.0 and rng.random() < epsilon:
        return int(rng.integers(2))
    return int(np.argmax(q.scores(state.as_sequence())))


# -- data-selection strategies -------------------------------------------------

@dataclass(slots=True)
class DecisionContext:
    """What a selector may look at for one streamed window. Heuristic
    selectors ignore ``state``, so it may be omitted for them."""

    state: PolicyState | None
    probs: np.ndarray  # (M, K) per-modality class distributions
    confidences: np.ndarray  # (M,)


class GreedyPolicySelector:
    """Ask exactly when the trained Q-network's greedy action says so."""

    def __init__(self, q: QNetwork):
        self.q = q

    def wants_label(self, ctx: DecisionContext) -> bool:
        return int(np.argmax(self.q.scores(ctx.state.as_sequence()))) == ASK


class RandomSelector:
    """Ask with a fixed probability, typically budget / stream length."""

    def __init__(self, p_ask: float, rng: np.random.Generator):
        if not 0.0 <= p_ask <= 1.0:
            raise ContractViolationError("p_ask must lie in [0, 1]")
        self.p_ask = p_ask
        self.rng = rng

    def wants_label(self, ctx: DecisionContext) -> bool:
        return bool(self.rng.random() < self.p_ask)


class UncertaintySelector:
    """Ask when the summed classifier entropy clears a paced running quantile.

    The score is the unnormalized sum of per-modality natural-log entropies.
    The threshold is the empirical quantile at level 1 - budget_left/remaining
    of all scores seen so far, so spending tracks the budget across the
    stream. Zero scores (every classifier one-hot certain) never trigger.
    """

    def __init__(self, budget: int, stream_len: int):
        self.budget_left = budget
        self.remaining = stream_len
        self._seen: list[float] = []

    @staticmethod
    def score(probs: np.ndarray) -> float:
        return float(sum(entropy(p) for p in probs))

    def wants_label(self, ctx: DecisionContext) -> bool:
        value = self.score(ctx.probs)
        bisect.insort(self._seen, value)
        remaining = max(self.remaining, 1)
        self.remaining -= 1
        if self.budget_left <= 0 or value <= 0.0:
            return False
        if self.budget_left >= remaining:
            self.budget_left -= 1
            return True
        level = 1.0 - self.budget_left / remaining
        threshold = self._seen[min(int(level * len(self._seen)), len(self._seen) - 1)]
        if value >= threshold:
            self.budget_left -= 1
            return True
        return False


STRATEGY_RND = "rnd"
STRATEGY_UNC = "unc"


def make_baseline_selector(
    strategy: str, budget: int, stream_len: int, rng: np.random.Generator
):
    if strategy == STRATEGY_RND:
        return RandomSelector(min(1.0, budget / max(stream_len, 1)), rng)
    if strategy == STRATEGY_UNC:
        return UncertaintySelector(budget, stream_len)
    raise ContractViolationError(f"unknown baseline strategy {strategy!r}")
