"""The two network architectures: engagement sequence classifiers and the
action-value network that decides when to ask for a label.

Both are single-cell LSTMs unrolled over their input sequence. The classifier
applies a shared fully-connected ReLU head to every step's hidden state,
averages over steps, then squashes with an elementwise sigmoid before the
softmax (the squash can be disabled via ``sigmoid_head=False`` for ablation).
The Q-network reads the final hidden state through a ReLU into a linear
two-action head; its scores are raw (unnormalized) so they can regress to
arbitrary Bellman targets, and its recurrent state is reset on every call, so
decisions are independent of whatever was evaluated before.
"""

from __future__ import annotations

import json
import math
import os

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractViolationError


def _uniform_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class LstmCell:
    """One LSTM cell; the joint affine map packs gates as columns
    [forget | input | output | candidate], each ``hidden`` wide."""

    def __init__(self, input_dim: int, hidden: int, rng: np.random.Generator):
        self.input_dim = input_dim
        self.hidden = hidden
        self.wx = Tensor(_uniform_init(rng, (input_dim, 4 * hidden), input_dim), requires_grad=True)
        self.wh = Tensor(_uniform_init(rng, (hidden, 4 * hidden), hidden), requires_grad=True)
        self.b = Tensor(np.zeros(4 * hidden), requires_grad=True)

    def params(self, prefix: str = "") -> dict[str, Tensor]:
        return {prefix + "wx": self.wx, prefix + "wh": self.wh, prefix + "b": self.b}

    def step(self, x: Tensor, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
        """One recurrence step on a (B, input_dim) batch."""
        n = self.hidden
        if x.data.ndim != 2 or x.data.shape[1] != self.input_dim:
            raise ContractViolationError(
                f"lstm step input shape {x.data.shape}, expected (B, {self.input_dim})"
            )
        gates = ad.add(ad.add(ad.matmul(x, self.wx), ad.matmul(h, self.wh)), self.b)
        act = ad.sigmoid(ad.slice_cols(gates, 0, 3 * n))  # all three gates at once
        forget = ad.slice_cols(act, 0, n)
        into = ad.slice_cols(act, n, 2 * n)
        out = ad.slice_cols(act, 2 * n, 3 * n)
        cand = ad.tanh(ad.slice_cols(gates, 3 * n, 4 * n))
        c_new = ad.add(ad.mul(forget, c), ad.mul(into, cand))
        h_new = ad.mul(out, ad.tanh(c_new))
        return h_new, c_new


def lstm_step(
    x_t: np.ndarray, h_prev: np.ndarray, c_prev: np.ndarray, cell: LstmCell
) -> tuple[np.ndarray, np.ndarray]:
    """Single-vector convenience wrapper around ``LstmCell.step``."""
    x_t = np.asarray(x_t, dtype=np.float64)
    h_prev = np.asarray(h_prev, dtype=np.float64)
    c_prev = np.asarray(c_prev, dtype=np.float64)
    if x_t.shape != (cell.input_dim,) or h_prev.shape != (cell.hidden,) or c_prev.shape != (cell.hidden,):
        raise ContractViolationError("lstm_step dimension mismatch with cell parameters")
    with ad.no_grad():
        h, c = cell.step(Tensor(x_t[None, :]), Tensor(h_prev[None, :]), Tensor(c_prev[None, :]))
    return h.data[0], c.data[0]


class SequenceClassifier:
    """LSTM engagement classifier for one modality's (T, D) feature windows."""

    kind = "sequence_classifier"

    def __init__(
        self,
        input_dim: int,
        hidden: int = 64,
        num_classes: int = 3,
        t_steps: int = 10,
        sigmoid_head: bool = True,
        rng: np.random.Generator | None = None,
    ):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.input_dim = input_dim
        self.hidden = hidden
        self.num_classes = num_classes
        self.t_steps = t_steps
        self.sigmoid_head = sigmoid_head
        self.cell = LstmCell(input_dim, hidden, rng)
        self.wl = Tensor(_uniform_init(rng, (hidden, num_classes), hidden), requires_grad=True)
        self.bl = Tensor(np.zeros(num_classes), requires_grad=True)

    def params(self) -> dict[str, Tensor]:
        out = self.cell.params()
        out["wl"] = self.wl
        out["bl"] = self.bl
        return out

    def class_scores(self, x: np.ndarray) -> Tensor:
        """Pre-softmax class scores for a (B, T, D) batch.

        Unrolls the cell over T, pushes each hidden state through the shared
        ReLU head, averages the per-step outputs, and (by default) applies the
        elementwise sigmoid squash.
        """
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 3 or x.shape[1] != self.t_steps or x.shape[2] != self.input_dim:
            raise ContractViolationError(
                f"expected (B, {self.t_steps}, {self.input_dim}) input, got {x.shape}"
            )
        batch = x.shape[0]
        h = Tensor(np.zeros((batch, self.hidden)))
        c = Tensor(np.zeros((batch, self.hidden)))
        acc: Tensor | None = None
        for t in range(self.t_steps):
            h, c = self.cell.step(Tensor(x[:, t, :]), h, c)
            step_out = ad.relu(ad.add(ad.matmul(h, self.wl), self.bl))
            acc = step_out if acc is None else ad.add(acc, step_out)
        scores = ad.scale(acc, 1.0 / self.t_steps)
        if self.sigmoid_head:
            scores = ad.sigmoid(scores)
        return scores

    def predict_batch(self, x: np.ndarray) -> np.ndarray:
        """(B, T, D) -> (B, K) class probabilities. No tape is recorded."""
        with ad.no_grad():
            return ad.softmax(self.class_scores(x)).data

    def predict(self, x: np.ndarray) -> tuple[np.ndarray, int]:
        """One (T, D) window -> (probabilities, argmax class, low index on ties)."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.t_steps, self.input_dim):
            raise ContractViolationError(
                f"expected ({self.t_steps}, {self.input_dim}) window, got {x.shape}"
            )
        if not np.isfinite(x).all():
            raise ContractViolationError("non-finite values in input window")
        probs = self.predict_batch(x[None])[0]
        return probs, int(np.argmax(probs))

    def clone(self) -> "SequenceClassifier":
        """Independent copy (fresh parameter arrays, same values)."""
        twin = SequenceClassifier(
            self.input_dim, self.hidden, self.num_classes, self.t_steps,
            self.sigmoid_head, np.random.default_rng(0),
        )
        ours, theirs = self.params(), twin.params()
        for k in ours:
            theirs[k].data = ours[k].data.copy()
        return twin


def train_classifier(
    model: SequenceClassifier,
    x: np.ndarray,
    y: np.ndarray,
    epochs: int,
    lr: float = 0.01,
    batch_size: int = 16,
    rng: np.random.Generator | None = None,
    clip_norm: float | None = None,
) -> float | None:
    """Minimize cross-entropy on a labeled pool; mutates the model in place.

    Each epoch is one pass over the shuffled pool in minibatches, one Adam
    step per batch. Returns the pool-weighted mean loss of the final epoch,
    or None when nothing was trained (empty pool or epochs == 0).
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.intp)
    n = x.shape[0] if x.ndim == 3 else 0
    if n == 0 or epochs == 0:
        return None
    rng = rng if rng is not None else np.random.default_rng(0)
    opt = ad.Adam(model.params(), lr=lr, clip_norm=clip_norm)
    last_epoch_loss = 0.0
    for _ in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            loss = ad.cross_entropy(model.class_scores(x[idx]), y[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        last_epoch_loss = total / n
    return last_epoch_loss


class QNetwork:
    """Action-value network: state sequence in, two raw action scores out
    (index 0 = keep streaming, index 1 = ask for the label)."""

    kind = "qnetwork"
    num_actions = 2

    def __init__(
        self,
        input_dim: int,
        hidden: int = 32,
        rng: np.random.Generator | None = None,
    ):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.input_dim = input_dim
        self.hidden = hidden
        self.cell = LstmCell(input_dim, hidden, rng)
        self.wl = Tensor(_uniform_init(rng, (hidden, self.num_actions), hidden), requires_grad=True)
        self.bl = Tensor(np.zeros(self.num_actions), requires_grad=True)

    def params(self) -> dict[str, Tensor]:
        out = self.cell.params()
        out["wl"] = self.wl
        out["bl"] = self.bl
        return out

    def action_scores(self, states: np.ndarray) -> Tensor:
        """(B, L, input_dim) state sequences -> (B, 2) scores.

        The recurrent state starts at zero on every call: decisions never
        leak across samples.
        """
        states = np.asarray(states, dtype=np.float64)
        if states.ndim != 3 or states.shape[2] != self.input_dim:
            raise ContractViolationError(
                f"expected (B, L, {self.input_dim}) states, got {states.shape}"
            )
        batch = states.shape[0]
        h = Tensor(np.zeros((batch, self.hidden)))
        c = Tensor(np.zeros((batch, self.hidden)))
        for t in range(states.shape[1]):
            h, c = self.cell.step(Tensor(states[:, t, :]), h, c)
        return ad.add(ad.matmul(ad.relu(h), self.wl), self.bl)

    def scores(self, state_seq: np.ndarray) -> np.ndarray:
        """One (L, input_dim) state sequence -> length-2 score vector, no tape."""
        state_seq = np.asarray(state_seq, dtype=np.float64)
        if state_seq.ndim != 2:
            raise ContractViolationError("expected a 2-D (L, input_dim) state sequence")
        with ad.no_grad():
            return self.action_scores(state_seq[None]).data[0].copy()

    def action_probabilities(self, state_seq: np.ndarray) -> np.ndarray:
        """Softmax view of the two scores (argmax-equivalent to raw scores)."""
        with ad.no_grad():
            return ad.softmax(Tensor(self.scores(state_seq))).data

    def clone(self) -> "QNetwork":
        twin = QNetwork(self.input_dim, self.hidden, np.random.default_rng(0))
        ours, theirs = self.params(), twin.params()
        for k in ours:
            theirs[k].data = ours[k].data.copy()
        return twin


# -- checkpoints ---------------------------------------------------------------

CHECKPOINT_FORMAT = 1


def _arch_of(model) -> dict:
    if isinstance(model, SequenceClassifier):
        return {
            "input_dim": model.input_dim,
            "hidden": model.hidden,
            "num_classes": model.num_classes,
            "t_steps": model.t_steps,
            "sigmoid_head": model.sigmoid_head,
        }
    if isinstance(model, QNetwork):
        return {"input_dim": model.input_dim, "hidden": model.hidden}
    raise ContractViolationError(f"cannot checkpoint object of type {type(model)!r}")


def save_checkpoint(model, path: str) -> None:
    """Write a versioned JSON checkpoint; float64 values round-trip exactly
    (shortest-repr JSON numbers)."""
    payload = {
        "format": CHECKPOINT_FORMAT,
        "kind": model.kind,
        "arch": _arch_of(model),
        "params": {k: v.data.tolist() for k, v in sorted(model.params().items())},
    }
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True)


def load_checkpoint(path: str):
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ContractViolationError(f"unsupported checkpoint format in {path}")
    arch = payload["arch"]
    if payload["kind"] == SequenceClassifier.kind:
        model = SequenceClassifier(
            arch["input_dim"], arch["hidden"], arch["num_classes"],
            arch["t_steps"], arch["sigmoid_head"], np.random.default_rng(0),
        )
    elif payload["kind"] == QNetwork.kind:
        model = QNetwork(arch["input_dim"], arch["hidden"], np.random.default_rng(0))
    else:
        raise ContractViolationError(f"unknown checkpoint kind {payload['kind']!r}")
    params = model.params()
    for k, values in payload["params"].items():
        arr = np.asarray(values, dtype=np.float64)
        if arr.shape != params[k].data.shape:
            raise ContractViolationError(f"checkpoint shape mismatch for {k!r}")
        params[k].data = arr
    return model
