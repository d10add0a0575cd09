"""Adapting the group-trained ensemble to one new subject under a label budget.

The frozen group policy scans the subject's shuffled stream and decides which
windows to have expert-labeled (the held-out ground truth plays the expert).
Queried windows leave the evaluation set; once the budget fills, scanning
stops. Every modality classifier is then fine-tuned on the queried pool, and
the fused predictions are scored on the remaining windows, before and after
adaptation, on the same evaluation set. The policy itself is never updated.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .datagen import NUM_CLASSES, SubjectSession, stack_windows
from .errors import ContractViolationError
from .fusion import ClassifierEnsemble
from .models import train_classifier
from .policy import CONT0, CONT1, DecisionContext, PolicyState
from .trainer import TrainConfig


@dataclass(slots=True)
class Metrics:
    accuracy: float  # percent
    macro_f1: float  # percent
    confusion: np.ndarray  # (K, K), rows = true class, cols = predicted

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "confusion": self.confusion.tolist(),
        }


def compute_metrics(predictions, labels, num_classes: int = NUM_CLASSES) -> Metrics:
    """Accuracy and macro F1 in percent, plus the full confusion matrix.

    The macro average runs over the classes present in the labels; classes
    that appear in neither labels nor predictions contribute nothing.
    """
    preds = np.asarray(predictions, dtype=np.intp)
    truth = np.asarray(labels, dtype=np.intp)
    if preds.size == 0 or preds.shape != truth.shape:
        raise ContractViolationError("need equal-length non-empty predictions/labels")
    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(confusion, (truth, preds), 1)
    accuracy = 100.0 * float((preds == truth).mean())
    f1_values = []
    for k in sorted(set(truth.tolist())):
        tp = confusion[k, k]
        fp = confusion[:, k].sum() - tp
        fn = confusion[k, :].sum() - tp
        denom = 2 * tp + fp + fn
        f1_values.append(2.0 * tp / denom if denom else 0.0)
    return Metrics(accuracy, 100.0 * float(np.mean(f1_values)), confusion)


@dataclass
class PersonalizationResult:
    subject_id: str
    budget: int
    budget_used: int
    scanned: int
    queried_indices: list[int]
    evaluation_empty: bool
    metrics_before: Metrics | None
    metrics_after: Metrics | None

    def to_json(self) -> str:
        return json.dumps(
            {
                "subject_id": self.subject_id,
                "budget": self.budget,
                "budget_used": self.budget_used,
                "scanned": self.scanned,
                "queried_indices": self.queried_indices,
                "evaluation_empty": self.evaluation_empty,
                "metrics_before": self.metrics_before.to_dict() if self.metrics_before else None,
                "metrics_after": self.metrics_after.to_dict() if self.metrics_after else None,
            },
            sort_keys=True,
        )


def personalize_subject(
    session: SubjectSession,
    ensemble: ClassifierEnsemble,
    selector,
    budget: int,
    config: TrainConfig,
    rng: np.random.Generator,
    mode: str = CONT0,
) -> tuple[PersonalizationResult, ClassifierEnsemble]:
    """Scan, query, fine-tune, evaluate. Returns the result and the adapted
    ensemble; the group ensemble and the selector's policy stay untouched.

    A zero budget degenerates to pure evaluation (before == after). Session
    windows must carry labels (they stand in for the expert oracle).
    """
    windows = session.windows
    if not windows:
        raise ContractViolationError(f"subject {session.subject_id} has no windows")
    for w in windows:
        if w.label is None:
            raise ContractViolationError("personalization windows need oracle labels")
    n = len(windows)
    stacks = stack_windows(windows, ensemble.modalities)
    labels = np.asarray([w.label for w in windows], dtype=np.intp)
    probs, _, conf, votes = ensemble.evaluate_stacks(stacks)
    if mode == CONT0:
        parts = []
        for i in range(probs.shape[1]):
            parts.append(probs[:, i, :])
            parts.append(conf[:, i : i + 1])
        state_values = np.concatenate(parts, axis=1)
        step_dim = state_values.shape[1]
    elif mode == CONT1:
        from .fusion import concat_stacks

        seqs = concat_stacks(stacks, ensemble.modality_names)
        state_values = seqs.reshape(n, -1)
        step_dim = seqs.shape[2]
    else:
        raise ContractViolationError(f"unknown state mode {mode!r}")

    order = rng.permutation(n)
    queried: list[int] = []
    scanned = 0
    for pos in range(n):
        if len(queried) >= budget:
            break
        i = int(order[pos])
        scanned += 1
        ctx = DecisionContext(
            state=PolicyState(mode, state_values[i], step_dim),
            probs=probs[i],
            confidences=conf[i],
        )
        if selector.wants_label(ctx):
            queried.append(i)
        if len(queried) >= budget:
            break

    queried_set = set(queried)
    eval_idx = np.asarray([i for i in range(n) if i not in queried_set], dtype=np.intp)
    adapted = ensemble.clone()
    result = PersonalizationResult(
        subject_id=session.subject_id,
        budget=budget,
        budget_used=len(queried),
        scanned=scanned,
        queried_indices=sorted(queried),
        evaluation_empty=len(eval_idx) == 0,
        metrics_before=None,
        metrics_after=None,
    )
    if len(eval_idx) == 0:
        return result, adapted

    result.metrics_before = compute_metrics(votes[eval_idx], labels[eval_idx])
    if queried:
        q_idx = np.asarray(queried, dtype=np.intp)
        for name, _ in adapted.modalities:
            train_classifier(
                adapted.classifiers[name],
                stacks[name][q_idx],
                labels[q_idx],
                epochs=config.epochs_per_episode,
                lr=config.lr_classifier,
                batch_size=config.classifier_batch,
                rng=rng,
                clip_norm=config.clip_norm,
            )
        eval_stacks = {name: stacks[name][eval_idx] for name, _ in adapted.modalities}
        _, _, _, votes_after = adapted.evaluate_stacks(eval_stacks)
        result.metrics_after = compute_metrics(votes_after, labels[eval_idx])
    else:
        result.metrics_after = result.metrics_before
    return result, adapted
