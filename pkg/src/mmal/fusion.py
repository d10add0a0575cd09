"""Combining per-modality classifier outputs into one engagement estimate.

Model-level fusion is a majority vote over the modality classifiers, breaking
vote ties by the most confident voter and double ties toward the lower class.
Confidence is one minus the entropy of a classifier's class distribution,
normalized by log K so it lands in [0, 1]. Feature-level fusion instead
concatenates all modality features into one wide input for a single model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .datagen import Dataset, MultiModalWindow, SubjectSession
from .errors import ConfigurationError, ContractViolationError
from .models import SequenceClassifier, load_checkpoint, save_checkpoint

MODEL_FUSION = "model-f"
FEATURE_FUSION = "feature-f"
CONCAT_MODALITY = "concat"


def entropy(p: np.ndarray) -> float:
    """Natural-log entropy with the 0*log(0) = 0 convention."""
    p = np.asarray(p, dtype=np.float64)
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def confidence(p: np.ndarray) -> float:
    """1 - H(p)/log(K): 0 for uniform distributions, 1 for one-hot ones."""
    p = np.asarray(p, dtype=np.float64)
    value = 1.0 - entropy(p) / math.log(len(p))
    return float(min(1.0, max(0.0, value)))


def confidences_rows(probs: np.ndarray) -> np.ndarray:
    """Row-wise confidence of an (N, K) probability array."""
    k = probs.shape[-1]
    safe = np.where(probs > 0, probs, 1.0)
    h = -(np.where(probs > 0, probs, 0.0) * np.log(safe)).sum(axis=-1)
    return np.clip(1.0 - h / math.log(k), 0.0, 1.0)


@dataclass(slots=True)
class EnsembleOutput:
    """Per-modality class distributions, argmax classes, and confidences."""

    probs: np.ndarray  # (M, K)
    classes: np.ndarray  # (M,)
    confidences: np.ndarray  # (M,)


def majority_vote_from(classes: np.ndarray, confidences: np.ndarray) -> int:
    """Vote rule on raw arrays; ties go to the most confident voter among the
    tied classes, double ties to the lower class index."""
    classes = np.asarray(classes, dtype=np.intp)
    if classes.size == 0:
        raise ContractViolationError("majority vote over zero modalities")
    counts = np.bincount(classes)
    top = counts.max()
    tied = np.flatnonzero(counts == top)
    if len(tied) == 1:
        return int(tied[0])
    in_tie = np.isin(classes, tied)
    best = np.asarray(confidences)[in_tie].max()
    winners = classes[in_tie][np.asarray(confidences)[in_tie] == best]
    return int(winners.min())


def majority_vote(output: EnsembleOutput) -> int:
    return majority_vote_from(output.classes, output.confidences)


def majority_votes(classes: np.ndarray, confidences: np.ndarray) -> np.ndarray:
    """Row-wise vote over (N, M) class/confidence arrays."""
    return np.asarray(
        [majority_vote_from(classes[i], confidences[i]) for i in range(classes.shape[0])],
        dtype=np.intp,
    )


def feature_concat(window: MultiModalWindow, modality_order: list[str]) -> np.ndarray:
    """Per-step concatenation of all modality features, in declared order."""
    missing = [m for m in modality_order if m not in window.features]
    if missing:
        raise ContractViolationError(f"window missing modalities {missing}")
    return np.concatenate([window.features[m] for m in modality_order], axis=1)


def concat_stacks(stacks: dict[str, np.ndarray], modality_order: list[str]) -> np.ndarray:
    """(N, T, D_m) blocks -> one (N, T, sum D_m) block."""
    return np.concatenate([stacks[m] for m in modality_order], axis=2)


class ClassifierEnsemble:
    """Ordered set of per-modality sequence classifiers sharing an architecture."""

    def __init__(self, modalities: list[tuple[str, int]], classifiers: dict[str, SequenceClassifier]):
        if set(classifiers) != {name for name, _ in modalities}:
            raise ContractViolationError("classifier set does not match modalities")
        self.modalities = list(modalities)
        self.classifiers = classifiers

    @classmethod
    def create(
        cls,
        modalities: list[tuple[str, int]],
        t_steps: int,
        hidden: int = 64,
        sigmoid_head: bool = True,
        rng: np.random.Generator | None = None,
    ) -> "ClassifierEnsemble":
        rng = rng if rng is not None else np.random.default_rng(0)
        classifiers = {
            name: SequenceClassifier(
                dim, hidden=hidden, t_steps=t_steps, sigmoid_head=sigmoid_head, rng=rng
            )
            for name, dim in modalities
        }
        return cls(modalities, classifiers)

    @property
    def modality_names(self) -> list[str]:
        return [name for name, _ in self.modalities]

    def clone(self) -> "ClassifierEnsemble":
        return ClassifierEnsemble(
            list(self.modalities), {m: c.clone() for m, c in self.classifiers.items()}
        )

    def evaluate_window(self, window: MultiModalWindow) -> EnsembleOutput:
        probs = []
        for name, _ in self.modalities:
            p, _ = self.classifiers[name].predict(window.features[name])
            probs.append(p)
        probs_arr = np.asarray(probs)
        return EnsembleOutput(
            probs=probs_arr,
            classes=np.argmax(probs_arr, axis=1),
            confidences=confidences_rows(probs_arr),
        )

    def evaluate_stacks(
        self, stacks: dict[str, np.ndarray]
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Batched evaluation of pre-stacked (N, T, D_m) feature blocks.

        Returns (probs (N, M, K), classes (N, M), confidences (N, M), votes (N,)).
        """
        per_mod = [self.classifiers[name].predict_batch(stacks[name]) for name, _ in self.modalities]
        probs = np.stack(per_mod, axis=1)
        classes = np.argmax(probs, axis=2)
        conf = confidences_rows(probs)
        votes = majority_votes(classes, conf)
        return probs, classes, conf, votes

    def save(self, directory: str) -> None:
        import json
        import os

        os.makedirs(directory, exist_ok=True)
        meta = {"modalities": [[n, d] for n, d in self.modalities]}
        with open(os.path.join(directory, "ensemble.json"), "w") as fh:
            json.dump(meta, fh, sort_keys=True)
        for name, _ in self.modalities:
            save_checkpoint(self.classifiers[name], os.path.join(directory, f"{name}.json"))

    @classmethod
    def load(cls, directory: str) -> "ClassifierEnsemble":
        import json
        import os

        with open(os.path.join(directory, "ensemble.json")) as fh:
            meta = json.load(fh)
        modalities = [(str(n), int(d)) for n, d in meta["modalities"]]
        classifiers = {
            name: load_checkpoint(os.path.join(directory, f"{name}.json"))
            for name, _ in modalities
        }
        return cls(modalities, classifiers)


def fusion_view(ds: Dataset, fusion: str) -> Dataset:
    """Rewrite a dataset for the requested fusion mode.

    ``model-f`` keeps all modalities (one classifier each, vote-fused);
    ``feature-f`` collapses them into a single wide ``concat`` modality; a
    modality name keeps only that modality (single-model configuration).
    """
    if fusion == MODEL_FUSION:
        return ds
    if fusion == FEATURE_FUSION:
        order = ds.modality_names

        def remap(w: MultiModalWindow) -> MultiModalWindow:
            return MultiModalWindow(
                w.subject_id, w.index, {CONCAT_MODALITY: feature_concat(w, order)}, w.label
            )

        mods = [(CONCAT_MODALITY, ds.total_dim)]
    elif fusion in ds.modality_names:
        dim = dict(ds.modalities)[fusion]

        def remap(w: MultiModalWindow) -> MultiModalWindow:
            return MultiModalWindow(
                w.subject_id, w.index, {fusion: w.features[fusion]}, w.label
            )

        mods = [(fusion, dim)]
    else:
        raise ConfigurationError(
            f"unknown fusion mode {fusion!r}; expected {MODEL_FUSION!r}, "
            f"{FEATURE_FUSION!r}, or one of {ds.modality_names}"
        )

    def remap_sessions(sessions: list[SubjectSession]) -> list[SubjectSession]:
        return [
            SubjectSession(s.subject_id, [remap(w) for w in s.windows]) for s in sessions
        ]

    return Dataset(ds.t_steps, mods, remap_sessions(ds.train), remap_sessions(ds.test))
