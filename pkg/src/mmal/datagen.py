"""Dataset schema and a synthetic multi-modal session generator.

A sample is a 1-second window: one (T, D_m) float64 sequence per modality
plus an engagement label in {0, 1, 2}. Subjects own ordered lists of windows.
The generator stands in for a real recording corpus: group-level class
prototypes shared by everyone, per-subject class-conditional offsets whose
magnitude is the heterogeneity knob, temporally smoothed noise on top, and
per-subject class priors that can be skewed or drop classes entirely.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ContractViolationError

NUM_CLASSES = 3

MODALITY_PRESETS: dict[str, list[tuple[str, int]]] = {
    "paper": [("face", 257), ("body", 70), ("aphys", 27), ("audio", 24)],
    "desk": [("face", 8), ("body", 6), ("aphys", 4), ("audio", 4)],
}

# Low engagement dominates real sessions; high engagement is rare. The prior
# base tilts the per-subject Dirichlet toward class 0.
CLASS_PRIOR_BASE = np.array([1.5, 0.9, 0.6])

# Recordings are a mixture of three kinds of moments. Plain windows carry the
# class signal (plus the subject's drift). Ambiguous windows are transitional
# moments sitting between all levels where annotators essentially coin-flip;
# no amount of training makes them certain. Restless windows are bursts of
# exaggerated, non-discriminative motion: feature variance makes classifiers
# hedge, yet the annotated level is consistent and usually predicted right.
# Uncertainty and error therefore come apart, which only a reward-driven
# selector can exploit.
AMBIGUOUS_RATE = 0.18
RESTLESS_RATE = 0.18
RESTLESS_PULL = 0.7  # how far a restless window sits from the centroid toward its class
RESTLESS_NOISE = 2.2  # noise multiplier on restless windows


@dataclass(slots=True)
class MultiModalWindow:
    """One streamed sample: per-modality (T, D_m) sequences and an optional label."""

    subject_id: str
    index: int
    features: dict[str, np.ndarray]
    label: int | None

    def t_steps(self) -> int:
        return next(iter(self.features.values())).shape[0]

    def validate(self) -> None:
        t_values = {arr.shape[0] for arr in self.features.values()}
        if len(t_values) != 1:
            raise ContractViolationError(
                f"window {self.subject_id}/{self.index} mixes step counts {sorted(t_values)}"
            )
        if self.label is not None and self.label not in range(NUM_CLASSES):
            raise ContractViolationError(f"label {self.label!r} outside 0..{NUM_CLASSES - 1}")


@dataclass(slots=True)
class SubjectSession:
    """All windows of one subject's recording, in stream order."""

    subject_id: str
    windows: list[MultiModalWindow]

    def class_counts(self) -> np.ndarray:
        counts = np.zeros(NUM_CLASSES, dtype=np.int64)
        for w in self.windows:
            if w.label is not None:
                counts[w.label] += 1
        return counts

    def labels(self) -> np.ndarray:
        return np.asarray([w.label for w in self.windows], dtype=np.intp)


@dataclass(slots=True)
class Dataset:
    """Train/test subject sessions plus the shared window geometry."""

    t_steps: int
    modalities: list[tuple[str, int]]
    train: list[SubjectSession]
    test: list[SubjectSession]

    @property
    def modality_names(self) -> list[str]:
        return [name for name, _ in self.modalities]

    @property
    def total_dim(self) -> int:
        return sum(dim for _, dim in self.modalities)

    def all_sessions(self) -> list[SubjectSession]:
        return list(self.train) + list(self.test)


@dataclass
class GeneratorConfig:
    train_subjects: int = 6
    test_subjects: int = 4
    windows_per_subject: int = 40
    preset: str = "desk"
    modalities: list[tuple[str, int]] | None = None  # overrides preset when set
    t_steps: int = 10
    prior_skew: float = 0.8  # Dirichlet concentration; lower means more imbalance
    missing_class_rate: float = 0.25  # chance a subject has zero windows of one class
    subject_shift: float = 1.0  # scale of per-subject class-conditional mean drift
    temporal_smoothness: float = 0.7  # AR(1) coefficient of the within-window noise
    noise_scale: float = 0.6
    seed: int = 0
    subject_priors: list[list[float]] | None = None  # explicit priors, train then test

    def resolved_modalities(self) -> list[tuple[str, int]]:
        if self.modalities is not None:
            return [(str(n), int(d)) for n, d in self.modalities]
        if self.preset not in MODALITY_PRESETS:
            raise ConfigurationError(f"unknown modality preset {self.preset!r}")
        return list(MODALITY_PRESETS[self.preset])

    def validate(self) -> None:
        mods = self.resolved_modalities()
        if not mods or any(d <= 0 for _, d in mods):
            raise ConfigurationError("modality dims must be positive")
        if len({n for n, _ in mods}) != len(mods):
            raise ConfigurationError("duplicate modality names")
        if self.train_subjects < 1 or self.test_subjects < 0:
            raise ConfigurationError("need at least one training subject")
        if self.windows_per_subject < 1:
            raise ConfigurationError("windows_per_subject must be >= 1")
        if self.t_steps < 1:
            raise ConfigurationError("t_steps must be >= 1")
        if not 0.0 <= self.temporal_smoothness < 1.0:
            raise ConfigurationError("temporal_smoothness must be in [0, 1)")
        if self.noise_scale < 0 or self.subject_shift < 0 or self.prior_skew <= 0:
            raise ConfigurationError("noise_scale/subject_shift/prior_skew out of range")
        if self.subject_priors is not None:
            total = self.train_subjects + self.test_subjects
            if len(self.subject_priors) != total:
                raise ConfigurationError(f"subject_priors must list {total} priors")
            for p in self.subject_priors:
                arr = np.asarray(p, dtype=np.float64)
                if arr.shape != (NUM_CLASSES,) or (arr < 0).any() or abs(arr.sum() - 1.0) > 1e-9:
                    raise ConfigurationError(f"invalid prior {p!r}")


def _ar1_noise(rng: np.random.Generator, t: int, dim: int, rho: float, scale: float) -> np.ndarray:
    """(t, dim) noise, AR(1) over time with unit marginal variance, then scaled."""
    eps = rng.standard_normal((t, dim))
    out = np.empty_like(eps)
    out[0] = eps[0]
    damp = np.sqrt(1.0 - rho * rho)
    for step in range(1, t):
        out[step] = rho * out[step - 1] + damp * eps[step]
    return out * scale


def _subject_prior(rng: np.random.Generator, cfg: GeneratorConfig) -> np.ndarray:
    prior = rng.dirichlet(cfg.prior_skew * CLASS_PRIOR_BASE)
    if rng.random() < cfg.missing_class_rate:
        drop = int(rng.integers(NUM_CLASSES))
        prior[drop] = 0.0
        if prior.sum() <= 0:
            prior = np.full(NUM_CLASSES, 1.0 / NUM_CLASSES)
            prior[drop] = 0.0
        prior = prior / prior.sum()
    return prior


def generate(cfg: GeneratorConfig) -> Dataset:
    """Deterministic synthetic dataset from the config's seed.

    Every subject draws from the same class prototypes; heterogeneity enters
    only through the per-subject class-conditional drift, whose magnitude is
    ``subject_shift`` (zero makes all subjects identically distributed).
    """
    cfg.validate()
    mods = cfg.resolved_modalities()
    root = np.random.SeedSequence(cfg.seed)
    n_total = cfg.train_subjects + cfg.test_subjects
    proto_seq, *subject_seqs = root.spawn(1 + n_total)
    proto_rng = np.random.default_rng(proto_seq)

    # Group prototypes: one temporally smoothed (T, D_m) sequence per class and modality.
    prototypes = {
        (k, name): _ar1_noise(proto_rng, cfg.t_steps, dim, cfg.temporal_smoothness, 1.0)
        for k in range(NUM_CLASSES)
        for name, dim in mods
    }

    def make_session(which: str, local_idx: int, global_idx: int) -> SubjectSession:
        rng = np.random.default_rng(subject_seqs[global_idx])
        if cfg.subject_priors is not None:
            prior = np.asarray(cfg.subject_priors[global_idx], dtype=np.float64)
        else:
            prior = _subject_prior(rng, cfg)
        # Style drift: each class's windows slide toward a random mixture of
        # the other classes' prototypes, independently per modality (one
        # person's body may read as a different level than their voice).
        # This breaks group classifiers on a new subject and makes their
        # modalities disagree there, while the subject's own classes stay
        # separable. Drift amounts are bounded away from 0 and 1 so no class
        # fully collapses onto another one.
        offsets: dict[tuple[int, str], np.ndarray] = {}
        for k in range(NUM_CLASSES):
            others = [j for j in range(NUM_CLASSES) if j != k]
            for name, dim in mods:
                weights = rng.random(len(others))
                weights /= weights.sum()
                amount = cfg.subject_shift * rng.uniform(0.4, 0.9)
                drift = sum(
                    w * (prototypes[(j, name)] - prototypes[(k, name)])
                    for w, j in zip(weights, others)
                )
                offsets[(k, name)] = amount * drift
        subject_id = f"{which}{local_idx:02d}"
        windows = []
        centroids = {
            name: sum(prototypes[(k, name)] for k in range(NUM_CLASSES)) / NUM_CLASSES
            for name, _ in mods
        }
        support = np.flatnonzero(prior > 0)
        for j in range(cfg.windows_per_subject):
            kind = rng.random()
            feats = {}
            if kind < AMBIGUOUS_RATE:
                # coin-flip annotation among the subject's observed levels
                label = int(rng.choice(support))
                for name, dim in mods:
                    noise = _ar1_noise(
                        rng, cfg.t_steps, dim, cfg.temporal_smoothness, cfg.noise_scale
                    )
                    feats[name] = centroids[name] + noise
            elif kind < AMBIGUOUS_RATE + RESTLESS_RATE:
                label = int(rng.choice(NUM_CLASSES, p=prior))
                for name, dim in mods:
                    noise = _ar1_noise(
                        rng, cfg.t_steps, dim, cfg.temporal_smoothness,
                        cfg.noise_scale * RESTLESS_NOISE,
                    )
                    toward = centroids[name] + RESTLESS_PULL * (
                        prototypes[(label, name)] - centroids[name]
                    )
                    feats[name] = toward + noise
            else:
                label = int(rng.choice(NUM_CLASSES, p=prior))
                for name, dim in mods:
                    noise = _ar1_noise(
                        rng, cfg.t_steps, dim, cfg.temporal_smoothness, cfg.noise_scale
                    )
                    feats[name] = prototypes[(label, name)] + offsets[(label, name)] + noise
            windows.append(MultiModalWindow(subject_id, j, feats, label))
        return SubjectSession(subject_id, windows)

    train = [make_session("train", i, i) for i in range(cfg.train_subjects)]
    test = [
        make_session("test", i, cfg.train_subjects + i) for i in range(cfg.test_subjects)
    ]
    return Dataset(cfg.t_steps, mods, train, test)


@dataclass(slots=True)
class Normalization:
    """Per-feature mean/std fit on training windows only; std floored at 1e-8."""

    mean: dict[str, np.ndarray]
    std: dict[str, np.ndarray]

    def apply(self, features: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        return {
            name: (arr - self.mean[name]) / self.std[name] for name, arr in features.items()
        }


STD_FLOOR = 1e-8


def zscore_fit_apply(
    train_sessions: list[SubjectSession], sessions: list[SubjectSession]
) -> tuple[list[SubjectSession], Normalization]:
    """Fit per-feature statistics on the training sessions, normalize ``sessions``.

    Returns fresh sessions (inputs untouched) plus the fitted parameters.
    """
    if not train_sessions or not any(s.windows for s in train_sessions):
        raise ContractViolationError("no training windows to fit normalization on")
    names = list(train_sessions[0].windows[0].features.keys())
    mean: dict[str, np.ndarray] = {}
    std: dict[str, np.ndarray] = {}
    for name in names:
        rows = np.concatenate(
            [w.features[name] for s in train_sessions for w in s.windows], axis=0
        )
        mean[name] = rows.mean(axis=0)
        std[name] = np.maximum(rows.std(axis=0), STD_FLOOR)
    norm = Normalization(mean, std)
    out = [
        SubjectSession(
            s.subject_id,
            [
                MultiModalWindow(w.subject_id, w.index, norm.apply(w.features), w.label)
                for w in s.windows
            ],
        )
        for s in sessions
    ]
    return out, norm


def normalize_dataset(ds: Dataset) -> tuple[Dataset, Normalization]:
    """Fit on the train split, apply to everything."""
    normalized, norm = zscore_fit_apply(ds.train, ds.all_sessions())
    n_train = len(ds.train)
    return (
        Dataset(ds.t_steps, list(ds.modalities), normalized[:n_train], normalized[n_train:]),
        norm,
    )


def discretize_engagement(scores) -> np.ndarray:
    """Continuous per-second engagement in [-1, 1] to levels {0, 1, 2}.

    Bin edges: low up to and including 0.5, medium up to and including 0.8,
    high above 0.8.
    """
    arr = np.asarray(scores, dtype=np.float64)
    if arr.size and ((arr < -1.0) | (arr > 1.0)).any():
        raise ContractViolationError("engagement scores must lie in [-1, 1]")
    return np.where(arr <= 0.5, 0, np.where(arr <= 0.8, 1, 2)).astype(np.intp)


def stack_windows(
    windows: list[MultiModalWindow], modalities: list[tuple[str, int]]
) -> dict[str, np.ndarray]:
    """Contiguous (N, T, D_m) feature blocks per modality, in window order."""
    return {
        name: np.stack([w.features[name] for w in windows]) for name, _ in modalities
    }
