import numpy as np
import pytest
from hypothesis import settings

from mmal.datagen import GeneratorConfig, generate, normalize_dataset
from mmal.policy import RewardSpec
from mmal.trainer import TrainConfig

settings.register_profile("suite", deadline=None)
settings.load_profile("suite")


TINY_DIMS = [("a", 4), ("b", 3)]


def tiny_generator(**overrides) -> GeneratorConfig:
    base = dict(
        train_subjects=2,
        test_subjects=1,
        windows_per_subject=12,
        modalities=list(TINY_DIMS),
        t_steps=5,
        subject_shift=1.0,
        noise_scale=0.5,
        seed=77,
    )
    base.update(overrides)
    return GeneratorConfig(**base)


def tiny_train_config(**overrides) -> TrainConfig:
    base = dict(
        budget=3,
        episodes=5,
        epochs_per_episode=2,
        classifier_hidden=6,
        q_hidden=4,
        q_batch=8,
        classifier_batch=8,
        rewards=RewardSpec(),
        seed=5,
    )
    base.update(overrides)
    return TrainConfig(**base)


@pytest.fixture(scope="session")
def tiny_dataset():
    ds, _ = normalize_dataset(generate(tiny_generator()))
    return ds
