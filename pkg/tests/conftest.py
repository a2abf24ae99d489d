"""Shared fixtures: synthetic datasets and trained models are expensive, so
they are built once per session and reused across test modules."""

import pytest

from eyecontact import net, synth
from eyecontact.data import Split, Vote
from eyecontact.metrics import match_records
from eyecontact.training import TrainConfig, TrainSample, train

END_TO_END_CFG = synth.SynthConfig(n_images=800, peds_per_image=(2, 3), noise_sigma=2.0, seed=0)
SEPARABLE_CFG = synth.SynthConfig(n_images=800, peds_per_image=(2, 3), noise_sigma=0.0, seed=0)

# Convergence-oriented schedule used where tests need a model that has
# genuinely re-aligned its input weights (saliency ordering), as opposed to
# the short reference schedule.
CONVERGED_TRAIN_CFG = TrainConfig(learning_rate=1e-2, batch_size=8, epochs=15, seed=0)


def samples_for(records, split: Split) -> list[TrainSample]:
    matched = match_records([r for r in records if r.split is split], labeled_only=True)
    return [
        TrainSample(x=m.features, y=1 if m.label is Vote.LOOKING else 0) for m in matched
    ]


@pytest.fixture(scope="session")
def noisy_records():
    return synth.synth_generate(END_TO_END_CFG)


@pytest.fixture(scope="session")
def separable_records():
    return synth.synth_generate(SEPARABLE_CFG)


@pytest.fixture(scope="session")
def noisy_samples(noisy_records):
    return {split: samples_for(noisy_records, split) for split in Split}


@pytest.fixture(scope="session")
def separable_samples(separable_records):
    return {split: samples_for(separable_records, split) for split in Split}


@pytest.fixture(scope="session")
def reference_model(noisy_samples):
    """Model trained with the reference schedule (lr 1e-4, batch 64, 20 epochs)."""
    params, history = train(
        noisy_samples[Split.TRAIN], noisy_samples[Split.VAL], TrainConfig(seed=0)
    )
    return params, history


@pytest.fixture(scope="session")
def converged_model(separable_samples):
    """Model trained to convergence on the noise-free set (dropout disabled)."""
    arch = net.NetworkArch(input_dim=51, dropout_rate=0.0)
    params, history = train(
        separable_samples[Split.TRAIN], [], CONVERGED_TRAIN_CFG, arch
    )
    return params, history
