"""
Corridas de juguete: red de profundidad 2 entrenada sobre texturas sintéticas de 64x64.
Marcadas `slow`; excluir con `pytest -m "not slow"`.
"""

import numpy as np
import pytest

from models import NetworkConfig, NoiseModel, TrainConfig
from services.eval_bench import cross_sigma_eval, summarize
from services.synthetic import make_dataset
from services.training import train

pytestmark = pytest.mark.slow


@pytest.fixture(scope='module')
def toy_run():
    network_config = NetworkConfig(depth=2, forward_channels=16, branch_channels=16, head_widths=(32,))
    train_config = TrainConfig(lr=1e-3, steps=2000, batch_size=4, patch_size=32, noise=NoiseModel.gaussian(25.0),
                               seed=0, rampdown=0.3, checkpoint_interval=0, log_every=500)
    return train(train_config, network_config, make_dataset(10, 64, seed=1))


@pytest.fixture(scope='module')
def held_out():
    images = make_dataset(10, 64, seed=99)
    return images, [f'validacion_{k:02d}' for k in range(len(images))]


@pytest.fixture(scope='module')
def sweep(toy_run, held_out):
    images, names = held_out
    records = cross_sigma_eval(toy_run.checkpoint, images, names, sigma_tests=[1.0, 5.0, 15.0, 25.0], seed=0)
    return summarize(records).set_index('sigma_test')


def test_loss_decreases(toy_run):
    first = np.mean(toy_run.losses[:50])
    last = np.mean(toy_run.losses[-50:])
    assert last < first


def test_denoising_gains_three_db(sweep):
    row = sweep.loc[25.0]
    assert row['psnr_posterior'] >= row['psnr_noisy'] + 3.0


def test_posterior_beats_mean_only_at_every_sigma(sweep):
    for sigma in (1.0, 5.0, 15.0, 25.0):
        assert sweep.loc[sigma, 'psnr_posterior'] >= sweep.loc[sigma, 'psnr_mean_only'], sigma


def test_gap_grows_at_low_noise(sweep):
    assert sweep.loc[1.0, 'gap'] >= 3.0
    assert sweep.loc[1.0, 'gap'] >= sweep.loc[25.0, 'gap'] + 2.0


def test_posterior_strictly_better_at_low_noise(sweep):
    row = sweep.loc[5.0]
    assert row['psnr_posterior'] > row['psnr_mean_only']
