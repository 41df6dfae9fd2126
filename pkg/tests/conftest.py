import numpy as np
import pytest

from models import NetworkConfig, NoiseModel, TrainConfig
from services.synthetic import make_dataset, write_dataset


@pytest.fixture
def tiny_network():
    """Red pequeña: mismas reglas estructurales, pocos canales"""
    return NetworkConfig(depth=2, forward_channels=4, branch_channels=4, head_widths=(8,))


@pytest.fixture
def tiny_train():
    return TrainConfig(lr=1e-3, steps=6, batch_size=2, patch_size=16, noise=NoiseModel.gaussian(25.0),
                       seed=3, checkpoint_interval=3, rampdown=0.5, queue_depth=1, log_every=0)


@pytest.fixture
def textures():
    return make_dataset(4, 32, seed=7)


@pytest.fixture
def texture_dir(tmp_path):
    directory = tmp_path / 'limpias'
    write_dataset(directory, 3, 24, seed=11)
    return directory


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def write_config(tmp_path):
    """Fábrica de archivos key = value para los tests de la CLI"""

    def _write(name, **values):
        path = tmp_path / name
        lines = [f"{key} = {value}" for key, value in values.items()]
        path.write_text('# configuración de prueba\n' + '\n'.join(lines) + '\n', encoding='utf-8')
        return path

    return _write
