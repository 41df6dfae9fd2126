"""
Texturas sintéticas para corridas de juguete y tests: estructura suave más un grano fino
independiente por píxel, que ninguna red blind-spot puede predecir desde los vecinos.
"""

import logging
from pathlib import Path

import numpy as np

from services.image_io import save_image
from services.noise_models import PHOTOMETRIC_SCALE

logger = logging.getLogger(__name__)


def make_texture(size, seed, color=False, components=6, grain=4.0):
    """
    Suma de sinusoides de baja frecuencia + un borde suave, normalizada a [0.1, 0.9],
    más grano gaussiano i.i.d. de desviación `grain` (unidades 0-255), recortado a [0, 1].
    Devuelve float32 (c, size, size).
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / float(size)

    def _layer():
        img = np.zeros((size, size))
        for _ in range(components):
            fy, fx = rng.uniform(-3.0, 3.0, size=2)
            phase = rng.uniform(0.0, 2.0 * np.pi)
            img += rng.uniform(0.2, 1.0) * np.sin(2.0 * np.pi * (fx * xx + fy * yy) + phase)
        angle = rng.uniform(0.0, np.pi)
        offset = rng.uniform(0.3, 0.7)
        distance = np.cos(angle) * xx + np.sin(angle) * yy - offset * (abs(np.cos(angle)) + abs(np.sin(angle)))
        img += 1.5 * np.tanh(distance * 12.0)
        return img

    base = _layer()
    if color:
        channels = np.stack([0.7 * base + 0.3 * _layer() for _ in range(3)])
    else:
        channels = base[None]
    lo, hi = channels.min(), channels.max()
    channels = 0.1 + 0.8 * (channels - lo) / max(hi - lo, 1e-12)
    if grain:
        channels = np.clip(channels + rng.standard_normal(channels.shape) * grain / PHOTOMETRIC_SCALE, 0.0, 1.0)
    return channels.astype(np.float32)


def make_dataset(count, size, seed, color=False):
    return [make_texture(size, seed * 100003 + k, color=color) for k in range(count)]


def write_dataset(directory, count, size, seed, color=False):
    """Escribe `count` texturas como PNG de 8 bits; devuelve las rutas"""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for k, img in enumerate(make_dataset(count, size, seed, color=color)):
        paths.append(save_image(directory / f'textura_{k:03d}.png', img, bits=8))
    logger.info(f'📁 {count} texturas de {size}x{size} escritas en {directory}')
    return paths
