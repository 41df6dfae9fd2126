"""
Banco de evaluación: PSNR, sonda de Dirac del campo receptivo,
evaluación cruzada de sigma y reportes (CSV + mapas de huella).
"""

import logging
import math
from pathlib import Path

import numpy as np
import pandas as pd

from config import Config
from models import GAUSSIAN_KNOWN, DiracFootprint, EvalRecord, NetworkConfig, NoiseModel
from services.blindspot_net import build_network, forward, receptive_field_info
from services.errors import DimensionError, ParameterError
from services.image_io import save_image
from services.noise_models import corrupt, corruption_seed, image_sigmas, predict
from services.tensor_engine import Tensor, backward, tensor_sum
from services.training import network_from_checkpoint

logger = logging.getLogger(__name__)

CSV_COLUMNS = ['image', 'sigma_test', 'psnr_posterior', 'psnr_mean_only', 'psnr_noisy']
FOOTPRINT_GAIN = 1e6


def psnr(a, b, peak=1.0):
    """10*log10(peak^2/MSE) en float64; inf si las imágenes son idénticas"""
    a = np.asarray(a.data if isinstance(a, Tensor) else a, dtype=np.float64)
    b = np.asarray(b.data if isinstance(b, Tensor) else b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f'psnr: formas distintas {a.shape} vs {b.shape}')
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


# ==================== SONDA DE DIRAC ====================

def _center_sensitivity(net, image):
    """|d media(centro) / d entrada| para cada píxel de entrada, canales sumados"""
    x = Tensor(image, requires_grad=True)
    pred = forward(net, x)
    n, c, h, w = pred.mean.shape
    weights = np.zeros(pred.mean.shape)
    weights[:, :, h // 2, w // 2] = 1.0
    backward(tensor_sum(pred.mean, weights))
    return np.abs(x.grad.astype(np.float64)).sum(axis=(0, 1))


def dirac_probe(net_or_config, size=None, seeds=Config.PROBE_SEEDS):
    """
    Huella del campo receptivo de la salida central promediada sobre `seeds` semillas.
    Con un NetworkConfig varian los parámetros; con una red ya construida varía la entrada.
    """
    config = net_or_config if isinstance(net_or_config, NetworkConfig) else net_or_config.config
    side = receptive_field_info(config).side
    size = size or 2 * side + 1
    if size < 2 * side:
        raise ParameterError(f'imagen de sonda {size}x{size} muy pequeña: mínimo {2 * side} para D={config.depth}')
    if seeds < 1:
        raise ParameterError(f'seeds debe ser >= 1, recibido {seeds}')

    c = config.image_channels
    total = np.zeros((size, size))
    for s in range(seeds):
        if isinstance(net_or_config, NetworkConfig):
            net = build_network(config, seed=s)
            rng = np.random.default_rng(0)
        else:
            net = net_or_config
            rng = np.random.default_rng(s)
        total += _center_sensitivity(net, rng.uniform(0.0, 1.0, size=(1, c, size, size)))
    footprint = total / seeds

    rows = np.flatnonzero(footprint.any(axis=1))
    cols = np.flatnonzero(footprint.any(axis=0))
    box = (0, 0) if rows.size == 0 else (int(rows[-1] - rows[0] + 1), int(cols[-1] - cols[0] + 1))
    center_value = float(footprint[size // 2, size // 2])
    logger.info(f'🎯 Sonda de Dirac D={config.depth}: huella {box[0]}x{box[1]}, centro {center_value:g}')
    return DiracFootprint(footprint=footprint, box=box, center_value=center_value, depth=config.depth)


def render_footprint(footprint):
    """log(1 + x/max * 1e6) normalizado al rango de 16 bits"""
    values = footprint.footprint if isinstance(footprint, DiracFootprint) else np.asarray(footprint)
    peak = values.max()
    if peak <= 0:
        return np.zeros(values.shape, dtype=np.uint16)
    scaled = np.log1p(values / peak * FOOTPRINT_GAIN) / math.log1p(FOOTPRINT_GAIN)
    return np.round(scaled * 65535.0).astype(np.uint16)


# ==================== EVALUACIÓN ====================

def _evaluate(net, name, clean, noise_model, noise_label, seed):
    batch = np.asarray(clean, dtype=np.float32)[None]
    image_seed = corruption_seed(seed, name, noise_model)
    noisy, sigma_map = corrupt(batch, noise_model, image_seed)
    pred = forward(net, noisy)
    posterior_out = predict(pred, noisy, sigma_map)
    mean_out = predict(pred, noisy, sigma_map, use_mean_only=True)
    record = EvalRecord(
        image=name,
        noise=noise_label,
        sigma_test=float(image_sigmas(noise_model, noisy, image_seed)[0]),
        psnr_posterior=psnr(posterior_out, batch),
        psnr_mean_only=psnr(mean_out, batch),
        psnr_noisy=psnr(noisy, batch),
    )
    logger.info(f'📊 {name} sigma={record.sigma_test:.3f}: posterior {record.psnr_posterior:.3f} dB, '
                f'media {record.psnr_mean_only:.3f} dB, ruidosa {record.psnr_noisy:.3f} dB')
    return record


def cross_sigma_eval(checkpoint, images, names, sigma_train=None, sigma_tests=(25.0,), seed=Config.SEED):
    """
    Red entrenada con un sigma fijo evaluada en otros sigmas de prueba.
    El posterior usa el sigma de PRUEBA; semillas deterministas por (imagen, sigma).
    """
    model = checkpoint.noise_model
    if model.tag != GAUSSIAN_KNOWN:
        raise ParameterError(f'la evaluación cruzada requiere un checkpoint gaussiano de sigma fijo, no {model.to_spec()}')
    if sigma_train is not None and float(sigma_train) != model.sigma:
        logger.warning(f'⚠️ sigma_train={sigma_train} no coincide con el del checkpoint ({model.sigma})')
    sigma_train = model.sigma if sigma_train is None else float(sigma_train)
    for sigma in sigma_tests:
        if sigma < 0:
            raise ParameterError(f'sigma de prueba debe ser >= 0, recibido {sigma}')

    net = network_from_checkpoint(checkpoint)
    records = []
    for name, clean in zip(names, images):
        for sigma in sigma_tests:
            records.append(_evaluate(net, name, clean, NoiseModel.gaussian(sigma),
                                     f'gaussian:{sigma_train!r}', seed))
    return records


def protocol_eval(checkpoint, images, names, noise_model, seed=Config.SEED):
    """Evalúa bajo cualquiera de los tres protocolos de corrupción (filas por dataset)"""
    net = network_from_checkpoint(checkpoint)
    label = noise_model.to_spec()
    return [_evaluate(net, name, clean, noise_model, label, seed)
            for name, clean in zip(names, images)]


def records_frame(records):
    return pd.DataFrame([{
        'image': r.image,
        'noise': r.noise,
        'sigma_test': r.sigma_test,
        'psnr_posterior': r.psnr_posterior,
        'psnr_mean_only': r.psnr_mean_only,
        'psnr_noisy': r.psnr_noisy,
    } for r in records])


def summarize(records, by='sigma_test'):
    """PSNR promedio por (ruido, `by`); `by=None` promedia por ruido"""
    if not records:
        raise ParameterError('no hay registros que resumir')
    keys = ['noise'] if by is None else ['noise', by]
    frame = records_frame(records)
    summary = frame.groupby(keys, sort=True).agg(
        psnr_posterior=('psnr_posterior', 'mean'),
        psnr_mean_only=('psnr_mean_only', 'mean'),
        psnr_noisy=('psnr_noisy', 'mean'),
        images=('image', 'count'),
    ).reset_index()
    summary['gap'] = summary['psnr_posterior'] - summary['psnr_mean_only']
    return summary


# ==================== REPORTES ====================

def write_footprint(path, footprint):
    return save_image(path, render_footprint(footprint).astype(np.float64) / 65535.0, bits=16)


def emit_reports(records, out_dir, footprints=None):
    """CSV de resultados + mapas de huella en PNG de 16 bits; devuelve las rutas escritas"""
    if not records:
        raise ParameterError('emit_reports necesita al menos un registro')
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    csv_path = out_dir / Config.RESULTS_CSV_NAME
    records_frame(records)[CSV_COLUMNS].to_csv(csv_path, index=False)
    paths = [csv_path]
    for name, footprint in (footprints or {}).items():
        paths.append(write_footprint(out_dir / f'{name}.png', footprint))
    logger.info(f'📝 Reporte con {len(records)} filas escrito en {csv_path}')
    return paths
