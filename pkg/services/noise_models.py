"""
Procesos de ruido, objetivo de entrenamiento y predicción bayesiana.

Convención fotométrica: imágenes en [0,1]; sigma se expresa en unidades 0-255
y se divide por 255 internamente. El ruido de Poisson se aproxima por una
gaussiana dependiente de la señal con varianza y/lambda (con piso).
"""

import logging
import math

import numpy as np

from models import (GAUSSIAN_KNOWN, GAUSSIAN_VARIABLE, NOISE_GRAMMAR, POISSON,
                    NoiseModel, PixelPosterior)
from services.errors import (DimensionError, InputError, NumericalError,
                             ParameterError, UsageError)
from services.tensor_engine import Tensor, record_op
from services.utils import derive_seed

logger = logging.getLogger(__name__)

PHOTOMETRIC_SCALE = 255.0
COV_EPSILON = 1e-6
POISSON_FLOOR = 1e-3
LOG_2PI = math.log(2.0 * math.pi)

# orden de las 6 entradas de L (triangular inferior, por filas)
TRIL_INDICES = ((0, 0), (1, 0), (1, 1), (2, 0), (2, 1), (2, 2))


def parse_noise_spec(text):
    """gaussian:SIGMA | gaussian-range:LO,HI | poisson:LAMBDA -> NoiseModel"""
    kind, _, args = str(text).strip().partition(':')
    try:
        if kind == 'gaussian':
            return NoiseModel.gaussian(float(args))
        if kind == 'gaussian-range':
            lo, hi = (float(v) for v in args.split(','))
            return NoiseModel.gaussian_range(lo, hi)
        if kind == 'poisson':
            return NoiseModel.poisson(float(args))
    except (ValueError, ParameterError) as e:
        raise UsageError(f'especificación de ruido inválida {text!r} ({e}); gramática: {NOISE_GRAMMAR}')
    raise UsageError(f'especificación de ruido desconocida {text!r}; gramática: {NOISE_GRAMMAR}')


def _as_array(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float32)


# ==================== CORRUPCIÓN ====================

def poisson_as_gaussian(noisy, lam):
    """Mapa de sigma (unidades [0,1]) de la aproximación gaussiana: sigma^2 = max(y, 1e-3)/lambda"""
    if not lam > 0:
        raise ParameterError(f'lambda debe ser > 0, recibido {lam}')
    y = _as_array(noisy).astype(np.float64)
    return Tensor(np.sqrt(np.maximum(y, POISSON_FLOOR) / lam))


def corruption_seed(seed, name, model):
    """Semilla de corrupción por (imagen, modelo); la comparten `corrupt`, `eval` y el banco"""
    return derive_seed(seed, name, model.to_spec())


def _draw_sigmas(model, n, rng):
    # sigma por imagen en unidades 0-255, float64; es el primer uso de `rng`
    if model.tag == GAUSSIAN_KNOWN:
        return np.full(n, float(model.sigma))
    if model.tag == GAUSSIAN_VARIABLE:
        return rng.uniform(model.sigma_lo, model.sigma_hi, size=n)
    raise ParameterError(f'modelo de ruido sin sigma por imagen: {model.tag}')


def image_sigmas(model, noisy, seed=0):
    """
    Sigma (0-255, float64) con el que `corrupt(..., seed)` corrompió cada imagen del batch.
    Gaussiano fijo: exactamente `model.sigma`; rango: el mismo sorteo que `corrupt`;
    Poisson: media por imagen del sigma de la aproximación gaussiana.
    """
    y = _as_array(noisy)
    n = y.shape[0]
    if model.tag == POISSON:
        approx = np.sqrt(np.maximum(y.astype(np.float64), POISSON_FLOOR) / model.lam)
        return approx.reshape(n, -1).mean(axis=1) * PHOTOMETRIC_SCALE
    return _draw_sigmas(model, n, np.random.default_rng(seed))


def corrupt(clean, model, seed=0):
    """
    Aplica el modelo de ruido a un batch (N,c,H,W) en [0,1].
    Devuelve (ruidosa, mapa de sigma en unidades [0,1]); sin recorte a [0,1].
    """
    x = _as_array(clean)
    if x.ndim != 4:
        raise DimensionError(f'se esperaba un batch 4-D (N,c,H,W), recibido {x.shape}')
    if x.size and (np.nanmin(x) < 0.0 or np.nanmax(x) > 1.0 or not np.all(np.isfinite(x))):
        raise InputError(f'la imagen limpia debe estar en [0,1] (min={x.min():.4f}, max={x.max():.4f})')

    rng = np.random.default_rng(seed)
    n, _, h, w = x.shape
    clean64 = x.astype(np.float64)

    if model.tag == POISSON:
        noisy = rng.poisson(model.lam * clean64) / model.lam
        return Tensor(noisy), poisson_as_gaussian(noisy, model.lam)

    sigmas = _draw_sigmas(model, n, rng) / PHOTOMETRIC_SCALE
    noise = rng.standard_normal(x.shape) * sigmas[:, None, None, None]
    noisy = clean64 + noise
    sigma_map = np.broadcast_to(sigmas[:, None, None, None], (n, 1, h, w))
    return Tensor(noisy), Tensor(sigma_map)


def noise_sigma_map(model, noisy, sigma=None):
    """
    Mapa de sigma ([0,1]) que usan la pérdida y el posterior.
    Para gaussianas se usa `sigma` (0-255) si se da, si no el del modelo.
    """
    y = _as_array(noisy)
    n, _, h, w = y.shape
    if model is not None and model.tag == POISSON and sigma is None:
        return poisson_as_gaussian(y, model.lam)
    if sigma is None:
        if model is None or model.tag != GAUSSIAN_KNOWN:
            raise ParameterError('se necesita un sigma explicito para este modelo de ruido')
        sigma = model.sigma
    if sigma < 0:
        raise ParameterError(f'sigma debe ser >= 0, recibido {sigma}')
    return Tensor(np.full((n, 1, h, w), sigma / PHOTOMETRIC_SCALE))


# ==================== COVARIANZA ====================

def cholesky_factor(cov_params, c):
    """
    Parámetros (N,p,H,W) -> L (N,H,W,c,c) en float64.
    Gris: p=1 es log-varianza (L = exp(s/2)); color: 6 entradas de L con la diagonal vía exp.
    """
    params = np.moveaxis(_as_array(cov_params).astype(np.float64), 1, -1)
    if c == 1:
        if params.shape[-1] != 1:
            raise DimensionError(f'gris espera 1 parámetro de covarianza, recibido {params.shape[-1]}')
        return np.exp(0.5 * params)[..., None]
    if params.shape[-1] != len(TRIL_INDICES):
        raise DimensionError(f'color espera 6 parámetros de covarianza, recibido {params.shape[-1]}')
    factor = np.zeros(params.shape[:-1] + (c, c), dtype=np.float64)
    for k, (r, col) in enumerate(TRIL_INDICES):
        factor[..., r, col] = np.exp(params[..., k]) if r == col else params[..., k]
    return factor


def covariance_from_params(cov_params, c):
    """Sigma = L L^T + eps I por píxel, forma (N,H,W,c,c)"""
    factor = cholesky_factor(cov_params, c)
    return factor @ np.swapaxes(factor, -1, -2) + COV_EPSILON * np.eye(c)


def _noise_variance(sigma_map, shape):
    """Varianza de ruido por píxel y canal, forma (N,H,W,c)"""
    s = _as_array(sigma_map).astype(np.float64)
    n, c, h, w = shape
    if s.ndim != 4 or s.shape[0] != n or s.shape[1] not in (1, c):
        raise DimensionError(f'mapa de sigma {s.shape} incompatible con {shape}')
    try:
        s = np.broadcast_to(s, (n, c, h, w))
    except ValueError:
        raise DimensionError(f'mapa de sigma {s.shape} incompatible con {shape}')
    return np.moveaxis(s, 1, -1) ** 2


# ==================== PÉRDIDA ====================

def nll_loss(pred, noisy, sigma_map):
    """
    Verosimilitud marginal negativa del píxel ruidoso bajo N(mu, Sigma + sigma^2 I),
    promediada sobre píxeles. Diferenciable respecto de media y covParams.
    """
    mean = pred.mean
    y_arr = _as_array(noisy)
    if y_arr.shape != mean.shape:
        raise DimensionError(f'ruidosa {y_arr.shape} no coincide con la media {mean.shape}')
    c = mean.shape[1]

    mu = np.moveaxis(mean.data.astype(np.float64), 1, -1)
    y = np.moveaxis(y_arr.astype(np.float64), 1, -1)
    factor = cholesky_factor(pred.cov_params, c)
    eye = np.eye(c)
    total_cov = factor @ np.swapaxes(factor, -1, -2) + COV_EPSILON * eye
    total_cov = total_cov + _noise_variance(sigma_map, mean.shape)[..., None] * eye

    sign, logdet = np.linalg.slogdet(total_cov)
    if np.any(sign <= 0):
        raise NumericalError('Sigma + sigma^2 I no es definida positiva')
    inverse = np.linalg.inv(total_cov)
    residual = y - mu
    solved = np.einsum('...ij,...j->...i', inverse, residual)
    quad = np.einsum('...i,...i->...', residual, solved)
    per_pixel = 0.5 * logdet + 0.5 * quad + 0.5 * c * LOG_2PI
    count = per_pixel.size
    value = np.full((1, 1, 1, 1), per_pixel.mean())

    def _backward(grad):
        g = float(grad.reshape(-1)[0]) / count
        grad_mu = np.moveaxis(-solved * g, -1, 1)
        # dL/dA = 1/2 (A^-1 - A^-1 r r^T A^-1); dL/dF = 2 (dL/dA) F
        grad_cov = 0.5 * g * (inverse - solved[..., :, None] * solved[..., None, :])
        grad_factor = 2.0 * grad_cov @ factor
        if c == 1:
            grad_params = (0.5 * grad_factor[..., 0, 0] * factor[..., 0, 0])[..., None]
        else:
            grad_params = np.stack(
                [grad_factor[..., r, col] * (factor[..., r, r] if r == col else 1.0)
                 for r, col in TRIL_INDICES], axis=-1)
        return grad_mu, np.moveaxis(grad_params, -1, 1)

    return record_op('nll', (mean, pred.cov_params), value, _backward)


# ==================== POSTERIOR ====================

def _fuse(mu, cov, y, noise_var):
    """
    Producto de N(mu, Sigma) y N(y, diag(noise_var)), forma estable:
    K = Sigma (Sigma + D)^-1, m = mu + K (y - mu), P = Sigma - K Sigma.
    Donde todo el ruido es cero el resultado es m = y, P = 0.
    """
    c = mu.shape[-1]
    total = cov + noise_var[..., None] * np.eye(c)
    gain = cov @ np.linalg.inv(total)
    mean = mu + np.einsum('...ij,...j->...i', gain, y - mu)
    post_cov = cov - gain @ cov
    post_cov = 0.5 * (post_cov + np.swapaxes(post_cov, -1, -2))
    exact = np.all(noise_var == 0.0, axis=-1)
    mean = np.where(exact[..., None], y, mean)
    post_cov = np.where(exact[..., None, None], 0.0, post_cov)
    return mean, post_cov


def posterior(mu, cov, y, sigma):
    """Posterior de un píxel: (mu, Sigma) de la red, valor ruidoso y, desviación sigma ([0,1])"""
    if sigma < 0:
        raise ParameterError(f'sigma debe ser >= 0, recibido {sigma}')
    mu = np.atleast_1d(np.asarray(mu, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    c = mu.shape[0]
    cov = np.asarray(cov, dtype=np.float64).reshape(c, c)
    if y.shape != (c,):
        raise DimensionError(f'y {y.shape} no coincide con mu {mu.shape}')
    noise_var = np.full(c, float(sigma) ** 2)
    mean, post_cov = _fuse(mu[None], cov[None], y[None], noise_var[None])
    return PixelPosterior(mean=mean[0], cov=post_cov[0])


def posterior_map(pred, noisy, sigma_map):
    """Posterior de todos los píxeles: media (N,c,H,W), covarianza (N,H,W,c,c)"""
    y_arr = _as_array(noisy)
    if y_arr.shape != pred.mean.shape:
        raise DimensionError(f'ruidosa {y_arr.shape} no coincide con la media {pred.mean.shape}')
    sigma_arr = _as_array(sigma_map)
    if np.any(sigma_arr < 0):
        raise ParameterError('el mapa de sigma contiene valores negativos')
    c = pred.mean.shape[1]
    mu = np.moveaxis(pred.mean.data.astype(np.float64), 1, -1)
    y = np.moveaxis(y_arr.astype(np.float64), 1, -1)
    cov = covariance_from_params(pred.cov_params, c)
    mean, post_cov = _fuse(mu, cov, y, _noise_variance(sigma_arr, pred.mean.shape))
    return PixelPosterior(mean=np.moveaxis(mean, -1, 1), cov=post_cov)


def mean_only(pred):
    """Solo la media de la red (sin usar el valor ruidoso), recortada a [0,1]"""
    return Tensor(np.clip(pred.mean.data, 0.0, 1.0))


def predict(pred, noisy, sigma_map, use_mean_only=False):
    """Estimación final recortada a [0,1]: media del posterior o solo la media"""
    if use_mean_only:
        return mean_only(pred)
    return Tensor(np.clip(posterior_map(pred, noisy, sigma_map).mean, 0.0, 1.0))
