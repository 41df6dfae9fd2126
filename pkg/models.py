"""
Registros de dominio del denoiser: configuraciones, mapas de predicción,
modelos de ruido, checkpoints y reportes.
"""

from dataclasses import dataclass, field, fields
from typing import Dict, List, Optional, Tuple

import numpy as np

from config import Config
from services.errors import ConfigError, ParameterError
from services.utils import coerce_value, to_canonical_text


# Tipos de capa
FORWARD_CONV = 'forward_conv'
BRANCH_CONV = 'branch_conv'
HEAD_CONV = 'head_conv'
SKIP_CONV = 'skip_conv'

# Tags de ruido
GAUSSIAN_KNOWN = 'gaussian_known'
GAUSSIAN_VARIABLE = 'gaussian_variable'
POISSON = 'poisson'

NOISE_GRAMMAR = 'gaussian:SIGMA | gaussian-range:LO,HI | poisson:LAMBDA'


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: str
    kernel_size: int
    dilation: int
    in_channels: int
    out_channels: int
    blind_spot: bool = False

    def __repr__(self):
        return f'<LayerSpec {self.name} k={self.kernel_size} d={self.dilation}>'


@dataclass(frozen=True)
class NetworkConfig:
    depth: int = 10
    kernel_size: int = 3
    forward_channels: int = Config.FORWARD_CHANNELS
    branch_channels: int = Config.BRANCH_CHANNELS
    # Capas ocultas del head 1x1; la última capa siempre emite out_channels
    head_widths: Tuple[int, ...] = (Config.HEAD_WIDTH, Config.HEAD_WIDTH)
    color: bool = False
    residual_period: int = 2

    # tipo de cada campo para el formato key = value
    FIELD_TYPES = {
        'depth': 'int',
        'kernel_size': 'int',
        'forward_channels': 'int',
        'branch_channels': 'int',
        'head_widths': 'ints',
        'color': 'bool',
        'residual_period': 'int',
    }

    @property
    def image_channels(self):
        return 3 if self.color else 1

    @property
    def cov_channels(self):
        # gris: log-varianza; color: 6 entradas triangulares inferiores de L
        return 6 if self.color else 1

    @property
    def out_channels(self):
        return self.image_channels + self.cov_channels

    def validate(self):
        """Lanza ConfigError con el campo culpable si la configuración es inválida"""
        if self.depth < 1:
            raise ConfigError('depth', f'debe ser >= 1 (recibido {self.depth})')
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigError('kernel_size', f'debe ser impar y positivo (recibido {self.kernel_size})')
        if self.forward_channels < 1:
            raise ConfigError('forward_channels', 'debe ser >= 1')
        if self.branch_channels < 1:
            raise ConfigError('branch_channels', 'debe ser >= 1')
        if any(w < 1 for w in self.head_widths):
            raise ConfigError('head_widths', f'todos los anchos deben ser >= 1 ({self.head_widths})')
        if self.residual_period < 0:
            raise ConfigError('residual_period', 'debe ser >= 0 (0 desactiva los residuales)')
        return self

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, values):
        kwargs = {}
        for key, raw in values.items():
            if key not in cls.FIELD_TYPES:
                raise ConfigError(key, 'clave desconocida para NetworkConfig')
            kwargs[key] = coerce_value(key, raw, cls.FIELD_TYPES[key])
        return cls(**kwargs)


@dataclass(frozen=True)
class ReceptiveFieldInfo:
    radii: Tuple[int, ...]
    dilations: Tuple[int, ...]
    side: int


@dataclass
class GaussianPredictionMap:
    """Media y parámetros de covarianza por píxel (Tensors del motor)"""

    mean: object
    cov_params: object

    @property
    def channels(self):
        return self.mean.shape[1]


@dataclass(frozen=True)
class NoiseModel:
    tag: str
    sigma: float = 0.0
    sigma_lo: float = 0.0
    sigma_hi: float = 0.0
    lam: float = 1.0

    def __post_init__(self):
        if self.tag not in (GAUSSIAN_KNOWN, GAUSSIAN_VARIABLE, POISSON):
            raise ParameterError(f'Modelo de ruido desconocido: {self.tag}')
        if self.tag == GAUSSIAN_KNOWN and self.sigma < 0:
            raise ParameterError(f'sigma debe ser >= 0 (recibido {self.sigma})')
        if self.tag == GAUSSIAN_VARIABLE:
            if self.sigma_lo < 0 or self.sigma_lo > self.sigma_hi:
                raise ParameterError(
                    f'rango de sigma inválido [{self.sigma_lo}, {self.sigma_hi}]')
        if self.tag == POISSON and not self.lam > 0:
            raise ParameterError(f'lambda debe ser > 0 (recibido {self.lam})')

    @classmethod
    def gaussian(cls, sigma):
        return cls(GAUSSIAN_KNOWN, sigma=float(sigma))

    @classmethod
    def gaussian_range(cls, lo, hi):
        return cls(GAUSSIAN_VARIABLE, sigma_lo=float(lo), sigma_hi=float(hi))

    @classmethod
    def poisson(cls, lam):
        return cls(POISSON, lam=float(lam))

    def to_spec(self):
        """Forma textual canónica, la misma gramática que acepta la CLI"""
        if self.tag == GAUSSIAN_KNOWN:
            return f'gaussian:{self.sigma!r}'
        if self.tag == GAUSSIAN_VARIABLE:
            return f'gaussian-range:{self.sigma_lo!r},{self.sigma_hi!r}'
        return f'poisson:{self.lam!r}'


@dataclass
class PixelPosterior:
    # mean: (..., c); cov: (..., c, c)
    mean: np.ndarray
    cov: np.ndarray


@dataclass(frozen=True)
class TrainConfig:
    lr: float = Config.LR
    steps: int = Config.STEPS
    batch_size: int = Config.BATCH_SIZE
    patch_size: int = Config.PATCH_SIZE
    noise: NoiseModel = field(default_factory=lambda: NoiseModel.gaussian(25.0))
    seed: int = Config.SEED
    flip_h: bool = True
    flip_v: bool = True
    rotate: bool = False
    checkpoint_interval: int = Config.CHECKPOINT_INTERVAL
    rampdown: float = Config.RAMPDOWN
    fixed_batch: bool = False
    queue_depth: int = Config.QUEUE_DEPTH
    log_every: int = Config.LOG_EVERY

    FIELD_TYPES = {
        'lr': 'float',
        'steps': 'int',
        'batch_size': 'int',
        'patch_size': 'int',
        'noise': 'noise',
        'seed': 'int',
        'flip_h': 'bool',
        'flip_v': 'bool',
        'rotate': 'bool',
        'checkpoint_interval': 'int',
        'rampdown': 'float',
        'fixed_batch': 'bool',
        'queue_depth': 'int',
        'log_every': 'int',
    }

    def validate(self, network_config=None):
        if self.lr < 0:
            raise ConfigError('lr', 'debe ser >= 0')
        if self.steps < 0:
            raise ConfigError('steps', 'debe ser >= 0')
        if self.batch_size < 1:
            raise ConfigError('batch_size', 'debe ser >= 1')
        if not 0.0 <= self.rampdown <= 1.0:
            raise ConfigError('rampdown', 'debe estar en [0, 1]')
        if self.checkpoint_interval < 0:
            raise ConfigError('checkpoint_interval', 'debe ser >= 0 (0 desactiva)')
        if self.queue_depth < 0:
            raise ConfigError('queue_depth', 'debe ser >= 0')
        if network_config is not None:
            # cada rama debe ver datos reales, no solo el padding
            max_dilation = 1 + network_config.depth * (network_config.kernel_size - 1) // 2
            minimo = 2 * max_dilation + 1
            if self.patch_size < minimo:
                raise ConfigError(
                    'patch_size', f'debe ser >= 2*dilatacion_max+1 = {minimo} (recibido {self.patch_size})')
        elif self.patch_size < 1:
            raise ConfigError('patch_size', 'debe ser >= 1')
        return self

    def to_dict(self):
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values['noise'] = self.noise.to_spec()
        return values

    @classmethod
    def from_dict(cls, values):
        kwargs = {}
        for key, raw in values.items():
            if key not in cls.FIELD_TYPES:
                raise ConfigError(key, 'clave desconocida para TrainConfig')
            kwargs[key] = coerce_value(key, raw, cls.FIELD_TYPES[key])
        return cls(**kwargs)


@dataclass
class Checkpoint:
    network_config: NetworkConfig
    train_config: TrainConfig
    params: Dict[str, np.ndarray]
    adam_m: Dict[str, np.ndarray]
    adam_v: Dict[str, np.ndarray]
    step: int = 0
    # clave del generador por paso: (semilla, paso)
    rng_state: Tuple[int, int] = (0, 0)
    version: int = 1

    @property
    def noise_model(self):
        return self.train_config.noise

    def __repr__(self):
        return f'<Checkpoint v{self.version} step={self.step} depth={self.network_config.depth}>'


@dataclass
class EvalRecord:
    image: str
    noise: str
    sigma_test: float
    psnr_posterior: float
    psnr_mean_only: float
    psnr_noisy: float

    @property
    def identical(self):
        """True si alguna PSNR es infinita (imágenes idénticas)"""
        return any(np.isinf(v) for v in (self.psnr_posterior, self.psnr_mean_only, self.psnr_noisy))


@dataclass
class RunManifest:
    command: str
    config: Dict[str, object]
    seed: int
    paths: Dict[str, str]
    version: str = Config.TOOL_VERSION

    def to_text(self):
        values = {'command': self.command, 'seed': self.seed, 'version': self.version}
        values.update({f'config.{k}': v for k, v in self.config.items()})
        values.update({f'path.{k}': v for k, v in self.paths.items()})
        return to_canonical_text(values)


@dataclass
class BlindSpotReport:
    success: bool
    positions: List[Tuple[int, int]]
    offending: List[Tuple[int, int, float]]
    message: str


@dataclass
class DiracFootprint:
    footprint: np.ndarray
    box: Tuple[int, int]
    center_value: float
    depth: Optional[int] = None

    @property
    def side(self):
        return max(self.box)
