"""
Entrenamiento auto-supervisado (solo imágenes ruidosas) y persistencia de checkpoints.

Flujo por paso: parches -> corrupt -> forward -> nll_loss -> backward -> adam_step.
Cada paso deriva sus semillas de (seed, paso), así la profundidad de la cola
productora no cambia la trayectoria y reanudar solo necesita el contador de pasos.
"""

import hashlib
import logging
import math
import queue
import struct
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import List

import numpy as np

from models import Checkpoint, NetworkConfig, TrainConfig
from services.blindspot_net import (build_network, expected_shapes, forward,
                                    network_from_params)
from services.errors import (ChecksumError, CheckpointError, ConfigError, DimensionError,
                             InputError, MagicError, NumericalError,
                             TruncatedError, VersionError)
from services.noise_models import corrupt, nll_loss
from services.tensor_engine import Tensor, backward
from services.utils import derive_seed, parse_canonical_text, to_canonical_text

logger = logging.getLogger(__name__)

MAGIC = b'BSDN'
FORMAT_VERSION = 1
CHECKSUM_BYTES = 8
STATE_PREFIX = 'checkpoint.'


# ==================== DATOS ====================

def crop_positions(shapes, patch_size, count, rng):
    """Posiciones de recorte uniformes: arreglo (count, 3) con (imagen, y, x)"""
    heights = np.array([s[-2] for s in shapes])
    widths = np.array([s[-1] for s in shapes])
    index = rng.integers(0, len(shapes), size=count)
    ys = rng.integers(0, heights[index] - patch_size + 1)
    xs = rng.integers(0, widths[index] - patch_size + 1)
    return np.stack([index, ys, xs], axis=1)


def extract_patches(images, patch_size, count, seed, flip_h=False, flip_v=False, rotate=False, names=None):
    """Batch (count, c, p, p) de recortes aleatorios con flips/rotaciones opcionales"""
    if not images:
        raise InputError('el dataset está vacío')
    channels = images[0].shape[0]
    for k, img in enumerate(images):
        nombre = names[k] if names else f'imagen #{k}'
        if img.ndim != 3 or img.shape[0] != channels:
            raise DimensionError(f'{nombre}: forma {img.shape} incompatible (se esperaban {channels} canales)')
        if img.shape[1] < patch_size or img.shape[2] < patch_size:
            raise InputError(f'{nombre}: {img.shape[1]}x{img.shape[2]} es menor que el parche de {patch_size}')

    rng = np.random.default_rng(seed)
    positions = crop_positions([img.shape for img in images], patch_size, count, rng)
    do_flip_h = rng.random(count) < 0.5
    do_flip_v = rng.random(count) < 0.5
    turns = rng.integers(0, 4, size=count)

    batch = np.empty((count, channels, patch_size, patch_size), dtype=np.float32)
    for k, (i, y, x) in enumerate(positions):
        patch = images[i][:, y:y + patch_size, x:x + patch_size]
        if flip_h and do_flip_h[k]:
            patch = patch[:, :, ::-1]
        if flip_v and do_flip_v[k]:
            patch = patch[:, ::-1, :]
        if rotate:
            patch = np.rot90(patch, turns[k], axes=(1, 2))
        batch[k] = patch
    return Tensor(batch)


def make_batch(images, config, step, names=None):
    """Parches ruidosos del paso `step` (o del paso 0 si fixed_batch)"""
    key = 0 if config.fixed_batch else step
    patches = extract_patches(images, config.patch_size, config.batch_size,
                              derive_seed(config.seed, 'patches', key),
                              flip_h=config.flip_h, flip_v=config.flip_v, rotate=config.rotate, names=names)
    return corrupt(patches, config.noise, derive_seed(config.seed, 'noise', key))


class BatchProducer:
    """
    Genera batches en un hilo aparte a traves de una cola acotada.
    queue_depth = 0 genera los batches en el hilo del optimizador.
    """

    def __init__(self, images, config, first_step, last_step, names=None):
        self.images = images
        self.names = names
        self.config = config
        self.steps = range(first_step, last_step + 1)
        self.depth = config.queue_depth
        self._queue = queue.Queue(maxsize=max(self.depth, 1))
        self._stop = threading.Event()
        self._thread = None

    def _run(self):
        for step in self.steps:
            try:
                item = (step, make_batch(self.images, self.config, step, self.names))
            except Exception as e:
                item = (step, e)
            while not self._stop.is_set():
                try:
                    self._queue.put(item, timeout=0.1)
                    break
                except queue.Full:
                    continue
            if self._stop.is_set() or isinstance(item[1], Exception):
                return

    def __enter__(self):
        if self.depth > 0:
            self._thread = threading.Thread(target=self._run, daemon=True)
            self._thread.start()
        return self

    def __exit__(self, *exc):
        self._stop.set()
        if self._thread is not None:
            self._thread.join()

    def __iter__(self):
        for step in self.steps:
            if self._thread is None:
                yield step, make_batch(self.images, self.config, step, self.names)
                continue
            got_step, batch = self._queue.get()
            if isinstance(batch, Exception):
                raise batch
            yield got_step, batch


# ==================== OPTIMIZADOR ====================

@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def zeros(cls, params):
        return cls(m={name: np.zeros(p.shape, dtype=np.float32) for name, p in params.items()},
                   v={name: np.zeros(p.shape, dtype=np.float32) for name, p in params.items()})


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Actualización Adam con corrección de sesgo; momentos guardados en float32"""
    state.t += 1
    t = state.t
    for name, param in params.items():
        g = grads.get(name)
        g = np.zeros(param.shape) if g is None else np.asarray(g, dtype=np.float64)
        if g.shape != param.shape:
            raise DimensionError(f'{name}: gradiente {g.shape} != parámetro {param.shape}')
        m = beta1 * state.m[name].astype(np.float64) + (1.0 - beta1) * g
        v = beta2 * state.v[name].astype(np.float64) + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        param.assign(param.data.astype(np.float64) - lr * m_hat / (np.sqrt(v_hat) + eps))
        state.m[name] = m.astype(np.float32)
        state.v[name] = v.astype(np.float32)
    return params, state


def learning_rate(config, step):
    """lr constante y cosine ramp-down en la fracción final `rampdown` de los pasos"""
    if config.steps == 0 or config.rampdown == 0:
        return config.lr
    ramp_start = config.steps * (1.0 - config.rampdown)
    if step <= ramp_start:
        return config.lr
    frac = (step - ramp_start) / (config.steps - ramp_start)
    return config.lr * 0.5 * (1.0 + math.cos(math.pi * min(frac, 1.0)))


# ==================== ENTRENAMIENTO ====================

@dataclass
class TrainResult:
    checkpoint: Checkpoint
    losses: List[float] = field(default_factory=list)
    first_step: int = 1


def make_checkpoint(net, train_config, state, step):
    return Checkpoint(
        network_config=net.config,
        train_config=train_config,
        params={name: np.array(p.data) for name, p in net.params.items()},
        adam_m={name: np.array(a) for name, a in state.m.items()},
        adam_v={name: np.array(a) for name, a in state.v.items()},
        step=step,
        rng_state=(train_config.seed, step),
    )


def init_checkpoint(network_config, train_config):
    """Checkpoint de la red recien inicializada (paso 0)"""
    net = build_network(network_config, seed=train_config.seed)
    return make_checkpoint(net, train_config, AdamState.zeros(net.params), 0)


def network_from_checkpoint(checkpoint):
    return network_from_params(checkpoint.network_config, checkpoint.params)


def train(train_config, network_config, images, out_dir=None, resume=None, on_step=None, names=None):
    """
    Bucle de entrenamiento. Devuelve el checkpoint final y la trayectoria de la pérdida.
    Con `out_dir` guarda checkpoints cada `checkpoint_interval` pasos; `names` identifica
    las imágenes en los errores de datos.
    """
    if resume is not None:
        network_config = resume.network_config
    train_config.validate(network_config)
    if not images:
        raise InputError('el dataset está vacío')

    if resume is not None:
        net = network_from_checkpoint(resume)
        state = AdamState(m={k: np.array(v) for k, v in resume.adam_m.items()},
                          v={k: np.array(v) for k, v in resume.adam_v.items()},
                          t=resume.step)
        start = resume.step
        logger.info(f'🔁 Reanudando desde el paso {start}')
    else:
        net = build_network(network_config, seed=train_config.seed)
        state = AdamState.zeros(net.params)
        start = 0

    logger.info('=' * 60)
    logger.info(f'INICIO DEL ENTRENAMIENTO: pasos {start + 1}..{train_config.steps}, '
                f'ruido {train_config.noise.to_spec()}, batch {train_config.batch_size}x{train_config.patch_size}')
    logger.info('=' * 60)

    losses = []
    with BatchProducer(images, train_config, start + 1, train_config.steps, names) as producer:
        for step, (noisy, sigma_map) in producer:
            for p in net.params.values():
                p.zero_grad()
            loss = nll_loss(forward(net, noisy), noisy, sigma_map)
            value = float(loss.data.reshape(-1)[0])
            if not math.isfinite(value):
                raise NumericalError(f'pérdida no finita ({value}) en el paso {step}')
            backward(loss)
            grads = {name: p.grad for name, p in net.params.items()}
            adam_step(net.params, grads, state, learning_rate(train_config, step))
            losses.append(value)
            if on_step is not None:
                on_step(step, value)
            if train_config.log_every and step % train_config.log_every == 0:
                logger.info(f'⏳ paso {step}/{train_config.steps} pérdida {value:.6f}')
            if out_dir is not None and train_config.checkpoint_interval and step % train_config.checkpoint_interval == 0:
                path = Path(out_dir) / f'ckpt_{step:06d}.bsdn'
                save_checkpoint(path, make_checkpoint(net, train_config, state, step))
                logger.info(f'💾 checkpoint guardado: {path}')

    final = make_checkpoint(net, train_config, state, max(start, train_config.steps))
    if losses:
        logger.info(f'RESUMEN: pérdida inicial {losses[0]:.6f}, final {losses[-1]:.6f}')
    return TrainResult(checkpoint=final, losses=losses, first_step=start + 1)


# ==================== CHECKPOINTS ====================

def _checkpoint_texts(checkpoint):
    network_text = to_canonical_text(checkpoint.network_config.to_dict())
    train_values = checkpoint.train_config.to_dict()
    train_values[f'{STATE_PREFIX}step'] = checkpoint.step
    train_values[f'{STATE_PREFIX}rng_seed'] = checkpoint.rng_state[0]
    train_values[f'{STATE_PREFIX}rng_step'] = checkpoint.rng_state[1]
    return network_text, to_canonical_text(train_values)


def _records(checkpoint):
    for prefix, arrays in (('param', checkpoint.params), ('adam_m', checkpoint.adam_m), ('adam_v', checkpoint.adam_v)):
        for name, arr in arrays.items():
            yield f'{prefix}/{name}', arr


def checkpoint_bytes(checkpoint):
    """
    Formato: 'BSDN', versión u32 LE, dos textos canónicos con prefijo de longitud
    (NetworkConfig, TrainConfig + estado), número de tensores, registros
    (nombre, forma 4 x u32, float32 LE) y checksum blake2b de 64 bits.
    """
    out = bytearray(MAGIC)
    out += struct.pack('<I', checkpoint.version)
    for text in _checkpoint_texts(checkpoint):
        encoded = text.encode('utf-8')
        out += struct.pack('<I', len(encoded)) + encoded
    records = list(_records(checkpoint))
    out += struct.pack('<I', len(records))
    for name, arr in records:
        arr = np.asarray(arr, dtype='<f4')
        if arr.ndim > 4:
            raise DimensionError(f'{name}: tensores de más de 4 dimensiones no soportados')
        shape = tuple(arr.shape) + (1,) * (4 - arr.ndim)
        encoded = name.encode('utf-8')
        out += struct.pack('<I', len(encoded)) + encoded
        out += struct.pack('<4I', *shape)
        out += arr.tobytes(order='C')
    out += hashlib.blake2b(bytes(out), digest_size=CHECKSUM_BYTES).digest()
    return bytes(out)


def save_checkpoint(path, checkpoint):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(checkpoint_bytes(checkpoint))
    return path


class _Reader:
    def __init__(self, data, end):
        self.data = data
        self.end = end
        self.offset = 0

    def take(self, n):
        if self.offset + n > self.end:
            raise TruncatedError(f'checkpoint truncado: se pedian {n} bytes en el offset {self.offset}')
        chunk = self.data[self.offset:self.offset + n]
        self.offset += n
        return chunk

    def u32(self, count=1):
        values = struct.unpack(f'<{count}I', self.take(4 * count))
        return values if count > 1 else values[0]


def load_checkpoint(path):
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) + 4 + CHECKSUM_BYTES:
        raise TruncatedError(f'{path}: archivo demasiado corto ({len(data)} bytes)')
    if data[:4] != MAGIC:
        raise MagicError(f'{path}: magic {data[:4]!r} != {MAGIC!r}')
    version = struct.unpack('<I', data[4:8])[0]
    if version != FORMAT_VERSION:
        raise VersionError(f'{path}: versión {version} no soportada (se espera {FORMAT_VERSION})')

    # pasada estructural: solo longitudes
    reader = _Reader(data, len(data) - CHECKSUM_BYTES)
    reader.take(8)
    texts = [reader.take(reader.u32()) for _ in range(2)]
    raw_records = []
    for _ in range(reader.u32()):
        name = reader.take(reader.u32())
        shape = reader.u32(4)
        payload = reader.take(4 * int(np.prod(shape)))
        raw_records.append((name, shape, payload))
    if reader.offset != reader.end:
        raise CheckpointError(f'{path}: {reader.end - reader.offset} bytes sobrantes antes del checksum')

    expected = hashlib.blake2b(data[:-CHECKSUM_BYTES], digest_size=CHECKSUM_BYTES).digest()
    if expected != data[-CHECKSUM_BYTES:]:
        raise ChecksumError(f'{path}: checksum inválido')

    network_config = NetworkConfig.from_dict(parse_canonical_text(texts[0].decode('utf-8'), origen=str(path)))
    train_values = parse_canonical_text(texts[1].decode('utf-8'), origen=str(path))
    state = {k[len(STATE_PREFIX):]: int(train_values.pop(k)) for k in list(train_values) if k.startswith(STATE_PREFIX)}
    train_config = TrainConfig.from_dict(train_values)

    shapes = expected_shapes(network_config)
    groups = {'param': {}, 'adam_m': {}, 'adam_v': {}}
    for name, shape, payload in raw_records:
        prefix, _, param = name.decode('utf-8').partition('/')
        if prefix not in groups or param not in shapes:
            raise CheckpointError(f'{path}: registro desconocido {name!r}')
        arr = np.frombuffer(payload, dtype='<f4').astype(np.float32)
        if arr.size != int(np.prod(shapes[param])):
            raise CheckpointError(f'{path}: {param} con forma {shape} no encaja en {shapes[param]}')
        groups[prefix][param] = arr.reshape(shapes[param])
    for prefix, arrays in groups.items():
        if set(arrays) != set(shapes):
            raise CheckpointError(f'{path}: faltan tensores {prefix}: {sorted(set(shapes) - set(arrays))}')

    return Checkpoint(
        network_config=network_config,
        train_config=train_config,
        params=groups['param'],
        adam_m=groups['adam_m'],
        adam_v=groups['adam_v'],
        step=state.get('step', 0),
        rng_state=(state.get('rng_seed', train_config.seed), state.get('rng_step', 0)),
        version=version,
    )


# ==================== ARCHIVO DE CONFIGURACIÓN ====================

def read_config_file(path):
    """
    Lee un archivo plano `key = value` con claves de NetworkConfig y TrainConfig.
    Una clave desconocida, una línea mal formada o un tipo incorrecto es ConfigError.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding='utf-8')
    except OSError as e:
        raise ConfigError(str(path), f'no se pudo leer el archivo de configuración: {e}')

    values = parse_canonical_text(text, origen=str(path))
    network_values, train_values = {}, {}
    for key, raw in values.items():
        if key in NetworkConfig.FIELD_TYPES:
            network_values[key] = raw
        elif key in TrainConfig.FIELD_TYPES:
            train_values[key] = raw
        else:
            raise ConfigError(key, f'clave desconocida en {path}')

    network_config = NetworkConfig.from_dict(network_values).validate()
    train_config = TrainConfig.from_dict(train_values).validate(network_config)
    logger.info(f'📄 Configuración leída de {path}: {len(values)} claves')
    return network_config, train_config
