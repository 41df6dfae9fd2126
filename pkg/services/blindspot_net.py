"""
Red blind-spot con convoluciones dilatadas.

Flujo forward de convoluciones convencionales (con residuales cada dos capas),
una rama blind-spot dilatada por cada profundidad (incluida la imagen cruda),
concatenación de las ramas y un head de convoluciones 1x1 que emite los
parámetros de una gaussiana por píxel.
"""

import dataclasses
import logging
import math

import numpy as np

from models import (BRANCH_CONV, FORWARD_CONV, HEAD_CONV, SKIP_CONV,
                    BlindSpotReport, GaussianPredictionMap, LayerSpec,
                    ReceptiveFieldInfo)
from services.errors import DimensionError, ParameterError
from services.tensor_engine import (KernelMask, Tensor, backward, concat_channels,
                                    conv2d, elementwise_add, leaky_activation,
                                    slice_channels, tensor_sum)

logger = logging.getLogger(__name__)

LEAKY_SLOPE = 0.1


def rf_half(depth, kernel_size=3):
    """Radio del campo receptivo del flujo forward tras `depth` convoluciones"""
    if kernel_size % 2 == 0:
        raise ParameterError(f'kernel_size debe ser impar, recibido {kernel_size}')
    if depth < 0:
        raise ParameterError(f'depth debe ser >= 0, recibido {depth}')
    return depth * (kernel_size - 1) // 2


def branch_dilation(depth, kernel_size=3):
    return 1 + rf_half(depth, kernel_size)


def receptive_field_info(config):
    k = config.kernel_size
    radii = tuple(rf_half(i, k) for i in range(config.depth + 1))
    dilations = tuple(branch_dilation(i, k) for i in range(config.depth + 1))
    side = 2 * (radii[-1] + dilations[-1] * (k - 1) // 2) + 1
    return ReceptiveFieldInfo(radii=radii, dilations=dilations, side=side)


class Network:
    """Lista ordenada de LayerSpec + tensores de parámetros por nombre"""

    def __init__(self, config, layers, params):
        self.config = config
        self.layers = list(layers)
        self.params = dict(params)
        self._specs = {spec.name: spec for spec in self.layers}

    def layer(self, name):
        return self._specs[name]

    def has_layer(self, name):
        return name in self._specs

    def parameters(self):
        """Parámetros en orden canónico (orden de capas, weight antes que bias)"""
        return [self.params[f'{spec.name}.{kind}'] for spec in self.layers for kind in ('weight', 'bias')]

    def parameter_names(self):
        return [f'{spec.name}.{kind}' for spec in self.layers for kind in ('weight', 'bias')]

    def replace_layer(self, name, **changes):
        """Copia de la red con una LayerSpec modificada (comparte los parámetros)"""
        layers = [dataclasses.replace(s, **changes) if s.name == name else s for s in self.layers]
        return Network(self.config, layers, self.params)

    def branches(self):
        return [s for s in self.layers if s.kind == BRANCH_CONV]

    def __repr__(self):
        return f'<Network D={self.config.depth} capas={len(self.layers)}>'


def parameter_count(net):
    return int(sum(p.data.size for p in net.parameters()))


def _layer_specs(config):
    k = config.kernel_size
    c = config.image_channels
    cf = config.forward_channels
    cb = config.branch_channels
    period = config.residual_period
    layers = []

    for i in range(1, config.depth + 1):
        layers.append(LayerSpec(f'forward.{i}', FORWARD_CONV, k, 1, c if i == 1 else cf, cf))
        if period and i % period == 0:
            # el origen del residual es la entrada de la conv (i - period + 1)
            source_channels = c if i - period + 1 == 1 else cf
            if source_channels != cf:
                layers.append(LayerSpec(f'skip.{i}', SKIP_CONV, 1, 1, source_channels, cf))

    for i in range(config.depth + 1):
        layers.append(LayerSpec(f'branch.{i}', BRANCH_CONV, k, branch_dilation(i, k),
                                c if i == 0 else cf, cb, blind_spot=True))

    cin = (config.depth + 1) * cb
    widths = list(config.head_widths) + [config.out_channels]
    for j, width in enumerate(widths):
        layers.append(LayerSpec(f'head.{j}', HEAD_CONV, 1, 1, cin, width))
        cin = width
    return layers


def build_network(config, seed=0):
    """
    Construye la red y sus parámetros.
    Inicialización uniforme escalada por fan-in (+-sqrt(6/fan_in)), bias en cero.
    El tap central enmascarado conserva su valor inicial: su gradiente es siempre cero.
    """
    config.validate()
    rng = np.random.default_rng(seed)
    layers = _layer_specs(config)
    params = {}
    for spec in layers:
        k = spec.kernel_size
        fan_in = spec.in_channels * k * k
        bound = math.sqrt(6.0 / fan_in)
        weight = rng.uniform(-bound, bound, size=(spec.out_channels, spec.in_channels, k, k)).astype(np.float32)
        params[f'{spec.name}.weight'] = Tensor(weight, requires_grad=True, name=f'{spec.name}.weight')
        params[f'{spec.name}.bias'] = Tensor(np.zeros(spec.out_channels, dtype=np.float32),
                                             requires_grad=True, name=f'{spec.name}.bias')

    net = Network(config, layers, params)
    logger.info(f'🧱 Red construida: D={config.depth}, ramas={config.depth + 1}, '
                f'dilataciones={[s.dilation for s in net.branches()]}, parámetros={parameter_count(net)}')
    return net


def expected_shapes(config):
    """{nombre de parámetro: forma} en orden canónico"""
    shapes = {}
    for spec in _layer_specs(config):
        k = spec.kernel_size
        shapes[f'{spec.name}.weight'] = (spec.out_channels, spec.in_channels, k, k)
        shapes[f'{spec.name}.bias'] = (spec.out_channels,)
    return shapes


def network_from_params(config, arrays):
    """Reconstruye la red a partir de arreglos ya entrenados (por ejemplo de un checkpoint)"""
    config.validate()
    shapes = expected_shapes(config)
    if set(arrays) != set(shapes):
        faltan = sorted(set(shapes) - set(arrays))
        sobran = sorted(set(arrays) - set(shapes))
        raise DimensionError(f'parámetros no coinciden con la configuración (faltan={faltan}, sobran={sobran})')
    params = {}
    for name, shape in shapes.items():
        arr = np.asarray(arrays[name], dtype=np.float32)
        if arr.size != int(np.prod(shape)):
            raise DimensionError(f'{name}: {arr.shape} no encaja en {shape}')
        params[name] = Tensor(arr.reshape(shape), requires_grad=True, name=name)
    return Network(config, _layer_specs(config), params)


def _apply(net, spec, x):
    mask = KernelMask.blind_spot(spec.kernel_size) if spec.blind_spot else None
    return conv2d(x, net.params[f'{spec.name}.weight'], net.params[f'{spec.name}.bias'],
                  dilation=spec.dilation, mask=mask)


def forward(net, image):
    """Evalúa la red -> GaussianPredictionMap con el mismo tamaño espacial que la entrada"""
    if not isinstance(image, Tensor):
        image = Tensor(image)
    if image.ndim != 4:
        raise DimensionError(f'la imagen debe ser 4-D (N,C,H,W), recibido {image.shape}')
    config = net.config
    c = config.image_channels
    if image.shape[1] != c:
        raise DimensionError(f'la red espera {c} canales, la imagen tiene {image.shape[1]}')

    period = config.residual_period
    stream_inputs = {}
    features = [image]
    h = image
    for i in range(1, config.depth + 1):
        stream_inputs[i] = h
        out = leaky_activation(_apply(net, net.layer(f'forward.{i}'), h), LEAKY_SLOPE)
        if period and i % period == 0:
            source = stream_inputs[i - period + 1]
            if net.has_layer(f'skip.{i}'):
                source = _apply(net, net.layer(f'skip.{i}'), source)
            out = elementwise_add(out, source)
        h = out
        features.append(h)

    branches = []
    for spec in net.branches():
        depth = int(spec.name.split('.')[1])
        branches.append(leaky_activation(_apply(net, spec, features[depth]), LEAKY_SLOPE))

    z = concat_channels(branches)
    heads = [s for s in net.layers if s.kind == HEAD_CONV]
    for j, spec in enumerate(heads):
        z = _apply(net, spec, z)
        if j < len(heads) - 1:
            z = leaky_activation(z, LEAKY_SLOPE)

    mean = slice_channels(z, 0, c)
    cov_params = slice_channels(z, c, config.out_channels)
    return GaussianPredictionMap(mean=mean, cov_params=cov_params)


def check_positions(size):
    """Centro, esquinas y puntos medios de los bordes"""
    last = size - 1
    mid = size // 2
    return [(mid, mid), (0, 0), (0, last), (last, 0), (last, last),
            (0, mid), (mid, 0), (last, mid), (mid, last)]


def assert_blind_spot(net, size=None, seed=0):
    """
    Prueba de gradiente: d salida(y,x) / d entrada(y,x) debe ser exactamente 0.
    Cada posición va en su propio elemento del batch, así un solo backward
    prueba las 9 posiciones sin que se mezclen.
    """
    side = receptive_field_info(net.config).side
    size = size or side + 2
    if size < 3:
        raise ParameterError(f'la imagen de prueba debe medir al menos 3x3 (recibido {size})')
    positions = check_positions(size)

    collapsed = [s.name for s in net.layers if s.dilation < 1]
    if collapsed:
        # con dilatación 0 todos los taps leen el píxel central
        message = f'blind-spot violado: dilatación < 1 en {collapsed}, los taps colapsan sobre el centro'
        logger.error(f'✗ {message}')
        offending = [(y, x, math.inf) for y, x in positions]
        return BlindSpotReport(success=False, positions=positions, offending=offending, message=message)

    rng = np.random.default_rng(seed)
    c = net.config.image_channels
    image = Tensor(rng.uniform(0.0, 1.0, size=(len(positions), c, size, size)), requires_grad=True)

    pred = forward(net, image)
    outputs = concat_channels([pred.mean, pred.cov_params])
    weights = np.zeros(outputs.shape, dtype=np.float64)
    for n, (y, x) in enumerate(positions):
        weights[n, :, y, x] = 1.0
    backward(tensor_sum(outputs, weights))

    grad = image.grad
    offending = []
    for n, (y, x) in enumerate(positions):
        value = float(np.abs(grad[n, :, y, x]).max())
        if value > 0:
            offending.append((y, x, value))

    if offending:
        y, x, value = offending[0]
        message = f'blind-spot violado en ({y},{x}): |grad| = {value:.3e} ({len(offending)} posiciones)'
        logger.error(f'✗ {message}')
    else:
        message = f'blind-spot OK en {len(positions)} posiciones ({size}x{size})'
        logger.info(f'✓ {message}')
    return BlindSpotReport(success=not offending, positions=positions, offending=offending, message=message)
