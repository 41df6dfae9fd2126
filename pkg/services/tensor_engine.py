"""
Motor de tensores densos 4-D con diferenciación automática en modo reverso.

Solo implementa las operaciones que necesita la red blind-spot:
conv2d (dilatada, con máscara opcional), suma elemento a elemento,
activación leaky, concatenación y corte de canales, suma (ponderada) escalar.
Cada Tensor es también el nodo del tape: guarda el tag de la operación,
sus entradas, el valor y (tras backward) el gradiente.
"""

import logging

import numpy as np

from services.errors import DimensionError, ParameterError, UsageError

logger = logging.getLogger(__name__)

LEAF = 'leaf'


class Tensor:
    """Arreglo float32 inmutable + nodo del tape de autodiff"""

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.array(data, dtype=np.float32, copy=True)
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name
        self.op = LEAF
        self.inputs = ()
        self._backward = None
        self._exact = None

    @classmethod
    def _wrap(cls, value, requires_grad=False, op=LEAF, inputs=(), backward=None):
        # sin copia: el arreglo es recién creado por la operación
        out = cls.__new__(cls)
        value = np.asarray(value)
        arr = np.ascontiguousarray(value, dtype=np.float32)
        arr.flags.writeable = False
        out.data = arr
        out.requires_grad = requires_grad
        out.grad = None
        out.name = None
        out.op = op
        out.inputs = tuple(inputs)
        out._backward = backward
        # valor float64 previo al redondeo, si la operación lo produjo
        out._exact = value if value.dtype == np.float64 else None
        return out

    @property
    def exact(self):
        """Valor en float64: el acumulado por la operación o, en hojas, `data` ampliado"""
        return self._exact if self._exact is not None else self.data.astype(np.float64)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def assign(self, arr):
        """Reemplaza el valor de una hoja (lo usa el optimizador)"""
        if self.op != LEAF:
            raise UsageError('solo se puede reasignar el valor de una hoja del tape')
        arr = np.array(arr, dtype=np.float32, copy=True)
        if arr.shape != self.data.shape:
            raise DimensionError(f'{self.name}: forma {arr.shape} != {self.data.shape}')
        arr.flags.writeable = False
        self.data = arr

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        etiqueta = self.name or self.op
        return f'<Tensor {etiqueta} shape={self.shape}>'


class KernelMask:
    """Mapa booleano (kh, kw) de taps activos"""

    def __init__(self, active):
        self.active = np.array(active, dtype=bool)
        if self.active.ndim != 2:
            raise DimensionError(f'la máscara debe ser 2-D, recibido {self.active.shape}')

    @classmethod
    def blind_spot(cls, kh, kw=None):
        kw = kh if kw is None else kw
        if kh % 2 == 0 or kw % 2 == 0:
            raise DimensionError(f'kernel blind-spot requiere tamaño impar ({kh}x{kw})')
        active = np.ones((kh, kw), dtype=bool)
        active[kh // 2, kw // 2] = False
        return cls(active)

    @property
    def shape(self):
        return self.active.shape

    def __repr__(self):
        return f'<KernelMask {self.shape} activos={int(self.active.sum())}>'


def record_op(op, inputs, value, backward):
    """
    Crea el Tensor resultado de una operación.
    `backward(grad_out)` devuelve un gradiente float64 (o None) por entrada.
    Si ninguna entrada requiere gradiente, la operación no se graba en el tape.
    """
    needs = any(t.requires_grad for t in inputs)
    if not needs:
        return Tensor._wrap(value, op=op)
    return Tensor._wrap(value, requires_grad=True, op=op, inputs=inputs, backward=backward)


def _check_4d(t, nombre):
    if t.ndim != 4:
        raise DimensionError(f'{nombre} debe ser 4-D (N,C,H,W), recibido {t.shape}')


# ==================== OPERACIONES ====================

def conv2d(x, kernel, bias, dilation=1, mask=None):
    """
    Convolución 2-D 'same' con padding de ceros y dilatación.

    out[n,co,y,x] = bias[co] + sum_{ci,i,j activos} kernel[co,ci,i,j] *
                    x[n,ci, y + d*(i-(kh-1)/2), x + d*(j-(kw-1)/2)]

    Los taps enmascarados valen cero en forward y su gradiente es cero en backward.
    Acumulación en float64, resultado float32.
    """
    _check_4d(x, 'input')
    _check_4d(kernel, 'kernel')
    n, cin, h, w = x.shape
    cout, kcin, kh, kw = kernel.shape
    if kcin != cin:
        raise DimensionError(f'kernel espera {kcin} canales de entrada, input tiene {cin}')
    if kh % 2 == 0 or kw % 2 == 0:
        raise DimensionError(f'el kernel debe tener tamaño impar, recibido {kh}x{kw}')
    if bias.shape != (cout,):
        raise DimensionError(f'bias debe tener forma ({cout},), recibido {bias.shape}')
    if int(dilation) != dilation or dilation < 1:
        raise ParameterError(f'dilation debe ser un entero >= 1, recibido {dilation}')
    dilation = int(dilation)
    if mask is not None and mask.shape != (kh, kw):
        raise DimensionError(f'máscara {mask.shape} no coincide con el kernel {kh}x{kw}')

    pad_h = dilation * (kh - 1) // 2
    pad_w = dilation * (kw - 1) // 2
    weights = kernel.data.astype(np.float64)
    if mask is not None:
        weights = np.where(mask.active[None, None], weights, 0.0)
    padded = np.pad(x.data.astype(np.float64), ((0, 0), (0, 0), (pad_h, pad_h), (pad_w, pad_w)))

    out = np.zeros((n, cout, h, w), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            patch = padded[:, :, i * dilation:i * dilation + h, j * dilation:j * dilation + w]
            out += np.moveaxis(np.tensordot(patch, weights[:, :, i, j], axes=([1], [1])), -1, 1)
    out += bias.data.astype(np.float64)[None, :, None, None]

    def _backward(grad):
        grad_padded = np.zeros_like(padded)
        grad_kernel = np.zeros((cout, cin, kh, kw), dtype=np.float64)
        for i in range(kh):
            for j in range(kw):
                ys = slice(i * dilation, i * dilation + h)
                xs = slice(j * dilation, j * dilation + w)
                grad_kernel[:, :, i, j] = np.tensordot(grad, padded[:, :, ys, xs], axes=([0, 2, 3], [0, 2, 3]))
                grad_padded[:, :, ys, xs] += np.moveaxis(
                    np.tensordot(grad, weights[:, :, i, j], axes=([1], [0])), -1, 1)
        if mask is not None:
            grad_kernel = np.where(mask.active[None, None], grad_kernel, 0.0)
        grad_x = grad_padded[:, :, pad_h:pad_h + h, pad_w:pad_w + w]
        grad_bias = grad.sum(axis=(0, 2, 3))
        return grad_x, grad_kernel, grad_bias

    return record_op('conv2d', (x, kernel, bias), out, _backward)


def elementwise_add(a, b):
    if a.shape != b.shape:
        raise DimensionError(f'add: formas distintas {a.shape} y {b.shape}')

    def _backward(grad):
        return grad, grad

    return record_op('add', (a, b), a.data + b.data, _backward)


def leaky_activation(a, slope=0.1):
    positive = a.data > 0
    value = np.where(positive, a.data, a.data * np.float32(slope))

    def _backward(grad):
        return (grad * np.where(positive, 1.0, slope),)

    return record_op('leaky', (a,), value, _backward)


def concat_channels(tensors):
    tensors = list(tensors)
    if not tensors:
        raise DimensionError('concat_channels necesita al menos un tensor')
    for t in tensors:
        _check_4d(t, 'concat')
    ref = tensors[0].shape
    for t in tensors[1:]:
        if (t.shape[0], t.shape[2], t.shape[3]) != (ref[0], ref[2], ref[3]):
            raise DimensionError(f'concat: N,H,W distintos {t.shape} vs {ref}')
    bounds = np.cumsum([0] + [t.shape[1] for t in tensors])

    def _backward(grad):
        return tuple(grad[:, bounds[k]:bounds[k + 1]] for k in range(len(tensors)))

    value = np.concatenate([t.data for t in tensors], axis=1)
    return record_op('concat', tuple(tensors), value, _backward)


def slice_channels(a, start, stop):
    _check_4d(a, 'slice')
    if not 0 <= start < stop <= a.shape[1]:
        raise DimensionError(f'slice [{start}:{stop}] fuera de los {a.shape[1]} canales')

    def _backward(grad):
        full = np.zeros(a.shape, dtype=np.float64)
        full[:, start:stop] = grad
        return (full,)

    return record_op('slice', (a,), a.data[:, start:stop], _backward)


def tensor_sum(a, weights=None):
    """Suma (opcionalmente ponderada) de todos los elementos -> Tensor escalar (1,1,1,1)"""
    values = a.data.astype(np.float64)
    if weights is not None:
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != a.shape:
            raise DimensionError(f'pesos {weights.shape} no coinciden con {a.shape}')
        values = values * weights
    total = np.full((1, 1, 1, 1), values.sum(), dtype=np.float64)

    def _backward(grad):
        g = float(grad.reshape(-1)[0])
        if weights is None:
            return (np.full(a.shape, g, dtype=np.float64),)
        return (g * weights,)

    return record_op('sum', (a,), total, _backward)


# ==================== BACKWARD ====================

def _topological_order(root):
    """Orden post-order (entradas antes que consumidores) de los nodos que requieren gradiente"""
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for inp in node.inputs:
            if inp.requires_grad and id(inp) not in visited:
                stack.append((inp, False))
    return order


def backward(root):
    """
    Propaga d(root)/d(nodo) por el tape en orden topológico inverso,
    visitando cada nodo una vez y acumulando por fan-out.
    Devuelve {hoja: gradiente float32} y deja el gradiente en `hoja.grad`.
    """
    if root.data.size != 1:
        raise UsageError(f'backward requiere una raíz escalar, recibido shape {root.shape}')
    if not root.requires_grad:
        raise UsageError('la raíz no depende de ningún tensor con requires_grad')

    order = _topological_order(root)
    pending = {id(root): np.ones(root.shape, dtype=np.float64)}
    leaves = {}
    for node in reversed(order):
        grad = pending.pop(id(node), None)
        if grad is None:
            continue
        if node.op == LEAF:
            node.grad = grad.astype(np.float32)
            leaves[node] = node.grad
            continue
        for inp, g in zip(node.inputs, node._backward(grad)):
            if g is None or not inp.requires_grad:
                continue
            key = id(inp)
            pending[key] = pending[key] + g if key in pending else np.array(g, dtype=np.float64)
    return leaves


def check_gradients(fn, inputs, step=1e-3, seed=0):
    """
    Oráculo de diferencias finitas centrales.

    `fn(*inputs)` debe devolver un Tensor; se proyecta sobre pesos aleatorios
    para obtener un escalar. El paso usado es el realmente representable en
    float32; el lado numérico lee la salida en float64 (`Tensor.exact`) para
    que el redondeo a float32 no domine la diferencia. El error relativo se
    mide en norma por entrada.
    Devuelve el peor error relativo.
    """
    rng = np.random.default_rng(seed)
    out = fn(*inputs)
    weights = rng.standard_normal(out.shape)
    backward(tensor_sum(out, weights))
    analytic = [np.array(inp.grad, dtype=np.float64) for inp in inputs]

    def _value():
        return float(np.sum(fn(*inputs).exact * weights))

    worst = 0.0
    for inp, grad in zip(inputs, analytic):
        base = inp.data
        numeric = np.zeros(base.shape, dtype=np.float64)
        for idx in np.ndindex(base.shape):
            plus = base.copy()
            minus = base.copy()
            plus[idx] = base[idx] + np.float32(step)
            minus[idx] = base[idx] - np.float32(step)
            h = float(plus[idx]) - float(minus[idx])
            inp.data = plus
            f_plus = _value()
            inp.data = minus
            f_minus = _value()
            numeric[idx] = (f_plus - f_minus) / h
        inp.data = base
        scale = max(np.linalg.norm(grad), np.linalg.norm(numeric), 1e-12)
        worst = max(worst, float(np.linalg.norm(grad - numeric) / scale))
    logger.debug(f'check_gradients: error relativo máximo {worst:.3e}')
    return worst
