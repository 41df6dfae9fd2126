"""
Lectura/Escritura de imágenes (PNG 8 y 16 bits, gris y RGB) con Pillow.
Representación interna: float32 (c, H, W) en [0,1].
"""

import logging
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from services.errors import DimensionError, InputError

logger = logging.getLogger(__name__)

IMAGE_EXTENSIONS = ('.png', '.jpg', '.jpeg', '.tif', '.tiff')


def list_images(directory):
    """Imágenes del directorio ordenadas por nombre"""
    directory = Path(directory)
    if not directory.is_dir():
        raise InputError(f'no existe el directorio de imágenes: {directory}')
    files = sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_EXTENSIONS)
    if not files:
        raise InputError(f'el directorio {directory} no contiene imágenes')
    return files


def load_image(path):
    try:
        img = PILImage.open(path)
        img.load()
    except OSError as e:
        raise InputError(f'no se pudo decodificar {path}: {e}')

    if img.mode in ('I;16', 'I;16B', 'I;16L', 'I'):
        arr = np.array(img, dtype=np.float64) / 65535.0
        arr = np.clip(arr, 0.0, 1.0)[None]
    elif img.mode in ('L', '1', 'LA') or (img.mode == 'P' and _is_gray(img)):
        arr = np.array(img.convert('L'), dtype=np.float64)[None] / 255.0
    else:
        arr = np.moveaxis(np.array(img.convert('RGB'), dtype=np.float64), -1, 0) / 255.0
    img.close()
    return arr.astype(np.float32)


def _is_gray(img):
    # paleta: gris solo si todos los píxeles tienen R == G == B
    palette = np.array(img.convert('RGB'))
    return bool(np.all(palette[..., 0] == palette[..., 1]) and np.all(palette[..., 1] == palette[..., 2]))


def load_images(directory):
    """(nombres, lista de arreglos) de todas las imágenes del directorio"""
    paths = list_images(directory)
    return [p.name for p in paths], [load_image(p) for p in paths]


def save_image(path, array, bits=8):
    """
    Guarda un arreglo (c,H,W) o (H,W) recortando a [0,1] en el momento de escribir.
    16 bits solo para gris: Pillow no escribe PNG RGB de 48 bits, RGB cae a 8 bits.
    """
    arr = np.asarray(array, dtype=np.float64)
    if arr.ndim == 3:
        if arr.shape[0] == 1:
            arr = arr[0]
        elif arr.shape[0] == 3:
            arr = np.moveaxis(arr, 0, -1)
        else:
            raise DimensionError(f'no se puede guardar una imagen con {arr.shape[0]} canales')
    elif arr.ndim != 2:
        raise DimensionError(f'forma de imagen no soportada: {arr.shape}')
    arr = np.clip(arr, 0.0, 1.0)

    if bits == 16 and arr.ndim == 3:
        logger.warning(f'⚠️ {Path(path).name}: RGB de 16 bits no soportado, se guarda en 8 bits')
        bits = 8
    if bits == 16:
        img = PILImage.fromarray(np.round(arr * 65535.0).astype(np.uint16))
    elif bits == 8:
        img = PILImage.fromarray(np.round(arr * 255.0).astype(np.uint8))
    else:
        raise DimensionError(f'profundidad de bits no soportada: {bits}')
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    img.save(path, format='PNG')
    return Path(path)
