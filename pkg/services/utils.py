import hashlib

from services.errors import ConfigError


def format_value(value):
    """
    Convierte un valor al texto canónico usado en configs, manifiestos y checkpoints.
    Floats en forma repr (ida y vuelta exacta), listas separadas por comas.
    """
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ','.join(format_value(v) for v in value)
    return str(value)


def to_canonical_text(values):
    """Líneas `key = value` ordenadas por clave"""
    return ''.join(f'{key} = {format_value(values[key])}\n' for key in sorted(values))


def parse_canonical_text(text, origen='config'):
    """
    Lee texto plano `key = value`. Ignora líneas vacías y comentarios (#).
    Devuelve dict de strings crudos; las claves repetidas son error.
    """
    values = {}
    for numero, linea in enumerate(text.splitlines(), start=1):
        linea = linea.split('#', 1)[0].strip()
        if not linea:
            continue
        if '=' not in linea:
            raise ConfigError(f'{origen}:{numero}', f"línea sin '=': {linea!r}")
        key, raw = (p.strip() for p in linea.split('=', 1))
        if not key:
            raise ConfigError(f'{origen}:{numero}', 'clave vacía')
        if key in values:
            raise ConfigError(key, f'clave repetida en la línea {numero}')
        values[key] = raw
    return values


def coerce_value(key, raw, kind):
    """Convierte el texto crudo al tipo declarado del campo"""
    if not isinstance(raw, str):
        if kind == 'ints':
            return tuple(int(v) for v in raw)
        return raw
    try:
        if kind == 'int':
            return int(raw)
        if kind == 'float':
            return float(raw)
        if kind == 'bool':
            lowered = raw.lower()
            if lowered in ('true', '1', 'yes', 'si'):
                return True
            if lowered in ('false', '0', 'no'):
                return False
            raise ValueError(raw)
        if kind == 'ints':
            return tuple(int(v) for v in raw.split(',') if v.strip())
        if kind == 'noise':
            from services.noise_models import parse_noise_spec
            return parse_noise_spec(raw)
        return raw
    except ValueError:
        raise ConfigError(key, f'valor {raw!r} no es de tipo {kind}')


def derive_seed(*parts):
    """
    Semilla determinista de 63 bits a partir de cualquier combinación de partes
    (semilla base, nombre de imagen, sigma...). Estable entre ejecuciones y plataformas.
    """
    texto = ':'.join(format_value(p) for p in parts)
    digest = hashlib.blake2b(texto.encode('utf-8'), digest_size=8).digest()
    return int.from_bytes(digest, 'little') >> 1
