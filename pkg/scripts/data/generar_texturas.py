"""
Genera un dataset de texturas sintéticas (PNG de 8 bits) para corridas de juguete.

Uso: python -m scripts.data.generar_texturas [directorio] [cantidad] [tamaño] [semilla] [--color]
"""
import sys

from config import Config
from services.synthetic import write_dataset


def generar_texturas(directorio, cantidad=10, tamano=64, semilla=Config.SEED, color=False):
    print(f"🔄 Generando {cantidad} texturas de {tamano}x{tamano} (semilla {semilla})...")
    try:
        rutas = write_dataset(directorio, cantidad, tamano, semilla, color=color)
    except OSError as e:
        print(f"❌ Error escribiendo en {directorio}: {e}")
        sys.exit(2)
    for ruta in rutas:
        print(f"   ✅ {ruta.name}")
    print(f"\n✅ ¡Listo! Dataset en {directorio}")
    return rutas


if __name__ == "__main__":
    args = [a for a in sys.argv[1:] if a != '--color']
    color = '--color' in sys.argv[1:]
    if len(args) > 4:
        print("Uso: python -m scripts.data.generar_texturas [directorio] [cantidad] [tamaño] [semilla] [--color]")
        sys.exit(1)
    directorio = args[0] if len(args) > 0 else 'data/texturas'
    cantidad = int(args[1]) if len(args) > 1 else 10
    tamano = int(args[2]) if len(args) > 2 else 64
    semilla = int(args[3]) if len(args) > 3 else Config.SEED
    generar_texturas(directorio, cantidad, tamano, semilla, color=color)
