"""
Corrida de juguete completa: entrena una red pequeña sobre texturas sintéticas
y reporta PSNR posterior / solo-media / ruidosa para varios sigma de prueba.

Uso: python -m scripts.bench.benchmark_juguete [directorio_salida] [pasos]
"""
import logging
import sys
from pathlib import Path

from config import Config
from models import NetworkConfig, NoiseModel, TrainConfig
from services.eval_bench import cross_sigma_eval, dirac_probe, emit_reports, summarize
from services.errors import DenoiserError
from services.synthetic import make_dataset
from services.training import network_from_checkpoint, save_checkpoint, train

SIGMAS_PRUEBA = [1.0, 5.0, 15.0, 25.0, 35.0, 50.0]


def benchmark_juguete(salida, pasos=2000):
    salida = Path(salida)
    network_config = NetworkConfig(depth=2, forward_channels=16, branch_channels=16, head_widths=(32,))
    train_config = TrainConfig(lr=1e-3, steps=pasos, batch_size=4, patch_size=32, noise=NoiseModel.gaussian(25.0),
                               seed=Config.SEED, checkpoint_interval=0, log_every=max(pasos // 10, 1))

    print(f"🔄 Entrenando red D=2 por {pasos} pasos sobre 10 texturas de 64x64...")
    result = train(train_config, network_config, make_dataset(10, 64, seed=1))
    save_checkpoint(salida / Config.CHECKPOINT_NAME, result.checkpoint)
    print(f"✅ Pérdida inicial {result.losses[0]:.4f} -> final {result.losses[-1]:.4f}")

    validacion = make_dataset(10, 64, seed=99)
    nombres = [f'validacion_{k:02d}' for k in range(len(validacion))]
    records = cross_sigma_eval(result.checkpoint, validacion, nombres, sigma_tests=SIGMAS_PRUEBA)
    huella = dirac_probe(network_from_checkpoint(result.checkpoint))
    emit_reports(records, salida, {f'footprint_D{network_config.depth}': huella})

    print("\n📊 Resumen por sigma de prueba:")
    print(summarize(records).to_string(index=False))
    print(f"\n✅ ¡Listo! Resultados en {salida}")


if __name__ == "__main__":
    logging.basicConfig(level=Config.LOG_LEVEL, format='%(asctime)s %(levelname)s %(name)s: %(message)s')
    salida = sys.argv[1] if len(sys.argv) > 1 else 'runs/benchmark_juguete'
    pasos = int(sys.argv[2]) if len(sys.argv) > 2 else 2000
    try:
        benchmark_juguete(salida, pasos)
    except DenoiserError as e:
        print(f"❌ {type(e).__name__}: {e}")
        sys.exit(e.exit_code)
