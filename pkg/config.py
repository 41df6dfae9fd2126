import os
from dotenv import load_dotenv

load_dotenv()


def _env_float(key, default):
    return float(os.getenv(key, default))


def _env_int(key, default):
    return int(os.getenv(key, default))


class Config:
    # Versión de la herramienta (se escribe en cada manifiesto)
    TOOL_VERSION = '1.0.0'

    # Logging
    LOG_LEVEL = os.getenv('BSDN_LOG_LEVEL', 'INFO')

    # Semilla por defecto de todos los comandos
    SEED = _env_int('BSDN_SEED', '0')

    # Red - anchos por defecto (pensados para entrenar una red de 10 capas en un laptop)
    FORWARD_CHANNELS = _env_int('BSDN_FORWARD_CHANNELS', '64')
    BRANCH_CHANNELS = _env_int('BSDN_BRANCH_CHANNELS', '32')
    HEAD_WIDTH = _env_int('BSDN_HEAD_WIDTH', '96')

    # Entrenamiento
    LR = _env_float('BSDN_LR', '3e-4')
    STEPS = _env_int('BSDN_STEPS', '5000')
    BATCH_SIZE = _env_int('BSDN_BATCH_SIZE', '4')
    PATCH_SIZE = _env_int('BSDN_PATCH_SIZE', '64')
    RAMPDOWN = _env_float('BSDN_RAMPDOWN', '0.3')  # fracción final con cosine ramp-down
    CHECKPOINT_INTERVAL = _env_int('BSDN_CHECKPOINT_INTERVAL', '1000')
    LOG_EVERY = _env_int('BSDN_LOG_EVERY', '100')

    # Profundidad de la cola productor/optimizador (1 = configuración de tests)
    QUEUE_DEPTH = _env_int('BSDN_QUEUE_DEPTH', '1')

    # Evaluación
    PROBE_SEEDS = _env_int('BSDN_PROBE_SEEDS', '8')

    # Nombres de archivos de salida
    CHECKPOINT_NAME = 'model.bsdn'
    LOSS_CSV_NAME = 'losses.csv'
    MANIFEST_NAME = 'manifest.txt'
    RESULTS_CSV_NAME = 'results.csv'
    SIGMAS_CSV_NAME = 'sigmas.csv'
