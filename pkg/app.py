"""
CLI del denoiser blind-spot.

    python app.py corrupt  --in limpias/ --out ruidosas/ --noise gaussian:25
    python app.py train    --data ruidosas/ --config toy.cfg --out corrida/
    python app.py denoise  --ckpt corrida/model.bsdn --in ruidosas/ --sigma 25 --out salida/
    python app.py probe-rf --config toy.cfg --out huella/
    python app.py eval     --ckpt corrida/model.bsdn --clean limpias/ --sigmas 5,15,25 --out eval/

Códigos de salida: 0 ok, 1 uso/configuración, 2 datos, 3 aborto numérico.
"""

import dataclasses
import logging
import sys
from pathlib import Path

import click
import numpy as np
import pandas as pd

from config import Config
from models import GAUSSIAN_VARIABLE, NetworkConfig, RunManifest, TrainConfig
from services.blindspot_net import forward
from services.errors import DenoiserError, DimensionError, ParameterError, UsageError
from services.eval_bench import (cross_sigma_eval, dirac_probe, emit_reports,
                                 protocol_eval, summarize, write_footprint)
from services.image_io import load_images, save_image
from services.noise_models import (corrupt, corruption_seed, image_sigmas, noise_sigma_map,
                                   parse_noise_spec, predict)
from services.training import (init_checkpoint, load_checkpoint, network_from_checkpoint,
                               read_config_file, save_checkpoint, train)

logger = logging.getLogger(__name__)

LOG_LEVELS = ('DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL')


class DenoiserCLI(click.Group):
    """Grupo click que traduce las excepciones del dominio a códigos de salida"""

    def main(self, args=None, prog_name=None, complete_var=None, standalone_mode=True, **extra):
        try:
            code = super().main(args=args, prog_name=prog_name, complete_var=complete_var,
                                standalone_mode=False, **extra)
        except click.ClickException as e:
            e.show()
            code = 1
        except click.Abort:
            click.echo('Abortado.', err=True)
            code = 1
        except DenoiserError as e:
            click.echo(f'❌ {type(e).__name__}: {e}', err=True)
            code = e.exit_code
        except OSError as e:
            click.echo(f'❌ Error de E/S: {e}', err=True)
            code = 2
        code = code if isinstance(code, int) else 0
        if not standalone_mode:
            return code
        sys.exit(code)


def _noise_option(ctx, param, value):
    return None if value is None else parse_noise_spec(value)


def _sigmas_option(ctx, param, value):
    try:
        return [float(v) for v in value.split(',') if v.strip()]
    except ValueError:
        raise UsageError(f'--sigmas debe ser una lista separada por comas, recibido {value!r}')


def write_manifest(out_dir, command, config, seed, paths):
    manifest = RunManifest(command=command, config=config, seed=seed,
                           paths={k: str(v) for k, v in paths.items()})
    path = Path(out_dir) / Config.MANIFEST_NAME
    path.write_text(manifest.to_text(), encoding='utf-8')
    return path


def _output_name(name):
    return f'{Path(name).stem}.png'


@click.group(cls=DenoiserCLI)
@click.option('--log-level', default=Config.LOG_LEVEL.upper(), show_default=True,
              type=click.Choice(LOG_LEVELS, case_sensitive=False), help='Nivel de logging')
def cli(log_level):
    """Denoiser auto-supervisado con red blind-spot dilatada."""
    logging.basicConfig(level=log_level.upper(), format='%(asctime)s %(levelname)s %(name)s: %(message)s')


# ==================== CORRUPT ====================

@cli.command('corrupt')
@click.option('--in', 'in_dir', required=True, type=click.Path(file_okay=False), help='Imágenes limpias')
@click.option('--out', 'out_dir', required=True, type=click.Path(file_okay=False), help='Directorio de salida')
@click.option('--noise', required=True, callback=_noise_option, help='gaussian:SIGMA | gaussian-range:LO,HI | poisson:LAMBDA')
@click.option('--seed', default=Config.SEED, show_default=True, type=int)
def cmd_corrupt(in_dir, out_dir, noise, seed):
    """Corrompe un directorio de imágenes (salida de 16 bits + sigmas.csv)."""
    names, images = load_images(in_dir)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    rows = []
    for name, clean in zip(names, images):
        image_seed = corruption_seed(seed, name, noise)
        noisy, _ = corrupt(clean[None], noise, image_seed)
        save_image(out / _output_name(name), noisy.data[0], bits=16)
        rows.append({'image': name, 'noise': noise.to_spec(),
                     'sigma': float(image_sigmas(noise, noisy, image_seed)[0])})
    pd.DataFrame(rows, columns=['image', 'noise', 'sigma']).to_csv(out / Config.SIGMAS_CSV_NAME, index=False)

    write_manifest(out, 'corrupt', {'noise': noise.to_spec()}, seed, {'in': in_dir, 'out': out_dir})
    click.echo(f'✅ {len(names)} imágenes corrompidas con {noise.to_spec()} en {out}')


# ==================== TRAIN ====================

@cli.command('train')
@click.option('--data', 'data_dir', required=True, type=click.Path(file_okay=False), help='Imágenes ruidosas o limpias de entrenamiento')
@click.option('--config', 'config_path', type=click.Path(dir_okay=False), help='Archivo key = value')
@click.option('--out', 'out_dir', required=True, type=click.Path(file_okay=False), help='Directorio de la corrida')
@click.option('--seed', type=int, help='Sobrescribe la semilla del archivo')
@click.option('--steps', type=int, help='Sobrescribe el número de pasos')
@click.option('--resume', 'resume_path', type=click.Path(dir_okay=False), help='Checkpoint desde el cual continuar')
def cmd_train(data_dir, config_path, out_dir, seed, steps, resume_path):
    """Entrena la red y escribe checkpoint, curva de pérdida y manifiesto."""
    if config_path:
        network_config, train_config = read_config_file(config_path)
    else:
        network_config, train_config = NetworkConfig().validate(), TrainConfig()
    resume = load_checkpoint(resume_path) if resume_path else None
    if resume is not None:
        network_config = resume.network_config
    overrides = {k: v for k, v in (('seed', seed), ('steps', steps)) if v is not None}
    train_config = dataclasses.replace(train_config, **overrides).validate(network_config)

    names, images = load_images(data_dir)
    for name, img in zip(names, images):
        if img.shape[0] != network_config.image_channels:
            raise DimensionError(f'{name} tiene {img.shape[0]} canales, la red espera {network_config.image_channels}')

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if train_config.steps == 0 and resume is None:
        checkpoint, losses, first_step = init_checkpoint(network_config, train_config), [], 1
    else:
        result = train(train_config, network_config, images, out_dir=out, resume=resume, names=names)
        checkpoint, losses, first_step = result.checkpoint, result.losses, result.first_step

    ckpt_path = save_checkpoint(out / Config.CHECKPOINT_NAME, checkpoint)
    loss_path = out / Config.LOSS_CSV_NAME
    pd.DataFrame({'step': np.arange(first_step, first_step + len(losses)), 'loss': losses}).to_csv(loss_path, index=False)

    config = {f'network.{k}': v for k, v in network_config.to_dict().items()}
    config.update({f'train.{k}': v for k, v in train_config.to_dict().items()})
    paths = {'data': data_dir, 'out': out_dir, 'checkpoint': ckpt_path, 'losses': loss_path}
    if config_path:
        paths['config'] = config_path
    if resume_path:
        paths['resume'] = resume_path
    write_manifest(out, 'train', config, train_config.seed, paths)

    final = f', pérdida final {losses[-1]:.6f}' if losses else ''
    click.echo(f'✅ Entrenamiento terminado: paso {checkpoint.step}{final} -> {ckpt_path}')


# ==================== DENOISE ====================

@cli.command('denoise')
@click.option('--ckpt', 'ckpt_path', required=True, type=click.Path(dir_okay=False))
@click.option('--in', 'in_dir', required=True, type=click.Path(file_okay=False), help='Imágenes ruidosas')
@click.option('--sigma', type=float, help='Sigma del ruido (0-255); por defecto el del checkpoint')
@click.option('--out', 'out_dir', required=True, type=click.Path(file_okay=False))
@click.option('--mean-only', is_flag=True, help='Usa solo la media de la red (ignora el valor ruidoso)')
def cmd_denoise(ckpt_path, in_dir, sigma, out_dir, mean_only):
    """Elimina el ruido de un directorio de imágenes."""
    checkpoint = load_checkpoint(ckpt_path)
    model = checkpoint.noise_model
    if sigma is None and model.tag == GAUSSIAN_VARIABLE:
        raise UsageError(f'el checkpoint fue entrenado con {model.to_spec()}: indique --sigma')
    if sigma is not None and sigma < 0:
        raise ParameterError(f'--sigma debe ser >= 0, recibido {sigma}')
    net = network_from_checkpoint(checkpoint)
    names, images = load_images(in_dir)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    for name, img in zip(names, images):
        if img.shape[0] != checkpoint.network_config.image_channels:
            raise DimensionError(f'{name} tiene {img.shape[0]} canales, el checkpoint espera '
                                 f'{checkpoint.network_config.image_channels}')
        noisy = img[None]
        sigma_map = noise_sigma_map(model, noisy, sigma)
        estimate = predict(forward(net, noisy), noisy, sigma_map, use_mean_only=mean_only)
        save_image(out / _output_name(name), estimate.data[0], bits=16)
        logger.info(f'🧹 {name} procesada')

    used = model.to_spec() if sigma is None else f'gaussian:{sigma!r}'
    write_manifest(out, 'denoise', {'noise': used, 'mean_only': mean_only}, checkpoint.train_config.seed,
                   {'ckpt': ckpt_path, 'in': in_dir, 'out': out_dir})
    modo = 'solo media' if mean_only else 'posterior'
    click.echo(f'✅ {len(names)} imágenes procesadas ({modo}, {used}) en {out}')


# ==================== PROBE-RF ====================

@cli.command('probe-rf')
@click.option('--ckpt', 'ckpt_path', type=click.Path(dir_okay=False))
@click.option('--config', 'config_path', type=click.Path(dir_okay=False))
@click.option('--out', 'out_dir', required=True, type=click.Path(file_okay=False))
@click.option('--size', type=int, help='Lado de la imagen de sonda')
@click.option('--seeds', default=Config.PROBE_SEEDS, show_default=True, type=int)
def cmd_probe_rf(ckpt_path, config_path, out_dir, size, seeds):
    """Sonda de Dirac: huella del campo receptivo en escala logarítmica."""
    if bool(ckpt_path) == bool(config_path):
        raise UsageError('indique exactamente uno de --ckpt o --config')
    if ckpt_path:
        target = network_from_checkpoint(load_checkpoint(ckpt_path))
        network_config = target.config
    else:
        network_config, _ = read_config_file(config_path)
        target = network_config
    footprint = dirac_probe(target, size=size, seeds=seeds)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    image_path = write_footprint(out / f'footprint_D{network_config.depth}.png', footprint)
    config = {f'network.{k}': v for k, v in network_config.to_dict().items()}
    config.update({'size': size or footprint.footprint.shape[0], 'seeds': seeds})
    paths = {'out': out_dir, 'footprint': image_path}
    paths.update({'ckpt': ckpt_path} if ckpt_path else {'config': config_path})
    write_manifest(out, 'probe-rf', config, 0, paths)

    rows, cols = footprint.box
    click.echo(f'footprint {rows}×{cols}, center {footprint.center_value:g}')


# ==================== EVAL ====================

@cli.command('eval')
@click.option('--ckpt', 'ckpt_path', required=True, type=click.Path(dir_okay=False))
@click.option('--clean', 'clean_dir', required=True, type=click.Path(file_okay=False))
@click.option('--sigmas', default='25', show_default=True, callback=_sigmas_option, help='Sigmas de prueba separados por comas')
@click.option('--noise', callback=_noise_option, help='Protocolo de corrupción (en lugar del barrido de sigmas)')
@click.option('--out', 'out_dir', required=True, type=click.Path(file_okay=False))
@click.option('--seed', default=Config.SEED, show_default=True, type=int)
def cmd_eval(ckpt_path, clean_dir, sigmas, noise, out_dir, seed):
    """Evalúa PSNR del posterior, de la media y de la entrada ruidosa."""
    checkpoint = load_checkpoint(ckpt_path)
    names, images = load_images(clean_dir)
    if noise is not None:
        records = protocol_eval(checkpoint, images, names, noise, seed=seed)
        config = {'noise': noise.to_spec()}
    else:
        records = cross_sigma_eval(checkpoint, images, names, sigma_tests=sigmas, seed=seed)
        config = {'sigmas': sigmas}

    paths = emit_reports(records, out_dir)
    write_manifest(out_dir, 'eval', config, seed, {'ckpt': ckpt_path, 'clean': clean_dir,
                                                   'out': out_dir, 'results': paths[0]})
    for row in summarize(records).itertuples():
        click.echo(f'📊 {row.noise} sigma={row.sigma_test:.2f}: posterior {row.psnr_posterior:.2f} dB, '
                   f'media {row.psnr_mean_only:.2f} dB, ruidosa {row.psnr_noisy:.2f} dB ({row.images} imágenes)')
    click.echo(f'✅ {len(records)} registros en {paths[0]}')


def main(argv=None):
    return cli.main(args=argv, prog_name='bsdn', standalone_mode=False)


if __name__ == '__main__':
    sys.exit(main())
