#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Командная строка AnyTSR.

Подкоманды: train, infer, eval, multistep, synth-data, gradcheck.
Каждая ошибка печатается одной строкой "error[<вид>]: <сообщение>" в stderr
и завершает процесс своим кодом (config 2, data 3, divergence 4,
checkpoint 5, gradcheck 6, прочее 1).
"""

import argparse
import logging
import os
import sys
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch

from anytsr import __version__
from anytsr.app.config import RunConfig, load_run_config, parse_overrides
from anytsr.app.evaluator import Evaluator
from anytsr.app.gradcheck import BLOCK_BUILDERS, PRESET_CHANNELS, ensure_passed, format_results, run_gradcheck
from anytsr.app.trainer import Trainer
from anytsr.core.checkpoint import CheckpointManager
from anytsr.core.dataset import load_split, write_synthetic_dataset
from anytsr.core.errors import AnyTSRError, CheckpointError, ConfigError
from anytsr.core.model import AnyTSR
from anytsr.utils.helpers import (
    parse_chain_list,
    parse_scale_list,
    resolve_threads,
    setup_logging,
    validate_scale,
)
from anytsr.utils.imaging import load_image, save_image

logger = logging.getLogger(__name__)

DEFAULT_SCALES = "1.45,2,3,4,4.5,6"


def _one_line(error: Exception) -> str:
    return " ".join(str(error).split())


def load_model(path: str) -> Tuple[AnyTSR, RunConfig]:
    """
    Модель из контрольной точки

    Raises:
        CheckpointError: Файл не читается, конфигурация или тензоры не совпадают
    """
    manager = CheckpointManager()
    checkpoint = manager.load(path)
    try:
        config = RunConfig.from_dict(checkpoint.config)
        config.validate()
    except ConfigError as e:
        raise CheckpointError(f"неверная конфигурация в {path}: {e}")
    model = AnyTSR.from_config(config.encoder, config.upsampler)
    manager.apply_to_model(checkpoint, model)
    model.eval()
    return model, config


def parse_test_sets(items: Sequence[str]) -> Dict[str, List[Tuple[str, np.ndarray]]]:
    """Тестовые наборы из аргументов вида путь или имя=путь"""
    sets: Dict[str, List[Tuple[str, np.ndarray]]] = {}
    for item in items:
        if "=" in item:
            name, path = item.split("=", 1)
        else:
            path = item
            name = os.path.basename(os.path.normpath(item)) if len(items) > 1 else ""
        if name in sets:
            raise ConfigError(f"повтор имени тестового набора: {name!r}")
        sets[name] = load_split(path, "test")
    return sets


def _scales(text: str) -> List[float]:
    try:
        return parse_scale_list(text)
    except ValueError as e:
        raise ConfigError(str(e))


def _chains(text: str) -> List[List[float]]:
    try:
        return parse_chain_list(text)
    except ValueError as e:
        raise ConfigError(str(e))


def cmd_train(args: argparse.Namespace) -> int:
    overrides = parse_overrides(args.set)
    for key, value in (("data", args.data), ("out", args.out), ("seed", args.seed), ("workers", args.workers),
                       ("max_steps", args.max_steps)):
        if value is not None:
            overrides[key] = str(value)
    if args.deterministic:
        overrides["deterministic"] = "true"
    config = load_run_config(args.config, overrides)
    if not config.data:
        raise ConfigError("не задан каталог данных (--data или ключ data)")
    if config.train.deterministic:
        torch.use_deterministic_algorithms(True, warn_only=True)

    images = [img for _, img in load_split(config.data, "train")]
    trainer = Trainer(config, images, out_dir=config.out)
    if args.resume:
        trainer.resume(args.resume)
    result = trainer.train()
    last = f"{result.losses[-1]:.6f}" if result.losses else "-"
    print(f"Обучение завершено: {result.steps} шагов, последняя потеря {last}")
    print(f"Контрольная точка: {result.checkpoint_path}")
    return 0


def cmd_infer(args: argparse.Namespace) -> int:
    if not validate_scale(args.scale):
        raise ConfigError(f"масштаб должен быть конечным и не меньше 1: {args.scale}")
    model, _ = load_model(args.ckpt)
    img = load_image(args.input)
    sr = model.super_resolve(img, args.scale)
    save_image(args.output, sr, bit_depth=args.bit_depth)
    print(f"{args.input}: {img.shape[0]}x{img.shape[1]} -> {sr.shape[0]}x{sr.shape[1]} ({args.output})")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    scales = _scales(args.scales)
    model, config = load_model(args.ckpt)
    sets = parse_test_sets(args.data)
    evaluator = Evaluator(
        model,
        train_scale_max=config.train.scale_range[1],
        crop_border=args.crop_border,
        dump_dir=args.dump_dir,
        model_name=os.path.basename(args.ckpt),
    )
    report = evaluator.evaluate_sets(sets, scales)
    print(report.format_table())
    if args.csv:
        report.write_csv(args.csv)
    else:
        sys.stdout.write(report.csv_text())
    if args.plot:
        from anytsr.app.plotting import plot_sweep

        plot_sweep(report, args.plot, config.train.scale_range[1])
    return 0


def cmd_multistep(args: argparse.Namespace) -> int:
    chains = _chains(args.chains)
    model, config = load_model(args.ckpt)
    sets = parse_test_sets(args.data)
    evaluator = Evaluator(
        model,
        train_scale_max=config.train.scale_range[1],
        crop_border=args.crop_border,
        model_name=os.path.basename(args.ckpt),
    )
    report = evaluator.evaluate_sets(sets, chains=chains)
    print(report.format_table())
    if args.csv:
        report.write_multistep_csv(args.csv)
    else:
        sys.stdout.write(report.multistep_csv_text())
    return 0


def cmd_synth_data(args: argparse.Namespace) -> int:
    try:
        train_count, test_count = write_synthetic_dataset(
            args.out, args.train_count, args.test_count, args.size, args.seed
        )
    except ValueError as e:
        raise ConfigError(str(e))
    print(f"Синтетический набор: {train_count} обучающих, {test_count} тестовых -> {args.out}")
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    blocks = [b.strip() for b in args.blocks.split(",") if b.strip()] if args.blocks else None
    try:
        results = run_gradcheck(blocks, preset=args.preset, seed=args.seed, max_elements=args.max_elements)
    except ValueError as e:
        raise ConfigError(str(e))
    print(format_results(results))
    ensure_passed(results)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="anytsr",
        description="Сверхразрешение тепловизионных изображений с произвольным масштабом",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="подробный лог (DEBUG)")
    parser.add_argument("--threads", type=int, default=None,
                        help="число потоков вычислений (приоритетнее ANYTSR_THREADS)")
    sub = parser.add_subparsers(dest="command", metavar="команда")
    sub.required = True

    train = sub.add_parser("train", help="обучение модели")
    train.add_argument("--config", help="файл конфигурации ключ = значение")
    train.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="переопределение ключа конфигурации (можно повторять)")
    train.add_argument("--data", help="каталог набора данных (<data>/train)")
    train.add_argument("--out", help="каталог результатов (контрольная точка, loss.tsv, config.cfg)")
    train.add_argument("--seed", type=int, help="сид всех источников случайности")
    train.add_argument("--workers", type=int, help="потоки подготовки обучающих пар")
    train.add_argument("--deterministic", action="store_true",
                       help="один поток подготовки и детерминированные алгоритмы torch")
    train.add_argument("--max-steps", dest="max_steps", type=int, help="остановка после заданного числа шагов")
    train.add_argument("--resume", metavar="CKPT", help="продолжить с контрольной точки")
    train.set_defaults(handler=cmd_train)

    infer = sub.add_parser("infer", help="сверхразрешение одного изображения")
    infer.add_argument("--ckpt", required=True, help="контрольная точка")
    infer.add_argument("--input", required=True, help="входное LR-изображение (PNG/PGM)")
    infer.add_argument("--scale", type=float, required=True, help="масштаб (>= 1, допускается дробный)")
    infer.add_argument("--output", required=True, help="путь выходного изображения")
    infer.add_argument("--bit-depth", dest="bit_depth", type=int, choices=(8, 16), default=16,
                       help="глубина выходного изображения")
    infer.set_defaults(handler=cmd_infer)

    evaluate = sub.add_parser("eval", help="оценка PSNR по списку масштабов")
    evaluate.add_argument("--ckpt", required=True, help="контрольная точка")
    evaluate.add_argument("--data", required=True, nargs="+", metavar="[NAME=]DIR",
                          help="тестовые наборы (<dir>/test или сам каталог)")
    evaluate.add_argument("--scales", default=DEFAULT_SCALES,
                          help=f"масштабы через запятую или 'benchmark' (по умолчанию {DEFAULT_SCALES})")
    evaluate.add_argument("--csv", help="путь CSV-отчета (иначе stdout)")
    evaluate.add_argument("--crop-border", dest="crop_border", type=int, default=0,
                          help="отбросить столько пикселей у краев при расчете PSNR")
    evaluate.add_argument("--dump-dir", dest="dump_dir", help="сохранить SR-изображения в каталог")
    evaluate.add_argument("--plot", help="сохранить график PSNR от масштаба")
    evaluate.set_defaults(handler=cmd_eval)

    multistep = sub.add_parser("multistep", help="сравнение одношагового и многошагового синтеза")
    multistep.add_argument("--ckpt", required=True, help="контрольная точка")
    multistep.add_argument("--data", required=True, nargs="+", metavar="[NAME=]DIR",
                           help="тестовые наборы (<dir>/test или сам каталог)")
    multistep.add_argument("--chains", default="benchmark",
                           help="цепочки через ';', шаги через ',' или 'benchmark' (6;2,3;2,2,1.5)")
    multistep.add_argument("--csv", help="путь CSV-отчета (иначе stdout)")
    multistep.add_argument("--crop-border", dest="crop_border", type=int, default=0,
                           help="отбросить столько пикселей у краев при расчете PSNR")
    multistep.set_defaults(handler=cmd_multistep)

    synth = sub.add_parser("synth-data", help="синтетический тепловизионно-подобный набор")
    synth.add_argument("--out", required=True, help="корень набора (<out>/train, <out>/test)")
    synth.add_argument("--train-count", dest="train_count", type=int, default=8, help="обучающих изображений")
    synth.add_argument("--test-count", dest="test_count", type=int, default=4, help="тестовых изображений")
    synth.add_argument("--size", type=int, default=96, help="сторона изображения (>= 64)")
    synth.add_argument("--seed", type=int, default=0, help="сид генератора")
    synth.set_defaults(handler=cmd_synth_data)

    grad = sub.add_parser("gradcheck", help="проверка градиентов центральными разностями")
    grad.add_argument("--preset", choices=sorted(PRESET_CHANNELS), default="tiny", help="размер проверяемых блоков")
    grad.add_argument("--blocks", help="блоки через запятую: " + ",".join(BLOCK_BUILDERS))
    grad.add_argument("--seed", type=int, default=0, help="сид входов и весов")
    grad.add_argument("--max-elements", dest="max_elements", type=int, default=6,
                      help="проверяемых элементов на тензор")
    grad.set_defaults(handler=cmd_gradcheck)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Точка входа: разбор аргументов, настройка логов и потоков, запуск подкоманды"""
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.verbose)
    try:
        threads = resolve_threads(args.threads)
        if threads:
            torch.set_num_threads(threads)
        return args.handler(args)
    except AnyTSRError as e:
        print(f"error[{e.kind}]: {_one_line(e)}", file=sys.stderr)
        return e.exit_code
    except ValueError as e:
        print(f"error[config]: {_one_line(e)}", file=sys.stderr)
        return ConfigError.exit_code
    except Exception as e:
        logger.debug("Необработанная ошибка", exc_info=True)
        print(f"error[internal]: {type(e).__name__}: {_one_line(e)}", file=sys.stderr)
        return 1
