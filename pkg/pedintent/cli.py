"""\
.. currentmodule:: pedintent.cli

Using as a script
-----------------

:mod:`pedintent.cli` is the command line entry point, also run by ``python
-m pedintent``. It chains the whole pipeline:

.. code:: console

    $ python -m pedintent gen-data --out data/ --num 2500 --seed 1
    $ python -m pedintent train --data data/ --epochs 30 --out model.json
    $ python -m pedintent eval --checkpoint model.json --data data/ --report eval.csv
    acc=0.948000
    ...
    $ python -m pedintent predict --checkpoint model.json --scene data/scene_00042.json
    probability: 0.981204
    decision: CROSS
    1012.410 771.220
    ...
    $ python -m pedintent ablate --data data/ --repeats 5 --report ablation.csv

``gen-data`` writes scene files and a manifest splitting them 70/10/20 in
train, validation and test sets. ``train`` writes the checkpoint and appends
per-epoch train and validation losses to a CSV log, ``model.losses.csv`` by
default. Without ``--lr``, the learning rate is chosen from the number of
graph nodes of the training set. ``--ablate-signals`` zeroes traffic signal
features, in training and in later evaluations of the checkpoint.

``ablate`` trains the network with and without signal features on the same
split and writes their scores side by side.

``--config`` reads an INI file with ``[world]``, ``[model]`` and ``[train]``
sections; command line flags take precedence over its values.

Every command is deterministic given its flags. Exit status is 0 on success,
1 on any error. Set ``DEBUG=1`` in environment for debug messages and a
post-mortem debugger on unexpected errors.
"""

from __future__ import annotations

import bdb
import logging
import os
import pdb
import sys
from argparse import ArgumentParser, Namespace
from collections.abc import MutableMapping, Sequence
from dataclasses import asdict, replace
from pathlib import Path
from typing import Any

from ._helpers import Timer, format_timedelta, read_ini_section, strtobool
from .dataio import (
    load_checkpoint,
    load_dataset,
    load_scene,
    save_checkpoint,
    save_dataset,
)
from .errors import PedintentError
from .metrics import MetricsReport, write_csv
from .net import ModelConfig, forward
from .scene import SceneSequence
from .synthworld import WorldConfig, generate_dataset
from .trainer import (
    Checkpoint,
    TrainConfig,
    evaluate,
    max_node_count,
    repeat_experiment,
    resolve_learning_rate,
    train,
    write_loss_log,
)

logger = logging.getLogger(__name__)

FULL_MODEL = "TA-STGCN"
ABLATED_MODEL = "STGCN"


def _ini(path: str | None, section: str, defaults: dict[str, Any]) -> dict[str, Any]:
    if path is None:
        return {}
    return read_ini_section(path, section, defaults)


def _model_name(checkpoint: Checkpoint) -> str:
    return ABLATED_MODEL if checkpoint.train_config.ablate_signals else FULL_MODEL


def model_config(path: str | None, dataset: Sequence[SceneSequence]) -> ModelConfig:
    """Model settings of the INI file, horizon defaulting to the dataset's."""
    values = _ini(path, "model", asdict(ModelConfig()))
    values.setdefault("horizon", len(dataset[0].label_future))
    return ModelConfig.from_dict(values)


def train_config(
    args: Namespace, path: str | None, dataset: Sequence[SceneSequence]
) -> TrainConfig:
    values = _ini(path, "train", TrainConfig().as_dict())
    overrides = {
        "learning_rate": args.lr,
        "epochs": args.epochs,
        "batch_size": args.batch_size,
        "seed": args.seed,
        "ablate_signals": getattr(args, "ablate_signals", None) or None,
    }
    values.update({k: v for k, v in overrides.items() if v is not None})
    if "learning_rate" not in values:
        nodes = max_node_count(dataset)
        values["learning_rate"] = resolve_learning_rate(nodes)
        logger.info(
            "Using learning rate %g for %d nodes.", values["learning_rate"], nodes
        )
    return TrainConfig.from_dict(values)


def _load_split(directory: str, split: str) -> list[SceneSequence]:
    scenes = load_dataset(directory, split)
    if not scenes:
        raise PedintentError(f"{split} split of {directory} is empty")
    return scenes


def gen_data(args: Namespace) -> None:
    values = _ini(args.config, "world", WorldConfig().as_dict())
    overrides = {"noise": args.noise, "seed": args.seed}
    values.update({k: v for k, v in overrides.items() if v is not None})
    cfg = WorldConfig.from_dict(values)
    scenes = generate_dataset(cfg, args.num, cfg.seed)
    save_dataset(scenes, args.out, cfg.seed)


def train_command(args: Namespace) -> None:
    dataset = _load_split(args.data, "train")
    validation = load_dataset(args.data, "val")
    model_cfg = model_config(args.config, dataset)
    train_cfg = train_config(args, args.config, dataset)
    checkpoint = train(dataset, model_cfg, train_cfg, validation=validation)
    save_checkpoint(checkpoint, args.out)
    loss_log = args.loss_log or Path(args.out).with_suffix(".losses.csv")
    write_loss_log(checkpoint.history, loss_log)
    logger.info("Wrote checkpoint %s and loss log %s.", args.out, loss_log)


def eval_command(args: Namespace) -> None:
    checkpoint = load_checkpoint(args.checkpoint)
    report = evaluate(checkpoint, _load_split(args.data, args.split))
    print(report.as_text())
    if args.report:
        write_csv([(_model_name(checkpoint), report)], args.report)


def predict_command(args: Namespace) -> None:
    checkpoint = load_checkpoint(args.checkpoint)
    seq = load_scene(args.scene)
    prediction = forward(
        seq,
        checkpoint.params,
        checkpoint.config,
        ablate_signals=checkpoint.train_config.ablate_signals,
    )
    crossing = prediction.probability > checkpoint.config.threshold
    print(f"probability: {prediction.probability:.6f}")
    print(f"decision: {'CROSS' if crossing else 'NOT-CROSS'}")
    for x, y in prediction.trajectory:
        print(f"{x:.3f} {y:.3f}")


def ablate_command(args: Namespace) -> None:
    dataset = _load_split(args.data, "train")
    validation = load_dataset(args.data, "val")
    test = _load_split(args.data, "test")
    model_cfg = model_config(args.config, dataset)
    train_cfg = train_config(args, args.config, dataset)
    rows: list[tuple[str, MetricsReport]] = []
    for name, ablate in ((ABLATED_MODEL, True), (FULL_MODEL, False)):
        logger.info("Training %s.", name)
        _, mean = repeat_experiment(
            dataset,
            test,
            model_cfg,
            replace(train_cfg, ablate_signals=ablate),
            args.repeats,
            validation=validation,
        )
        rows.append((name, mean))
    for name, report in rows:
        print(
            f"{name}: acc={report.accuracy:.6f} f1={report.f1:.6f}"
            f" ade={report.ade:.6f} fde={report.fde:.6f}"
        )
    if args.report:
        write_csv(rows, args.report)


def _add_training_arguments(parser: ArgumentParser) -> None:
    parser.add_argument(
        "--data", required=True, metavar="DIR", help="dataset directory"
    )
    parser.add_argument("--epochs", type=int, metavar="E", help="default: 30")
    parser.add_argument(
        "--lr", type=float, metavar="R", help="learning rate, default: by node count"
    )
    parser.add_argument("--batch-size", type=int, metavar="B", help="default: 128")
    parser.add_argument("--seed", type=int, metavar="S", help="default: 0")
    parser.add_argument(
        "--config", metavar="FILE", help="INI file with [model] and [train] sections"
    )


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(
        prog="pedintent", description="Pedestrian crossing intention toolkit."
    )
    commands = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)

    sub = commands.add_parser("gen-data", help="generate a synthetic dataset")
    sub.set_defaults(func=gen_data)
    sub.add_argument("--out", required=True, metavar="DIR", help="dataset directory")
    sub.add_argument(
        "--num", type=int, default=1000, metavar="N", help="default: %(default)s"
    )
    sub.add_argument("--seed", type=int, metavar="S", help="default: 0")
    sub.add_argument(
        "--noise", type=float, metavar="EPS", help="label flip probability"
    )
    sub.add_argument("--config", metavar="FILE", help="INI file with a [world] section")

    sub = commands.add_parser("train", help="train a network")
    sub.set_defaults(func=train_command)
    _add_training_arguments(sub)
    sub.add_argument(
        "--ablate-signals", action="store_true", help="zero signal state features"
    )
    sub.add_argument("--out", required=True, metavar="CKPT", help="checkpoint file")
    sub.add_argument(
        "--loss-log", metavar="FILE", help="default: CKPT with .losses.csv suffix"
    )

    sub = commands.add_parser("eval", help="score a checkpoint on a dataset split")
    sub.set_defaults(func=eval_command)
    sub.add_argument("--checkpoint", required=True, metavar="CKPT")
    sub.add_argument("--data", required=True, metavar="DIR")
    sub.add_argument(
        "--split",
        default="test",
        choices=("train", "val", "test"),
        help="default: %(default)s",
    )
    sub.add_argument("--report", metavar="FILE", help="CSV report")

    sub = commands.add_parser("predict", help="predict the intention of one scene")
    sub.set_defaults(func=predict_command)
    sub.add_argument("--checkpoint", required=True, metavar="CKPT")
    sub.add_argument("--scene", required=True, metavar="FILE")

    sub = commands.add_parser(
        "ablate", help="compare networks with and without signal features"
    )
    sub.set_defaults(func=ablate_command)
    _add_training_arguments(sub)
    sub.add_argument(
        "--repeats",
        type=int,
        default=1,
        metavar="R",
        help="runs per network, default: %(default)s",
    )
    sub.add_argument("--report", metavar="FILE", help="CSV report")
    return parser


def main(
    argv: list[str] = sys.argv[1:],
    environ: MutableMapping[str, str] = os.environ,
) -> int:
    debug = strtobool(environ.get("DEBUG", "n"))
    logging.basicConfig(
        level=logging.DEBUG if debug else logging.INFO,
        format="%(asctime)s %(levelname).1s: %(message)s",
    )
    args = build_parser().parse_args(argv)

    try:
        with Timer() as timer:
            args.func(args)
        logger.info("%s done in %s.", args.command, format_timedelta(timer.delta))
    except (KeyboardInterrupt, bdb.BdbQuit):  # pragma: nocover
        logger.info("Interrupted.")
        return 1
    except (PedintentError, OSError) as e:
        logger.error("%s", e)
        return 1
    except Exception:
        logger.exception("Unhandled error:")
        if debug:  # pragma: nocover
            pdb.post_mortem(sys.exc_info()[2])
        return 1
    return 0


if "__main__" == __name__:  # pragma: nocover
    sys.exit(main(argv=sys.argv[1:], environ=os.environ))
