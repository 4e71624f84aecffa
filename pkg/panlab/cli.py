#!/usr/bin/env python
# -*- coding: UTF-8 -*-
#
# PanLab: Progressive attention networks for query-driven reference tasks
#
# Copyright 2026 The PanLab Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""
Command line: ``panlab gen|train|eval|viz|selftest``.

Exit codes: 0 success, 1 usage or configuration error, 2 data or format
error, 3 numeric error.
"""

import argparse as _argparse
import json as _json
import logging as _logging
import os as _os
import sys as _sys
import time as _time
from dataclasses import dataclass as _dataclass, field as _field, \
    asdict as _asdict

from tabulate import tabulate as _tabulate

from . import (
    __version__, dataset as _dataset, models as _models,
    training as _training, reports as _reports, utils as _utils,
    selftest as _selftest
)
from .exceptions import (
    PanLabError, UsageError, GenerationError, exit_code_for
)

_log = _logging.getLogger(__name__)


@_dataclass
class RunManifest:
    subcommand: str
    config: dict = _field(default_factory=dict)
    seed: int = None
    inputs: list = _field(default_factory=list)
    outputs: list = _field(default_factory=list)
    version: str = __version__
    duration: float = 0.

    def write(self, directory):
        path = _os.path.join(directory or ".",
                             "%s.manifest.json" % self.subcommand)
        with open(path, "w") as f:
            _json.dump(_asdict(self), f, sort_keys=True, indent=2,
                       default=str)
            f.write("\n")
        return path


class _ArgumentParser(_argparse.ArgumentParser):
    """Reports bad flags as UsageError (exit 1) instead of exiting 2"""

    def error(self, message):
        raise UsageError("%s: %s" % (self.prog, message))


def _use_agg():
    import matplotlib
    matplotlib.use("Agg")


def _ensure_dir(path):
    if path and not _os.path.isdir(path):
        _os.makedirs(path, exist_ok=True)


# ======== GEN ========

def _gen_config(args):
    values = _utils.read_config(args.config) if args.config else {}
    gen_kwargs, extras = _utils.coerce_config(values, _dataset.GenConfig,
                                              extra=("preset",))
    preset = (args.preset or extras.get("preset") or "mini").lower()
    if preset not in ("mini", "full"):
        raise UsageError("preset must be `mini` or `full`")
    if args.variant:
        gen_kwargs["variant"] = args.variant
    if args.seed is not None:
        gen_kwargs["seed"] = args.seed
    factory = _dataset.GenConfig.mini if preset == "mini" \
        else _dataset.GenConfig.full
    return preset, factory(**gen_kwargs)


def cmd_gen(args, manifest):
    preset, config = _gen_config(args)
    threads = _utils.resolve_threads(args.threads)
    _ensure_dir(args.out)

    pools = {"train": _dataset.load_mnist_dir(args.mnist_dir, "train")}
    pools["test"] = _dataset.load_mnist_dir(args.mnist_dir, "test")
    backgrounds = _dataset.load_backgrounds(config.background_dir) \
        if config.variant == "MBG" else None

    manifest.config = dict(_asdict(config), preset=preset)
    manifest.seed = config.seed
    manifest.inputs.append(args.mnist_dir)

    for split in args.splits:
        pool = pools["test" if split == "test" else "train"]
        path = _os.path.join(args.out, "%s-%s.rec" % (
            config.variant.lower(), split))
        samples = _dataset.generate_split(config, split, pool, path,
                                          backgrounds, threads)
        problems = _dataset.validate(samples)
        if problems:
            raise GenerationError("%s: %d invalid records (%s)" % (
                path, len(problems), problems[0]))
        manifest.outputs.append(path)
        if not args.quiet:
            summary = _dataset.describe(samples)
            print("\n%s" % path)
            print(_tabulate(summary["summary"].to_frame("value"),
                            headers="keys", tablefmt="simple",
                            floatfmt=".2f"))
    return 0


# ======== TRAIN ========

def _train_config(args):
    values = _utils.read_config(args.config) if args.config else {}
    train_kwargs, model_kwargs, _ = _utils.coerce_config(
        values, _training.TrainConfig, _models.ModelConfig)
    train_kwargs.pop("model", None)
    kind = model_kwargs.pop("kind", args.kind or "PAN")
    if args.kind:
        kind = args.kind
    if args.seed is not None:
        train_kwargs["seed"] = args.seed
    if args.epochs is not None:
        train_kwargs["epochs"] = args.epochs
    train_kwargs["checkpoint"] = args.out
    return _training.TrainConfig(
        model=_models.ModelConfig.for_kind(kind, **model_kwargs),
        **train_kwargs)


def cmd_train(args, manifest):
    config = _train_config(args)
    workers = 1 if args.deterministic else _utils.resolve_threads(args.threads)
    _ensure_dir(_os.path.dirname(args.out))

    train_data = _dataset.read_archive_arrays(args.train)
    val_data = _dataset.read_archive_arrays(args.val)
    ckpt, history = _training.train(config, train_data, val_data,
                                    resume=args.resume, workers=workers)

    history_path = args.history or args.out + ".history.csv"
    _training.write_history(history_path, history)

    manifest.config = dict(_asdict(config), model=config.model.to_dict(),
                           workers=workers)
    manifest.seed = config.seed
    manifest.inputs += [args.train, args.val] + (
        [args.resume] if args.resume else [])
    manifest.outputs += [args.out, args.out + _training.LAST_SUFFIX,
                         history_path]

    if args.plots:
        _use_agg()
        from . import plots as _plots
        chart = args.out + ".history.png"
        _plots.training_history(history, savefig=chart, show=False)
        manifest.outputs.append(chart)

    if not args.quiet:
        print(_tabulate(history, headers="keys", tablefmt="simple",
                        floatfmt=".4f"))
        print("\nbest val accuracy: %.4f (epoch %d)" % (
            ckpt.best_val or 0., ckpt.epoch))
    return 0


# ======== EVAL ========

def _report_prefixes(out, checkpoints):
    """One output prefix per checkpoint, named by the checkpoint stem"""
    if len(checkpoints) == 1:
        return [out]
    stems = [_os.path.splitext(_os.path.basename(p))[0] for p in checkpoints]
    return ["%s.%s" % (out, stem) if stems.count(stem) == 1
            else "%s.%s-%d" % (out, stem, i + 1)
            for i, stem in enumerate(stems)]


def cmd_eval(args, manifest):
    workers = _utils.resolve_threads(args.threads)
    data = _dataset.read_archive_arrays(args.archive)
    _ensure_dir(_os.path.dirname(args.out))

    reports = []
    prefixes = _report_prefixes(args.out, args.checkpoint)
    for path, prefix in zip(args.checkpoint, prefixes):
        report = _reports.evaluate(path, data, workers=workers)
        report.dataset_id = _utils.file_digest(args.archive)
        _reports.to_json(report, prefix + ".json")
        manifest.outputs += [prefix + ".json"] + list(
            _reports.to_csv(report, prefix))
        reports.append(report)
        if not args.quiet:
            _reports.metrics(report)
            print()

    if len(reports) > 1 and not args.quiet:
        _reports.compare(reports)

    if args.plots:
        _use_agg()
        from . import plots as _plots
        for name, chart in (("pr", _plots.pr_curves),
                            ("buckets", _plots.scale_accuracy)):
            path = "%s.%s.png" % (args.out, name)
            chart(reports, savefig=path, show=False)
            manifest.outputs.append(path)

    manifest.inputs += list(args.checkpoint) + [args.archive]
    return 0


# ======== VIZ ========

def cmd_viz(args, manifest):
    _use_agg()
    from . import plots as _plots

    ckpt = _training.load_checkpoint(args.checkpoint)
    samples = _dataset.read_archive(args.archive)
    _ensure_dir(args.out)
    suffix = ".png" if args.png else ".ppm"

    for index in args.indices:
        if not 0 <= index < len(samples):
            raise UsageError("sample index %d out of range (0-%d)" % (
                index, len(samples) - 1))
        sample = samples[index]
        batch = _dataset.stack_samples([sample])
        image, query, _ = batch.batch([0])
        result = _models.forward(ckpt.params, ckpt.config, image, query)
        for name, pixels in _plots.attention_overlays(sample, result):
            path = _os.path.join(args.out, "sample%d-%s%s" % (
                index, name, suffix))
            _utils.write_image(path, pixels)
            manifest.outputs.append(path)
        if args.panel:
            path = _os.path.join(args.out, "sample%d-panel.png" % index)
            _plots.attention_panel(sample, result, savefig=path, show=False)
            manifest.outputs.append(path)

    manifest.inputs += [args.checkpoint, args.archive]
    manifest.config = {"indices": list(args.indices)}
    return 0


# ======== SELFTEST ========

def cmd_selftest(args, manifest):
    passed, _ = _selftest.run(trials=args.trials, seed=args.seed or 0,
                              display=not args.quiet)
    manifest.seed = args.seed or 0
    manifest.config = {"trials": args.trials}
    return 0 if passed else 3


# ======== PARSER ========

def build_parser():
    parser = _ArgumentParser(
        prog="panlab", description="Progressive attention networks lab")
    parser.add_argument("--version", action="version",
                        version="%(prog)s " + __version__)

    common = _ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true")
    common.add_argument("-q", "--quiet", action="store_true")
    common.add_argument("--threads", type=int, default=None,
                        help="worker threads (default: $PAN_LAB_THREADS or 1)")
    common.add_argument("--seed", type=int, default=None)

    sub = parser.add_subparsers(dest="command", parser_class=_ArgumentParser)
    sub.required = True

    p = sub.add_parser("gen", parents=[common],
                       help="generate dataset archives")
    p.add_argument("--config")
    p.add_argument("--preset", choices=("mini", "full"))
    p.add_argument("--variant", choices=_dataset.VARIANTS)
    p.add_argument("--mnist-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--splits", nargs="+", choices=_dataset.SPLITS,
                   default=list(_dataset.SPLITS))
    p.set_defaults(func=cmd_gen, out_dir=lambda a: a.out)

    p = sub.add_parser("train", parents=[common], help="train a model")
    p.add_argument("--config")
    p.add_argument("--kind", choices=_models.KINDS)
    p.add_argument("--train", required=True)
    p.add_argument("--val", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--history")
    p.add_argument("--resume")
    p.add_argument("--epochs", type=int)
    p.add_argument("--deterministic", action="store_true")
    p.add_argument("--plots", action="store_true")
    p.set_defaults(func=cmd_train,
                   out_dir=lambda a: _os.path.dirname(a.out))

    p = sub.add_parser("eval", parents=[common], help="evaluate checkpoints")
    p.add_argument("--checkpoint", nargs="+", required=True)
    p.add_argument("--archive", required=True)
    p.add_argument("--out", required=True, help="report path prefix")
    p.add_argument("--plots", action="store_true")
    p.set_defaults(func=cmd_eval,
                   out_dir=lambda a: _os.path.dirname(a.out))

    p = sub.add_parser("viz", parents=[common],
                       help="write attention overlays")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--archive", required=True)
    p.add_argument("--indices", type=int, nargs="+", default=[0])
    p.add_argument("--out", required=True)
    p.add_argument("--png", action="store_true")
    p.add_argument("--panel", action="store_true")
    p.set_defaults(func=cmd_viz, out_dir=lambda a: a.out)

    p = sub.add_parser("selftest", parents=[common],
                       help="gradient and invariant checks")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--out")
    p.set_defaults(func=cmd_selftest, out_dir=lambda a: a.out)
    return parser


def _configure_logging(args):
    level = _logging.INFO
    if args.verbose:
        level = _logging.DEBUG
    elif args.quiet:
        level = _logging.WARNING
    _logging.basicConfig(level=level, stream=_sys.stderr,
                         format="%(levelname)s %(name)s: %(message)s")
    _logging.captureWarnings(True)


def main(argv=None):
    start = _time.time()
    try:
        args = build_parser().parse_args(argv)
        _configure_logging(args)
        manifest = RunManifest(subcommand=args.command)
        code = args.func(args, manifest)
        manifest.duration = round(_time.time() - start, 3)
        out_dir = args.out_dir(args)
        if args.command != "selftest" or out_dir:
            _ensure_dir(out_dir)
            manifest.write(out_dir)
        return code
    except (PanLabError, OSError) as e:
        print("error: %s" % e, file=_sys.stderr)
        return exit_code_for(e)


if __name__ == "__main__":
    _sys.exit(main())
