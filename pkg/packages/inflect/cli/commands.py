"""
``inflect`` command line.

Every command accepts ``--config``, ``--seed``, ``--out-dir`` and repeated
``--set section.key=value``. Exit codes: 0 success, 1 run or input failure,
2 malformed configuration or command line. Failures print one JSON record to
stderr.
"""
import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from inflect import __version__
from inflect.diagnostics.locator import METHODS, LocatorConfig, locate
from inflect.diagnostics.metrics import ACTIVATION_GRAD, ENTROPY
from inflect.diagnostics.probes import probe_sweep
from inflect.errors import ConfigError, InflectError, InvalidInputError
from inflect.harness.aggregate import aggregate_reports, summary_table
from inflect.harness.experiment import export_merged, finetune, pretrain, task_for_seed, write_run
from inflect.harness.specs import ExperimentConfig
from inflect.model.autodiff import set_deterministic
from inflect.model.architectures.encoder import MiniEncoder
from inflect.model.checkpoint import load_checkpoint, save_checkpoint
from inflect.report.artifacts import (ensure_out_dir, load_reports, read_json, read_metrics_csv, run_header,
                                      write_frame, write_json, write_probe_csv)
from inflect.report.plots import aggregate_plot_specs, pretrain_plot_specs, render_plot
from inflect.utility.configs import Config
from inflect.utility.seeding import derive_seed, stream_seeds

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2


def load_config(args, required=True) -> Config:
    if not args.config:
        if required:
            raise ConfigError(f"'{args.command}' needs --config")
        return Config.load_from_dict({"locator": {}}).apply_overrides(args.overrides)
    return Config.load_from_file(args.config).apply_overrides(args.overrides)


def load_experiment(args):
    config = load_config(args)
    experiment = ExperimentConfig.from_config(config, seed=args.seed, out_dir=args.out_dir)
    return config, experiment


def save_resolved_config(config: Config, out_dir: Path):
    if config.save and config.config_file_name:
        config.save_to_file(str(out_dir))


def cmd_pretrain(args) -> int:
    config, experiment = load_experiment(args)
    seed = experiment.seeds[0]
    regimes = experiment.regimes if args.regime == "all" else (experiment.regime(args.regime),)
    out_dir = ensure_out_dir(experiment.out_dir)
    save_resolved_config(config, out_dir)

    task = task_for_seed(experiment, seed)
    write_json({"header": run_header(seed), **task.summary()}, out_dir / "task.json")
    for regime in regimes:
        model = MiniEncoder(experiment.model, seed=derive_seed(seed, "init"))
        result = pretrain(model, task, regime, seed, out_dir / regime.name,
                          experiment.diagnostics.eval_batch_size, experiment.progress)
        print(json.dumps({"regime": regime.name, "checkpoint": str(result.checkpoint),
                          "confidence": result.record["source"]["confidence"]}, sort_keys=True))
    return EXIT_OK


def cmd_finetune(args) -> int:
    config, experiment = load_experiment(args)
    seed = experiment.seeds[0]
    strategy = experiment.strategy(args.strategy)
    if not Path(args.checkpoint).exists():
        raise FileNotFoundError(f"Checkpoint not found: {args.checkpoint}")
    out_dir = ensure_out_dir(experiment.out_dir)
    save_resolved_config(config, out_dir)

    task = task_for_seed(experiment, seed)
    report = finetune(args.checkpoint, task, strategy, seed, experiment, regime=args.regime)
    write_run(report, out_dir)
    save_checkpoint(report.model, out_dir / "finetuned.pt",
                    meta={"root_seed": seed, "regime": report.regime, "strategy": report.strategy})
    if args.merge:
        export_merged(report, out_dir / "merged.pt")
    print(json.dumps({"run_id": report.run_id, "final_accuracy": report.final_accuracy,
                      "band": report.band, "trainable_params": report.trainable_params}, sort_keys=True))
    return EXIT_OK


def cmd_locate(args) -> int:
    config = load_config(args, required=False)
    try:
        locator = LocatorConfig(**config.section("locator"))
        if args.method:
            locator = dataclasses.replace(locator, method=args.method)
    except (TypeError, InvalidInputError) as e:
        raise ConfigError(f"invalid locator settings: {e}") from e

    log = read_metrics_csv(args.metrics)
    result = locate(log.means(ENTROPY), log.means(ACTIVATION_GRAD), locator)
    out_dir = ensure_out_dir(args.out_dir)
    write_json({"header": run_header(args.seed or 0, metrics=str(args.metrics)), **result.to_dict()},
               out_dir / "locator.json")
    print(json.dumps({"band": result.band, "candidates": result.candidates, "method": result.method,
                      "flags": result.flags}, sort_keys=True))
    return EXIT_OK


def cmd_probe(args) -> int:
    config, experiment = load_experiment(args)
    seed = experiment.seeds[0]
    model, meta = load_checkpoint(args.checkpoint)
    out_dir = ensure_out_dir(experiment.out_dir)

    task = task_for_seed(experiment, seed)
    probe_config = dataclasses.replace(experiment.probe, seed=stream_seeds(seed)["probe"])
    domain = task.source_train if args.domain == "source" else task.target_train
    held_out = task.source_val if args.domain == "source" else task.target_val
    report = probe_sweep(model, domain, held_out, probe_config, progress=experiment.progress)
    write_probe_csv(report, out_dir / "probes.csv")
    write_json({"header": run_header(seed, checkpoint=str(args.checkpoint), domain=args.domain),
                **report.to_dict()}, out_dir / "probes.json")
    print(json.dumps(report.to_dict()["accuracy"], sort_keys=True))
    return EXIT_OK


def cmd_aggregate(args) -> int:
    reports_dir = Path(args.reports or args.out_dir or ".")
    records = load_reports(reports_dir)
    aggregate = aggregate_reports(records)
    aggregate["header"] = run_header(args.seed or 0, reports=str(reports_dir))
    out_dir = ensure_out_dir(args.out_dir or reports_dir)
    write_json(aggregate, out_dir / "aggregate.json")
    table = summary_table(aggregate)
    write_frame(table, out_dir / "summary.csv")
    print(table.to_string(index=False))
    return EXIT_OK


def cmd_plot(args) -> int:
    reports_dir = Path(args.reports or args.out_dir or ".")
    aggregate_path = reports_dir / "aggregate.json"
    aggregate = read_json(aggregate_path) if aggregate_path.exists() else aggregate_reports(load_reports(reports_dir))
    out_dir = ensure_out_dir(args.out_dir or reports_dir / "plots")

    pretrain_records = [read_json(path) for path in sorted(reports_dir.rglob("pretrain.json"))]
    specs = aggregate_plot_specs(aggregate, out_dir) + pretrain_plot_specs(pretrain_records, out_dir)
    for spec in specs:
        render_plot(spec)
    print(json.dumps({"plots": [str(spec.output) for spec in specs]}, sort_keys=True))
    return EXIT_OK


def add_common_arguments(parser):
    parser.add_argument('--config', type=str, default=None, help='Path to the experiment configuration file')
    parser.add_argument('--seed', type=int, default=None, help='Root seed (replaces the configured seed list)')
    parser.add_argument('--out-dir', type=str, default=None, help='Directory for all artifacts of this command')
    parser.add_argument('--set', dest='overrides', action='append', default=[], metavar='SECTION.KEY=VALUE',
                        help='Override one configuration value; may be repeated')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='inflect', description='Inflection-layer diagnostics for transfer runs.')
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    subparsers = parser.add_subparsers(dest='command', required=True)

    pretrain_parser = subparsers.add_parser('pretrain', help='Pretrain UNDER/OVER checkpoints on the source task')
    add_common_arguments(pretrain_parser)
    pretrain_parser.add_argument('--regime', type=str, default='all', help="Regime name or 'all'")
    pretrain_parser.set_defaults(handler=cmd_pretrain)

    finetune_parser = subparsers.add_parser('finetune', help='Fine-tune a checkpoint with one strategy')
    add_common_arguments(finetune_parser)
    finetune_parser.add_argument('--checkpoint', type=str, required=True, help='Pretrained checkpoint')
    finetune_parser.add_argument('--strategy', type=str, required=True, help='Configured strategy name')
    finetune_parser.add_argument('--regime', type=str, default=None, help='Regime label (default: from checkpoint)')
    finetune_parser.add_argument('--merge', action='store_true', help='Also write a merged checkpoint')
    finetune_parser.set_defaults(handler=cmd_finetune)

    locate_parser = subparsers.add_parser('locate', help='Locate the injection band from a metrics CSV')
    add_common_arguments(locate_parser)
    locate_parser.add_argument('--metrics', type=str, required=True, help='Metrics CSV (step,layer,metric,value)')
    locate_parser.add_argument('--method', type=str, choices=METHODS, default=None, help='Locator method')
    locate_parser.set_defaults(handler=cmd_locate)

    probe_parser = subparsers.add_parser('probe', help='Layer-wise probes on a checkpoint')
    add_common_arguments(probe_parser)
    probe_parser.add_argument('--checkpoint', type=str, required=True, help='Checkpoint to probe')
    probe_parser.add_argument('--domain', type=str, choices=('source', 'target'), default='target')
    probe_parser.set_defaults(handler=cmd_probe)

    aggregate_parser = subparsers.add_parser('aggregate', help='Aggregate run reports into a summary table')
    add_common_arguments(aggregate_parser)
    aggregate_parser.add_argument('--reports', type=str, default=None, help='Directory searched for report.json')
    aggregate_parser.set_defaults(handler=cmd_aggregate)

    plot_parser = subparsers.add_parser('plot', help='Render SVG figures from reports')
    add_common_arguments(plot_parser)
    plot_parser.add_argument('--reports', type=str, default=None, help='Directory with aggregate.json or reports')
    plot_parser.set_defaults(handler=cmd_plot)
    return parser


def emit_error(error: Exception, command) -> None:
    record = {"error": type(error).__name__, "message": str(error), "command": command}
    print(json.dumps(record, sort_keys=True), file=sys.stderr)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format='%(levelname)-8s: %(message)s')
    set_deterministic()
    try:
        return args.handler(args)
    except ConfigError as e:
        emit_error(e, args.command)
        return EXIT_CONFIG
    except (InflectError, FileNotFoundError) as e:
        logger.error(str(e))
        emit_error(e, args.command)
        return EXIT_FAILURE
    except Exception as e:
        logger.exception(f"'{args.command}' failed unexpectedly")
        emit_error(e, args.command)
        return EXIT_FAILURE


def console_main():
    sys.exit(main())
