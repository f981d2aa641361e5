import argparse
import logging
import os
import warnings
from datetime import datetime

from inflect.harness.aggregate import summary_table
from inflect.harness.experiment import multi_seed
from inflect.harness.specs import ExperimentConfig
from inflect.model.autodiff import set_deterministic
from inflect.report.plots import aggregate_plot_specs, render_plot
from inflect.utility.configs import Config

warnings.filterwarnings("ignore", message=".*does not have many workers.*")

logger = logging.getLogger(__name__)


def get_experiment_dir(config, out_dir=None):
    if out_dir:
        return out_dir
    timestamp = datetime.now().strftime('%y%m%d-%H%M%S')
    base = getattr(config, 'out_dir', 'runs')
    return os.path.join(base, timestamp)


def main(config_path, seeds=None, out_dir=None, overrides=(), plots=True):
    config = Config.load_from_file(config_path).apply_overrides(overrides)
    experiment = ExperimentConfig.from_config(config)
    if seeds:
        experiment = experiment.with_seeds(seeds)

    experiment_dir = get_experiment_dir(config, out_dir)
    os.makedirs(experiment_dir, exist_ok=True)
    config.save_to_file(experiment_dir)
    logger.info(f"Running {len(experiment.regimes)} regimes x {len(experiment.strategies)} strategies "
                f"x {len(experiment.seeds)} seeds into {experiment_dir}")

    set_deterministic()
    aggregate = multi_seed(experiment, out_dir=experiment_dir)
    print(summary_table(aggregate).to_string(index=False))

    if plots:
        for spec in aggregate_plot_specs(aggregate, os.path.join(experiment_dir, 'plots')):
            render_plot(spec)


def parse_args():
    parser = argparse.ArgumentParser(description='Run the full regime x strategy x seed grid.')
    parser.add_argument('config_path', type=str, help='Path to the configuration file')
    parser.add_argument('--seeds', type=int, nargs='+', default=None, help='Root seeds (default: from config)')
    parser.add_argument('--out-dir', type=str, default=None, help='Experiment directory (default: timestamped)')
    parser.add_argument('--set', dest='overrides', action='append', default=[], metavar='SECTION.KEY=VALUE',
                        help='Override one configuration value; may be repeated')
    parser.add_argument('--no-plots', action='store_true', help='Skip SVG rendering')
    return parser.parse_args()


if __name__ == '__main__':
    logging.basicConfig(level=logging.INFO, format='%(levelname)-8s: %(message)s')
    args = parse_args()
    main(args.config_path, args.seeds, args.out_dir, args.overrides, plots=not args.no_plots)
