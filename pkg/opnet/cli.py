# -*- coding: utf-8 -*-
"""Command Line Interface."""

import argparse
import csv
import itertools
import logging
import os
import sys

import numpy as np

from opnet.accounting import (
    REFERENCE_AUDIT,
    complexity_audit,
    count_stage,
    render_gmacs,
    render_mparams,
)
from opnet.attention import OpConfig
from opnet.config import HarnessConfig
from opnet.errors import (
    NumericalError,
    OpnetError,
    TensorFileError,
)
from opnet.fs import (
    read_parameters,
    read_pyramid,
    write_json,
    write_parameters,
    write_pyramid,
)
from opnet.pyramid import (
    FeaturePyramid,
    GtBox,
    LEVEL_NAMES,
    MAX_LEVEL,
    MIN_LEVEL,
    OpNetParams,
    assign_fpn_level,
    count_pyramid_macs_params,
    level_shapes,
    mismatch_rate,
    opnet_feature_path,
)
from opnet.suites import (
    SCOPES,
    run_suite,
)
from opnet.training import toy_task_run

logger = logging.getLogger(__name__)

INITIALIZERS = ('random', 'identity')

# Box sides for the mismatch experiment, in input pixels
MIN_BOX_SIDE = 8.0
MAX_BOX_SIDE = 4096.0


def main(argv=None):
    """Entry point for the opnet script.

    :return: Exit status
    :rtype: int

    """
    if argv is None:
        argv = sys.argv[1:]
    args = parse_arguments(argv)
    configure_logging(args.log_level)
    try:
        config = load_config(args)
        args.func(args, config)
    except OpnetError as exc:
        logger.error('%s', exc)
        return exc.exit_code
    return 0


def load_config(args):
    """Build the run configuration from the config file and flags.

    :param args: Parsed arguments
    :type args: argparse.Namespace
    :rtype: opnet.config.HarnessConfig

    """
    overrides = {
        'seed': args.seed,
        'channels': args.channels,
        'heads': args.heads,
        'toy.steps': getattr(args, 'steps', None),
        'experiment.perturb': getattr(args, 'perturb', None),
        'gradcheck.threshold': getattr(args, 'threshold', None),
    }
    return HarnessConfig.load(args.config, overrides)


def _initial_params(args, config, channels):
    """Parameters chosen by ``--params`` or ``--init``."""
    cross_config = config.cross_config()
    if args.init == 'identity':
        params = OpNetParams.identity(channels, cross_config)
    else:
        params = OpNetParams.initialize(
            np.random.RandomState(config.seed), channels, cross_config)
    if getattr(args, 'params', None):
        read_parameters(params, args.params)
    return params


def _shape_map(pyramid):
    """Level name to shape mapping."""
    return {
        name: list(shape)
        for name, shape in zip(LEVEL_NAMES, pyramid.shapes)
    }


def forward(args, config):
    """Run the feature path over a pyramid directory."""
    pyramid = read_pyramid(args.input)
    cfg = config.op_config()
    cfg.check(pyramid.channels)
    params = _initial_params(args, config, pyramid.channels)

    output, _ = opnet_feature_path(
        pyramid, params.base, params.mp, cfg, config.stages)
    write_pyramid(output, args.out)
    write_json(
        {
            'input': _shape_map(pyramid),
            'output': _shape_map(output),
            'variant': config.variant,
        },
        os.path.join(args.out, 'shapes.json'))


def gradcheck(args, config):
    """Run gradient-check suites and write their report."""
    settings = config.gradcheck
    report = run_suite(
        args.scope,
        settings.seeds,
        base_seed=config.seed,
        epsilon=settings.epsilon,
        threshold=settings.threshold,
        samples=settings.samples,
    )
    _make_output(args.out)
    _write_csv(report.write_csv, os.path.join(args.out, 'gradcheck.csv'))
    logger.info(
        '%d tensors checked, %d failures',
        len(report.errors), len(report.failures()))
    if not report.passed:
        raise NumericalError(
            'gradient check failed for {} of {} tensors (threshold {})'.format(
                len(report.failures()), len(report.errors),
                report.threshold))


def count(args, config):
    """Write MAC and parameter accounting for the configured pyramid."""
    cfg = config.op_config()
    shapes = level_shapes(
        config.batch, config.channels, config.s2_height, config.s2_width)
    report = count_pyramid_macs_params(
        cfg, shapes, config.stages, config.cross_config())

    audit = {'reference': REFERENCE_AUDIT}
    if 'base' in config.stages:
        single = count_stage('base_op', OpConfig(1, cfg.temperature), shapes)
        audit['base_op_single_head'] = {
            'macs': single.macs,
            'params': single.params,
            'gmacs': render_gmacs(single.macs),
            'mparams': render_mparams(single.params),
        }
    report.audit = audit

    if args.sweep is not None:
        report.complexity = complexity_audit(args.sweep, batch=config.batch)
        if not report.complexity.consistent:
            logger.warning(
                'Measured similarity MACs differ from the static counts')

    _make_output(args.out)
    _write_csv(report.write_csv, os.path.join(args.out, 'accounting.csv'))
    _write_csv(report.write_json, os.path.join(args.out, 'accounting.json'))
    if report.complexity is not None:
        _write_csv(
            report.complexity.write_csv,
            os.path.join(args.out, 'complexity.csv'))
    logger.info(
        'Total: %s GMACs, %s M parameters',
        render_gmacs(report.total_macs), render_mparams(report.total_params))


def experiment(args, config):
    """Train the toy task and measure level mismatch on synthetic boxes."""
    toy = config.toy
    trace = toy_task_run(
        config.seed,
        toy.steps,
        config.sgd_config(weight_decay=toy.weight_decay),
        channels=toy.channels,
        heads=toy.heads,
        batch=toy.batch,
        s2_height=toy.s2_height,
        s2_width=toy.s2_width,
        stages=config.stages,
    )
    _make_output(args.out)

    def write_loss(stream):
        writer = csv.writer(stream, lineterminator='\n')
        writer.writerow(['step', 'loss'])
        for step, loss in enumerate(trace):
            writer.writerow([step, repr(loss)])

    _write_csv(write_loss, os.path.join(args.out, 'loss.csv'))

    rng = np.random.RandomState(config.seed)
    pairs = level_pairs(
        rng, config.experiment.boxes, config.experiment.perturb)
    overall, rates = mismatch_rate(pairs, per_level=True)

    def write_mismatch(stream):
        writer = csv.writer(stream, lineterminator='\n')
        writer.writerow(list(LEVEL_NAMES) + ['overall'])
        writer.writerow([
            '' if rate is None else repr(rate)
            for rate in list(rates.values()) + [overall]
        ])

    _write_csv(write_mismatch, os.path.join(args.out, 'mismatch.csv'))


def level_pairs(rng, boxes, perturb):
    """Draw boxes and pair their canonical level with a chosen level.

    Box sides are log-uniform. With probability ``perturb`` the chosen level
    is shifted one level up or down, staying within S2..S6.

    :param rng: Random number generator
    :type rng: numpy.random.RandomState
    :param boxes: Number of boxes
    :type boxes: int
    :param perturb: Probability of a shifted choice
    :type perturb: float
    :return: (chosen_level, gt_level) pairs
    :rtype: list(tuple(int, int))

    """
    sides = np.exp(rng.uniform(
        np.log(MIN_BOX_SIDE), np.log(MAX_BOX_SIDE), (boxes, 2)))
    shifted = rng.uniform(size=boxes) < perturb
    signs = rng.choice((-1, 1), size=boxes)

    pairs = []
    for (width, height), shift, sign in zip(sides, shifted, signs):
        gt = assign_fpn_level(GtBox(width, height))
        chosen = gt
        if shift:
            if gt == MIN_LEVEL:
                sign = 1
            elif gt == MAX_LEVEL:
                sign = -1
            chosen = gt + int(sign)
        pairs.append((chosen, gt))
    return pairs


def gen(args, config):
    """Write a seeded synthetic pyramid and optionally its parameters."""
    rng = np.random.RandomState(config.seed)
    pyramid = FeaturePyramid.random(
        rng, config.batch, config.channels,
        config.s2_height, config.s2_width)
    write_pyramid(pyramid, args.out)
    if args.params:
        config.op_config().check(config.channels)
        if args.init == 'identity':
            params = OpNetParams.identity(
                config.channels, config.cross_config())
        else:
            params = OpNetParams.initialize(
                rng, config.channels, config.cross_config())
        write_parameters(params, args.params)


def _make_output(directory):
    """Create the output directory unless it exists."""
    try:
        os.makedirs(directory, exist_ok=True)
    except OSError as exc:
        raise TensorFileError('{}: {}'.format(directory, exc.strerror or exc))


def _write_csv(write, path):
    """Open a text file and hand it to a writer function."""
    try:
        with open(path, 'w', newline='') as stream:
            write(stream)
    except (IOError, OSError) as exc:
        raise TensorFileError('{}: {}'.format(path, exc.strerror or exc))
    logger.debug('Wrote %s', path)


def sweep_pairs(tokens):
    """Parse ``P=1,2,4 C=8`` sweep tokens into (heads, channels) pairs.

    :param tokens: ``P=...`` and ``C=...`` tokens
    :type tokens: list(str)
    :rtype: list(tuple(int, int))

    """
    values = {}
    for token in tokens:
        key, _, listed = token.partition('=')
        key = key.strip().upper()
        if key not in ('P', 'C') or not listed:
            raise argparse.ArgumentTypeError(
                'sweep entries look like P=1,2,4 or C=8, got {!r}'.format(
                    token))
        try:
            values[key] = [int(value) for value in listed.split(',')]
        except ValueError:
            raise argparse.ArgumentTypeError(
                'sweep values must be integers, got {!r}'.format(token))
    if not values:
        return []
    if set(values) != {'P', 'C'}:
        raise argparse.ArgumentTypeError('a sweep needs both P= and C=')
    return list(itertools.product(values['P'], values['C']))


def configure_logging(log_level):
    """Configure logging based on command line argument.

    :param log_level: Log level passed form the command line
    :type log_level: int

    """
    root_logger = logging.getLogger()
    root_logger.setLevel(logging.DEBUG)

    # Log to sys.stderr using log level
    # passed through command line
    log_handler = logging.StreamHandler()
    formatter = logging.Formatter('%(levelname)s: %(message)s')
    log_handler.setFormatter(formatter)
    log_handler.setLevel(log_level)
    root_logger.addHandler(log_handler)


class ArgumentParser(argparse.ArgumentParser):

    """Argument parser exiting with status 1 on usage errors."""

    def error(self, message):
        """Print usage and exit with status 1."""
        self.print_usage(sys.stderr)
        self.exit(1, '{}: error: {}\n'.format(self.prog, message))


def parse_arguments(argv):
    """Parse command line arguments.

    :returns: Parsed arguments
    :rtype: argparse.Namespace

    """
    parser = ArgumentParser(description=__doc__)
    log_levels = ['debug', 'info', 'warning', 'error', 'critical']
    parser.add_argument(
        '--config',
        help='JSON configuration file (built-in defaults otherwise)',
    )
    parser.add_argument(
        '--seed',
        type=int,
        help='Random seed (overrides the configuration)',
    )
    parser.add_argument(
        '--channels',
        type=int,
        help='Pyramid channels C (overrides the configuration)',
    )
    parser.add_argument(
        '--heads',
        type=int,
        help='Base OP heads P (overrides the configuration)',
    )
    parser.add_argument(
        '-l', '--log-level',
        dest='log_level',
        choices=log_levels,
        default='warning',
        help=('Log level. One of {0} or {1} '
              '(%(default)s by default)'
              .format(', '.join(log_levels[:-1]), log_levels[-1])),
    )

    subparsers = parser.add_subparsers(dest='command', help='Subcommands')
    subparsers.required = True

    forward_parser = subparsers.add_parser(
        'forward', help='Run the feature path over a pyramid directory')
    forward_parser.add_argument('input', help='Input pyramid directory')
    forward_parser.add_argument(
        '--out', required=True, help='Output pyramid directory')
    forward_parser.add_argument(
        '--params', help='Parameter directory written by gen --params')
    forward_parser.add_argument(
        '--init',
        choices=INITIALIZERS,
        default='random',
        help='Parameters used without --params (%(default)s by default)',
    )
    forward_parser.set_defaults(func=forward)

    gradcheck_parser = subparsers.add_parser(
        'gradcheck', help='Check analytic gradients by finite differences')
    gradcheck_parser.add_argument(
        '--scope',
        choices=SCOPES,
        default='all',
        help='Operations to check (%(default)s by default)',
    )
    gradcheck_parser.add_argument(
        '--threshold', type=float, help='Largest accepted relative error')
    gradcheck_parser.add_argument(
        '--out', default='.', help='Report directory (%(default)s by default)')
    gradcheck_parser.set_defaults(func=gradcheck)

    count_parser = subparsers.add_parser(
        'count', help='MAC and parameter accounting')
    count_parser.add_argument(
        '--sweep',
        nargs='*',
        metavar='KEY=VALUES',
        help='Complexity sweep, for example: --sweep P=1,2,4 C=8',
    )
    count_parser.add_argument(
        '--out', default='.', help='Report directory (%(default)s by default)')
    count_parser.set_defaults(func=count)

    experiment_parser = subparsers.add_parser(
        'experiment', help='Toy training run and level mismatch report')
    experiment_parser.add_argument(
        '--steps', type=int, help='Training steps')
    experiment_parser.add_argument(
        '--perturb', type=float, help='Probability of a shifted level choice')
    experiment_parser.add_argument(
        '--out', default='.', help='Report directory (%(default)s by default)')
    experiment_parser.set_defaults(func=experiment)

    gen_parser = subparsers.add_parser(
        'gen', help='Write a synthetic pyramid')
    gen_parser.add_argument(
        '--out', required=True, help='Output pyramid directory')
    gen_parser.add_argument(
        '--params', help='Also write parameters to this directory')
    gen_parser.add_argument(
        '--init',
        choices=INITIALIZERS,
        default='random',
        help='Parameters written with --params (%(default)s by default)',
    )
    gen_parser.set_defaults(func=gen)

    args = parser.parse_args(argv)
    if args.command == 'count' and args.sweep is not None:
        try:
            args.sweep = sweep_pairs(args.sweep)
        except argparse.ArgumentTypeError as exc:
            parser.error(str(exc))
    args.log_level = getattr(logging, args.log_level.upper())
    return args


if __name__ == '__main__':
    sys.exit(main())
