"""Command-line driver for the experiments and gradient diagnostics.

Every command writes its table as CSV (``%.10g``, '.' decimal) next to a
``<out>.manifest`` file of ``key=value`` lines describing the run.  Without
``--out`` (checkgrad) only the manifest is written, as
``<command>.manifest`` in the working directory.
Exit codes: 0 ok, 1 gradient check failure, 2 usage error, 3 numerical
failure.
"""
import argparse
import csv
import hashlib
import io
import logging
import os
import sys
import time

import numpy as np

import foldcore
from foldcore import exceptions
from foldcore import experiments
from foldcore.options import Options


LOG = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_NUMERICAL = 3

SEED_ENV = 'FOLDCORE_SEED'
RATE_LAYERS = ('pgd-topk', 'admm-qp', 'fdpg')

# Flags that configure the process rather than the run.
_NOT_RUN_FLAGS = ('command', 'verbose', 'out')


def format_value(value):
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return '%.10g' % value
    return str(value)


def render_csv(header, rows):
    out = io.StringIO()
    writer = csv.writer(out, lineterminator='\n')
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_value(v) for v in row])
    return out.getvalue()


def write_csv(path, header, rows):
    with open(path, 'w', newline='', encoding='ascii') as f:
        f.write(render_csv(header, rows))


def run_id(command, flags):
    """SHA-1 over the command and its flags in sorted order."""
    digest = hashlib.sha1(command.encode('utf-8'))
    for key in sorted(flags):
        digest.update(('\n%s=%s' % (key, format_value(flags[key])))
                      .encode('utf-8'))
    return digest.hexdigest()


def write_manifest(path, command, flags, seed, options, wall_time):
    lines = [
        ('run_id', run_id(command, flags)),
        ('command', command),
        ('seed', seed),
        ('version', foldcore.__version__),
        ('wall_time_s', '%.3f' % wall_time),
    ]
    for key in sorted(flags):
        lines.append(('flag.%s' % key, flags[key]))
    for key, value in sorted(options.as_dict().items()):
        lines.append(('option.%s' % key, value))
    with open(path, 'w', encoding='utf-8') as f:
        for key, value in lines:
            f.write('%s=%s\n' % (key, format_value(value)))


def read_manifest(path):
    manifest = {}
    with open(path, encoding='utf-8') as f:
        for line in f:
            key, _, value = line.rstrip('\n').partition('=')
            manifest[key] = value
    return manifest


def positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError('must be at least 1, received %r'
                                         % text)
    return value


def positive_float(text):
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError('must be positive, received %r'
                                         % text)
    return value


def build_parser():
    parser = argparse.ArgumentParser(
        prog='foldcore',
        description='Fixed-point folding experiments and diagnostics.')
    parser.add_argument('-v', '--verbose', action='store_true',
                        help='Log solver progress to stderr.')
    parser.add_argument('--backward-method', choices=('krylov', 'lfpi'),
                        default='krylov')
    parser.add_argument('--tol', type=float, default=1e-8,
                        help='Forward solver tolerance.')
    parser.add_argument('--rho', type=float, default=1.0,
                        help='ADMM penalty parameter.')
    parser.add_argument('--sqp-dual-update', choices=('verbatim', 'damped'),
                        default='verbatim')
    parser.add_argument('--fdpg-momentum', choices=('frozen', 'none'),
                        default='frozen')
    commands = parser.add_subparsers(dest='command')
    commands.required = True

    rate = commands.add_parser(
        'rate', help='Forward and backward errors of unfolding.')
    rate.add_argument('--layer', choices=RATE_LAYERS, default='pgd-topk')
    rate.add_argument('--start', choices=('fixed', 'random'),
                      default='fixed')
    rate.add_argument('--iters', type=int, default=200)
    rate.add_argument('--seed', type=int, default=0)
    rate.add_argument('--out', required=True)

    check = commands.add_parser(
        'checkgrad', help='Compare gradients against finite differences.')
    check.add_argument('--layer', default='all',
                       help="A registered layer name, or 'all'.")
    check.add_argument('--trials', type=positive_int, default=3)
    check.add_argument('--seed', type=int, default=0)
    check.add_argument('--out', default=None)

    denoise = commands.add_parser(
        'denoise', help='Learn the operator of a total-variation denoiser.')
    denoise.add_argument('--lambda', dest='lam', type=float, default=0.5)
    denoise.add_argument('--epochs', type=int, default=10)
    denoise.add_argument('--seed', type=int, default=0)
    denoise.add_argument('--n-signals', type=positive_int, default=200)
    denoise.add_argument('--length', type=positive_int, default=50)
    denoise.add_argument('--lr', type=positive_float, default=1e-2)
    denoise.add_argument('--out', required=True)

    portfolio = commands.add_parser(
        'portfolio', help='Regret training through a portfolio layer.')
    portfolio.add_argument('--degree', type=int, choices=(1, 2, 3),
                           default=1)
    portfolio.add_argument('--epochs', type=int, default=5)
    portfolio.add_argument('--seed', type=int, default=0)
    portfolio.add_argument('--n-points', type=positive_int, default=100)
    portfolio.add_argument('--lr', type=positive_float, default=1e-2)
    portfolio.add_argument('--out', required=True)

    bilinear = commands.add_parser(
        'bilinear', help='Integrated against two-stage bilinear training.')
    bilinear.add_argument('--seeds', type=positive_int, default=5)
    bilinear.add_argument('--epochs', type=int, default=5)
    bilinear.add_argument('--seed', type=int, default=0,
                          help='First instance seed.')
    bilinear.add_argument('--n-points', type=positive_int, default=200)
    bilinear.add_argument('--lr', type=positive_float, default=1e-2)
    bilinear.add_argument('--out', required=True)

    topk = commands.add_parser(
        'topk', help='Top-k classification through a smoothed layer.')
    topk.add_argument('--epochs', type=int, default=10)
    topk.add_argument('--seed', type=int, default=0)
    topk.add_argument('--n-points', type=positive_int, default=300)
    topk.add_argument('--lr', type=positive_float, default=1e-2)
    topk.add_argument('--out', required=True)
    return parser


def _seed_from_env(seed):
    value = os.environ.get(SEED_ENV)
    if value is None or value == '':
        return seed
    try:
        return int(value)
    except ValueError:
        raise ValueError('%s must be an integer, received %r'
                         % (SEED_ENV, value))


class Driver(object):
    """Dispatch a parsed command line to its ``cmd_<command>`` method."""
    def __init__(self, options=None, stdout=None):
        self.options = options
        self.stdout = sys.stdout if stdout is None else stdout
        self._method_cache = {}

    def _options(self, args):
        base = Options() if self.options is None else self.options
        return base.replace(tol=args.tol,
                            backward_method=args.backward_method,
                            rho=args.rho,
                            sqp_dual_update=args.sqp_dual_update,
                            fdpg_momentum=args.fdpg_momentum)

    def prepare(self, args):
        """Resolve the seed and options; ValueError means bad arguments."""
        args.seed = _seed_from_env(args.seed)
        return self._options(args)

    def execute(self, args, options):
        method = self._method_cache.get(args.command)
        if method is None:
            method = getattr(self, 'cmd_%s' % args.command.replace('-', '_'))
            self._method_cache[args.command] = method
        flags = dict((k, v) for k, v in vars(args).items()
                     if k not in _NOT_RUN_FLAGS)
        started = time.time()
        code, header, rows = method(args, options)
        if args.out is not None:
            write_csv(args.out, header, rows)
            manifest = args.out + '.manifest'
        else:
            manifest = '%s.manifest' % args.command
        write_manifest(manifest, args.command, flags, args.seed, options,
                       time.time() - started)
        return code

    def run(self, args):
        return self.execute(args, self.prepare(args))

    def cmd_rate(self, args, options):
        header, rows = experiments.run_rate(args.layer, args.start,
                                            args.iters, args.seed, options)
        return EXIT_OK, header, rows

    def cmd_checkgrad(self, args, options):
        header, rows = experiments.run_checkgrad(args.layer, args.trials,
                                                 args.seed, options)
        worst = {}
        for name, _, step_dev, e2e_dev, _ in rows:
            worst[name] = max(worst.get(name, 0.0), step_dev, e2e_dev)
        for name in sorted(worst):
            status = ('PASS' if worst[name] < experiments.PASS_THRESHOLD
                      else 'FAIL')
            self.stdout.write('%s %s %s\n' % (name, format_value(worst[name]),
                                              status))
        if experiments.all_passed(rows):
            return EXIT_OK, header, rows
        return EXIT_CHECK_FAILED, header, rows

    def cmd_denoise(self, args, options):
        def checkpoint(D):
            write_csv(args.out + '.D.csv',
                      ['c%d' % j for j in range(D.shape[1])], D.tolist())
        header, rows = experiments.run_denoise(
            args.lam, args.epochs, args.seed, n_signals=args.n_signals,
            length=args.length, lr=args.lr, options=options,
            on_checkpoint=checkpoint)
        return EXIT_OK, header, rows

    def cmd_portfolio(self, args, options):
        header, rows = experiments.run_portfolio(
            args.degree, args.epochs, args.seed, n_points=args.n_points,
            lr=args.lr, options=options)
        return EXIT_OK, header, rows

    def cmd_bilinear(self, args, options):
        header, rows = experiments.run_bilinear(
            args.seeds, args.epochs, n_points=args.n_points, lr=args.lr,
            seed=args.seed, options=options)
        return EXIT_OK, header, rows

    def cmd_topk(self, args, options):
        header, rows = experiments.run_topk(
            args.epochs, args.seed, n_points=args.n_points, lr=args.lr,
            options=options)
        return EXIT_OK, header, rows


def main(argv=None, options=None, stdout=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format='%(levelname)s %(name)s: %(message)s')
    driver = Driver(options, stdout)
    try:
        run_options = driver.prepare(args)
    except ValueError as e:
        sys.stderr.write('invalid-arguments: %s\n' % e)
        return EXIT_USAGE
    try:
        return driver.execute(args, run_options)
    except exceptions.UnknownLayerError as e:
        sys.stderr.write('unknown-layer: %s\n' % e)
        return EXIT_USAGE
    except (ValueError, ArithmeticError, RuntimeError,
            np.linalg.LinAlgError) as e:
        # FoldcoreError included; scipy raises ValueError and RuntimeError
        # from its root finders.
        LOG.warning('%s failed: %s', args.command, e)
        sys.stderr.write('numerical-failure: %s\n' % e)
        return EXIT_NUMERICAL
