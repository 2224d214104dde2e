#!/usr/bin/env python
"""Generate performance diagnostics.

The purpose of this script is to time the forward solve and both backward
methods of the registered folded layers, to be able to track the
performance over time.
"""
import argparse
import sys
import timeit

import numpy as np

from foldcore import exceptions
from foldcore import registry
from foldcore.options import Options

_clock = timeit.default_timer


APPROX_RUN_TIME = 0.5


def _timed(func, clock=_clock):
    duration = 0
    i = 0
    while True:
        i += 1
        start = clock()
        func()
        end = clock()
        duration += end - start
        if duration >= APPROX_RUN_TIME:
            break
    return duration / i


def _backward_time(made, c, x_star, g, method):
    try:
        made.layer.backward_vjp(c, x_star, g, method=method)
    except exceptions.FoldcoreError:
        return float('nan'), 0
    report = made.layer.backward_vjp(c, x_star, g, method=method)
    return (_timed(lambda: made.layer.backward_vjp(c, x_star, g,
                                                   method=method)),
            report.iterations)


def run_tests(names, seed):
    rng = np.random.RandomState(seed)
    table = registry.Layers()
    options = Options(backward_max_iter=20000)
    for name in names:
        made = table.build(name, options)
        c, report = made.draw(rng)
        g = rng.standard_normal(len(report.decision))
        forward_time = _timed(lambda: made.layer.forward(c))
        krylov_time, krylov_iters = _backward_time(
            made, c, report.x_star, g, 'krylov')
        lfpi_time, lfpi_iters = _backward_time(
            made, c, report.x_star, g, 'lfpi')
        sys.stdout.write(
            "forward_time: %10.2fus, krylov_time: %10.2fus (%5d), "
            "lfpi_time: %10.2fus (%5d) " % (
                1000000 * forward_time, 1000000 * krylov_time, krylov_iters,
                1000000 * lfpi_time, lfpi_iters))
        sys.stdout.write("name: %s\n" % name)


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument('-l', '--layer', action='append',
                        help='Layer to time; repeat for several.  '
                             'Defaults to every registered layer.')
    parser.add_argument('-s', '--seed', type=int, default=0)
    args = parser.parse_args()
    names = args.layer or registry.Layers().names()
    run_tests(names, args.seed)


if __name__ == '__main__':
    main()
