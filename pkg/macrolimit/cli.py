"""
Command-line front end.

    python -m macrolimit pointer-dist --n 16 --basis x --mu 4 --delta 2 --compare
    python -m macrolimit magnet --n 16 --theta 1.5707963 --delta 4
    python -m macrolimit tsirelson --v-step 1e-5 --plot scan.svg
    python -m macrolimit box-check box.json
    python -m macrolimit prbox-sim --n 10000 --v 0.5 --runs 100 --seed 7
    python -m macrolimit singlet-sim --n 16 --delta 4 --runs 2000 --seed 7

Data goes to --out (stdout when omitted), human summaries are printed to
stdout when the data went to a file and to stderr otherwise.  Exit status is
0 on success, 2 for bad flags or input and 3 when an internal identity
fails.
"""
import argparse
import dataclasses
import logging
import math
import os
import sys
from dataclasses import dataclass

import numpy as np
import pandas as pd

from macrolimit import montecarlo as mc
from macrolimit import pointer_measurement as pm
from macrolimit import prbox_macroscopic as pb
from macrolimit import reporting
from macrolimit.config import setting
from macrolimit.errors import InsufficientSamples, InvariantViolation, MacrolimitError, UsageError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INVARIANT = 3

DEFAULT_FORMATS = {'box-check': 'json'}
# argparse bookkeeping that is not part of a command's flag set
_PARSER_KEYS = ('subcommand', 'verbose', 'quiet')


########################################################################################################################
# flag validation

def _positive_int(flag, key):
    def check(options):
        if options[key] is not None and options[key] < 1:
            raise UsageError(flag, f"must be a positive integer, got {options[key]}")
    return check


def _positive_float(flag, key):
    def check(options):
        value = options[key]
        if value is not None and not (value > 0 and math.isfinite(value)):
            raise UsageError(flag, f"must be positive and finite, got {value}")
    return check


def _nonnegative_float(flag, key):
    def check(options):
        value = options[key]
        if value is not None and not (value >= 0 and math.isfinite(value)):
            raise UsageError(flag, f"must be non-negative and finite, got {value}")
    return check


def _within(flag, key, lo, hi):
    def check(options):
        value = options[key]
        if value is not None and not lo <= value <= hi:
            raise UsageError(flag, f"must lie in [{lo:g}, {hi:g}], got {value}")
    return check


def _finite(flag, key):
    def check(options):
        if not math.isfinite(options[key]):
            raise UsageError(flag, f"must be finite, got {options[key]}")
    return check


def _open_unit(flag, key):
    def check(options):
        if not 0.0 < options[key] < 1.0:
            raise UsageError(flag, f"must lie strictly between 0 and 1, got {options[key]}")
    return check


def _existing_file(flag, key):
    def check(options):
        if not os.path.isfile(options[key]):
            raise UsageError(flag, f"no such file: {options[key]}")
    return check


def _rational_limit(options):
    limit = setting('pointer.rational_max_spins', 200)
    if options['rational'] and options['n'] > limit:
        raise UsageError('--rational', f"exact weights are available for N <= {limit}, got N={options['n']}")


def _common(options):
    seed = options.get('seed')
    if seed is not None and not 0 <= seed < 2 ** 64:
        raise UsageError('--seed', f"must be an unsigned 64-bit integer, got {seed}")
    plot = options.get('plot')
    if plot is not None and not plot.lower().endswith('.svg'):
        raise UsageError('--plot', f"plots are written as SVG, expected a .svg path, got {plot}")


SCHEMAS = {
    'pointer-dist': [_positive_int('--n', 'n'), _positive_float('--delta', 'delta'), _rational_limit],
    'magnet': [_positive_int('--n', 'n'), _positive_float('--delta', 'delta'),
               _within('--theta', 'theta', 0.0, math.pi), _finite('--phi', 'phi')],
    'tsirelson': [_positive_float('--v-step', 'v_step'), _within('--v-step', 'v_step', 0.0, 1.0),
                  _positive_float('--s-resolution', 's_resolution'), _within('--s-resolution', 's_resolution', 0.0, 1.0),
                  _nonnegative_float('--tol', 'tol')],
    'box-check': [_existing_file('path', 'path'), _nonnegative_float('--tol', 'tol')],
    'prbox-sim': [_positive_int('--n', 'n'), _positive_int('--runs', 'runs'), _within('--v', 'v', -1.0, 1.0),
                  _positive_int('--batch-size', 'batch_size'), _positive_int('--workers', 'workers'),
                  _open_unit('--alpha', 'alpha')],
    'singlet-sim': [_positive_int('--n', 'n'), _positive_float('--delta', 'delta'), _positive_int('--runs', 'runs'),
                    _open_unit('--alpha', 'alpha')],
}


@dataclass(frozen=True, eq=False)
class CommandConfig:
    """A subcommand name and its validated flag set."""
    subcommand: str
    options: dict

    def __post_init__(self):
        if self.subcommand not in SCHEMAS:
            raise UsageError('subcommand', f"unknown subcommand {self.subcommand!r}")
        if self.options.get('format') is None:
            self.options['format'] = DEFAULT_FORMATS.get(self.subcommand, 'csv')
        _common(self.options)
        for check in SCHEMAS[self.subcommand]:
            check(self.options)

    @classmethod
    def from_namespace(cls, namespace):
        options = {k: v for k, v in vars(namespace).items() if k not in _PARSER_KEYS}
        return cls(namespace.subcommand, options)


########################################################################################################################
# output helpers

def _summary(config, line):
    stream = sys.stdout if config.options.get('out') else sys.stderr
    print(line, file=stream)


def _emit(config, frame, document):
    if config.options['format'] == 'json':
        reporting.write_json(document, config.options.get('out'))
    else:
        reporting.write_frame(frame, config.options.get('out'))


def _density_csv_path(plot_path, label=None):
    stem = os.path.splitext(plot_path)[0]
    return f"{stem}.{label}.csv" if label else f"{stem}.csv"


def _mixture_document(mixture):
    components = []
    for shift, weight in zip(mixture.shifts, mixture.weights):
        entry = {'shift': shift, 'weight': float(weight)}
        if mixture.exact:
            entry['weight_exact'] = str(weight)
        components.append(entry)
    return {'mean': mixture.mean(), 'variance': mixture.variance(), 'components': components}


def _resolve_seed(config):
    seed = config.options.get('seed')
    if seed is None:
        seed = mc.fresh_seed()
        logger.info("no --seed given, using %d", seed)
    return seed


########################################################################################################################
# subcommands

def _x_distribution(mu, n, shape, exact):
    if mu is None:
        return pm.rho_x_marginal(n, shape, exact)
    return pm.rho_x_conditional(mu, shape, exact)


def cmd_pointer_dist(config):
    o = config.options
    n, exact = o['n'], o['rational']
    shape = pm.PointerShape(o['delta'])
    mu = pm.Magnetization(o['mu'], n) if o['mu'] is not None else None
    header = {'n_spins': n, 'delta': shape.delta, 'mu': o['mu'], 'exact': exact}
    if mu is not None:
        header['magnetization_probability'] = float(pm.magnetization_probability(mu))

    if o['compare']:
        # Bob's view after Alice measured x (knowing mu or not) against the z marginal
        curves = {'z': pm.rho_z_marginal(n, shape, exact), 'x': _x_distribution(mu, n, shape, exact)}
        distance = pm.total_variation(curves['x'], curves['z'])
        frame = pd.concat([m.to_frame().assign(basis=b) for b, m in curves.items()], ignore_index=True)
        frame = frame[['basis', 'shift', 'weight']]
        document = dict(header, total_variation=distance, z=_mixture_document(curves['z']),
                        x=_mixture_document(curves['x']))
        if exact:
            document['weights_identical'] = curves['x'].weight_map() == curves['z'].weight_map()
        _emit(config, frame, document)
        _summary(config, f"total variation distance between x and z pointer distributions: {distance:.3e}")
    else:
        if o['basis'] == 'z':
            mixture = pm.rho_z_conditional(mu, shape, exact) if mu is not None else pm.rho_z_marginal(n, shape, exact)
        else:
            mixture = _x_distribution(mu, n, shape, exact)
        curves = {o['basis']: mixture}
        _emit(config, mixture.to_frame(), dict(header, basis=o['basis'], **_mixture_document(mixture)))
        _summary(config, f"pointer mean {mixture.mean():.17g}, variance {mixture.variance():.17g}")

    if o.get('plot'):
        gridded = {label: m.gridded() for label, m in curves.items()}
        for label, frame in gridded.items():
            reporting.write_frame(frame, _density_csv_path(o['plot'], label if len(gridded) > 1 else None))
        title = f"N={n}, delta={shape.delta:g}" + (f", mu={o['mu']}" if mu is not None else '')
        reporting.plot_densities({f"{b} basis": f for b, f in gridded.items()}, o['plot'], title)
    return EXIT_OK


def cmd_magnet(config):
    o = config.options
    shape = pm.PointerShape(o['delta'])
    mixture = pm.magnet_readout(o['n'], o['theta'], o['phi'], o['axis'], shape)
    document = {'n_spins': o['n'], 'delta': shape.delta, 'theta': o['theta'], 'phi': o['phi'], 'axis': o['axis'],
                **_mixture_document(mixture)}
    if o['directions']:
        readouts, distances = pm.direction_discrimination(o['n'], shape)
        document['directions'] = readouts.to_dict(orient='records')
        document['direction_distances'] = distances.to_dict()
        _summary(config, readouts.to_string(index=False))
        _summary(config, distances.to_string())
    _emit(config, mixture.to_frame(), document)
    _summary(config, f"pointer mean {mixture.mean():.17g}, variance {mixture.variance():.17g}")

    if o.get('plot'):
        gridded = mixture.gridded()
        reporting.write_frame(gridded, _density_csv_path(o['plot']))
        reporting.plot_densities({f"theta={o['theta']:g}": gridded}, o['plot'],
                                 f"N={o['n']} magnet measured along {o['axis']}")
    return EXIT_OK


def cmd_tsirelson(config):
    o = config.options
    scan = pb.tsirelson_scan(o['v_step'], o['s_resolution'], restrict_s_zero=o['s_zero'], tol=o['tol'])
    document = {
        'v_step': o['v_step'], 's_resolution': o['s_resolution'], 'restrict_s_zero': o['s_zero'],
        'v_star': scan.v_star, 'V_star': scan.V_star,
        'tsirelson_correlator': pb.TSIRELSON_CORRELATOR, 'tsirelson_visibility': pb.TSIRELSON_VISIBILITY,
        'rows': scan.table.to_dict(orient='records'),
    }
    _emit(config, scan.table, document)
    _summary(config, f"largest feasible correlator v* = {scan.v_star:.6f}, visibility V* = {scan.V_star:.6f} "
                     f"(quantum limit {pb.TSIRELSON_VISIBILITY:.6f})")
    if o.get('plot'):
        reporting.plot_s_interval(scan.table, scan.v_star, o['plot'])
    return EXIT_OK


def cmd_box_check(path, config):
    box = pb.BoxDistribution.load(path)
    report = dict(valid=True, **pb.feasibility_report(box, config.options['tol']))
    report['correlators'] = {f"{x}{y}": box.correlator(x, y) for x in range(2) for y in range(2)}
    witness = report['witness'] or {}
    frame = pd.DataFrame([{'valid': True, 'feasible': report['feasible'], 'sA': witness.get('sA'),
                           'sB': witness.get('sB'), 'min_eigenvalue': report['min_eigenvalue'],
                           'chsh': report['chsh']}])
    _emit(config, frame, report)
    verdict = 'admits' if report['feasible'] else 'does not admit'
    _summary(config, f"CHSH = {report['chsh']:.17g}; the box {verdict} a PSD macroscopic correlation matrix")
    return EXIT_OK


def _gaussianity(frame, n_boxes, alpha):
    verdicts = {}
    for x in (0, 1):
        scaled = frame.loc[(frame['x'] == x) & (frame['y'] == 0), 'A'].to_numpy() / math.sqrt(n_boxes)
        try:
            verdict = mc.gaussianity_check(scaled, alpha)
            verdicts[f"A{x}"] = dataclasses.asdict(verdict)
        except InsufficientSamples as e:
            logger.warning("skipping Gaussianity test for A%d: %s", x, e)
            verdicts[f"A{x}"] = None
    return verdicts


def cmd_prbox_sim(config):
    o = config.options
    seed = _resolve_seed(config)
    n, v = o['n'], o['v']
    frame = mc.run_box_ensembles(n, v, o['runs'], mc.RngSpec(seed), batch_size=o['batch_size'], workers=o['workers'])
    estimates = mc.estimate_correlator(frame, n)
    estimates['expected'] = v * np.where(estimates['x'] * estimates['y'] == 1, -1.0, 1.0)
    estimates['within_3se'] = (estimates['correlator'] - estimates['expected']).abs() <= 3 * estimates['standard_error']
    summary = {
        'n_boxes': n, 'v': v, 'runs': o['runs'], 'seed': seed,
        'correlators': estimates.to_dict(orient='records'),
        'chsh_estimate': float((estimates['correlator'] * np.where(estimates['x'] * estimates['y'] == 1, -1, 1)).sum()),
        'gaussianity': _gaussianity(frame, n, o['alpha']),
    }
    _emit(config, frame, summary)
    if o.get('summary'):
        reporting.write_json(summary, o['summary'])
    for row in estimates.itertuples():
        _summary(config, f"<A{row.x}B{row.y}>/N = {row.correlator:+.5f} +- {row.standard_error:.5f} "
                         f"(expected {row.expected:+.5f})")
    if o.get('plot'):
        samples = {f"A{x}/sqrt(N)": frame.loc[(frame['x'] == x) & (frame['y'] == 0), 'A'] / math.sqrt(n)
                   for x in (0, 1)}
        reporting.plot_histograms(samples, o['plot'], 'scaled sum', normal_reference=True)
    return EXIT_OK


def cmd_singlet_sim(config):
    o = config.options
    seed = _resolve_seed(config)
    shape = pm.PointerShape(o['delta'])
    bases = ('z', 'x') if o['basis'] == 'both' else (o['basis'],)
    frames = []
    for basis in bases:
        rng = mc.RngSpec(seed, stream=0 if basis == 'z' else 1).generator()
        frames.append(mc.simulate_singlet_protocol(o['n'], basis, shape, o['runs'], rng))
    frame = pd.concat(frames, ignore_index=True)
    readings = {basis: frame.loc[frame['basis'] == basis, 'x_p'].to_numpy() for basis in bases}
    summary = {
        'n_spins': o['n'], 'delta': shape.delta, 'runs': o['runs'], 'seed': seed,
        'predicted_variance': o['n'] + shape.delta ** 2,
        'bases': {b: {'mean': float(r.mean()), 'variance': float(r.var(ddof=1)) if r.size > 1 else None}
                  for b, r in readings.items()},
    }
    if len(bases) == 2:
        try:
            verdict = mc.basis_indistinguishability(readings['z'], readings['x'], o['alpha'])
            summary['indistinguishability'] = dataclasses.asdict(verdict)
            _summary(config, f"two-sample KS statistic {verdict.statistic:.5f} vs critical {verdict.critical:.5f}: "
                             f"{'indistinguishable' if verdict.passed else 'DISTINGUISHABLE'}")
        except InsufficientSamples as e:
            logger.warning("skipping basis comparison: %s", e)
            summary['indistinguishability'] = None
    _emit(config, frame, summary)
    if o.get('plot'):
        reporting.plot_histograms({f"{b} basis": r for b, r in readings.items()}, o['plot'], 'pointer position x_p')
    return EXIT_OK


COMMANDS = {
    'pointer-dist': cmd_pointer_dist,
    'magnet': cmd_magnet,
    'tsirelson': cmd_tsirelson,
    'box-check': lambda config: cmd_box_check(config.options['path'], config),
    'prbox-sim': cmd_prbox_sim,
    'singlet-sim': cmd_singlet_sim,
}


########################################################################################################################
# parser

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--out', default=None, help="output file (default: stdout)")
    common.add_argument('--format', choices=('csv', 'json'), default=None,
                        help="output format (default: json for box-check, csv otherwise)")
    common.add_argument('--plot', default=None, help="write an SVG chart to this path")
    common.add_argument('--seed', type=int, default=None, help="unsigned 64-bit seed for simulations")

    parser = argparse.ArgumentParser(prog='macrolimit', description=__doc__.split('\n\n')[0].strip())
    parser.add_argument('-v', '--verbose', action='store_true', help="debug logging")
    parser.add_argument('-q', '--quiet', action='store_true', help="warnings and errors only")
    sub = parser.add_subparsers(dest='subcommand', required=True)

    p = sub.add_parser('pointer-dist', parents=[common], help="Bob's pointer distribution for N half-singlets")
    p.add_argument('--n', type=int, required=True, help="number of spins N")
    p.add_argument('--basis', choices=('z', 'x'), default='z', help="Alice's measurement basis")
    p.add_argument('--mu', type=int, default=None, help="Alice's magnetization (omit for the marginal)")
    p.add_argument('--delta', type=float, default=1.0, help="pointer width")
    p.add_argument('--rational', action='store_true', help="exact rational weights (N <= 200)")
    p.add_argument('--compare', action='store_true',
                   help="compare the x-basis distribution with the z-basis marginal")

    p = sub.add_parser('magnet', parents=[common], help="pointer reading of N spins along a common direction")
    p.add_argument('--n', type=int, required=True, help="number of spins N")
    p.add_argument('--theta', type=float, required=True, help="polar angle in [0, pi]")
    p.add_argument('--phi', type=float, default=0.0, help="azimuth")
    p.add_argument('--axis', choices=('z', 'x'), default='z', help="measured spin component")
    p.add_argument('--delta', type=float, default=1.0, help="pointer width")
    p.add_argument('--directions', action='store_true', help="also tabulate the four reference directions")

    p = sub.add_parser('tsirelson', parents=[common], help="largest correlator with a PSD correlation matrix")
    p.add_argument('--v-step', type=float, default=1e-5)
    p.add_argument('--s-resolution', type=float, default=1e-3)
    p.add_argument('--s-zero', action='store_true', help="only try same-side correlator s = 0")
    p.add_argument('--tol', type=float, default=None, help="PSD tolerance")

    p = sub.add_parser('box-check', parents=[common], help="validate a box and test its macroscopic locality")
    p.add_argument('path', help="JSON file with a 2x2x2x2 array under key 'p'")
    p.add_argument('--tol', type=float, default=None, help="PSD tolerance")

    p = sub.add_parser('prbox-sim', parents=[common], help="Monte-Carlo sums over ensembles of isotropic boxes")
    p.add_argument('--n', type=int, required=True, help="boxes per ensemble")
    p.add_argument('--v', type=float, required=True, help="correlator v = 2V - 1")
    p.add_argument('--runs', type=int, default=100)
    p.add_argument('--batch-size', type=int, default=None)
    p.add_argument('--workers', type=int, default=None)
    p.add_argument('--alpha', type=float, default=0.01, help="KS significance level")
    p.add_argument('--summary', default=None, help="also write the JSON summary here")

    p = sub.add_parser('singlet-sim', parents=[common], help="Monte-Carlo runs of the N-singlet protocol")
    p.add_argument('--n', type=int, required=True, help="number of singlet pairs N")
    p.add_argument('--delta', type=float, default=1.0, help="pointer width")
    p.add_argument('--runs', type=int, default=1000)
    p.add_argument('--basis', choices=('z', 'x', 'both'), default='both')
    p.add_argument('--alpha', type=float, default=0.01, help="KS significance level")
    return parser


def _configure_logging(verbose, quiet):
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format='%(levelname)s %(name)s: %(message)s', stream=sys.stderr, force=True)


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE
    _configure_logging(args.verbose, args.quiet)

    try:
        config = CommandConfig.from_namespace(args)
        return COMMANDS[config.subcommand](config)
    except InvariantViolation as e:
        logger.error("internal invariant violated: %s", e)
        return EXIT_INVARIANT
    except MacrolimitError as e:
        print(f"macrolimit {args.subcommand}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as e:
        print(f"macrolimit {args.subcommand}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
