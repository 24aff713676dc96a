"""
Monte-Carlo simulation of noisy PR-box ensembles and of the N-singlet
measurement protocol, plus the statistical tests used to compare them with
the analytic predictions.

Every random draw goes through an `RngSpec`: a Philox counter-based
generator keyed by SeedSequence(seed, spawn_key=(stream,)).  Work is split
into batches that each own one stream, so output does not depend on how
many workers run the batches.
"""
import functools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy import stats

from macrolimit import pointer_measurement as pm
from macrolimit.config import setting
from macrolimit.errors import InsufficientSamples, ParameterRangeError

logger = logging.getLogger(__name__)

SETTINGS = ((0, 0), (0, 1), (1, 0), (1, 1))
RUN_COLUMNS = ['run_id', 'x', 'y', 'A', 'B']
PROTOCOL_COLUMNS = ['run_id', 'basis', 'mu', 'x_p']


@dataclass(frozen=True)
class RngSpec:
    seed: int
    stream: int = 0

    def __post_init__(self):
        if not 0 <= self.seed < 2 ** 64:
            raise ParameterRangeError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        if self.stream < 0:
            raise ParameterRangeError(f"stream must be non-negative, got {self.stream}")

    def generator(self):
        sequence = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream,))
        return np.random.Generator(np.random.Philox(sequence))

    def with_stream(self, stream):
        return RngSpec(self.seed, stream)


def fresh_seed():
    """A random 64-bit seed from OS entropy."""
    return int(np.random.SeedSequence().entropy) % 2 ** 64


@dataclass(frozen=True)
class EnsembleRunResult:
    A: int
    B: int
    n_boxes: int

    def __post_init__(self):
        for name, total in (('A', self.A), ('B', self.B)):
            if abs(total) > self.n_boxes or (self.n_boxes - total) % 2:
                raise ParameterRangeError(f"{name}={total} is not a sum of {self.n_boxes} outcomes +-1")


def _check_correlator(v):
    if not -1.0 <= v <= 1.0:
        raise ParameterRangeError(f"correlator v must lie in [-1, 1], got {v}")


def _check_bit(name, value):
    if value not in (0, 1):
        raise ParameterRangeError(f"{name} must be 0 or 1, got {value}")


def sample_box(v, x, y, rng):
    """One use of an isotropic box: uniform a, and b = (-1)^{xy} a with probability (1+v)/2."""
    _check_correlator(v)
    _check_bit('x', x)
    _check_bit('y', y)
    a = 1 if rng.random() < 0.5 else -1
    sign = -1 if x * y else 1
    agree = rng.random() < 0.5 * (1.0 + v)
    return a, sign * a if agree else -sign * a


def _category_probabilities(v):
    # (a=+1, agree), (a=+1, disagree), (a=-1, agree), (a=-1, disagree)
    visibility = 0.5 * (1.0 + v)
    return [0.5 * visibility, 0.5 * (1.0 - visibility), 0.5 * visibility, 0.5 * (1.0 - visibility)]


def _sums_from_counts(counts, x, y):
    counts = np.asarray(counts)
    a_sum = counts[..., 0] + counts[..., 1] - counts[..., 2] - counts[..., 3]
    agreement = counts[..., 0] - counts[..., 1] - counts[..., 2] + counts[..., 3]
    return a_sum, (-1 if x * y else 1) * agreement


def run_ensemble(n_boxes, v, x, y, rng):
    """Sums A_x, B_y over N independent boxes.

    The N draws are summarised by the multinomial counts of (a, agree)
    categories, which fixes both sums exactly.
    """
    if n_boxes < 1:
        raise ParameterRangeError(f"need at least one box, got {n_boxes}")
    _check_correlator(v)
    _check_bit('x', x)
    _check_bit('y', y)
    a_sum, b_sum = _sums_from_counts(rng.multinomial(n_boxes, _category_probabilities(v)), x, y)
    return EnsembleRunResult(int(a_sum), int(b_sum), n_boxes)


def simulate_ensembles(n_boxes, v, x, y, runs, rng):
    """`runs` independent ensembles from one generator; returns arrays (A, B)."""
    if n_boxes < 1 or runs < 1:
        raise ParameterRangeError("n_boxes and runs must be positive")
    _check_correlator(v)
    counts = rng.multinomial(n_boxes, _category_probabilities(v), size=runs)
    return _sums_from_counts(counts, x, y)


def _batches(runs, batch_size):
    return [(start, min(batch_size, runs - start)) for start in range(0, runs, batch_size)]


def run_box_ensembles(n_boxes, v, runs, rng_spec, settings=SETTINGS, batch_size=None, workers=None):
    """Per-run table (run_id, x, y, A, B) for each setting.

    Batch b of setting (x, y) draws from stream 4b + 2x + y of `rng_spec.seed`.
    """
    batch_size = batch_size or setting('montecarlo.batch_size', 1000)
    workers = workers or setting('montecarlo.workers', 1)
    jobs = [(x, y, index, start, size)
            for x, y in settings
            for index, (start, size) in enumerate(_batches(runs, batch_size))]

    def draw(job):
        x, y, index, start, size = job
        rng = rng_spec.with_stream(4 * index + 2 * x + y).generator()
        a_sums, b_sums = simulate_ensembles(n_boxes, v, x, y, size, rng)
        return pd.DataFrame({'run_id': np.arange(start, start + size), 'x': x, 'y': y, 'A': a_sums, 'B': b_sums})

    with ThreadPoolExecutor(max_workers=workers) as executor:
        frames = list(executor.map(draw, jobs))
    logger.debug("simulated %d runs x %d settings in %d batches", runs, len(settings), len(jobs))
    return pd.concat(frames, ignore_index=True)[RUN_COLUMNS]


def estimate_correlator(frame, n_boxes):
    """Mean of A*B/N per setting with its standard error."""
    products = frame.assign(product=frame['A'].astype(float) * frame['B'].astype(float) / n_boxes)
    grouped = products.groupby(['x', 'y'])['product']
    summary = grouped.agg(correlator='mean', std='std', runs='count').reset_index()
    summary['standard_error'] = summary['std'] / np.sqrt(summary['runs'])
    return summary.drop(columns='std')


@dataclass(frozen=True)
class Verdict:
    statistic: float
    critical: float
    passed: bool


def ks_critical_constant(alpha):
    """c(alpha) of the asymptotic Kolmogorov distribution."""
    table = setting('montecarlo.ks_critical', {}) or {}
    for key, value in table.items():
        if math.isclose(float(key), alpha):
            return float(value)
    return math.sqrt(-0.5 * math.log(alpha / 2.0))


def gaussianity_check(samples, alpha=0.01):
    """One-sample KS test of `samples` against the standard normal.

    Passes iff the statistic is below c(alpha)/sqrt(n).
    """
    samples = np.asarray(samples, dtype=float)
    minimum = setting('montecarlo.min_ks_samples', 100)
    if samples.size < minimum:
        raise InsufficientSamples(f"need at least {minimum} samples, got {samples.size}")
    statistic = float(stats.kstest(samples, 'norm').statistic)
    critical = ks_critical_constant(alpha) / math.sqrt(samples.size)
    return Verdict(statistic, critical, statistic < critical)


@functools.lru_cache(maxsize=256)
def _protocol_mixture(n_spins, mu, basis, delta):
    magnetization = pm.Magnetization(mu, n_spins)
    shape = pm.PointerShape(delta)
    if basis == 'z':
        return pm.rho_z_conditional(magnetization, shape)
    return pm.rho_x_conditional(magnetization, shape)


def _check_basis(basis):
    if basis not in ('z', 'x'):
        raise ParameterRangeError(f"basis must be 'z' or 'x', got {basis!r}")


def sample_singlet_protocol(n_spins, basis, shape, rng):
    """One run: Alice's magnetization mu and Bob's pointer reading x_p."""
    if n_spins < 1:
        raise ParameterRangeError(f"number of spins must be positive, got {n_spins}")
    _check_basis(basis)
    mu = 2 * int(rng.binomial(n_spins, 0.5)) - n_spins
    x_p = float(_protocol_mixture(n_spins, mu, basis, shape.delta).sample(rng, 1)[0])
    return mu, x_p


def simulate_singlet_protocol(n_spins, basis, shape, runs, rng):
    """Table (run_id, basis, mu, x_p) of `runs` protocol runs."""
    if n_spins < 1 or runs < 1:
        raise ParameterRangeError("n_spins and runs must be positive")
    _check_basis(basis)
    mus = 2 * rng.binomial(n_spins, 0.5, size=runs) - n_spins
    x_p = np.empty(runs)
    for mu in np.unique(mus):
        where = np.flatnonzero(mus == mu)
        x_p[where] = _protocol_mixture(n_spins, int(mu), basis, shape.delta).sample(rng, where.size)
    return pd.DataFrame({'run_id': np.arange(runs), 'basis': basis, 'mu': mus, 'x_p': x_p})[PROTOCOL_COLUMNS]


def basis_indistinguishability(z_samples, x_samples, alpha=0.01):
    """Two-sample KS test between z-basis and x-basis pointer readings."""
    z_samples = np.asarray(z_samples, dtype=float)
    x_samples = np.asarray(x_samples, dtype=float)
    n, m = z_samples.size, x_samples.size
    minimum = setting('montecarlo.min_ks_samples', 100)
    if min(n, m) < minimum:
        raise InsufficientSamples(f"need at least {minimum} samples per basis, got {n} and {m}")
    statistic = float(stats.ks_2samp(z_samples, x_samples).statistic)
    critical = ks_critical_constant(alpha) * math.sqrt((n + m) / (n * m))
    return Verdict(statistic, critical, statistic < critical)
