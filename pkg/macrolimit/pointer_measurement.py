"""
Pointer distributions for weak and strong measurements of a collective spin.

A pointer prepared in the Gaussian state Phi(x) is displaced by the
eigenvalue 2k - N of sum_j sigma_z^j.  Every distribution handled here is
therefore a finite mixture of equal-width Gaussians centred on integer
shifts.  Mixtures are stored analytically as (shift, weight) pairs and are
only evaluated on a grid when a density, a distance or a plot is needed.

Weights come in two arithmetic modes: exact `Fraction`s built from
`math.comb` integers (for N up to `pointer.rational_max_spins`) and floats,
which are built in log space beyond that limit.
"""
import logging
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
import pandas as pd
from scipy import stats
from scipy.integrate import trapezoid
from scipy.special import logsumexp

from macrolimit.config import setting
from macrolimit.errors import (InvalidMagnetization, InvariantViolation,
                               ParameterRangeError, ShapeMismatch)

logger = logging.getLogger(__name__)

LOG2 = math.log(2.0)
NORM_TOLERANCE = 1e-12
_DENSITY_CHUNK = 4096

# polar and azimuthal angles of the four reference magnet directions
REFERENCE_DIRECTIONS = {
    '+z': (0.0, 0.0),
    '-z': (math.pi, 0.0),
    '+x': (math.pi / 2, 0.0),
    '-x': (math.pi / 2, math.pi),
}


@dataclass(frozen=True)
class PointerShape:
    """Gaussian pointer profile; `delta` is the r.m.s. spread of |Phi|^2."""
    delta: float

    def __post_init__(self):
        if not (self.delta > 0 and math.isfinite(self.delta)):
            raise ParameterRangeError(f"pointer width delta must be positive and finite, got {self.delta}")

    def density(self, x):
        x = np.asarray(x, dtype=float)
        var = self.delta * self.delta
        return np.exp(-x * x / (2.0 * var)) / math.sqrt(2.0 * math.pi * var)

    def log_amplitude(self, x):
        """log Phi(x) for the real, positive amplitude (2 pi D^2)^(-1/4) exp(-x^2 / 4 D^2)."""
        x = np.asarray(x, dtype=float)
        var = self.delta * self.delta
        return -x * x / (4.0 * var) - 0.25 * math.log(2.0 * math.pi * var)


@dataclass(frozen=True)
class Magnetization:
    mu: int
    n_spins: int

    def __post_init__(self):
        if not isinstance(self.n_spins, (int, np.integer)) or self.n_spins < 1:
            raise ParameterRangeError(f"number of spins must be a positive integer, got {self.n_spins}")
        if (not isinstance(self.mu, (int, np.integer)) or abs(self.mu) > self.n_spins
                or (self.n_spins - self.mu) % 2):
            raise InvalidMagnetization(self.mu, self.n_spins)

    @property
    def j_m(self):
        return (self.n_spins + self.mu) // 2

    @property
    def k_m(self):
        return (self.n_spins - self.mu) // 2


@dataclass(frozen=True, eq=False)
class SpinAmplitudes:
    """Amplitudes <k,N|psi> on the symmetric sectors, k = number of up spins."""
    n_spins: int
    amplitudes: np.ndarray

    def __post_init__(self):
        amplitudes = np.asarray(self.amplitudes, dtype=complex)
        if amplitudes.shape != (self.n_spins + 1,):
            raise ParameterRangeError(
                f"expected {self.n_spins + 1} sector amplitudes, got shape {amplitudes.shape}")
        norm = math.fsum(np.abs(amplitudes) ** 2)
        if abs(norm - 1.0) > NORM_TOLERANCE:
            raise ParameterRangeError(f"spin amplitudes are not normalized (norm^2 = {norm!r})")
        amplitudes.setflags(write=False)
        object.__setattr__(self, 'amplitudes', amplitudes)

    @property
    def sector_weights(self):
        return np.abs(self.amplitudes) ** 2


@dataclass(frozen=True, eq=False)
class CollapseResult:
    posterior: SpinAmplitudes
    # probability density of having read x_p, i.e. the unnormalized norm^2
    density: float


@dataclass(frozen=True)
class EvaluationGrid:
    lo: float
    hi: float
    step: float

    def __post_init__(self):
        if not (self.hi > self.lo and self.step > 0):
            raise ParameterRangeError(f"bad evaluation grid [{self.lo}, {self.hi}] step {self.step}")

    @classmethod
    def default_for(cls, n_spins, shape):
        pad = setting('pointer.grid_padding_deltas', 8)
        step = min(shape.delta / setting('pointer.grid_step_divisor', 8), setting('pointer.grid_step_cap', 0.25))
        half_width = n_spins + pad * shape.delta
        return cls(-half_width, half_width, step)

    def points(self):
        count = int(math.ceil((self.hi - self.lo) / self.step - 1e-9))
        return self.lo + self.step * np.arange(count + 1)


@dataclass(frozen=True)
class ShiftMixture:
    """Mixture of copies of `shape` displaced to integer `shifts`.

    Shifts are strictly increasing, share the parity of `n_spins` and carry
    strictly positive weights (zero-weight components are dropped on
    construction through `from_sector_weights`).
    """
    n_spins: int
    shifts: tuple
    weights: tuple
    shape: PointerShape

    def __post_init__(self):
        if len(self.shifts) != len(self.weights) or not self.shifts:
            raise ParameterRangeError("a mixture needs matching, non-empty shifts and weights")
        for prev, cur in zip(self.shifts, self.shifts[1:]):
            if cur <= prev:
                raise ParameterRangeError(f"shifts must be strictly increasing ({prev} then {cur})")
        for shift in self.shifts:
            if abs(shift) > self.n_spins or (self.n_spins - shift) % 2:
                raise ParameterRangeError(f"shift {shift} is not an eigenvalue for N={self.n_spins}")
        if any(w < 0 for w in self.weights):
            raise ParameterRangeError("mixture weights must be non-negative")
        if self.exact:
            if sum(self.weights) != 1:
                raise InvariantViolation(f"exact mixture weights sum to {sum(self.weights)}")
        else:
            total = math.fsum(self.weights)
            if abs(total - 1.0) > NORM_TOLERANCE:
                raise InvariantViolation(f"mixture weights sum to {total!r}")

    @classmethod
    def from_sector_weights(cls, n_spins, weights, shape):
        """`weights[k]` is attached to the shift 2k - N."""
        pairs = [(2 * k - n_spins, w) for k, w in enumerate(weights) if w > 0]
        shifts = tuple(int(s) for s, _ in pairs)
        values = tuple(w if isinstance(w, Fraction) else float(w) for _, w in pairs)
        return cls(n_spins, shifts, values, shape)

    @property
    def exact(self):
        return all(isinstance(w, Fraction) for w in self.weights)

    def weight_map(self):
        return dict(zip(self.shifts, self.weights))

    def weight_array(self):
        return np.array([float(w) for w in self.weights])

    def shift_array(self):
        return np.array(self.shifts, dtype=float)

    def mean(self):
        return math.fsum(float(w) * s for s, w in zip(self.shifts, self.weights))

    def variance(self):
        """Pointer variance: spread of the shifts plus the intrinsic delta^2."""
        mean = self.mean()
        spread = math.fsum(float(w) * (s - mean) ** 2 for s, w in zip(self.shifts, self.weights))
        return spread + self.shape.delta ** 2

    def density(self, x):
        return _weighted_density(x, self.shift_array(), self.weight_array(), self.shape)

    def gridded(self, grid=None):
        grid = grid or EvaluationGrid.default_for(self.n_spins, self.shape)
        xs = grid.points()
        return pd.DataFrame({'x': xs, 'density': self.density(xs)})

    def sample(self, rng, size):
        weights = self.weight_array()
        idx = rng.choice(len(weights), size=size, p=weights / weights.sum())
        return self.shift_array()[idx] + self.shape.delta * rng.standard_normal(size)

    def to_frame(self):
        return pd.DataFrame({'shift': np.array(self.shifts, dtype=int), 'weight': self.weight_array()})


def _weighted_density(x, shifts, weights, shape):
    # sum_s weights[s] |Phi(x - shifts[s])|^2, weights may be signed
    x = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.empty_like(x)
    for start in range(0, x.size, _DENSITY_CHUNK):
        chunk = x[start:start + _DENSITY_CHUNK]
        out[start:start + _DENSITY_CHUNK] = shape.density(chunk[:, None] - shifts[None, :]) @ weights
    return out


def pointer_density(x, shape):
    """|Phi(x)|^2 = (2 pi D^2)^(-1/2) exp(-x^2 / 2 D^2)."""
    values = shape.density(x)
    return float(values) if np.ndim(values) == 0 else values


def log_binomial_weight(n, k):
    """log(2^-n C(n, k)), with C(n, k) = 0 (log = -inf) outside 0 <= k <= n."""
    if n < 0:
        raise ParameterRangeError(f"n must be non-negative, got {n}")
    if k < 0 or k > n:
        return -math.inf
    c = math.comb(n, k)
    # keep the leading 64 bits; the power of two is folded in as an integer
    shift = max(c.bit_length() - 64, 0)
    return math.log(c >> shift) + (shift - n) * LOG2


def binomial_coefficients(n):
    row = [1] * (n + 1)
    for j in range(n):
        row[j + 1] = row[j] * (n - j) // (j + 1)
    return row


def binomial_row(n, exact=False):
    """2^-n C(n, j) for j = 0..n.

    Up to `pointer.rational_max_spins` floats are correctly rounded from the
    integers; beyond that the row is built in log space.
    """
    if not exact and n > setting('pointer.rational_max_spins', 200):
        return _log_space_row(n)
    row = binomial_coefficients(n)
    scale = 1 << n
    if exact:
        return [Fraction(c, scale) for c in row]
    return np.array([c / scale for c in row])


def _log_space_row(n):
    # log C(n,k+1) - log C(n,k) = log1p((n-2k-1)/(k+1)), accumulated outward from the centre
    centre = n // 2
    k = np.arange(centre, n)
    steps = np.log1p((n - 2 * k - 1) / (k + 1.0))
    upper = log_binomial_weight(n, centre) + np.concatenate(([0.0], np.cumsum(steps)))
    log_row = np.concatenate((upper[n - centre - np.arange(centre)], upper)) if centre else upper
    row = np.exp(log_row)
    return row / math.fsum(row)


def _check_exact_mode(n_spins, exact):
    limit = setting('pointer.rational_max_spins', 200)
    if exact and n_spins > limit:
        raise ParameterRangeError(f"exact weights are limited to N <= {limit} (got N={n_spins})")


def magnet_amplitudes(n_spins, theta, phi=0.0):
    """Sector amplitudes of N spins all along (theta, phi).

    |<k,N|m^N>|^2 = C(N,k) cos^2k(theta/2) sin^2(N-k)(theta/2), the phase is
    exp(i (N-k) phi).
    """
    if n_spins < 1:
        raise ParameterRangeError(f"number of spins must be positive, got {n_spins}")
    if not 0.0 <= theta <= math.pi:
        raise ParameterRangeError(f"polar angle must lie in [0, pi], got {theta}")
    # (1 + cos theta)/2 is exact at theta = 0, pi/2, pi
    p_up = 0.5 * (1.0 + math.cos(theta))
    k = np.arange(n_spins + 1)
    if p_up == 0.5:
        probabilities = binomial_row(n_spins)
    else:
        probabilities = stats.binom.pmf(k, n_spins, p_up)
        probabilities = probabilities / math.fsum(probabilities)
    phases = np.exp(1j * (n_spins - k) * phi) if phi else np.ones(n_spins + 1)
    return SpinAmplitudes(n_spins, np.sqrt(probabilities) * phases)


def pointer_distribution_of_state(state, shape):
    return ShiftMixture.from_sector_weights(state.n_spins, state.sector_weights, shape)


def collapse_posterior(state, shape, x_p):
    """Condition the spins on the pointer reading x_p.

    Each amplitude is multiplied by Phi(x_p - (2k - N)); the result is
    returned normalized together with its former norm^2, the probability
    density of x_p.  Work is done in log space so strong measurements far
    from every shift do not underflow to 0/0.
    """
    n = state.n_spins
    amplitudes = state.amplitudes
    support = np.flatnonzero(amplitudes != 0)
    shifts = 2 * support - n
    log_phi = shape.log_amplitude(x_p - shifts)
    log_density = float(logsumexp(2.0 * np.log(np.abs(amplitudes[support])) + 2.0 * log_phi))

    scaled = np.zeros(n + 1, dtype=complex)
    scaled[support] = amplitudes[support] * np.exp(log_phi - log_phi.max())
    scaled = scaled / math.sqrt(math.fsum(np.abs(scaled) ** 2))
    return CollapseResult(SpinAmplitudes(n, scaled), math.exp(log_density))


def posterior_fidelity(prior, posterior):
    return float(abs(np.vdot(prior.amplitudes, posterior.amplitudes)) ** 2)


def magnetization_probability(mu, exact=False):
    """Binomial probability of Alice finding magnetization mu."""
    if exact:
        return Fraction(math.comb(mu.n_spins, mu.j_m), 1 << mu.n_spins)
    return math.exp(log_binomial_weight(mu.n_spins, mu.j_m))


def rho_z_conditional(mu, shape, exact=False):
    """Alice measured z and found mu: Bob's pointer is displaced by mu, undeformed."""
    weight = Fraction(1) if exact else 1.0
    return ShiftMixture(mu.n_spins, (int(mu.mu),), (weight,), shape)


def rho_z_marginal(n_spins, shape, exact=False):
    if n_spins < 1:
        raise ParameterRangeError(f"number of spins must be positive, got {n_spins}")
    _check_exact_mode(n_spins, exact)
    return ShiftMixture.from_sector_weights(n_spins, binomial_row(n_spins, exact), shape)


def cjk_squared(mu, exact=False):
    """c_jk^2 = 2^-N C(j_m, j) C(k_m, k) as a (j_m+1) x (k_m+1) array.

    The sign (-1)^(k_m - k) of c_jk never enters.  The normalization is
    2^(-N/2) on c_jk, so the entries sum to one.
    """
    _check_exact_mode(mu.n_spins, exact)
    if exact:
        rows = binomial_coefficients(mu.j_m)
        cols = binomial_coefficients(mu.k_m)
        scale = 1 << mu.n_spins
        return np.array([[Fraction(r * c, scale) for c in cols] for r in rows], dtype=object)
    return np.outer(binomial_row(mu.j_m), binomial_row(mu.k_m))


def _x_sector_weights(mu, exact):
    # anti-diagonal sums of c_jk^2: component s = j + k sits at shift 2s - N
    if exact:
        c2 = cjk_squared(mu, exact=True)
        weights = [Fraction(0)] * (mu.n_spins + 1)
        for j in range(mu.j_m + 1):
            for k in range(mu.k_m + 1):
                weights[j + k] += c2[j, k]
        return weights
    return np.convolve(binomial_row(mu.j_m), binomial_row(mu.k_m))


def rho_x_conditional(mu, shape, exact=False):
    """Alice measured x and found mu; Bob's pointer after tracing out the spins.

    The double sum over (j, k) is regrouped by s = j + k, component s
    sitting at shift 2s - N.
    """
    _check_exact_mode(mu.n_spins, exact)
    return ShiftMixture.from_sector_weights(mu.n_spins, _x_sector_weights(mu, exact), shape)


def rho_x_marginal(n_spins, shape, exact=False):
    """Bob's pointer after an x measurement whose outcome he does not learn."""
    if n_spins < 1:
        raise ParameterRangeError(f"number of spins must be positive, got {n_spins}")
    _check_exact_mode(n_spins, exact)
    total = [Fraction(0)] * (n_spins + 1) if exact else np.zeros(n_spins + 1)
    for j_m, probability in enumerate(binomial_row(n_spins, exact)):
        mu = Magnetization(2 * j_m - n_spins, n_spins)
        weights = _x_sector_weights(mu, exact)
        if exact:
            total = [t + probability * w for t, w in zip(total, weights)]
        else:
            total += probability * weights
    return ShiftMixture.from_sector_weights(n_spins, total, shape)


def vandermonde_sum(j_m, k_m, s):
    """sum_j C(j_m, j) C(k_m, s - j) with C(k, j) = 0 for j > k."""
    return sum(math.comb(j_m, j) * math.comb(k_m, s - j) for j in range(max(0, s - k_m), min(s, j_m) + 1))


def reduce_single_sum(mu, exact=True):
    """Weights over s = 0..N of the regrouped double sum, via Vandermonde.

    Raises InvariantViolation if an inner sum differs from C(N, s).
    """
    n = mu.n_spins
    scale = 1 << n
    # inner sums for every s at once: the product of the two binomial polynomials
    inner_sums = integer_convolution(binomial_coefficients(mu.j_m), binomial_coefficients(mu.k_m))
    weights = []
    for s, (inner, expected) in enumerate(zip(inner_sums, binomial_coefficients(n))):
        if inner != expected:
            raise InvariantViolation(f"Vandermonde sum {inner} != C({n},{s}) = {expected} for mu={mu.mu}")
        weights.append(Fraction(inner, scale) if exact else inner / scale)
    return weights if exact else np.array(weights)


def integer_convolution(left, right):
    """Exact convolution of two lists of non-negative ints.

    Kronecker substitution: each list is packed into one big integer with
    fixed-width little-endian slots wide enough for any output coefficient,
    the two are multiplied, and the product is cut back into slots.
    """
    if not left or not right:
        return []
    if min(left) < 0 or min(right) < 0:
        raise ParameterRangeError("integer_convolution expects non-negative coefficients")
    bound = max(left) * max(right) * min(len(left), len(right))
    width = bound.bit_length() // 8 + 1

    def pack(coefficients):
        return int.from_bytes(b''.join(c.to_bytes(width, 'little') for c in coefficients), 'little')

    size = len(left) + len(right) - 1
    raw = (pack(left) * pack(right)).to_bytes(size * width, 'little')
    return [int.from_bytes(raw[i * width:(i + 1) * width], 'little') for i in range(size)]


def total_variation(a, b, grid=None):
    """(1/2) integral |rho_a - rho_b| by the trapezoid rule on `grid`."""
    if a.shape != b.shape:
        raise ShapeMismatch(f"mixtures use different pointer shapes ({a.shape.delta} vs {b.shape.delta})")
    # both are mixtures of one shape, so the difference is a signed mixture
    shifts = np.union1d(a.shift_array(), b.shift_array())
    difference = np.zeros(shifts.size)
    difference[np.searchsorted(shifts, a.shift_array())] += a.weight_array()
    difference[np.searchsorted(shifts, b.shift_array())] -= b.weight_array()
    support = difference != 0
    if not support.any():
        return 0.0
    grid = grid or EvaluationGrid.default_for(max(a.n_spins, b.n_spins), a.shape)
    xs = grid.points()
    values = _weighted_density(xs, shifts[support], difference[support], a.shape)
    return 0.5 * float(trapezoid(np.abs(values), xs))


def measurement_polar_angle(theta, phi, axis):
    """Angle between the magnet direction (theta, phi) and the measured axis 'z' or 'x'."""
    direction = np.array([math.sin(theta) * math.cos(phi), math.sin(theta) * math.sin(phi), math.cos(theta)])
    axes = {'z': np.array([0.0, 0.0, 1.0]), 'x': np.array([1.0, 0.0, 0.0])}
    if axis not in axes:
        raise ParameterRangeError(f"measurement axis must be 'z' or 'x', got {axis!r}")
    return float(np.arccos(np.clip(direction @ axes[axis], -1.0, 1.0)))


def magnet_readout(n_spins, theta, phi, axis, shape):
    """Pointer distribution for measuring sum_j sigma_axis on N spins along (theta, phi)."""
    angle = measurement_polar_angle(theta, phi, axis)
    return pointer_distribution_of_state(magnet_amplitudes(n_spins, angle), shape)


def direction_discrimination(n_spins, shape):
    """Pointer readouts of the four reference magnets along z and along x.

    Returns (readouts, distances): readouts has one row per (direction, axis)
    with mean and variance; distances holds, for each pair of directions,
    the larger of the two per-axis total-variation distances.
    """
    mixtures = {}
    rows = []
    for name, (theta, phi) in REFERENCE_DIRECTIONS.items():
        for axis in ('z', 'x'):
            mixture = magnet_readout(n_spins, theta, phi, axis, shape)
            mixtures[name, axis] = mixture
            rows.append({'direction': name, 'axis': axis, 'mean': mixture.mean(), 'variance': mixture.variance()})
    names = list(REFERENCE_DIRECTIONS)
    distances = pd.DataFrame(0.0, index=names, columns=names)
    for i, first in enumerate(names):
        for second in names[i + 1:]:
            d = max(total_variation(mixtures[first, axis], mixtures[second, axis]) for axis in ('z', 'x'))
            distances.loc[first, second] = distances.loc[second, first] = d
    return pd.DataFrame(rows), distances
