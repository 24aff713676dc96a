"""
Macroscopic limit of noisy PR-boxes.

For N i.i.d. boxes the sums A_x, B_y become jointly Gaussian and a
non-negative joint distribution exists iff the correlation matrix K is
positive semidefinite.  Matrices are kept in units of N (K/N), rows and
columns ordered (A0, A1, B0, B1).
"""
import json
import logging
import math
from dataclasses import dataclass
from itertools import product

import numpy as np
import pandas as pd

from macrolimit.config import setting
from macrolimit.errors import InvalidBox, InvariantViolation, ParameterRangeError

logger = logging.getLogger(__name__)

LABELS = ('A0', 'A1', 'B0', 'B1')
# index 0 <-> outcome +1, index 1 <-> outcome -1
OUTCOMES = np.array([1.0, -1.0])
BOX_TOLERANCE = 1e-12

TSIRELSON_CORRELATOR = math.sqrt(0.5)
TSIRELSON_VISIBILITY = 0.5 * (1.0 + TSIRELSON_CORRELATOR)


def _psd_tolerance(tol):
    return setting('prbox.psd_tolerance', 1e-10) if tol is None else tol


def _check_unit_range(name, value):
    if not -1.0 <= value <= 1.0:
        raise ParameterRangeError(f"{name} must lie in [-1, 1], got {value}")


@dataclass(frozen=True)
class IsotropicParams:
    visibility: float

    def __post_init__(self):
        if not 0.0 <= self.visibility <= 1.0:
            raise ParameterRangeError(f"visibility must lie in [0, 1], got {self.visibility}")

    @classmethod
    def from_correlator(cls, v):
        _check_unit_range('correlator v', v)
        return cls(0.5 * (1.0 + v))

    @property
    def v(self):
        return 2.0 * self.visibility - 1.0


@dataclass(frozen=True, eq=False)
class CorrMatrix:
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != (4, 4):
            raise ParameterRangeError(f"correlation matrix must be 4x4, got {values.shape}")
        if not np.array_equal(values, values.T):
            raise ParameterRangeError("correlation matrix must be symmetric")
        values.setflags(write=False)
        object.__setattr__(self, 'values', values)

    def eigenvalues(self):
        return np.linalg.eigvalsh(self.values)

    def min_eigenvalue(self):
        return float(self.eigenvalues()[0])

    def to_frame(self):
        return pd.DataFrame(self.values, index=LABELS, columns=LABELS)


def build_correlation_matrix(s_a, s_b, cross, diagonal=(1.0, 1.0, 1.0, 1.0)):
    """K/N from same-side correlators and the 2x2 cross block cross[x][y] = <A_x B_y>/N."""
    cross = np.asarray(cross, dtype=float)
    k = np.diag(np.asarray(diagonal, dtype=float))
    k[0, 1] = k[1, 0] = s_a
    k[2, 3] = k[3, 2] = s_b
    k[:2, 2:] = cross
    k[2:, :2] = cross.T
    return CorrMatrix(k)


def build_isotropic_K(v, s):
    _check_unit_range('v', v)
    _check_unit_range('s', s)
    return build_correlation_matrix(s, s, [[v, v], [v, -v]])


def analytic_eigenvalues(v, s):
    """1 +- sqrt(2v^2 + s^2 + 2vs) and 1 +- sqrt(2v^2 + s^2 - 2vs); broadcasts over arrays."""
    v = np.asarray(v, dtype=float)
    s = np.asarray(s, dtype=float)
    r_plus = np.sqrt(2 * v * v + s * s + 2 * v * s)
    r_minus = np.sqrt(2 * v * v + s * s - 2 * v * s)
    return np.stack([1 + r_plus, 1 - r_plus, 1 + r_minus, 1 - r_minus])


def min_analytic_eigenvalue(v, s):
    v = np.asarray(v, dtype=float)
    s = np.asarray(s, dtype=float)
    return 1.0 - np.sqrt(2 * v * v + s * s + 2 * np.abs(v * s))


def is_macroscopically_local(v, s, tol=None):
    """bool for scalar (v, s), a boolean array when either is an array."""
    local = min_analytic_eigenvalue(v, s) >= -_psd_tolerance(tol)
    return bool(local) if np.ndim(local) == 0 else local


@dataclass(frozen=True)
class SInterval:
    lo: float
    hi: float

    def contains(self, s, tol=0.0):
        return self.lo - tol <= s <= self.hi + tol


def admissible_s_interval(v):
    """Same-side correlators s with s^2 + 2|v||s| + 2v^2 <= 1, or None when 2v^2 > 1."""
    _check_unit_range('v', v)
    if 2 * v * v > 1:
        return None
    hi = max(math.sqrt(1.0 - v * v) - abs(v), 0.0)
    return SInterval(-hi, hi)


@dataclass(frozen=True, eq=False)
class TsirelsonScan:
    v_star: float
    V_star: float
    table: pd.DataFrame


def tsirelson_scan(v_step, s_resolution, restrict_s_zero=False, tol=None):
    """Largest v on the grid 0, v_step, ..., 1 whose admissible s-interval is non-empty.

    A grid v is feasible when its smallest eigenvalue at s = 0, the best
    same-side correlator, is at least -tol.  The table holds one row per
    grid v with the bounds of its s-interval (NaN when empty).  The answer
    is re-checked numerically on an s-grid of spacing `s_resolution`: v*
    must have a feasible grid s and the next grid v none.  With
    `restrict_s_zero` only s = 0 is tried.
    """
    if v_step <= 0 or s_resolution <= 0:
        raise ParameterRangeError("scan steps must be positive")
    tol = _psd_tolerance(tol)
    vs = v_step * np.arange(int(math.floor(1.0 / v_step + 1e-9)) + 1)
    feasible = min_analytic_eigenvalue(vs, 0.0) >= -tol
    # a v admitted only through the tolerance keeps the single point s = 0
    reach = np.sqrt(np.clip(1.0 - vs * vs, 0.0, None)) - vs
    half_width = np.where(feasible, np.maximum(reach, 0.0), np.nan)
    table = pd.DataFrame({'v': vs, 's_min': -half_width, 's_max': half_width, 'feasible': feasible})

    star = int(np.flatnonzero(feasible).max())
    v_star = float(vs[star])
    s_grid = s_resolution * np.arange(-int(round(1.0 / s_resolution)), int(round(1.0 / s_resolution)) + 1)
    if restrict_s_zero:
        s_grid = np.zeros(1)
    if not np.any(min_analytic_eigenvalue(v_star, s_grid) >= -tol):
        raise InvariantViolation(f"v*={v_star} has no feasible s on the grid")
    if star + 1 < vs.size and np.any(min_analytic_eigenvalue(vs[star + 1], s_grid) >= -tol):
        raise InvariantViolation(f"v={vs[star + 1]} beyond v* still has a feasible s on the grid")
    logger.debug("tsirelson scan: %d grid values, v*=%.10f", vs.size, v_star)
    return TsirelsonScan(v_star, 0.5 * (1.0 + v_star), table)


@dataclass(frozen=True, eq=False)
class BoxDistribution:
    """P(a,b|x,y) stored as p[x][y][a][b]."""
    p: np.ndarray

    def __post_init__(self):
        p = np.array(self.p, dtype=float)
        if p.shape != (2, 2, 2, 2):
            raise InvalidBox('shape', {'expected': '2x2x2x2', 'found': 'x'.join(map(str, p.shape))})
        for x, y, a, b in product(range(2), repeat=4):
            value = p[x, y, a, b]
            if not (math.isfinite(value) and -BOX_TOLERANCE <= value <= 1.0 + BOX_TOLERANCE):
                raise InvalidBox('positivity', {'x': x, 'y': y, 'a': int(OUTCOMES[a]), 'b': int(OUTCOMES[b])},
                                 f"probability {value!r} outside [0, 1]")
        for x, y in product(range(2), repeat=2):
            total = math.fsum(p[x, y].ravel())
            if abs(total - 1.0) > BOX_TOLERANCE:
                raise InvalidBox('normalization', {'x': x, 'y': y}, f"probabilities sum to {total!r}")
        for x, a in product(range(2), repeat=2):
            m0, m1 = p[x, 0, a, :].sum(), p[x, 1, a, :].sum()
            if abs(m0 - m1) > BOX_TOLERANCE:
                raise InvalidBox('no-signaling (Alice marginal)', {'x': x, 'a': int(OUTCOMES[a])},
                                 f"P(a|x,y=0)={m0!r} but P(a|x,y=1)={m1!r}")
        for y, b in product(range(2), repeat=2):
            m0, m1 = p[0, y, :, b].sum(), p[1, y, :, b].sum()
            if abs(m0 - m1) > BOX_TOLERANCE:
                raise InvalidBox('no-signaling (Bob marginal)', {'y': y, 'b': int(OUTCOMES[b])},
                                 f"P(b|x=0,y)={m0!r} but P(b|x=1,y)={m1!r}")
        p.setflags(write=False)
        object.__setattr__(self, 'p', p)

    @classmethod
    def isotropic(cls, visibility):
        """Random marginals, P(ab = (-1)^{xy} | x, y) = visibility."""
        visibility = IsotropicParams(visibility).visibility
        p = np.empty((2, 2, 2, 2))
        for x, y, a, b in product(range(2), repeat=4):
            target = (-1) ** (x * y)
            p[x, y, a, b] = 0.5 * (visibility if OUTCOMES[a] * OUTCOMES[b] == target else 1.0 - visibility)
        return cls(p)

    @classmethod
    def deterministic(cls, a0, a1, b0, b1):
        """Local strategy with fixed outcomes a_x, b_y in {+1, -1}."""
        outputs = (a0, a1, b0, b1)
        if any(o not in (1, -1) for o in outputs):
            raise ParameterRangeError(f"deterministic outcomes must be +1 or -1, got {outputs}")
        p = np.zeros((2, 2, 2, 2))
        for x, y in product(range(2), repeat=2):
            p[x, y, 0 if outputs[x] == 1 else 1, 0 if outputs[2 + y] == 1 else 1] = 1.0
        return cls(p)

    @classmethod
    def white_noise(cls):
        return cls(np.full((2, 2, 2, 2), 0.25))

    @classmethod
    def mixture(cls, weights, boxes):
        weights = np.asarray(weights, dtype=float)
        return cls(np.tensordot(weights / weights.sum(), np.stack([box.p for box in boxes]), axes=1))

    @classmethod
    def from_json(cls, text):
        try:
            document = json.loads(text)
        except json.JSONDecodeError as e:
            raise InvalidBox('format', {'line': e.lineno, 'column': e.colno}, e.msg) from e
        if not isinstance(document, dict) or 'p' not in document:
            raise InvalidBox('format', {'key': 'p'}, "expected an object with a 'p' array")
        try:
            p = np.array(document['p'], dtype=float)
        except (TypeError, ValueError) as e:
            raise InvalidBox('format', {'key': 'p'}, f"entries must be decimal numbers ({e})") from e
        return cls(p)

    @classmethod
    def load(cls, path):
        with open(path, 'rb') as f:
            raw = f.read()
        try:
            text = raw.decode('utf-8')
        except UnicodeDecodeError as e:
            raise InvalidBox('format', {'byte': e.start}, "file is not valid UTF-8") from e
        return cls.from_json(text)

    def to_json(self):
        return json.dumps({'p': self.p.tolist()})

    def alice_mean(self, x):
        return float(np.einsum('ab,a->', self.p[x, 0], OUTCOMES))

    def bob_mean(self, y):
        return float(np.einsum('ab,b->', self.p[0, y], OUTCOMES))

    def correlator(self, x, y):
        """E[ab | x, y]."""
        return float(np.einsum('ab,a,b->', self.p[x, y], OUTCOMES, OUTCOMES))


DETERMINISTIC_STRATEGIES = tuple(BoxDistribution.deterministic(*o) for o in product((1, -1), repeat=4))


def random_local_box(rng):
    """Dirichlet-weighted mixture of the 16 deterministic strategies."""
    return BoxDistribution.mixture(rng.dirichlet(np.ones(len(DETERMINISTIC_STRATEGIES))), DETERMINISTIC_STRATEGIES)


@dataclass(frozen=True, eq=False)
class MacroscopicSummary:
    """Single-box statistics, which are the per-N entries of K and of the centered K-bar.

    means and variances are ordered (A0, A1, B0, B1); correlators[x][y] is
    <A_x B_y>/N and covariances[x][y] the centered version.
    """
    means: np.ndarray
    variances: np.ndarray
    correlators: np.ndarray
    covariances: np.ndarray

    def __post_init__(self):
        for name in ('means', 'variances', 'correlators', 'covariances'):
            object.__setattr__(self, name, np.array(getattr(self, name), dtype=float))
        if np.any(np.abs(self.correlators) > 1.0 + BOX_TOLERANCE):
            raise ParameterRangeError("cross-correlators must lie in [-1, 1]")
        if np.any(self.variances < -BOX_TOLERANCE):
            raise ParameterRangeError("variances must be non-negative")

    @classmethod
    def isotropic(cls, v):
        _check_unit_range('v', v)
        cross = np.array([[v, v], [v, -v]])
        return cls(np.zeros(4), np.ones(4), cross, cross)

    def centered_matrix(self, s_a, s_b):
        return build_correlation_matrix(s_a, s_b, self.covariances, diagonal=self.variances)

    def min_centered_eigenvalues(self, s_a, s_b):
        """Smallest eigenvalue of K-bar for every pair (s_a[i], s_b[i])."""
        s_a = np.atleast_1d(np.asarray(s_a, dtype=float))
        s_b = np.atleast_1d(np.asarray(s_b, dtype=float))
        stack = np.repeat(self.centered_matrix(0.0, 0.0).values[None, :, :], s_a.size, axis=0)
        stack[:, 0, 1] = stack[:, 1, 0] = s_a
        stack[:, 2, 3] = stack[:, 3, 2] = s_b
        return np.linalg.eigvalsh(stack)[:, 0]


def correlators_from_box(box):
    means = np.array([box.alice_mean(0), box.alice_mean(1), box.bob_mean(0), box.bob_mean(1)])
    correlators = np.array([[box.correlator(x, y) for y in range(2)] for x in range(2)])
    covariances = correlators - np.outer(means[:2], means[2:])
    variances = np.clip(1.0 - means * means, 0.0, None)
    return MacroscopicSummary(means, variances, correlators, covariances)


def chsh_value(box):
    return box.correlator(0, 0) + box.correlator(0, 1) + box.correlator(1, 0) - box.correlator(1, 1)


@dataclass(frozen=True)
class CompletionResult:
    feasible: bool
    witness: tuple          # (s_A, s_B) or None
    min_eigenvalue: float   # best smallest eigenvalue found

    def to_dict(self):
        witness = None if self.witness is None else {'sA': self.witness[0], 'sB': self.witness[1]}
        return {'feasible': self.feasible, 'witness': witness, 'min_eigenvalue': self.min_eigenvalue}


def psd_completion_feasible(summary, tol=None):
    """Search same-side correlators (s_A, s_B) that make K-bar PSD.

    The smallest eigenvalue is concave in (s_A, s_B).  A grid of step 1/64
    over [-1, 1]^2 is scanned first; argmax ties go to the lexicographically
    smallest (s_A, s_B).  If no grid point is feasible the best point is
    refined on local grids that move uphill and shrink when stuck, until
    their spacing drops below `prbox.completion_refine_stop`.
    """
    tol = _psd_tolerance(tol)
    step = setting('prbox.completion_grid_step', 1.0 / 64)
    count = int(round(2.0 / step)) + 1
    axis = np.linspace(-1.0, 1.0, count)
    s_a, s_b = (g.ravel() for g in np.meshgrid(axis, axis, indexing='ij'))
    mins = summary.min_centered_eigenvalues(s_a, s_b)
    best = int(np.argmax(mins))
    point, value = (float(s_a[best]), float(s_b[best])), float(mins[best])

    if value < -tol:
        points = setting('prbox.completion_refine_points', 17)
        stop = setting('prbox.completion_refine_stop', 1e-6)
        span = 2.0 * step
        for _ in range(setting('prbox.completion_refine_rounds', 200)):
            if value >= -tol or 2.0 * span / (points - 1) <= stop:
                break
            offsets = np.linspace(-span, span, points)
            local_a = np.clip(point[0] + offsets, -1.0, 1.0)
            local_b = np.clip(point[1] + offsets, -1.0, 1.0)
            ga, gb = (g.ravel() for g in np.meshgrid(local_a, local_b, indexing='ij'))
            local = summary.min_centered_eigenvalues(ga, gb)
            i = int(np.argmax(local))
            if local[i] > value:
                # follow the ascent at the same scale
                point, value = (float(ga[i]), float(gb[i])), float(local[i])
            else:
                span /= 4.0
        logger.debug("completion refined to s=(%.8f, %.8f), min eigenvalue %.3e", point[0], point[1], value)

    feasible = value >= -tol
    return CompletionResult(feasible, point if feasible else None, value)


def feasibility_report(box, tol=None):
    """Serializable verdict for a box: PSD completion plus its CHSH value."""
    result = psd_completion_feasible(correlators_from_box(box), tol)
    report = result.to_dict()
    report['chsh'] = chsh_value(box)
    return report
