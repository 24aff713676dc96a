"""
Unit tests for pointer distributions of weak and strong collective-spin measurements
"""
import functools
import math
import unittest
from fractions import Fraction

import mpmath
import numpy as np
import numpy.testing as npt
from gradescope_utils.autograder_utils.decorators import weight
from scipy.integrate import trapezoid

from macrolimit import pointer_measurement as pm
from macrolimit.errors import InvalidMagnetization, InvariantViolation, ParameterRangeError, ShapeMismatch


class TestPointerBasics(unittest.TestCase):

    @weight(1.0)
    def test_01_pointer_density_normalized(self):
        """|Phi|^2 integrates to one and peaks at 1/sqrt(2 pi delta^2)."""
        for delta in (0.2, 1.0, 7.5):
            shape = pm.PointerShape(delta)
            xs = np.linspace(-12 * delta, 12 * delta, 20001)
            self.assertAlmostEqual(trapezoid(pm.pointer_density(xs, shape), xs), 1.0, places=9)
            self.assertAlmostEqual(pm.pointer_density(0.0, shape), 1.0 / math.sqrt(2 * math.pi * delta ** 2), places=12)

    @weight(0.5)
    def test_02_pointer_shape_rejects_bad_width(self):
        """Zero, negative and infinite widths are rejected."""
        for delta in (0.0, -1.0, math.inf, math.nan):
            with self.assertRaises(ParameterRangeError):
                pm.PointerShape(delta)

    @weight(0.5)
    def test_03_magnetization_parity_and_range(self):
        """mu must share the parity of N and satisfy |mu| <= N."""
        mu = pm.Magnetization(4, 16)
        self.assertEqual((mu.j_m, mu.k_m), (10, 6))
        for bad in (1, 3, -5):
            with self.assertRaises(InvalidMagnetization):
                pm.Magnetization(bad, 2)
        with self.assertRaises(ValueError):
            pm.Magnetization(0, 0)

    @weight(1.0)
    def test_04_log_binomial_weight(self):
        """log(2^-n C(n,k)) agrees with a 50-digit reference, -inf outside the support."""
        self.assertAlmostEqual(pm.log_binomial_weight(4, 2), math.log(6 / 16), places=14)
        self.assertEqual(pm.log_binomial_weight(3, 5), -math.inf)
        self.assertEqual(pm.log_binomial_weight(3, -1), -math.inf)
        mpmath.mp.dps = 50
        for n, k in ((200, 100), (10000, 5000), (10000, 17), (100000, 49000)):
            reference = float(mpmath.log(mpmath.binomial(n, k)) - n * mpmath.log(2))
            self.assertAlmostEqual(pm.log_binomial_weight(n, k), reference, delta=1e-12 * max(1.0, abs(reference)))

    @weight(0.5)
    def test_05_binomial_row(self):
        """Exact rows sum to one; floats are the correctly rounded quotients."""
        exact = pm.binomial_row(30, exact=True)
        self.assertEqual(sum(exact), 1)
        self.assertEqual(exact[15], Fraction(math.comb(30, 15), 2 ** 30))
        floats = pm.binomial_row(30)
        self.assertEqual(floats[15], math.comb(30, 15) / 2 ** 30)
        self.assertEqual(pm.binomial_coefficients(6), [1, 6, 15, 20, 15, 6, 1])

    @weight(0.5)
    def test_06_evaluation_grid_default(self):
        """Default window is [-(N + 8 delta), N + 8 delta] with step min(delta/8, 0.25)."""
        grid = pm.EvaluationGrid.default_for(4, pm.PointerShape(1.0))
        self.assertEqual((grid.lo, grid.hi, grid.step), (-12.0, 12.0, 0.125))
        points = grid.points()
        self.assertEqual(points[0], -12.0)
        self.assertAlmostEqual(points[-1], 12.0, places=12)
        self.assertEqual(pm.EvaluationGrid.default_for(4, pm.PointerShape(8.0)).step, 0.25)

    @weight(1.0)
    def test_07_log_space_rows_beyond_exact_limit(self):
        """Past the exact limit float rows come from log space and still match the integers."""
        reference = np.array([math.comb(201, k) / 2 ** 201 for k in range(202)])
        npt.assert_allclose(pm.binomial_row(201), reference, rtol=1e-10, atol=0.0)
        row = pm.binomial_row(100001)
        self.assertEqual(row.size, 100002)
        self.assertAlmostEqual(math.fsum(row), 1.0, places=14)
        npt.assert_array_equal(row, row[::-1])
        for k in (50000, 49000, 48500):
            self.assertAlmostEqual(row[k] / math.exp(pm.log_binomial_weight(100001, k)), 1.0, delta=1e-9)

    @weight(1.0)
    def test_08_large_marginal(self):
        """The z marginal for N = 10^5 is centred with variance N + delta^2."""
        mixture = pm.rho_z_marginal(100000, pm.PointerShape(1.0))
        self.assertFalse(mixture.exact)
        self.assertEqual(mixture.mean(), 0.0)
        self.assertAlmostEqual(mixture.variance(), 100001.0, delta=1e-6)


class TestShiftMixture(unittest.TestCase):

    def setUp(self):
        self.shape = pm.PointerShape(1.0)

    @weight(0.5)
    def test_01_rejects_malformed_mixtures(self):
        """Shifts must increase and match the parity of N; weights must sum to one."""
        with self.assertRaises(ParameterRangeError):
            pm.ShiftMixture(2, (2, 0), (0.5, 0.5), self.shape)
        with self.assertRaises(ParameterRangeError):
            pm.ShiftMixture(2, (-1, 1), (0.5, 0.5), self.shape)
        with self.assertRaises(InvariantViolation):
            pm.ShiftMixture(2, (-2, 0), (0.5, 0.25), self.shape)
        with self.assertRaises(InvariantViolation):
            pm.ShiftMixture(2, (-2, 0), (Fraction(1, 2), Fraction(1, 3)), self.shape)

    @weight(0.5)
    def test_02_from_sector_weights_drops_zeros(self):
        """Zero sector weights produce no component."""
        mixture = pm.ShiftMixture.from_sector_weights(3, [0.0, 0.25, 0.75, 0.0], self.shape)
        self.assertEqual(mixture.shifts, (-1, 1))
        self.assertEqual(mixture.weights, (0.25, 0.75))
        self.assertFalse(mixture.exact)

    @weight(1.0)
    def test_03_moments_and_gridded_density(self):
        """Mean and variance are analytic; the gridded density integrates to one."""
        mixture = pm.rho_z_marginal(4, self.shape)
        self.assertAlmostEqual(mixture.mean(), 0.0, places=14)
        self.assertAlmostEqual(mixture.variance(), 4.0 + 1.0, places=12)
        frame = mixture.gridded()
        self.assertEqual(list(frame.columns), ['x', 'density'])
        self.assertAlmostEqual(trapezoid(frame['density'], frame['x']), 1.0, places=6)
        self.assertEqual(list(mixture.to_frame().columns), ['shift', 'weight'])

    @weight(0.5)
    def test_04_sampling_matches_moments(self):
        """Draws from the mixture reproduce its mean and variance."""
        mixture = pm.rho_x_conditional(pm.Magnetization(2, 8), self.shape)
        samples = mixture.sample(np.random.Generator(np.random.Philox(11)), 200000)
        self.assertAlmostEqual(samples.mean(), mixture.mean(), delta=0.03)
        self.assertAlmostEqual(samples.var(), mixture.variance(), delta=0.15)


class TestMagnets(unittest.TestCase):

    @weight(1.0)
    def test_01_fully_polarized_magnet(self):
        """theta = 0: a single component at shift N, variance delta^2."""
        shape = pm.PointerShape(1.0)
        mixture = pm.pointer_distribution_of_state(pm.magnet_amplitudes(5, 0.0), shape)
        self.assertEqual(mixture.shifts, (5,))
        self.assertEqual(mixture.mean(), 5.0)
        self.assertEqual(mixture.variance(), 1.0)

    @weight(1.0)
    def test_02_equatorial_magnet_broadens(self):
        """theta = pi/2: variance delta^2 + N."""
        for n in (1, 16, 256, 1000):
            mixture = pm.pointer_distribution_of_state(pm.magnet_amplitudes(n, math.pi / 2), pm.PointerShape(4.0))
            self.assertAlmostEqual(mixture.mean(), 0.0, delta=1e-9)
            self.assertAlmostEqual(mixture.variance(), 16.0 + n, delta=1e-9)

    @weight(0.5)
    def test_03_polar_angle_out_of_range(self):
        """theta outside [0, pi] is rejected."""
        with self.assertRaises(ParameterRangeError):
            pm.magnet_amplitudes(1, 3.2)
        with self.assertRaises(ParameterRangeError):
            pm.magnet_amplitudes(0, 0.0)

    @weight(0.5)
    def test_04_azimuth_only_changes_phases(self):
        """The azimuth leaves the sector weights untouched."""
        plain = pm.magnet_amplitudes(6, 1.1)
        rotated = pm.magnet_amplitudes(6, 1.1, phi=0.7)
        npt.assert_allclose(rotated.sector_weights, plain.sector_weights, atol=1e-15)
        self.assertLess(pm.posterior_fidelity(plain, rotated), 1.0 - 1e-3)

    @weight(1.0)
    def test_05_readout_along_x(self):
        """Magnets along +x and -x read +N and -N when sigma_x is measured."""
        shape = pm.PointerShape(0.5)
        self.assertEqual(pm.measurement_polar_angle(math.pi / 2, 0.0, 'x'), 0.0)
        self.assertEqual(pm.magnet_readout(6, math.pi / 2, 0.0, 'x', shape).mean(), 6.0)
        self.assertEqual(pm.magnet_readout(6, math.pi / 2, math.pi, 'x', shape).mean(), -6.0)
        with self.assertRaises(ParameterRangeError):
            pm.measurement_polar_angle(0.0, 0.0, 'y')

    @weight(1.0)
    def test_06_direction_discrimination(self):
        """Weak measurements along z and x separate all four reference directions."""
        readouts, distances = pm.direction_discrimination(4, pm.PointerShape(0.5))
        self.assertEqual(len(readouts), 8)
        names = list(pm.REFERENCE_DIRECTIONS)
        for i, first in enumerate(names):
            self.assertEqual(distances.loc[first, first], 0.0)
            for second in names[i + 1:]:
                self.assertGreater(distances.loc[first, second], 0.5)
        self.assertAlmostEqual(distances.loc['+z', '-z'], 1.0, places=6)

    @weight(1.0)
    def test_07_amplitudes_match_tensor_product(self):
        """Sector amplitudes equal the Dicke projections of the product state of four spins."""
        theta = math.pi / 3
        single = np.array([math.cos(theta / 2), math.sin(theta / 2)])  # index 0 is spin up
        product_state = functools.reduce(np.kron, [single] * 4)
        expected = np.zeros(5)
        for index, amplitude in enumerate(product_state):
            ups = 4 - bin(index).count('1')
            expected[ups] += amplitude / math.sqrt(math.comb(4, ups))
        npt.assert_allclose(pm.magnet_amplitudes(4, theta).amplitudes, expected, atol=1e-12)


class TestCollapse(unittest.TestCase):

    @weight(1.0)
    def test_01_strong_measurement_projects(self):
        """A narrow pointer read at a shift leaves the spins in that sector."""
        state = pm.magnet_amplitudes(4, math.pi / 2)
        shape = pm.PointerShape(0.01)
        result = pm.collapse_posterior(state, shape, 2.0)
        self.assertAlmostEqual(result.posterior.sector_weights[3], 1.0, places=12)
        expected_density = (4 / 16) / math.sqrt(2 * math.pi * 0.01 ** 2)
        self.assertAlmostEqual(result.density / expected_density, 1.0, places=9)

    @weight(1.0)
    def test_02_far_reading_does_not_underflow(self):
        """A reading far outside every shift still yields a normalized posterior."""
        state = pm.magnet_amplitudes(4, math.pi / 2)
        result = pm.collapse_posterior(state, pm.PointerShape(0.01), 1000.0)
        self.assertTrue(np.all(np.isfinite(result.posterior.amplitudes)))
        self.assertAlmostEqual(result.posterior.sector_weights[4], 1.0, places=12)
        self.assertEqual(result.density, 0.0)

    @weight(0.5)
    def test_03_weak_measurement_barely_disturbs(self):
        """With delta much larger than N the posterior keeps fidelity close to one."""
        state = pm.magnet_amplitudes(4, 1.0, phi=0.3)
        result = pm.collapse_posterior(state, pm.PointerShape(1000.0), 3.0)
        self.assertGreater(pm.posterior_fidelity(state, result.posterior), 1.0 - 1e-5)
        self.assertGreater(result.density, 0.0)

    @weight(1.0)
    def test_04_eigenstate_is_not_disturbed(self):
        """A single-sector state comes back unchanged whatever the reading."""
        state = pm.magnet_amplitudes(2, 0.0)
        for delta in (0.3, 5.0):
            for x_p in (-3.0, 0.0, 2.0, 7.5, 40.0):
                result = pm.collapse_posterior(state, pm.PointerShape(delta), x_p)
                npt.assert_array_equal(result.posterior.amplitudes, state.amplitudes)
                self.assertEqual(pm.posterior_fidelity(state, result.posterior), 1.0)

    @weight(1.0)
    def test_05_density_matches_pointer_distribution(self):
        """The norm^2 removed by the collapse is the pointer density at the reading."""
        state = pm.magnet_amplitudes(6, 1.0, phi=0.4)
        shape = pm.PointerShape(1.5)
        mixture = pm.pointer_distribution_of_state(state, shape)
        for x_p in (-4.0, 0.3, 2.0, 6.5):
            result = pm.collapse_posterior(state, shape, x_p)
            self.assertAlmostEqual(result.density, mixture.density(x_p)[0], delta=1e-10)


class TestNoSignaling(unittest.TestCase):

    @weight(1.0)
    def test_01_two_spin_marginal(self):
        """rho_z marginal for N = 2 has weights 1/4, 1/2, 1/4."""
        mixture = pm.rho_z_marginal(2, pm.PointerShape(1.0), exact=True)
        self.assertEqual(mixture.shifts, (-2, 0, 2))
        self.assertEqual(mixture.weights, (Fraction(1, 4), Fraction(1, 2), Fraction(1, 4)))

    @weight(1.0)
    def test_02_cjk_squared_normalized(self):
        """c_jk^2 sums to one exactly and the float version agrees."""
        mu = pm.Magnetization(4, 16)
        exact = pm.cjk_squared(mu, exact=True)
        self.assertEqual(exact.shape, (11, 7))
        self.assertEqual(sum(exact.ravel()), 1)
        npt.assert_allclose(pm.cjk_squared(mu).astype(float), exact.astype(float), rtol=1e-15)

    @weight(2.0)
    def test_03_x_conditional_equals_z_marginal(self):
        """Bob's pointer after an x measurement with outcome mu is the z-basis marginal."""
        shape = pm.PointerShape(2.0)
        for n in (1, 2, 7, 16):
            z = pm.rho_z_marginal(n, shape, exact=True)
            for mu in range(-n, n + 1, 2):
                x = pm.rho_x_conditional(pm.Magnetization(mu, n), shape, exact=True)
                self.assertEqual(x.weight_map(), z.weight_map(), f"N={n}, mu={mu}")
                self.assertLessEqual(pm.total_variation(x, z), 1e-10)

    @weight(1.0)
    def test_04_x_marginal_equals_z_marginal(self):
        """Averaging over Alice's outcomes changes nothing either."""
        shape = pm.PointerShape(1.0)
        self.assertEqual(pm.rho_x_marginal(9, shape, exact=True).weight_map(),
                         pm.rho_z_marginal(9, shape, exact=True).weight_map())
        self.assertLessEqual(pm.total_variation(pm.rho_x_marginal(40, shape), pm.rho_z_marginal(40, shape)), 1e-12)

    @weight(1.0)
    def test_05_vandermonde_regrouping(self):
        """The regrouped single sum reproduces 2^-N C(N, s)."""
        self.assertEqual(pm.vandermonde_sum(3, 2, 4), 5)
        self.assertEqual(pm.vandermonde_sum(3, 2, 0), 1)
        mu = pm.Magnetization(-3, 11)
        self.assertEqual(pm.reduce_single_sum(mu), pm.binomial_row(11, exact=True))
        npt.assert_array_equal(pm.reduce_single_sum(mu, exact=False), pm.binomial_row(11))

    @weight(0.5)
    def test_06_conditional_z_is_a_single_shift(self):
        """Alice's z outcome mu displaces Bob's pointer by mu."""
        mixture = pm.rho_z_conditional(pm.Magnetization(-2, 6), pm.PointerShape(1.0))
        self.assertEqual(mixture.shifts, (-2,))
        self.assertEqual(pm.magnetization_probability(pm.Magnetization(-2, 6), exact=True), Fraction(15, 64))
        self.assertAlmostEqual(pm.magnetization_probability(pm.Magnetization(-2, 6)), 15 / 64, places=15)

    @weight(0.5)
    def test_07_total_variation_bounds(self):
        """Separated narrow pointers are at distance one; different widths are refused."""
        shape = pm.PointerShape(0.2)
        left = pm.rho_z_conditional(pm.Magnetization(-4, 4), shape)
        right = pm.rho_z_conditional(pm.Magnetization(4, 4), shape)
        self.assertAlmostEqual(pm.total_variation(left, right), 1.0, places=6)
        self.assertEqual(pm.total_variation(left, left), 0.0)
        with self.assertRaises(ShapeMismatch):
            pm.total_variation(left, pm.rho_z_marginal(4, pm.PointerShape(1.0)))

    @weight(0.5)
    def test_08_exact_mode_limit(self):
        """Exact weights are refused beyond the configured number of spins."""
        with self.assertRaises(ParameterRangeError):
            pm.rho_z_marginal(201, pm.PointerShape(1.0), exact=True)
        self.assertFalse(pm.rho_z_marginal(201, pm.PointerShape(1.0)).exact)

    @weight(0.5)
    def test_09_cjk_squared_polarized_pair(self):
        """N = 2, mu = 2 puts 1/4, 1/2, 1/4 on j = 0, 1, 2."""
        mu = pm.Magnetization(2, 2)
        exact = pm.cjk_squared(mu, exact=True)
        self.assertEqual(exact.shape, (3, 1))
        self.assertEqual(list(exact.ravel()), [Fraction(1, 4), Fraction(1, 2), Fraction(1, 4)])
        npt.assert_array_equal(pm.cjk_squared(mu).ravel(), [0.25, 0.5, 0.25])


if __name__ == '__main__':
    unittest.main()
