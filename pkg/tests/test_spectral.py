import math

import numpy as np
import pytest

from zakmc.model import ModelParams, NormalPair, correlate
from zakmc.noise import SeedSpec, sample_path
from zakmc.solver import AdiSolver, Grid2D, dirac_init
from zakmc.spectral import (
    StabilityMarginError,
    amplification,
    decay_check,
    decay_constant,
    moment_e,
    moment_e2,
    spectral_solve_periodic,
    stability_margin,
    symbols,
)

PAPER = ModelParams.benchmark_defaults()
DRIFTLESS = ModelParams(rho_x=0.2, rho_y=0.2, rho_xy=0.45, T=1.0, x0=2.0, y0=2.0)


class TestSymbols:
    def test_zero_frequency(self):
        s = symbols(0.0, 0.0, 0.25, 0.25)
        assert s.a_x == s.a_y == s.b_x == s.b_y == s.c_x == s.c_y == s.d == 0.0
        assert s.u == s.v == 1.0

    def test_pi_over_h(self):
        h = 0.25
        s = symbols(math.pi / h, 0.7, h, h)
        assert s.a_x == pytest.approx(-2.0 / h ** 2, rel=1e-12)
        assert s.c_x == pytest.approx(0.0, abs=1e-12)
        assert s.b_x == pytest.approx(0.0, abs=1e-12)

    def test_parity(self):
        s_plus = symbols(1.3, 0.8, 0.5, 0.5)
        s_minus = symbols(-1.3, 0.8, 0.5, 0.5)
        assert s_plus.a_x == s_minus.a_x
        assert s_plus.b_x == s_minus.b_x
        assert s_plus.c_x == -s_minus.c_x


class TestStabilityMargin:
    def test_benchmark_value(self):
        # min{0.8, 0.8, 0.848, 0.848, 1 - 0.08 * 2.5075} = 0.7994
        assert stability_margin(PAPER) == pytest.approx(0.7994, abs=1e-12)

    def test_decay_constant_formula(self):
        lam = 4.0
        want = 8 * 0.7994 * 1.0 / (math.pi ** 2 * (1 + math.pi ** 2) ** 2)
        assert decay_constant(PAPER, lam) == pytest.approx(want, rel=1e-12)


class TestAmplification:
    def test_constant_mode_preserved(self):
        c = amplification(0.0, 0.0, DRIFTLESS, 1 / 64, 0.25, 0.25,
                          NormalPair(1.4, -2.2))
        assert complex(c) == pytest.approx(1.0 + 0.0j, abs=1e-14)

    def test_deterministic_heat_symbol(self):
        p = ModelParams(T=1.0, x0=2.0, y0=2.0)
        c = amplification(1.0, 1.0, p, 1 / 64, 0.25, 0.25, NormalPair(0.3, 0.4))
        s = symbols(1.0, 1.0, 0.25, 0.25)
        expect = 1.0 / ((1 - s.a_x / 64) * (1 - s.a_y / 64))
        assert complex(c).imag == 0.0
        assert complex(c).real == pytest.approx(float(expect), rel=1e-13)
        assert 0.0 < complex(c).real <= 1.0

    def test_variants_differ_by_k_squared_term(self):
        k, h = 1 / 64, 0.25
        pair = NormalPair(0.8, 0.1)
        s = symbols(1.0, 1.0, h, h)
        adi = complex(amplification(1.0, 1.0, DRIFTLESS, k, h, h, pair, "adi"))
        full = complex(amplification(1.0, 1.0, DRIFTLESS, k, h, h, pair,
                                     "full-implicit"))
        # denominators differ by exactly a_x a_y k^2
        ratio = (1 - (s.a_x + s.a_y) * k) / ((1 - s.a_x * k) * (1 - s.a_y * k))
        assert adi / full == pytest.approx(ratio, rel=1e-13)

    def test_drift_requires_opt_in(self):
        with pytest.raises(ValueError, match="with_drift"):
            amplification(1.0, 1.0, PAPER, 1 / 64, 0.25, 0.25, NormalPair(0, 0))


class TestMoments:
    def test_unit_at_zero_frequency(self):
        assert complex(moment_e(0.0, 0.0, DRIFTLESS, 1 / 64, 0.25, 0.25)) == 1.0
        assert float(moment_e2(0.0, 0.0, DRIFTLESS, 1 / 64, 0.25, 0.25)) == 1.0

    def test_one_dimensional_reduction(self):
        # rho_xy = 0 and eta = 0 leaves the known 1-d second moment
        p = ModelParams(rho_x=0.2, rho_y=0.2, rho_xy=0.0, T=1.0, x0=2.0, y0=2.0)
        k, h = 1 / 64, 0.25
        s = symbols(1.2, 0.0, h, h)
        want = (1 + k * s.c_x ** 2 * p.rho_x + 2 * k * k * s.b_x ** 2 * p.rho_x ** 2) \
            / (1 - s.a_x * k) ** 2
        got = moment_e2(1.2, 0.0, p, k, h, h, variant="full-implicit")
        assert float(got) == pytest.approx(float(want), rel=1e-13)

    @pytest.mark.parametrize("variant", ["adi", "full-implicit"])
    def test_against_monte_carlo(self, variant):
        k, h = 1 / 64, 0.25
        rng = np.random.default_rng(7)
        draws = 200_000
        z = rng.standard_normal((draws, 2))
        for _ in range(6):
            xi = rng.uniform(-math.pi / h, math.pi / h)
            eta = rng.uniform(-math.pi / h, math.pi / h)
            c = amplification(xi, eta, DRIFTLESS, k, h, h, (z[:, 0], z[:, 1]),
                              variant)
            m1 = complex(moment_e(xi, eta, DRIFTLESS, k, h, h, variant))
            m2 = float(moment_e2(xi, eta, DRIFTLESS, k, h, h, variant))
            a2 = np.abs(c) ** 2
            se2 = a2.std(ddof=1) / math.sqrt(draws)
            assert abs(a2.mean() - m2) < 4 * se2
            se1 = np.abs(c - c.mean()).std() / math.sqrt(draws)
            assert abs(c.mean() - m1) < 4 * se1

    def test_mean_modulus_bounded_in_stable_region(self):
        k, h = 1 / 16, 0.25  # lam = 1
        freqs = np.linspace(-math.pi / h, math.pi / h, 41)
        xi, eta = np.meshgrid(freqs, freqs, indexing="ij")
        m = np.abs(moment_e(xi, eta, PAPER, k, h, h, variant="adi"))
        assert m.max() <= 1.0 + 1e-12


class TestDecayCheck:
    def test_benchmark_parameters_satisfy_bound(self):
        h = 0.25
        lam = 4.0
        ratio = decay_check(PAPER, lam * h * h, h, lam, p=0.25, n_freq=50)
        assert ratio < 1.0

    def test_deterministic_contraction(self):
        p = ModelParams(T=1.0, x0=2.0, y0=2.0)
        h = 0.25
        m2 = moment_e2(1.7, 2.4, p, 1 / 16, h, h, variant="full-implicit")
        s = symbols(1.7, 2.4, h, h)
        want = 1.0 / (1 - (s.a_x + s.a_y) / 16) ** 2
        assert float(m2) == pytest.approx(float(want), rel=1e-13)
        assert float(m2) < 1.0

    def test_margin_violation_raises(self):
        import warnings
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            bad = ModelParams(rho_x=0.9, rho_y=0.9, rho_xy=1.0, T=1.0,
                              x0=2.0, y0=2.0)
        with pytest.raises(StabilityMarginError):
            decay_check(bad, 1 / 16, 0.25, 1.0)


class TestSpectralSolve:
    def grid(self, n=16, h=0.25):
        return Grid2D.make_periodic(n, n, h, h, i0=5, j0=7)

    def test_zero_steps_reproduces_point_mass(self):
        g = self.grid()
        path = sample_path(SeedSpec(3, 0), 1, 1 / 64)
        empty = type(path)(k=path.k, steps=path.steps[:0])
        out = spectral_solve_periodic(g, 1 / 64, empty, PAPER, with_drift=True)
        np.testing.assert_allclose(out, dirac_init(g), rtol=0.0, atol=1e-12)

    def test_single_step_matches_fd(self):
        g = self.grid()
        k = 1 / 64
        path = sample_path(SeedSpec(3, 1), 1, k)
        spec = spectral_solve_periodic(g, k, path, PAPER, with_drift=True)
        s = AdiSolver(g, PAPER, k)
        fd = s.step(dirac_init(g), (path.steps[0, 0], path.steps[0, 1]))
        assert np.abs(spec - fd).max() <= 1e-10

    def test_sixteen_steps_and_functional(self):
        n, h, k = 64, 0.25, 1 / 64
        g = Grid2D.make_periodic(n, n, h, h, i0=32, j0=32)
        path = sample_path(SeedSpec(3, 2), 16, k)
        spec = spectral_solve_periodic(g, k, path, DRIFTLESS)
        s = AdiSolver(g, DRIFTLESS, k)
        fd = dirac_init(g)
        for nstep in range(16):
            fd = s.step(fd, (path.steps[nstep, 0], path.steps[nstep, 1]))
        assert np.abs(spec - fd).max() <= 1e-8

    def test_diagonalisation_identity(self):
        # the explicit stencil multiplies a discrete Fourier mode by the
        # numerator polynomial of the amplification factor
        n, h, k = 16, 0.5, 1 / 32
        g = Grid2D.make_periodic(n, n, h, h)
        s = AdiSolver(g, DRIFTLESS, k)
        m1, m2 = 3, 5
        xi = 2 * math.pi * m1 / (n * h)
        eta = 2 * math.pi * m2 / (n * h)
        i = np.arange(n)
        mode = np.exp(1j * (xi * h * i[:, None] + eta * h * i[None, :]))
        z_x, z_y = 0.7, -1.1
        z_t = correlate((z_x, z_y), DRIFTLESS.rho_xy)
        out = (s.milstein_rhs(mode.real, z_x, z_t)
               + 1j * s.milstein_rhs(mode.imag, z_x, z_t))
        sym = symbols(xi, eta, h, h)
        factor = (1
                  - 1j * math.sqrt(k) * (sym.c_x * math.sqrt(0.2) * z_x
                                         + sym.c_y * math.sqrt(0.2) * z_t)
                  + k * (sym.b_x * 0.2 * (z_x ** 2 - 1)
                         + sym.b_y * 0.2 * (z_t ** 2 - 1)
                         + sym.d * 0.2 * z_x * z_t))
        np.testing.assert_allclose(out, complex(factor) * mode,
                                   rtol=1e-12, atol=1e-12)
