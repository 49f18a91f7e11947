import math

import numpy as np
import pytest

from queueloss import numerics
from queueloss.discrete import DiscreteQueueParams, stationary_distribution
from queueloss.fokker_planck import FpParams, stationary_density


class TestIntegrate:
    def test_gaussian_tail(self):
        res = numerics.integrate(lambda x: math.exp(-x * x), 0.0, np.inf)
        assert res.value == pytest.approx(math.sqrt(math.pi) / 2.0, abs=1e-10)
        assert res.error >= 0.0
        assert res.neval > 0

    @pytest.mark.parametrize("v", [-3.0, 0.5, 4.0])
    def test_stationary_density_normalizes(self, v):
        params = FpParams(a=v, sigma2=1.0)
        res = numerics.integrate(lambda x: float(stationary_density(params, x)), 0.0, 1.0)
        assert res.value == pytest.approx(1.0, abs=1e-9)

    def test_nonfinite_integrand_reported(self):
        with pytest.raises(numerics.QuadratureError):
            numerics.integrate(lambda x: 1.0 / x, 0.0, 1.0)


class TestLaplaceInvert:
    def test_ramp_pair(self):
        value, err = numerics.laplace_invert(lambda s: 1.0 / s**2, 2.5)
        assert value == pytest.approx(2.5, rel=1e-7)
        assert err < 1e-6

    def test_exponential_pair(self):
        value, _ = numerics.laplace_invert(lambda s: 1.0 / (s + 1.0), 0.7)
        assert value == pytest.approx(math.exp(-0.7), rel=1e-7)

    @pytest.mark.parametrize("tau", [0.01, 0.1, 1.0, 5.0])
    def test_wall_return_transform_matches_series(self, tau):
        # Inverting the closed-form boundary transform must reproduce the
        # eigenseries density at the full wall.
        from queueloss.fokker_planck import (
            SeriesControl,
            boundary_return_transform,
            transition_density,
        )

        params = FpParams(a=0.0, sigma2=2.0)
        value, _ = numerics.laplace_invert(
            lambda s: boundary_return_transform(params, s), tau
        )
        series = float(
            transition_density(params, SeriesControl(), 1.0, params.time_from_tau(tau), 1.0)
        )
        assert value == pytest.approx(series, abs=1e-6)

    def test_rejects_bad_args(self):
        with pytest.raises(ValueError):
            numerics.laplace_invert(lambda s: 1.0 / s, 0.0)
        with pytest.raises(ValueError):
            numerics.laplace_invert(lambda s: 1.0 / s, 1.0, nodes=4)


class TestTridiagEigen:
    def test_two_by_two_closed_form(self):
        # [[2, 1], [1, 2]] has eigenpairs 3 and 1 with (1, 1)/sqrt2, (1, -1)/sqrt2.
        vals, vecs = numerics.tridiag_eigen(np.array([2.0, 2.0]), np.array([1.0]))
        assert vals == pytest.approx([3.0, 1.0])
        assert abs(vecs[:, 0] @ np.array([1.0, 1.0]) / math.sqrt(2)) == pytest.approx(1.0)

    def test_kernel_top_eigenpair(self):
        params = DiscreteQueueParams(p=0.5, L=10)
        diag = np.zeros(11)
        diag[0] = 0.5
        diag[10] = 0.5
        off = np.full(10, 0.5)
        vals, vecs = numerics.tridiag_eigen(diag, off)
        assert vals[0] == pytest.approx(1.0, abs=1e-12)
        pi = stationary_distribution(params)
        top = vecs[:, 0] * np.sign(vecs[0, 0])
        assert np.abs(top - np.sqrt(pi)).max() < 1e-10

    def test_spectral_reconstruction(self):
        rng = np.random.default_rng(3)
        diag = rng.normal(size=9)
        off = rng.normal(size=8)
        vals, vecs = numerics.tridiag_eigen(diag, off)
        full = np.diag(diag)
        full += np.diag(off, 1) + np.diag(off, -1)
        rebuilt = (vecs * vals) @ vecs.T
        assert np.abs(rebuilt - full).max() < 1e-10

    def test_eigenvalues_sorted_descending(self):
        vals, _ = numerics.tridiag_eigen(np.array([0.0, 1.0, -1.0]), np.array([0.3, 0.3]))
        assert np.all(np.diff(vals) <= 0)


class TestHelpers:
    def test_compensated_sum_matches_fsum(self):
        xs = [1e16, 1.0, -1e16, 1.0]
        assert numerics.compensated_sum(xs) == 2.0

    @pytest.mark.parametrize("kappa", [1e-6, 0.5, 30.0, 800.0])
    def test_cosh_ratio_stable(self, kappa):
        a = 0.37
        got = numerics.cosh_ratio(kappa, a)
        if kappa < 700:
            want = math.cosh(kappa * a) / math.sinh(kappa)
            assert got == pytest.approx(want, rel=1e-10)
        else:
            assert math.isfinite(got)

    def test_sinh_ratio_matches_naive(self):
        got = numerics.sinh_ratio(2.0, -0.4)
        assert got == pytest.approx(math.sinh(-0.8) / math.sinh(2.0), rel=1e-12)

    def test_coth_branches(self):
        assert numerics.coth(1e-6) == pytest.approx(1.0 / 1e-6, rel=1e-9)
        assert numerics.coth(5.0) == pytest.approx(1.0 / math.tanh(5.0), rel=1e-12)
        assert numerics.coth(-5.0) == pytest.approx(-numerics.coth(5.0))
        z = numerics.coth(complex(900.0, 2.0))
        assert abs(z - 1.0) < 1e-10
