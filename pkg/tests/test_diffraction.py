import math

import numpy as np
import pytest
from scipy import special

from oracles import central_difference, erfc_mp, repeated_erfc_mp, repeated_erfc_quad
from vomap.diffraction import (MAX_ERFC_ORDER, DiffractionError, VoglerConfig, diffraction_loss_db,
                               erfc_complex, quadrature_oracle, repeated_erfc_integral,
                               repeated_erfc_sequence, vogler_attenuation, vogler_excess_gradient)
from vomap.geometry import (DiffractionPath, GridSpec, Link, LineOfSightError, ObstacleMap,
                            extract_diffraction_path)
from vomap.propagation import PathLossParams, los_gain

LAMBDA = 0.05


def beta_of(d1, d2, theta, lam=LAMBDA):
    return theta * np.sqrt(1j * np.pi * d1 * d2 / (lam * (d1 + d2)))


def random_path(rng, N, theta_max=0.3):
    d = 20 + rng.random(N + 1) * 300
    theta = rng.random(N) * theta_max
    return DiffractionPath.from_geometry(d, theta)


class TestErfc:
    def test_values(self):
        assert erfc_complex(0) == 1.0
        assert erfc_complex(1.0) == pytest.approx(0.157299207050285, rel=1e-13)

    def test_conjugate_symmetry(self, rng):
        for z in rng.normal(size=20) * 3 + 1j * rng.normal(size=20) * 3:
            assert erfc_complex(np.conj(z)) == pytest.approx(np.conj(erfc_complex(z)), rel=1e-14)

    def test_against_mpmath(self, rng):
        for _ in range(50):
            r, phi = rng.random() * 6, rng.random() * 2 * np.pi
            z = r * np.exp(1j * phi)
            assert erfc_complex(z) == pytest.approx(erfc_mp(z), rel=1e-12, abs=1e-300)


class TestRepeatedErfc:
    def test_order_zero_is_erfc(self):
        b = 0.3 + 0.7j
        assert repeated_erfc_integral(0, b) == pytest.approx(erfc_complex(b), rel=1e-15)

    def test_order_one_at_zero(self):
        assert repeated_erfc_integral(1, 0) == pytest.approx(1 / math.sqrt(math.pi), rel=1e-14)

    def test_against_quadrature(self, rng):
        for _ in range(40):
            m = int(rng.integers(0, 7))
            b = complex(rng.normal() * 2, rng.normal())
            assert repeated_erfc_integral(m, b) == pytest.approx(repeated_erfc_quad(m, b), rel=1e-8)

    def test_against_closed_form(self, rng):
        for _ in range(60):
            b = complex(*(rng.normal(size=2) * 2))
            if abs(b) > 4:
                continue
            for m in (0, 3, 6, 20, 60):
                assert repeated_erfc_integral(m, b) == pytest.approx(repeated_erfc_mp(m, b), rel=1e-8)

    def test_vogler_ray(self):
        # edge parameters always have phase pi/4
        for r in np.linspace(0.01, 8, 25):
            b = r * np.exp(1j * np.pi / 4)
            for m in (0, 5, 30, 63):
                assert repeated_erfc_integral(m, b) == pytest.approx(repeated_erfc_mp(m, b), rel=1e-10)

    def test_downward_recurrence_regime(self):
        # large positive real part: I(n) is the minimal solution
        for b in (3.0 + 3.0j, 8.0 + 8.0j, 1.2 + 0.1j):
            for m in (5, 20):
                assert repeated_erfc_integral(m, b) == pytest.approx(repeated_erfc_mp(m, b), rel=1e-9)

    def test_sequence_satisfies_recurrence(self):
        b = 0.8 + 0.8j
        seq = repeated_erfc_sequence(30, b)
        n = np.arange(2, 31)
        np.testing.assert_allclose(2 * n * seq[2:], seq[:-2] - 2 * b * seq[1:-1], rtol=1e-10)

    def test_order_cap(self):
        with pytest.raises(DiffractionError, match="precision"):
            repeated_erfc_integral(MAX_ERFC_ORDER + 1, 0.5)
        with pytest.raises(DiffractionError):
            repeated_erfc_integral(-1, 0.5)


class TestVogler:
    def test_single_edge_identity(self, rng):
        cfg = VoglerConfig(wavelength=LAMBDA)
        for _ in range(200):
            d1, d2 = 1 + rng.random(2) * 500
            th = rng.random() * 0.5
            r = vogler_attenuation(DiffractionPath.from_geometry([d1, d2], [th]), cfg)
            want = special.erfc(beta_of(d1, d2, th)) / 2
            assert r.F == pytest.approx(want, rel=1e-10)

    def test_grazing_edge_is_six_db(self):
        r = vogler_attenuation(DiffractionPath.from_geometry([100, 50], [0.0]))
        assert r.F == 0.5
        assert r.excess_loss_db == pytest.approx(6.0206, abs=1e-4)

    def test_grazing_chains(self):
        # N grazing edges with equal spacing: F = 1 / (N + 1)
        cfg = VoglerConfig(series_tolerance=1e-10, max_series_terms=160)
        for N in (2, 3, 4):
            r = vogler_attenuation(DiffractionPath.from_geometry([100.0] * (N + 1), [0.0] * N), cfg)
            assert r.converged
            assert r.F.real == pytest.approx(1 / (N + 1), rel=1e-8)

    def test_matches_quadrature(self, rng):
        cfg = VoglerConfig(wavelength=LAMBDA)
        for N in (2, 3):
            for _ in range(8):
                p = random_path(rng, N, 0.05)
                r = vogler_attenuation(p, cfg)
                assert r.converged
                assert r.F == pytest.approx(quadrature_oracle(p, cfg), rel=1e-4)

    def test_attenuation_bounded(self, rng):
        for N in (1, 2, 3, 5):
            for _ in range(10):
                r = vogler_attenuation(random_path(rng, N, 0.1))
                assert abs(r.F) <= 1 + 1e-9
                assert r.excess_loss_db >= -1e-8

    def test_continuous_in_angle(self, rng):
        for N in (1, 2, 3):
            p = random_path(rng, N, 0.1)
            a = vogler_attenuation(p).excess_loss_db
            th = p.theta.copy()
            th[0] += 1e-6
            b = vogler_attenuation(DiffractionPath.from_geometry(p.d, th)).excess_loss_db
            assert abs(a - b) < 1e-3

    def test_no_edges_rejected(self):
        with pytest.raises(DiffractionError):
            vogler_attenuation(DiffractionPath.from_geometry([10.0], []))

    def test_pairwise_fallback_is_labeled(self, rng):
        p = random_path(rng, 4, 0.1)
        r = vogler_attenuation(p, VoglerConfig(max_edges_exact=3))
        assert r.method == "pairwise"
        beta = beta_of(p.d[:-1], p.d[1:], p.theta, VoglerConfig().wavelength)
        assert r.F == pytest.approx(np.prod(special.erfc(beta) / 2), rel=1e-12)

    def test_nonconvergence_is_reported(self, rng):
        p = random_path(rng, 3, 0.01)
        r = vogler_attenuation(p, VoglerConfig(max_series_terms=2, series_tolerance=1e-14))
        assert not r.converged and r.terms_used <= 2

    def test_terms_used_within_cap(self, rng):
        cfg = VoglerConfig(max_series_terms=40)
        for _ in range(10):
            r = vogler_attenuation(random_path(rng, 3, 0.2), cfg)
            assert r.terms_used <= 40


class TestExcessGradient:
    @pytest.mark.parametrize("N,cfg", [(1, VoglerConfig()), (2, VoglerConfig()), (3, VoglerConfig()),
                                       (4, VoglerConfig(max_edges_exact=3))])
    def test_matches_finite_differences(self, rng, N, cfg):
        for _ in range(3):
            p = random_path(rng, N, 0.1)
            _, g = vogler_excess_gradient(p, cfg)
            f = lambda th: vogler_attenuation(DiffractionPath.from_geometry(p.d, th), cfg).excess_loss_db
            fd = central_difference(f, p.theta, 1e-7)
            np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-6)


class TestQuadratureOracle:
    def test_grazing_single_edge(self):
        assert quadrature_oracle(DiffractionPath.from_geometry([10, 30], [0.0])) == pytest.approx(0.5, rel=1e-10)

    def test_single_edge_matches_erfc(self, rng):
        for _ in range(10):
            d1, d2 = 5 + rng.random(2) * 200
            th = rng.random() * 0.4
            want = special.erfc(beta_of(d1, d2, th, VoglerConfig().wavelength)) / 2
            got = quadrature_oracle(DiffractionPath.from_geometry([d1, d2], [th]))
            assert got == pytest.approx(want, rel=1e-8)

    def test_symmetric_grazing_pair(self):
        p = DiffractionPath.from_geometry([50, 50, 50], [0.0, 0.0])
        assert quadrature_oracle(p) == pytest.approx(vogler_attenuation(p).F, rel=1e-4)

    def test_too_many_edges(self):
        with pytest.raises(DiffractionError):
            quadrature_oracle(DiffractionPath.from_geometry([1, 1, 1, 1, 1], [0, 0, 0, 0]))


class TestDiffractionLoss:
    p = PathLossParams(30.0, 22.0)

    def _scene(self, heights):
        g = GridSpec(len(heights), 1, 10.0, origin=(-5.0, -5.0))
        return ObstacleMap(g, np.array(heights, dtype=float)[:, None])

    def test_grazing_limit(self):
        H = self._scene([0, 0, 0, 20, 0, 0, 0])
        link = Link([0, 0, 20], [60, 0, 20])
        loss = diffraction_loss_db(link, H, self.p)
        assert loss == pytest.approx(los_gain(link, self.p) + 20 * math.log10(2), abs=1e-9)

    def test_monotone_in_obstacle_height(self):
        link = Link([0, 0, 20], [60, 0, 20])
        losses = [diffraction_loss_db(link, self._scene([0, 0, 0, h, 0, 0, 0]), self.p)
                  for h in (20, 22, 25, 30, 40, 60)]
        assert np.all(np.diff(losses) > 0)

    def test_two_edge_composition(self):
        H = self._scene([0, 0, 45, 0, 38, 0, 0, 0])
        link = Link([0, 0, 20], [70, 0, 5])
        path = extract_diffraction_path(link, H)
        assert path.n_edges == 2
        want = (self.p.beta0 + self.p.gamma0 * math.log10(path.curve_length)
                + vogler_attenuation(path).excess_loss_db)
        assert diffraction_loss_db(link, H, self.p) == pytest.approx(want, rel=1e-14)

    def test_los_link_raises(self):
        with pytest.raises(LineOfSightError):
            diffraction_loss_db(Link([0, 0, 20], [60, 0, 20]), self._scene([0] * 7), self.p)
