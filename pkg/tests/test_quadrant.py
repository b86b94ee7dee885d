import math

import numpy as np
import pytest

from starflow.halfline import RngStream
from starflow.quadrant import (
    FixedAngles, LegOverflowError, UniformAngles, expected_boundary_local_time,
    orbm_leg, quadrant_process, sample_legs, sample_quadrant_processes,
    tail_bound, ys_cdf, ys_log_mean, ys_log_square_moment, ys_moment,
)
from starflow.stats import ks_against_cdf, ks_two_sample, mc_estimate


class TestOrbmLeg:
    def test_grid_identities_exact(self):
        leg = orbm_leg(math.pi / 4, 1.0, 1e-3, RngStream(1))
        assert np.allclose(leg.Y, leg.B2 + leg.L, rtol=0, atol=1e-12)
        assert np.allclose(leg.X, 1.0 + leg.B1 - math.tan(leg.theta) * leg.L,
                           rtol=0, atol=1e-12)
        assert np.all(leg.Y >= 0)
        assert np.all(np.diff(leg.L) >= 0)
        assert np.all(leg.X[:-1] > 0)
        assert leg.Y_S == leg.Y[-1] and leg.S_index == len(leg.X) - 1

    def test_local_time_grows_only_at_boundary(self):
        leg = orbm_leg(math.pi / 3, 1.0, 1e-3, RngStream(2))
        dl = np.diff(leg.L)
        # with exact bridge increments, dL > 0 means the within-step minimum
        # dipped below zero; the pre-step value must be near the boundary
        assert np.all(dl[leg.Y[:-1] > 6 * math.sqrt(np.max(leg.step_sizes))] == 0)

    def test_validation(self):
        for bad in [(-0.1, 1, 1e-3), (math.pi / 2, 1, 1e-3), (0.5, -1, 1e-3),
                    (0.5, 1, 0.0)]:
            with pytest.raises(ValueError):
                orbm_leg(bad[0], bad[1], bad[2], RngStream(3))

    def test_overflow_error(self):
        with pytest.raises(LegOverflowError):
            orbm_leg(math.pi / 6, 1.0, 1e-6, RngStream(4), accel=False, max_steps=50)

    def test_extremes_bracket_path(self):
        leg = orbm_leg(math.pi / 4, 1.0, 1e-3, RngStream(5), accel=True)
        assert leg.inf_abs <= 1.0 <= leg.sup_abs
        assert leg.inf_abs <= leg.Y_S


class TestLegSamples:
    @pytest.fixture(scope="class")
    def legs_pi4(self):
        return sample_legs(math.pi / 4, 1.0, 1e-4, 30000, RngStream(6))

    def test_mean_ys(self, legs_pi4):
        e = mc_estimate(legs_pi4.ys)
        assert abs(e.mean - 1.0) <= max(3 * e.stderr, 0.02)

    def test_log_moments(self, legs_pi4):
        lg = np.log(legs_pi4.ys)
        e = mc_estimate(lg)
        assert abs(e.mean - ys_log_mean(math.pi / 4)) <= max(3 * e.stderr, 0.02 * math.pi / 2)
        e2 = mc_estimate(lg ** 2)
        assert abs(e2.mean - ys_log_square_moment(math.pi / 4)) <= 0.03 * ys_log_square_moment(math.pi / 4)

    def test_local_time_matches_ys_mean(self, legs_pi4):
        # E[L_S] = E[Y_S] for every leg law
        el = mc_estimate(legs_pi4.local_times)
        ey = mc_estimate(legs_pi4.ys)
        assert abs(el.mean - ey.mean) <= 3 * (el.stderr + ey.stderr)

    def test_beta_prime_law(self, legs_pi4):
        r = ks_against_cdf(legs_pi4.ys ** 2,
                           lambda w: ys_cdf(math.pi / 4, 1.0, np.sqrt(w)))
        assert r.statistic < 0.015

    def test_x_scaling_law(self):
        # legs at (theta, x=2, 4 dt) equal 2 x legs at (theta, 1, dt) in law
        a = sample_legs(math.pi / 3, 2.0, 4e-4, 20000, RngStream(7))
        b = sample_legs(math.pi / 3, 1.0, 1e-4, 20000, RngStream(8))
        r = ks_two_sample(a.ys, 2.0 * b.ys)
        assert r.statistic < 0.015
        rl = ks_two_sample(a.local_times, 2.0 * b.local_times)
        assert rl.statistic < 0.015

    def test_threads_do_not_change_results(self):
        a = sample_legs(math.pi / 4, 1.0, 1e-3, 5000, RngStream(9), chunk=1024, threads=1)
        b = sample_legs(math.pi / 4, 1.0, 1e-3, 5000, RngStream(9), chunk=1024, threads=3)
        assert np.array_equal(a.ys, b.ys)
        assert np.array_equal(a.local_times, b.local_times)

    def test_per_leg_angles(self):
        thetas = np.where(np.arange(4000) % 2 == 0, math.pi / 3, math.pi / 6)
        s = sample_legs(thetas, 1.0, 1e-3, 4000, RngStream(10))
        even = mc_estimate(s.ys[::2])
        odd = mc_estimate(s.ys[1::2])
        assert abs(even.mean - ys_moment(math.pi / 3, 1.0)) <= max(3 * even.stderr, 0.05)
        assert abs(odd.mean - ys_moment(math.pi / 6, 1.0)) <= max(3 * odd.stderr, 0.15)


class TestClosedForms:
    def test_cdf_endpoints(self):
        assert ys_cdf(math.pi / 4, 1.0, 0.0) == 0.0
        assert ys_cdf(math.pi / 4, 1.0, np.inf) == pytest.approx(1.0)

    def test_cdf_scaling(self):
        for y in (0.2, 1.0, 3.7):
            assert ys_cdf(math.pi / 3, 2.0, y) == pytest.approx(
                ys_cdf(math.pi / 3, 1.0, y / 2.0), abs=1e-12)

    def test_cdf_median_by_bisection(self):
        # median of Y_S^2 solves I_w(1/4, 3/4) = 1/2; check CDF at the root
        lo, hi = 0.0, 50.0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if ys_cdf(math.pi / 4, 1.0, math.sqrt(mid)) < 0.5:
                lo = mid
            else:
                hi = mid
        med = 0.5 * (lo + hi)
        legs = sample_legs(math.pi / 4, 1.0, 1e-3, 20000, RngStream(11))
        frac = np.mean(legs.ys ** 2 <= med)
        assert abs(frac - 0.5) <= 3 * math.sqrt(0.25 / 20000) + 0.01

    def test_theta_domain(self):
        with pytest.raises(ValueError):
            ys_cdf(math.pi / 2, 1.0, 1.0)
        with pytest.raises(ValueError):
            ys_cdf(0.0, 1.0, 1.0)

    def test_moment_examples(self):
        assert ys_moment(math.pi / 4, 1.0, 1.0) == pytest.approx(1.0)
        assert ys_moment(math.pi / 6, 1.0, 1.0) == pytest.approx(math.sqrt(3))
        assert ys_moment(math.pi / 3, 0.0, 5.0) == pytest.approx(1.0)
        assert ys_log_mean(math.pi / 4, 1.0) == pytest.approx(-math.pi / 2)
        assert ys_log_square_moment(math.pi / 4) == pytest.approx(3 * math.pi ** 2 / 4)

    def test_moment_validity_interval(self):
        with pytest.raises(ValueError):
            ys_moment(math.pi / 6, 2.0, 1.0)
        with pytest.raises(ValueError):
            ys_moment(math.pi / 4, -0.6, 1.0)

    def test_tail_bound_cases(self):
        # b below the free threshold: constant 1
        assert tail_bound(math.pi / 4, 1.0, 2.0, 1.0, "up") == pytest.approx(0.5)
        # above it: the cosine ratio appears
        c = math.cos(math.pi / 4) / math.cos(1.4 * math.pi / 2 - math.pi / 4)
        assert tail_bound(math.pi / 4, 1.0, 2.0, 1.4, "up") == pytest.approx(c * 0.5 ** 1.4)
        cd = math.cos(math.pi / 6) / math.cos(0.25 * math.pi + math.pi / 6)
        assert tail_bound(math.pi / 6, 1.0, 0.5, 0.5, "down") == pytest.approx(cd * 0.5 ** 0.5)

    def test_tail_bound_validation(self):
        with pytest.raises(ValueError):
            tail_bound(math.pi / 4, 1.0, 0.5, 1.0, "up")      # a must exceed x
        with pytest.raises(ValueError):
            tail_bound(math.pi / 4, 1.0, 2.0, 1.6, "up")      # b out of range
        with pytest.raises(ValueError):
            tail_bound(math.pi / 4, 1.0, 0.5, 0.6, "down")    # b out of range
        with pytest.raises(ValueError):
            tail_bound(math.pi / 4, 1.0, 2.0, 1.0, "sideways")

    def test_expected_local_time(self):
        assert expected_boundary_local_time(math.pi / 3, math.pi / 3, 1.0) == \
            pytest.approx((math.sqrt(3) + 1) / 2)
        assert expected_boundary_local_time(math.pi / 4, math.pi / 4, 1.0) == math.inf
        assert expected_boundary_local_time(math.pi / 6, math.pi / 6, 1.0) == math.inf
        # linear in the start point
        assert expected_boundary_local_time(math.pi / 3, math.pi / 3, 2.0) == \
            pytest.approx(math.sqrt(3) + 1)
        # first angle on the first boundary: formula is asymmetric
        a = expected_boundary_local_time(1.0, 1.3, 1.0)
        b = expected_boundary_local_time(1.3, 1.0, 1.0)
        assert a != pytest.approx(b)


class TestQuadrantProcess:
    def test_structure_and_termination(self):
        src = FixedAngles(math.pi / 3, math.pi / 3)
        proc = quadrant_process(src, 1.0, 1e-3, 1e-3, 200, RngStream(12), keep_paths=True)
        assert proc.status == "corner"
        assert proc.us[0] == 1.0 and proc.us[-1] < 1e-3
        assert len(proc.legs) == len(proc.thetas) == len(proc.us) - 1
        for n, leg in enumerate(proc.legs):
            assert leg.x == pytest.approx(proc.us[n])
            assert proc.us[n + 1] == pytest.approx(leg.Y_S)
        # leg-wise local time accumulates
        assert proc.L_total == pytest.approx(sum(l.L_at_S for l in proc.legs))

    def test_angles_alternate(self):
        src = FixedAngles(math.pi / 3, math.pi / 4)
        proc = quadrant_process(src, 1.0, 1e-3, 1e-2, 200, RngStream(13))
        for n, th in enumerate(proc.thetas):
            assert th == (math.pi / 3 if n % 2 == 0 else math.pi / 4)

    def test_leg_cap_flagged(self):
        src = FixedAngles(math.pi / 6, math.pi / 6)
        proc = quadrant_process(src, 1.0, 1e-3, 1e-6, 2, RngStream(14))
        assert proc.status == "leg_cap" and not proc.terminated

    def test_eps_validation(self):
        with pytest.raises(ValueError):
            quadrant_process(FixedAngles(1.0, 1.0), 1.0, 1e-3, 2.0, 10, RngStream(15))

    def test_ratio_law_and_drift(self):
        # U_{n+1}/U_n are independent with the leg endpoint law
        src = FixedAngles(math.pi / 3, math.pi / 3)
        ratios = []
        for k in range(400):
            proc = quadrant_process(src, 1.0, 1e-3, 1e-2, 50, RngStream(16).child(k))
            us = np.array(proc.us)
            ratios.extend((us[1:] / us[:-1]).tolist())
        ratios = np.array(ratios)
        r = ks_against_cdf(ratios ** 2, lambda w: ys_cdf(math.pi / 3, 1.0, np.sqrt(w)))
        assert r.statistic < 0.05
        e = mc_estimate(np.log(ratios))
        assert abs(e.mean - ys_log_mean(math.pi / 3)) <= 3 * e.stderr + 0.02

    def test_batch_matches_formula(self):
        src = FixedAngles(math.pi / 3, math.pi / 3)
        batch = sample_quadrant_processes(src, 1.0, 2.5e-4, 1e-3, 200, 30000,
                                          RngStream(17))
        e = mc_estimate(batch.l_totals)
        target = expected_boundary_local_time(math.pi / 3, math.pi / 3, 1.0)
        assert abs(e.mean - target) <= max(3 * e.stderr, 0.05 * target)
        assert np.mean(batch.terminated) > 0.999

    def test_batch_threads_identical(self):
        src = UniformAngles(math.pi / 6, math.pi / 3)
        a = sample_quadrant_processes(src, 1.0, 1e-3, 1e-2, 100, 3000,
                                      RngStream(18), chunk=1000, threads=1)
        b = sample_quadrant_processes(src, 1.0, 1e-3, 1e-2, 100, 3000,
                                      RngStream(18), chunk=1000, threads=4)
        assert np.array_equal(a.l_totals, b.l_totals)
        assert np.array_equal(a.n_legs, b.n_legs)

    def test_divergent_angles_grow(self):
        src = FixedAngles(math.pi / 6, math.pi / 6)
        es = []
        for eps in (1e-1, 1e-2, 1e-3):
            batch = sample_quadrant_processes(src, 1.0, 1e-3, eps, 400, 20000,
                                              RngStream(19))
            es.append(mc_estimate(batch.l_totals).mean)
        assert es[1] >= 1.2 * es[0]
        assert es[2] >= 1.2 * es[1]
