from functools import lru_cache

import numpy as np
import pytest
from numpy.testing import assert_allclose

from wkbmc import bermudan as brm
from wkbmc import estimators as est
from wkbmc import lmm, mc
from wkbmc.payoffs import SwaptionSpec, swaption_payoff


def case_cfg(t1=1.0, strike=0.035, exercise=tuple(range(1, 20, 2)), **kw):
    args = dict(
        n=19, t1=t1, delta=0.5, l0=0.035, vol=0.2, rho_inf=0.3,
        strike=strike, exercise_indices=exercise,
    )
    args.update(kw)
    return lmm.ModelConfig(**args)


@lru_cache(maxsize=None)
def case_policy(t1=1.0):
    return brm.calibrate_policy(case_cfg(t1=t1), n_paths=10_000, seed=101)


@lru_cache(maxsize=None)
def case_price(t1=1.0, m=20_000, seed=7):
    return brm.bermudan_price(case_cfg(t1=t1), case_policy(t1), level=1, m=m, seed=seed)


def combined_gate(a, b, rel=0.005):
    return rel * abs(a.value) + 3.0 * np.hypot(a.sd, b.sd)


class TestBlack76:
    def test_zero_vol_is_intrinsic(self):
        assert brm.black76(1.3, 1.0, 0.0) == 1.3 - 1.0
        assert brm.black76(0.8, 1.0, 0.0) == 0.0

    def test_atm_hand_value(self):
        # f = k: value = f (2 Phi(v/2) - 1)
        from scipy.special import ndtr
        v = 0.4
        assert_allclose(brm.black76(1.0, 1.0, v), 2.0 * ndtr(v / 2.0) - 1.0, rtol=1e-14)

    def test_monotone_in_vol_and_above_intrinsic(self):
        vols = np.array([0.05, 0.1, 0.2, 0.4, 0.8])
        vals = brm.black76(1.1, 1.0, vols)
        assert np.all(np.diff(vals) > 0.0)
        assert np.all(vals > 0.1)

    def test_vectorised_and_scalar(self):
        out = brm.black76(np.array([1.0, 1.2]), 1.0, np.array([0.2, 0.0]))
        assert out.shape == (2,)
        assert out[1] == 1.2 - 1.0
        assert isinstance(brm.black76(1.0, 1.0, 0.2), float)


class TestStillAliveEuropean:
    def test_at_own_date_equals_intrinsic(self):
        cfg = case_cfg()
        x = np.linspace(0.02, 0.06, 19)[None, :] * np.array([[1.0], [1.3], [0.7]])
        for j in (1, 5, 19):
            spec = SwaptionSpec(strike=cfg.strike, first_leg=j, style=cfg.payoff_style)
            got = brm.still_alive_european(cfg, x, j, j)
            assert np.array_equal(got, swaption_payoff(cfg.delta, x, spec))

    def test_at_own_date_equals_intrinsic_per_leg(self):
        cfg = case_cfg(payoff_style="per_leg")
        x = np.full((2, 19), 0.04)
        spec = SwaptionSpec(strike=cfg.strike, first_leg=3, style="per_leg")
        got = brm.still_alive_european(cfg, x, 3, 3)
        assert np.array_equal(got, swaption_payoff(cfg.delta, x, spec))

    def test_zero_vol_limit_collapses_to_forward_intrinsic(self):
        # with vanishing vol the option value at T_i is the deflated value
        # of the forward-starting swap read off the current curve
        x = np.full((1, 19), 0.042)
        for style in ("on_sum", "per_leg"):
            cfg = case_cfg(vol=1e-9, payoff_style=style)
            spec = SwaptionSpec(strike=cfg.strike, first_leg=9, style=style)
            got = brm.still_alive_european(cfg, x, 1, 9)
            assert_allclose(got, swaption_payoff(cfg.delta, x, spec), rtol=1e-6)

    def test_validates_index_order(self):
        cfg = case_cfg()
        x = np.full((1, 19), 0.035)
        with pytest.raises(ValueError, match="1 <= i <= j"):
            brm.still_alive_european(cfg, x, 0, 3)
        with pytest.raises(ValueError, match="1 <= i <= j"):
            brm.still_alive_european(cfg, x, 5, 3)
        with pytest.raises(ValueError, match="1 <= i <= j"):
            brm.still_alive_european(cfg, x, 5, 20)

    def test_against_nested_monte_carlo(self):
        # approximation quality drives exercise ranking, so pin it against
        # a brute-force conditional expectation at the first date
        cfg = case_cfg()
        i, j, m = 1, 3, 50_000
        sae = float(brm.still_alive_european(cfg, cfg.l0[None, :], i, j)[0])
        spec = SwaptionSpec(strike=cfg.strike, first_leg=j, style=cfg.payoff_style)
        steps = int(round((cfg.tenor_date(j) - cfg.tenor_date(i)) / cfg.dt_berm))
        acc = mc.MomentAccumulator()
        for bi, lo, hi in mc.batch_slices(m):
            rng = mc.rng_for(99, bi, mc.STREAM_EULER)
            start = np.broadcast_to(cfg.l0, (hi - lo, cfg.n))
            out, _ = lmm.evolve_log_euler(
                cfg, start, steps, cfg.dt_berm,
                lambda _: rng.standard_normal((hi - lo, cfg.n)),
            )
            acc.add(bi, swaption_payoff(cfg.delta, out, spec))
        nested, _, _, _ = acc.finalize()
        assert abs(sae / nested - 1.0) < 0.02


class TestPolicyObject:
    def make(self, **kw):
        args = dict(
            exercise_indices=(1, 3), dates=np.array([1.0, 2.0]),
            thresholds=np.array([0.0, 0.01]),
        )
        args.update(kw)
        return brm.AndersenPolicy(**args)

    def test_valid_roundtrips_fields(self):
        p = self.make(n_paths=77, seed=5)
        assert p.exercise_indices == (1, 3)
        assert p.n_paths == 77

    def test_index_date_count_mismatch(self):
        with pytest.raises(ValueError, match="one date per"):
            self.make(exercise_indices=(1, 3, 5))

    def test_threshold_count_mismatch(self):
        with pytest.raises(ValueError, match="one threshold per"):
            self.make(thresholds=np.array([0.0]))

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="at least one"):
            self.make(exercise_indices=(), dates=np.array([]), thresholds=np.array([]))

    def test_unsorted_dates_rejected(self):
        with pytest.raises(ValueError, match="strictly increasing"):
            self.make(dates=np.array([2.0, 1.0]))

    def test_nonfinite_thresholds_rejected(self):
        with pytest.raises(ValueError, match="finite"):
            self.make(thresholds=np.array([0.0, np.inf]))

    def test_save_load_roundtrip(self, tmp_path):
        pol = case_policy()
        path = tmp_path / "policy.txt"
        brm.save_policy(pol, path)
        back = brm.load_policy(path)
        assert back.exercise_indices == pol.exercise_indices
        assert np.array_equal(back.dates, pol.dates)
        assert np.array_equal(back.thresholds, pol.thresholds)
        assert back.n_paths == pol.n_paths
        assert back.seed == pol.seed

    def test_load_rejects_malformed_line(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("# paths=0 seed=0 indices=1\n1.0 0.0 extra\n")
        with pytest.raises(ValueError, match="bad.txt:2"):
            brm.load_policy(path)

    def test_load_rejects_index_count_mismatch(self, tmp_path):
        path = tmp_path / "short.txt"
        path.write_text("# paths=0 seed=0 indices=1\n1.0 0.0\n2.0 0.0\n")
        with pytest.raises(ValueError, match="indices"):
            brm.load_policy(path)


class TestStoppingTime:
    def test_deep_itm_stops_immediately(self):
        cfg = case_cfg()
        pol = brm.AndersenPolicy(
            exercise_indices=cfg.exercise_indices,
            dates=cfg.exercise_dates,
            thresholds=np.zeros(10),
        )
        states = np.full((10, 19), 0.10)  # far above the 3.5% strike
        out = brm.stopping_time(cfg, pol, states)
        assert out.stop_index == 0
        spec = SwaptionSpec(strike=cfg.strike, first_leg=1, style=cfg.payoff_style)
        assert out.value == float(swaption_payoff(cfg.delta, states[0], spec))

    def test_worthless_path_never_stops(self):
        cfg = case_cfg()
        pol = brm.AndersenPolicy(
            exercise_indices=cfg.exercise_indices,
            dates=cfg.exercise_dates,
            thresholds=np.full(10, 1e-3),
        )
        states = np.full((10, 19), 0.001)  # deep out of the money everywhere
        out = brm.stopping_time(cfg, pol, states)
        assert out.stop_index == -1
        assert out.value == 0.0

    def test_shape_checked(self):
        cfg = case_cfg()
        pol = case_policy()
        with pytest.raises(ValueError, match="one state per exercise date"):
            brm.stopping_time(cfg, pol, np.zeros((3, 19)))


class TestCalibration:
    def test_needs_exercise_dates(self):
        with pytest.raises(ValueError, match="no exercise dates"):
            brm.calibrate_policy(case_cfg(exercise=()), n_paths=10_000, seed=0)

    def test_needs_enough_paths(self):
        with pytest.raises(ValueError, match="at least 10000"):
            brm.calibrate_policy(case_cfg(), n_paths=5000, seed=0)

    def test_deterministic_in_seed(self):
        a = brm.calibrate_policy(case_cfg(), n_paths=10_000, seed=101)
        b = case_policy()
        assert np.array_equal(a.thresholds, b.thresholds)
        assert np.array_equal(a.objectives, b.objectives)

    def test_objectives_decrease_backward(self):
        # each extra exercise right can only add value, so the backward
        # sweep's objective shrinks toward the last date
        pol = case_policy()
        assert np.all(np.diff(pol.objectives) <= 1e-12)
        assert pol.objectives[0] > pol.objectives[-1]

    def test_records_provenance(self):
        pol = case_policy()
        assert pol.n_paths == 10_000
        assert pol.seed == 101


class TestOneDateDegeneracy:
    def test_single_date_reduces_to_european(self):
        cfg = case_cfg(exercise=(1,))
        pol = brm.calibrate_policy(cfg, n_paths=10_000, seed=101)
        assert pol.thresholds[0] == 0.0
        b = brm.bermudan_price(cfg, pol, level=1, m=20_000, seed=7)
        e = est.price(est.european_inputs(cfg, level=1, m=20_000, seed=7))
        # same draws, same weights, every path exercised at once: the two
        # estimators walk through identical arithmetic
        assert b.value == e.value
        assert b.sd == e.sd


class TestBermudanPricing:
    def test_dominates_european(self):
        b = case_price()
        e = est.price(est.european_inputs(case_cfg(), level=1, m=20_000, seed=7))
        assert b.value >= e.value - 3.0 * np.hypot(b.sd, e.sd)

    def test_agrees_with_euler_reference(self):
        cfg = case_cfg()
        b = case_price()
        e = brm.euler_bermudan_price(cfg, case_policy(), m=20_000, seed=3)
        assert abs(b.value - e.value) < combined_gate(b, e)

    def test_agrees_with_euler_reference_t1_2(self):
        cfg = case_cfg(t1=2.0)
        b = case_price(t1=2.0)
        e = brm.euler_bermudan_price(cfg, case_policy(2.0), m=20_000, seed=3)
        assert abs(b.value - e.value) < combined_gate(b, e)

    def test_beats_premium_free_policy(self):
        # H == 0 exercises as soon as intrinsic reaches the best remaining
        # European; calibration should not do worse
        cfg = case_cfg()
        flat = brm.AndersenPolicy(
            exercise_indices=cfg.exercise_indices,
            dates=cfg.exercise_dates,
            thresholds=np.zeros(10),
        )
        b0 = brm.bermudan_price(cfg, flat, level=1, m=20_000, seed=7)
        b = case_price()
        assert b.value >= b0.value - 3.0 * np.hypot(b.sd, b0.sd)

    def test_policy_config_mismatch_rejected(self):
        cfg = case_cfg()
        off = brm.AndersenPolicy(
            exercise_indices=cfg.exercise_indices,
            dates=cfg.exercise_dates + 0.25,
            thresholds=np.zeros(10),
        )
        with pytest.raises(ValueError, match="tenor grid"):
            brm.bermudan_price(cfg, off, level=1, m=4096, seed=0)

    def test_exercise_frequencies_are_a_distribution(self):
        cfg = case_cfg()
        freq = brm.exercise_frequencies(cfg, case_policy(), level=1, m=20_000, seed=7)
        assert freq.shape == (11,)
        assert np.all(freq >= 0.0)
        assert_allclose(freq.sum(), 1.0, rtol=1e-12)
        # ATM ten-date case: a healthy share exercises somewhere
        assert freq[-1] < 0.9
        assert freq[:-1].max() > 0.05

    def test_seed_determinism(self):
        a = brm.bermudan_price(case_cfg(), case_policy(), level=1, m=8192, seed=11)
        b = brm.bermudan_price(case_cfg(), case_policy(), level=1, m=8192, seed=11)
        c = brm.bermudan_price(case_cfg(), case_policy(), level=1, m=8192, seed=12)
        assert a == b
        assert a.value != c.value


class TestBermudanDelta:
    def test_agrees_with_euler_reference(self):
        cfg = case_cfg()
        d = brm.bermudan_delta_fd(cfg, case_policy(), i=18, h=3.5e-5, level=1,
                                  m=10_000, seed=7)
        de = brm.euler_bermudan_delta_fd(cfg, case_policy(), i=18, h=3.5e-5,
                                         m=10_000, seed=3)
        assert abs(d.value - de.value) < combined_gate(d, de)

    def test_shared_stopping_keeps_disagreement_rare(self):
        # the bump pair reuses the up branch's stopping decision; the pairs
        # that would genuinely decide differently at h = 3.5e-5 are a
        # fraction of a percent
        cfg = case_cfg()
        frac = brm.stopping_disagreement(cfg, case_policy(), i=18, h=3.5e-5,
                                         level=1, m=10_000, seed=7)
        assert 0.0 <= frac < 0.02
