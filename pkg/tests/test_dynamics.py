import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flyolf.dynamics import (
    LIConfig,
    NeuronParams,
    SFAConfig,
    SurrogateParams,
    li_current,
    li_trace_update,
    lif_step,
    sfa_current,
    sfa_update,
    surrogate_grad,
)
from flyolf.errors import ConfigError


class TestLIFStep:
    def test_spike_from_rest(self):
        v, s, u = lif_step(0.0, 1.0, NeuronParams())
        assert u == pytest.approx(1.0)
        assert s == 1.0
        assert v == pytest.approx(1.0 - 0.8)

    def test_pure_decay_closed_form(self):
        v, s, u = lif_step(0.5, 0.0, NeuronParams(tau_m=10.0, dt=1.0))
        assert s == 0.0
        assert float(v) == pytest.approx(0.5 * math.exp(-0.1), abs=1e-15)

    def test_threshold_tie_spikes(self):
        _, s, u = lif_step(0.0, 0.8, NeuronParams())
        assert u == pytest.approx(0.8) and s == 1.0

    def test_subthreshold_fixed_point(self):
        # constant drive c < v_th*(1-beta) converges to c/(1-beta), no spikes
        p = NeuronParams(tau_m=10.0, v_th=0.8, dt=1.0)
        c = 0.9 * p.v_th * (1.0 - p.beta)
        v = 0.0
        spikes = 0.0
        for _ in range(2000):
            v, s, _ = lif_step(v, c, p)
            spikes += float(s)
        assert spikes == 0.0
        assert float(v) == pytest.approx(c / (1.0 - p.beta), rel=1e-9)

    def test_vectorized_matches_scalar(self):
        p = NeuronParams()
        vs = np.array([0.0, 0.5, 0.79, 2.0])
        cur = np.array([1.0, 0.0, 0.2, 0.0])
        v, s, u = lif_step(vs, cur, p)
        for i in range(4):
            vi, si, ui = lif_step(float(vs[i]), float(cur[i]), p)
            assert float(v[i]) == pytest.approx(float(vi))
            assert float(s[i]) == float(si)

    @given(
        v0=st.floats(-2.0, 2.0),
        i=st.floats(-1.0, 3.0),
    )
    @settings(max_examples=200, deadline=None)
    def test_soft_reset_bound(self, v0, i):
        p = NeuronParams()
        v, s, u = lif_step(v0, i, p)
        if s == 1.0:
            assert float(v) == pytest.approx(float(u) - p.v_th)
            assert float(v) < float(u)
        else:
            assert float(v) == float(u)


class TestSFA:
    def test_unit_impulse(self):
        c = SFAConfig(w_sfa=-0.3)
        a = sfa_update(0.0, 1.0, c)
        assert float(a) == pytest.approx(1.0)
        assert float(sfa_current(a, c.w_sfa)) == pytest.approx(-0.3)

    def test_decay_closed_form(self):
        c = SFAConfig(tau_sfa=50.0, dt=1.0, w_sfa=-0.1)
        a = sfa_update(1.0, 0.0, c)
        assert float(a) == pytest.approx(math.exp(-0.02), abs=1e-15)

    def test_zero_weight_means_zero_current(self):
        c = SFAConfig(w_sfa=0.0)
        a = 0.0
        for t in range(10):
            a = sfa_update(a, 1.0, c)
            assert float(sfa_current(a, 0.0)) == 0.0

    def test_positive_weight_rejected(self):
        with pytest.raises(ConfigError):
            SFAConfig(w_sfa=0.1)
        with pytest.raises(ConfigError):
            sfa_current(1.0, 0.1)

    def test_isolated_spikes_sum_of_exponentials(self):
        # after spikes at known times, A is the sum of decayed impulses
        c = SFAConfig(tau_sfa=50.0, dt=1.0, w_sfa=-0.1)
        spike_times = [3, 17, 40, 41, 90]
        a = 0.0
        horizon = 120
        for t in range(horizon):
            a = sfa_update(a, 1.0 if t in spike_times else 0.0, c)
        expected = sum(math.exp(-(horizon - 1 - t) / 50.0) for t in spike_times)
        assert float(a) == pytest.approx(expected, abs=1e-12)


class TestLITrace:
    def test_quiescent(self):
        c = LIConfig()
        w = np.full((5, 3), -0.2)
        cur = li_current(np.zeros(3), w)
        np.testing.assert_array_equal(cur, np.zeros(5))

    def test_single_spike_decay(self):
        c = LIConfig(tau_trace=5.0, dt=1.0)
        w = np.full((4, 3), -0.7 / 3)
        tr = li_trace_update(np.zeros(3), np.array([1.0, 0.0, 0.0]), c)
        cur0 = li_current(tr, w)
        assert cur0[0] == pytest.approx(-0.7 / 3)
        tr = li_trace_update(tr, np.zeros(3), c)
        cur1 = li_current(tr, w)
        assert cur1[0] == pytest.approx((-0.7 / 3) * math.exp(-0.2), abs=1e-15)

    def test_linearity(self):
        c = LIConfig()
        w = -np.random.default_rng(0).random((6, 4))
        t1 = np.random.default_rng(1).random(4)
        t2 = np.random.default_rng(2).random(4)
        np.testing.assert_allclose(
            li_current(t1 + t2, w), li_current(t1, w) + li_current(t2, w), atol=1e-12
        )

    def test_positive_weight_rejected(self):
        w = np.full((2, 2), -0.1)
        w[1, 0] = 0.05
        with pytest.raises(ConfigError):
            li_current(np.ones(2), w)


class TestSurrogate:
    def test_peak(self):
        assert float(surrogate_grad(0.0, SurrogateParams(k1=1.5, k2=2.0))) == 1.5

    def test_half_width(self):
        p = SurrogateParams(k1=1.0, k2=2.0)
        assert float(surrogate_grad(1.0 / p.k2, p)) == pytest.approx(p.k1 / 2)

    @given(st.floats(-50.0, 50.0))
    @settings(max_examples=200, deadline=None)
    def test_even_symmetry(self, u):
        p = SurrogateParams()
        assert float(surrogate_grad(u, p)) == float(surrogate_grad(-u, p))

    def test_invalid_constants(self):
        with pytest.raises(ConfigError):
            SurrogateParams(k1=0.0)


class TestMechanismNeutrality:
    def test_disabled_mechanisms_do_not_perturb_lif(self):
        # w_sfa = 0 and w_ln_pn = 0 leave trajectories bit-identical
        p = NeuronParams()
        sfa = SFAConfig(w_sfa=0.0)
        li = LIConfig()
        w_ln_pn = np.zeros((1, 3))
        rng = np.random.default_rng(5)
        drive = rng.random(100)

        v_plain = 0.0
        v_mech, a, tr = 0.0, 0.0, np.zeros(3)
        for t in range(100):
            v_plain, s_plain, _ = lif_step(v_plain, drive[t], p)
            i_total = drive[t] + sfa_current(a, 0.0) + li_current(tr, w_ln_pn)[0]
            v_mech, s_mech, _ = lif_step(v_mech, i_total, p)
            a = sfa_update(a, s_mech, sfa)
            tr = li_trace_update(tr, np.array([s_mech, 0.0, 0.0]), li)
            assert float(v_plain) == float(v_mech)
            assert float(s_plain) == float(s_mech)


class TestKernelExactness:
    def test_ten_thousand_random_cases(self):
        # acceptance-grade bound: closed-form agreement < 1e-12 at 64-bit
        rng = np.random.default_rng(42)
        n = 10_000
        v0 = rng.uniform(-2, 2, n)
        cur = rng.uniform(-1, 2, n)
        tau = rng.uniform(2.0, 60.0, n)
        for i in range(0, n, 500):
            p = NeuronParams(tau_m=float(tau[i]), dt=1.0)
            v, s, u = lif_step(v0[i:i + 500], cur[i:i + 500], p)
            u_ref = v0[i:i + 500] * math.exp(-1.0 / tau[i]) + cur[i:i + 500]
            np.testing.assert_allclose(np.asarray(u), u_ref, atol=1e-12, rtol=0)

        a0 = rng.uniform(0, 5, n)
        spk = (rng.random(n) < 0.3).astype(float)
        c = SFAConfig(tau_sfa=50.0, dt=1.0, w_sfa=-0.2)
        a1 = sfa_update(a0, spk, c)
        np.testing.assert_allclose(
            np.asarray(a1), a0 * math.exp(-0.02) + spk, atol=1e-12, rtol=0
        )

        tr0 = rng.uniform(0, 5, n)
        lc = LIConfig(tau_trace=5.0, dt=1.0)
        tr1 = li_trace_update(tr0, spk, lc)
        np.testing.assert_allclose(
            np.asarray(tr1), tr0 * math.exp(-0.2) + spk, atol=1e-12, rtol=0
        )
