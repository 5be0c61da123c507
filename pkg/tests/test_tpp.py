import math

import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from texttpp.core import EventSequence
from texttpp.exceptions import NumericalError
from texttpp.tpp import (
    HEADS,
    MCConfig,
    THPIntensity,
    event_log_intensities,
    intensity_rmtpp,
    intensity_sahp,
    intensity_thp,
    make_intensity_head,
    mc_fractions,
    nonevent_integral_mc,
    sequence_log_likelihood,
)

LN2 = math.log(2.0)
F64 = torch.float64


def t(x):
    return torch.as_tensor(x, dtype=F64)


def constant_head(rate, num_types=1, hidden=4):
    """THP head with intensity ``rate`` everywhere: b solves softplus(b) = rate."""
    head = THPIntensity(hidden, num_types)
    with torch.no_grad():
        head.alpha.zero_()
        head.weight.zero_()
        head.bias.fill_(math.log(math.expm1(rate)))
    return head


def trapezoid(f, a, b, points=1000):
    x = np.linspace(a, b, points)
    y = f(x)
    return float(np.sum((y[1:] + y[:-1]) * np.diff(x)) / 2)


class TestHeadFormulas:
    def test_thp_zero(self):
        lam = intensity_thp(t(np.zeros(3)), t(0.7), t([0.0, 0.0]), t(np.zeros((2, 3))), t([0.0, 0.0]))
        np.testing.assert_allclose(lam.numpy(), [LN2, LN2], rtol=1e-15)

    def test_thp_unit_rate(self):
        b = math.log(math.e - 1)
        assert b == pytest.approx(0.541324, abs=1e-6)
        lam = intensity_thp(t(np.ones(3)), t(5.0), t([0.0]), t(np.zeros((1, 3))), t([b]))
        assert float(lam[0]) == pytest.approx(1.0, abs=1e-15)

    def test_thp_large_argument_does_not_overflow(self):
        lam = intensity_thp(t(np.zeros(1)), t(1.0), t([1000.0]), t(np.zeros((1, 1))), t([0.0]))
        assert float(lam[0]) == 1000.0

    def test_rmtpp(self):
        z = t(np.zeros(2))
        assert float(intensity_rmtpp(z, t(0.0), t([0.0]), t(np.zeros((1, 2))), t([0.0]))[0]) == 1.0
        two = intensity_rmtpp(z, t(LN2), t([1.0]), t(np.zeros((1, 2))), t([0.0]))
        assert float(two[0]) == pytest.approx(2.0, rel=1e-15)

    def test_rmtpp_clamp(self):
        lam = intensity_rmtpp(t(np.zeros(1)), t(100.0), t([1.0]), t(np.zeros((1, 1))), t([0.0]))
        assert float(lam[0]) == pytest.approx(math.exp(30.0))

    def test_rmtpp_monotone_for_positive_alpha(self):
        dts = t(np.linspace(0, 5, 50))
        lam = intensity_rmtpp(t(np.ones(2))[None].expand(50, 2), dts, t([0.4]), t([[0.1, -0.2]]), t([0.3]))
        assert torch.all(torch.diff(lam[:, 0]) > 0)

    def test_sahp_zero_history(self):
        w = t(np.ones((2, 3)))
        lam = intensity_sahp(t(np.zeros(3)), t(1.3), w, w, w)
        np.testing.assert_allclose(lam.numpy(), [LN2, LN2], rtol=1e-15)

    def test_sahp_limits(self):
        h = t([0.5, -1.0, 2.0])
        wm, we, wg = t([[0.3, 0.1, 0.4]]), t([[1.0, -0.2, 0.5]]), t([[0.2, 0.2, 0.2]])
        mu = torch.nn.functional.gelu(h @ wm.T)
        eta = torch.nn.functional.gelu(h @ we.T)
        at0 = intensity_sahp(h, t(0.0), wm, we, wg)
        far = intensity_sahp(h, t(1e4), wm, we, wg)
        torch.testing.assert_close(at0, torch.nn.functional.softplus(eta), rtol=1e-15, atol=0)
        torch.testing.assert_close(far, torch.nn.functional.softplus(mu), rtol=1e-12, atol=0)

    def test_sahp_negative_gate_still_decays(self):
        # gelu can be negative; the extra softplus keeps the decay rate >= 0
        h = t([-1.0])
        lam_far = intensity_sahp(h, t(1e3), t([[0.0]]), t([[5.0]]), t([[1.0]]))
        assert torch.isfinite(lam_far).all()

    @pytest.mark.parametrize("kind", sorted(HEADS))
    def test_positive_on_random_draws(self, kind):
        torch.manual_seed(0)
        head = make_intensity_head(kind, 8, 3)
        h = torch.randn(100_000, 8, dtype=F64) * 3
        dt = torch.rand(100_000, dtype=F64) * 20
        with torch.no_grad():
            lam = head(h, dt)
        assert lam.shape == (100_000, 3)
        assert torch.all(lam > 0)

    def test_unknown_head(self):
        with pytest.raises(ValueError):
            make_intensity_head("neural-ode", 4, 2)


class TestMonteCarlo:
    def test_fractions_in_unit_interval(self):
        u = mc_fractions(50, MCConfig(20, seed=3), "a")
        assert u.shape == (50, 20) and np.all((u > 0) & (u <= 1))

    def test_fractions_deterministic_and_keyed(self):
        mc = MCConfig(5, seed=1)
        np.testing.assert_array_equal(mc_fractions(4, mc, "x", 2), mc_fractions(4, mc, "x", 2))
        assert not np.array_equal(mc_fractions(4, mc, "x", 2), mc_fractions(4, mc, "y", 2))
        assert not np.array_equal(mc_fractions(4, mc, "x", 2), mc_fractions(4, mc, "x", 3))

    def test_stratified_draws_one_per_stratum(self):
        u = mc_fractions(3, MCConfig(8, stratified=True), "s")
        strata = np.floor((1 - u) * 8)
        assert all(sorted(row) == list(range(8)) for row in strata)

    @given(st.floats(0.1, 5.0), st.integers(1, 3), st.floats(0.1, 50.0), st.integers(1, 64))
    def test_constant_intensity_exact(self, c, k, total, m):
        head = constant_head(c, k)
        hist = torch.zeros(2, 4, dtype=F64)
        with torch.no_grad():
            val = nonevent_integral_mc(hist, np.array([0.0, total]), head, MCConfig(m))
        assert float(val) == pytest.approx(c * k * total, rel=1e-12)

    def test_zero_length_interval(self):
        head = make_intensity_head("thp", 4, 2)
        val = nonevent_integral_mc(torch.randn(2, 4, dtype=F64), np.array([1.0, 1.0]), head, MCConfig(7))
        assert float(val.detach()) == 0.0

    def test_converges_to_quadrature(self):
        head = THPIntensity(1, 1)
        with torch.no_grad():
            head.alpha.fill_(-0.8)
            head.weight.zero_()
            head.bias.fill_(1.5)
        gap = 3.0
        exact = trapezoid(lambda x: np.log1p(np.exp(-0.8 * x + 1.5)), 0.0, gap)
        est = nonevent_integral_mc(torch.zeros(2, 1, dtype=F64), np.array([0.0, gap]), head, MCConfig(10_000))
        assert float(est) == pytest.approx(exact, rel=5e-3)

    def test_split_interval_matches_merged(self):
        # with alpha = 0 the intensity ignores elapsed time, so splitting an
        # interval under the same history changes nothing
        torch.manual_seed(4)
        head = make_intensity_head("thp", 4, 2)
        with torch.no_grad():
            head.alpha.zero_()
        h = torch.randn(1, 4, dtype=F64)
        with torch.no_grad():
            merged = nonevent_integral_mc(h.expand(2, 4), np.array([0.0, 2.0]), head, MCConfig(9, 1))
            split = nonevent_integral_mc(h.expand(3, 4), np.array([0.0, 1.0, 2.0]), head, MCConfig(9, 2))
        assert float(split) == pytest.approx(float(merged), rel=1e-13)


class TestLikelihood:
    def seq(self, times, types=None):
        return EventSequence("p", times, types if types is not None else [0] * len(times))

    def test_unit_rate(self):
        hist = torch.randn(4, 4, dtype=F64)
        ll = sequence_log_likelihood(self.seq([0, 1, 2, 3]), hist, constant_head(1.0), MCConfig())
        assert float(ll) == pytest.approx(-3.0, abs=1e-12)

    def test_rate_two(self):
        hist = torch.zeros(4, 4, dtype=F64)
        ll = sequence_log_likelihood(self.seq([0, 1, 2, 3]), hist, constant_head(2.0), MCConfig())
        assert float(ll) == pytest.approx(3 * LN2 - 6, abs=1e-12)
        assert float(ll) == pytest.approx(-3.9206, abs=1e-4)

    def test_simultaneous_events(self):
        head = make_intensity_head("sahp", 4, 1)
        hist = torch.randn(2, 4, dtype=F64)
        seq = self.seq([0.0, 0.0])
        ll = sequence_log_likelihood(seq, hist, head, MCConfig())
        expected = event_log_intensities(hist, seq.times, seq.types, head).sum()
        assert float(ll) == float(expected)

    def test_first_event_has_no_term(self):
        hist = torch.zeros(3, 4, dtype=F64)
        out = event_log_intensities(hist, np.array([0.0, 1.0, 1.5]), np.array([0, 0, 0]), constant_head(1.0))
        assert out.shape == (2,)

    @given(st.integers(3, 12), st.integers(0, 2**16))
    def test_history_alignment(self, n, seed):
        gen = torch.Generator().manual_seed(seed)
        head = THPIntensity(4, 2)
        rng = np.random.default_rng(seed)
        times = np.cumsum(rng.exponential(1.0, n))
        types = rng.integers(0, 2, n)
        hist = torch.randn(n, 4, generator=gen, dtype=F64)
        i = int(rng.integers(1, n))  # 0-based event i uses history row i-1
        changed = hist.clone()
        changed[i:] = torch.randn(n - i, 4, generator=gen, dtype=F64)
        with torch.no_grad():
            a = event_log_intensities(hist, times, types, head)
            b = event_log_intensities(changed, times, types, head)
        assert torch.equal(a[: i], b[: i])

    def test_too_short(self):
        with pytest.raises(ValueError):
            sequence_log_likelihood(self.seq([0.0]), torch.zeros(1, 4, dtype=F64), constant_head(1.0), MCConfig())

    def test_vanishing_intensity(self):
        head = THPIntensity(1, 1)
        with torch.no_grad():
            head.bias.fill_(-1e4)
        with pytest.raises(NumericalError):
            event_log_intensities(torch.zeros(2, 1, dtype=F64), np.array([0.0, 1.0]), np.array([0, 0]), head)

    def test_mc_config_validation(self):
        with pytest.raises(ValueError):
            MCConfig(0)
