import itertools
import math

import mpmath
import numpy as np
import pytest

from conftest import random_config, reference_config
from iastab.errors import ConfigError
from iastab.rate_model import (ApproxOrder, DecisionVector, RateMode,
                               SystemConfig, approx_rate, avg_rate_user,
                               derived_params, g_factor, gbar, mgf_residual,
                               phi, success_prob, svd_rate, svd_success_prob,
                               symmetric_F, symmetric_rate, total_rate_curve)

# Frozen 40-digit mpmath evaluations (series summed term by term).
G_CROSS_02_B30 = 0.2059508652547975755434757
F_UNIT_B40 = 0.4112085646054717535101442
TOTAL_RATE_UNIT_B30 = (1621.0868910944040802, 1184.2857524626700632,
                       648.81780005650923221, 315.92960561170740724,
                       144.20557298215248058, 63.182509705205433022)


def mc_mgf(cfg, active, k, n, seed):
    """Sample exp(-threshold * RI / direct gain) from the Gamma/Beta law."""
    dp = derived_params(cfg)
    rng = np.random.default_rng(seed)
    d = cfg.streams
    pl = cfg.path_loss
    scaled = np.zeros(n)
    for i in active:
        if i == k:
            continue
        x = rng.gamma(dp.quant_order, 1.0 / dp.quant_gain, size=n)
        y = rng.beta(dp.shape_a, dp.shape_b, size=n)
        scaled += pl[k][i] / pl[k][k] * d * x * y
    vals = np.exp(-cfg.threshold * scaled)
    return vals.mean(), vals.std(ddof=1) / math.sqrt(n)


def mp_factor(cross, bits, threshold=1.0, streams=2, q=48):
    with mpmath.workdps(30):
        a = mpmath.mpf((q + 1) * streams - 1) / q
        b = (q - 1) * a
        x = cross * threshold * streams / mpmath.mpf(2) ** (mpmath.mpf(bits) / q)
        return float((x + 1) ** (-q) * mpmath.hyp2f1(b, q, a + b, 1 / (1 / x + 1)))


class TestSystemConfig:
    def test_rejects_probe_overload(self):
        with pytest.raises(ConfigError, match="probe_cost"):
            reference_config(probe_cost=0.2)

    def test_rejects_too_many_streams(self):
        with pytest.raises(ConfigError):
            reference_config(streams=8)

    def test_rejects_bad_path_loss(self):
        with pytest.raises(ConfigError):
            SystemConfig(n_pairs=2, n_tx=2, n_rx=2, streams=1, power=1,
                         noise_var=1, probe_cost=0.1, bits=4, threshold=1,
                         stream_rate=1, path_loss=[[1, 0], [1, 1]])

    def test_homogeneous_and_feasible(self):
        cfg = reference_config()
        assert cfg.is_homogeneous and cfg.ia_feasible
        assert not reference_config(n_tx=6).ia_feasible

    def test_derived_params(self):
        dp = derived_params(reference_config(bits=48))
        assert dp.quant_order == 48
        assert dp.shape_a == pytest.approx(97 / 48)
        assert dp.shape_b == pytest.approx(47 * 97 / 48)
        assert dp.quant_gain == pytest.approx(2.0)


class TestDecisionVector:
    def test_round_trip(self):
        dv = DecisionVector.from_bits([0, 1, 1, 0, 1])
        assert dv.active == (1, 2, 4)
        assert dv.mask == 0b10110
        assert DecisionVector.from_mask(5, dv.mask) == dv
        assert dv.bits == (0, 1, 1, 0, 1)
        assert dv.cardinality == 3


class TestGFactor:
    def test_zero_bits_unit_ratio(self):
        cfg = SystemConfig.homogeneous(2, n_tx=2, n_rx=2, streams=2, power=1,
                                       noise_var=1, probe_cost=0.1, bits=0,
                                       threshold=1, stream_rate=1)
        assert g_factor(cfg, 0, 1) == pytest.approx(2.0 / 3.0, rel=1e-15)

    def test_vanishes_with_many_bits(self):
        assert g_factor(reference_config(bits=1000), 0, 1) < 1e-5

    def test_reference_value(self):
        assert g_factor(reference_config(), 0, 1) == pytest.approx(
            G_CROSS_02_B30, rel=1e-14)

    def test_same_pair_is_an_error(self):
        with pytest.raises(ConfigError):
            g_factor(reference_config(), 2, 2)


class TestMgfResidual:
    def test_single_pair_is_one(self):
        assert mgf_residual(reference_config(), [3], 3) == 1.0

    def test_many_bits_limit(self):
        cfg = reference_config(bits=10000)
        assert mgf_residual(cfg, range(6), 0) == pytest.approx(1.0, abs=1e-6)

    def test_inactive_pair_rejected(self):
        with pytest.raises(ConfigError):
            mgf_residual(reference_config(), [0, 1], 2)

    @pytest.mark.parametrize("bits", [15, 30, 40])
    @pytest.mark.parametrize("cross", [0.2, 0.5])
    @pytest.mark.parametrize("size", [2, 3, 4])
    def test_monte_carlo_oracle(self, bits, cross, size):
        cfg = reference_config(cross=cross, bits=bits)
        active = tuple(range(size))
        est, err = mc_mgf(cfg, active, 0, 1_000_000, seed=bits * 100 + size)
        assert abs(mgf_residual(cfg, active, 0) - est) <= 3 * err

    def test_factor_against_mpmath(self):
        for cross, bits in [(0.2, 15), (0.5, 30), (1.0, 40)]:
            assert symmetric_F(reference_config(cross=cross, bits=bits)) == \
                pytest.approx(mp_factor(cross, bits), rel=1e-11)


class TestSuccessAndRates:
    def test_perfect_success(self):
        p = success_prob(reference_config(), [0, 1, 2], 1, RateMode.PERFECT)
        assert p == pytest.approx(math.exp(-0.2), rel=1e-14)
        assert p == pytest.approx(0.8187307531, abs=1e-10)

    def test_single_pair_imperfect_equals_perfect(self):
        cfg = reference_config()
        assert success_prob(cfg, [4], 4) == success_prob(
            cfg, [4], 4, RateMode.PERFECT)

    def test_single_pair_perfect_rate(self):
        r = avg_rate_user(reference_config(), [0], 0, RateMode.PERFECT)
        assert r == pytest.approx(0.99 * 2 * 1000 * math.exp(-0.2), rel=1e-14)
        assert r == pytest.approx(1621.09, abs=5e-3)

    def test_inactive_pair_rejected(self):
        for mode in (RateMode.IMPERFECT, RateMode.PERFECT):
            with pytest.raises(ConfigError):
                avg_rate_user(reference_config(), [1, 2], 0, mode)

    def test_symmetric_specialisation_is_exact(self):
        cfg = reference_config(cross=0.2, bits=40)
        assert avg_rate_user(cfg, [0, 1, 2], 0) == symmetric_rate(cfg, 3)

    def test_perfect_dominates_imperfect(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            cfg = random_config(rng, homogeneous=False)
            for mask in range(1, 1 << cfg.n_pairs):
                act = DecisionVector.from_mask(cfg.n_pairs, mask).active
                for k in act:
                    imp = avg_rate_user(cfg, act, k)
                    per = avg_rate_user(cfg, act, k, RateMode.PERFECT)
                    assert per >= imp >= 0

    def test_permutation_invariance(self):
        cfg = reference_config(cross=0.5, bits=20)
        vals = {avg_rate_user(cfg, act, act[0])
                for act in itertools.combinations(range(6), 3)}
        assert len(vals) == 1


class TestSymmetricRate:
    def test_perfect_limit_factor(self):
        assert symmetric_F(reference_config(bits=10000)) == pytest.approx(
            1.0, abs=1e-6)

    def test_factor_oracle(self):
        assert symmetric_F(reference_config(cross=1.0, bits=40)) == \
            pytest.approx(F_UNIT_B40, rel=1e-12)

    def test_first_rates_agree(self):
        cfg = reference_config()
        assert symmetric_rate(cfg, 1) == symmetric_rate(cfg, 1,
                                                        RateMode.PERFECT)

    def test_perfect_total_peaks_at_half_inverse_probe(self):
        cfg = reference_config(probe_cost=0.1, n_pairs=7, n_tx=8, n_rx=8)
        tot = [symmetric_rate(cfg, l, RateMode.PERFECT, total=True)
               for l in (4, 5, 6)]
        assert tot[1] > tot[0] and tot[1] > tot[2]

    def test_total_profile_oracle(self):
        cfg = reference_config(cross=1.0, bits=30)
        got = [symmetric_rate(cfg, l, total=True) for l in range(1, 7)]
        assert got == pytest.approx(TOTAL_RATE_UNIT_B30, rel=1e-12)

    def test_out_of_range(self):
        with pytest.raises(ConfigError):
            symmetric_rate(reference_config(), 7)
        with pytest.raises(ConfigError):
            symmetric_rate(reference_config(), 0)

    def test_heterogeneous_rejected(self):
        cfg = reference_config()
        pl = [list(r) for r in cfg.path_loss]
        pl[0][1] = 0.3
        with pytest.raises(ConfigError):
            symmetric_F(cfg.replace(path_loss=pl))

    def test_per_pair_rate_decreasing(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            cfg = random_config(rng)
            r = [symmetric_rate(cfg, l) for l in range(1, cfg.n_pairs + 1)]
            assert all(x > y for x, y in zip(r, r[1:]))

    def test_factor_increases_with_bits(self):
        f = [symmetric_F(reference_config(bits=b)) for b in range(0, 80, 5)]
        assert all(x < y for x, y in zip(f, f[1:]))

    def test_total_curve_unimodal(self):
        rng = np.random.default_rng(12)
        for _ in range(20):
            cfg = random_config(rng)
            load = np.linspace(1e-3, 1 / cfg.probe_cost - 1e-3, 4000)
            vals = np.array([total_rate_curve(cfg, x) for x in load])
            signs = np.sign(np.diff(vals))
            assert np.count_nonzero(signs[1:] != signs[:-1]) == 1


class TestSvdRate:
    def test_zero_threshold(self):
        cfg = reference_config(threshold=0.0)
        assert svd_rate(cfg) == 0.99 * 2 * 1000

    def test_single_antenna(self):
        cfg = SystemConfig.homogeneous(1, n_tx=1, n_rx=1, streams=1,
                                       power=10, noise_var=1, probe_cost=0.01,
                                       bits=0, threshold=1, stream_rate=1)
        assert svd_success_prob(cfg) == pytest.approx(math.exp(-0.1),
                                                      rel=1e-13)

    @pytest.mark.parametrize("n_tx,n_rx", [(7, 7), (3, 5), (6, 2)])
    def test_eigenvalue_monte_carlo(self, n_tx, n_rx):
        cfg = reference_config(n_tx=n_tx, n_rx=n_rx, streams=1, n_pairs=1,
                               probe_cost=0.01, threshold=2.0)
        rng = np.random.default_rng(n_tx * 10 + n_rx)
        n = 200_000
        h = (rng.standard_normal((n, n_rx, n_tx))
             + 1j * rng.standard_normal((n, n_rx, n_tx))) / math.sqrt(2)
        # nonzero eigenvalues of H H^H equal those of the smaller Gram matrix
        gram = (np.conj(np.swapaxes(h, 1, 2)) @ h if n_tx < n_rx
                else h @ np.conj(np.swapaxes(h, 1, 2)))
        lam = np.linalg.eigvalsh(gram)
        lam = lam[np.arange(n), rng.integers(0, lam.shape[1], size=n)]
        hits = (cfg.power / (n_tx * cfg.noise_var)) * lam >= cfg.threshold
        p, err = hits.mean(), hits.std(ddof=1) / math.sqrt(n)
        assert abs(svd_success_prob(cfg) - p) <= 3 * err

    @pytest.mark.parametrize("antennas", [12, 20])
    def test_many_antennas_stay_accurate(self, antennas):
        cfg = reference_config(n_tx=antennas, n_rx=antennas, streams=1,
                               n_pairs=1)
        y = antennas * cfg.noise_var * cfg.threshold / cfg.power
        with mpmath.workdps(60):
            # P(lambda >= y) from the eigenvalue density written with
            # mpmath's Laguerre polynomials and numerical integration
            m = antennas

            def density(lam):
                return sum(mpmath.factorial(k) / mpmath.factorial(k)
                           * mpmath.laguerre(k, 0, lam) ** 2
                           for k in range(m)) * mpmath.exp(-lam) / m

            ref = float(mpmath.quad(density, [y, y + 20, mpmath.inf]))
        assert svd_success_prob(cfg) == pytest.approx(ref, rel=1e-10)

    def test_large_quantization_order(self):
        cfg = reference_config(n_tx=200, n_rx=200, streams=1, n_pairs=2,
                               bits=0, cross=1.0)
        f = symmetric_F(cfg)
        assert 0 < f < 1

    def test_heterogeneous_direct_needs_pair(self):
        cfg = reference_config()
        pl = [list(r) for r in cfg.path_loss]
        pl[2][2] = 2.0
        cfg = cfg.replace(path_loss=pl)
        with pytest.raises(ConfigError):
            svd_rate(cfg)
        assert svd_rate(cfg, 2) > svd_rate(cfg, 0)


def gbar_by_enumeration(cfg, k, size):
    vals = []
    for act in itertools.combinations(range(cfg.n_pairs), size):
        if k in act:
            vals += [g_factor(cfg, k, i) for i in act if i != k]
    return sum(vals) / len(vals)


class TestGbarPhi:
    def test_symmetric_equals_common_value(self):
        cfg = reference_config()
        assert gbar(cfg, 3) == g_factor(cfg, 3, 0)

    def test_arithmetic_mean(self):
        cfg = SystemConfig(n_pairs=3, n_tx=2, n_rx=2, streams=1, power=1,
                           noise_var=1, probe_cost=0.1, bits=0, threshold=1,
                           stream_rate=1,
                           path_loss=[[1, 1 / 9, 3 / 7], [1, 1, 1], [1, 1, 1]])
        assert g_factor(cfg, 0, 1) == pytest.approx(0.1)
        assert g_factor(cfg, 0, 2) == pytest.approx(0.3)
        assert gbar(cfg, 0) == pytest.approx(0.2, rel=1e-14)

    def test_single_pair_rejected(self):
        with pytest.raises(ConfigError):
            gbar(reference_config(n_pairs=1), 0)

    def test_matches_subset_enumeration(self):
        cfg = random_config(np.random.default_rng(3), n_pairs=6,
                            homogeneous=False)
        for k in range(6):
            for size in range(2, 7):
                assert gbar(cfg, k) == pytest.approx(
                    gbar_by_enumeration(cfg, k, size), rel=1e-13)

    def test_phi_single_pair_is_perfect_rate(self):
        cfg = random_config(np.random.default_rng(4), homogeneous=False)
        for k in range(cfg.n_pairs):
            assert phi(cfg, k, 1) == avg_rate_user(cfg, [k], k,
                                                   RateMode.PERFECT)

    def test_phi_independent_evaluation(self):
        cfg = random_config(np.random.default_rng(8), n_pairs=5,
                            homogeneous=False)
        pl = cfg.path_loss
        q = cfg.n_tx * cfg.n_rx - 1
        gain = 2.0 ** (cfg.bits / q)
        for k in range(5):
            gs = [1 / (1 + pl[k][k] * gain
                       / (pl[k][i] * cfg.threshold * cfg.streams))
                  for i in range(5) if i != k]
            alpha = pl[k][k] * cfg.power / cfg.streams
            expected = ((1 - 3 * cfg.probe_cost) * cfg.streams
                        * cfg.stream_rate
                        * math.exp(-cfg.noise_var * cfg.threshold / alpha)
                        * (1 - sum(gs) / 4) ** 2)
            assert phi(cfg, k, 3) == pytest.approx(expected, rel=1e-13)

    def test_phi_on_symmetric_config_is_first_order_rate(self):
        # mean-g rate equals the product approximation, not the exact rate
        cfg = reference_config(cross=0.05, bits=30)
        for size in range(1, 7):
            act = tuple(range(size))
            assert phi(cfg, 0, size) == pytest.approx(
                approx_rate(cfg, act, 0), rel=1e-14)
            assert phi(cfg, 0, size) == pytest.approx(
                symmetric_rate(cfg, size), rel=0.02)


class TestApproxRate:
    def test_single_pair(self):
        cfg = reference_config()
        for order in ApproxOrder:
            assert approx_rate(cfg, [2], 2, order) == avg_rate_user(
                cfg, [2], 2, RateMode.PERFECT)

    def test_orders_agree_on_symmetric_config(self):
        cfg = reference_config(cross=0.5, bits=20)
        for size in range(2, 7):
            act = tuple(range(size))
            assert approx_rate(cfg, act, 0, ApproxOrder.SECOND) == \
                approx_rate(cfg, act, 0, ApproxOrder.FIRST)

    def test_low_interference_accuracy(self):
        cfg = reference_config(cross=0.05, bits=30)
        assert g_factor(cfg, 0, 1) < 0.1
        for size in range(2, 7):
            act = tuple(range(size))
            exact = avg_rate_user(cfg, act, 0)
            assert abs(approx_rate(cfg, act, 0) - exact) / exact < 0.02

    def test_error_grows_with_interference(self):
        errs = []
        for cross in (0.02, 0.05, 0.1, 0.2, 0.5, 1.0):
            cfg = reference_config(cross=cross, bits=30)
            act = tuple(range(6))
            exact = avg_rate_user(cfg, act, 0)
            errs.append(abs(approx_rate(cfg, act, 0) - exact) / exact)
        assert all(a < b for a, b in zip(errs, errs[1:]))

    def test_second_order_tracks_first_on_mild_spread(self):
        rng = np.random.default_rng(9)
        cfg = random_config(rng, n_pairs=5, homogeneous=False)
        act = (0, 1, 2, 3)
        first = approx_rate(cfg, act, 0, ApproxOrder.FIRST)
        second = approx_rate(cfg, act, 0, ApproxOrder.SECOND)
        assert second == pytest.approx(first, rel=0.05)
