import math

import numpy as np
import pytest

from rsbeam.core import BeamformerSet, SystemConfig
from rsbeam.channels import sample_rayleigh
from rsbeam.fbl_math import fbl_rate, q_inv
from rsbeam.algorithms import CccpSettings
from rsbeam.schemes import (
    SchemeId,
    certified_min_rate,
    decodable_common_rate,
    feasibility_count,
    run_scheme,
    sampled_worst_case,
    scheme_penalties,
    worst_case_rate_lb,
)

SETTINGS = CccpSettings(max_iters=40)


def random_design(cfg, channels, seed):
    rng = np.random.default_rng(seed)
    w_c = rng.standard_normal(cfg.M) + 1j * rng.standard_normal(cfg.M)
    w_k = rng.standard_normal((cfg.K, cfg.M)) + 1j * rng.standard_normal((cfg.K, cfg.M))
    b = BeamformerSet(w_c, w_k, rng.uniform(0, 0.1, cfg.K))
    return b.scaled(math.sqrt(cfg.P_max / b.total_power()))


class TestWorstCaseRateLb:
    def test_zero_radius_equals_nominal(self):
        cfg = SystemConfig(M=4, K=2, L=1000, epsilon=1e-5, P_max=100.0,
                           sigma2=0.05, delta=0.0)
        channels = sample_rayleigh(4, 2, 3, delta=0.0)
        b = random_design(cfg, channels, 0)
        d = q_inv(1e-5) / math.sqrt(1000)
        for k in range(2):
            h = channels.h_hat[k]
            num = abs(np.vdot(h, b.w_c)) ** 2
            den = sum(abs(np.vdot(h, b.w_k[j])) ** 2 for j in range(2)) + 0.05
            nominal = fbl_rate(num / den, d)
            got = worst_case_rate_lb(b, channels, cfg, ("common_at_k", k))
            assert got == pytest.approx(nominal, abs=1e-10)

    def test_zero_signal_clamps_to_zero_rate(self):
        cfg = SystemConfig(M=4, K=2, L=1000, epsilon=1e-5, P_max=100.0,
                           sigma2=0.05, delta=0.01)
        channels = sample_rayleigh(4, 2, 3, delta=0.01)
        b = random_design(cfg, channels, 0)
        zeroed = BeamformerSet(np.zeros(4), b.w_k, b.c)
        got = worst_case_rate_lb(zeroed, channels, cfg, ("common_at_k", 0))
        assert got == 0.0

    def test_bounded_by_sampling_oracle(self):
        d = q_inv(1e-5) / math.sqrt(1000)
        for trial in range(20):
            cfg = SystemConfig(M=3, K=2, L=1000, epsilon=1e-5, P_max=50.0,
                               sigma2=0.05, delta=0.05)
            channels = sample_rayleigh(3, 2, 100 + trial, delta=0.05)
            b = random_design(cfg, channels, trial)
            for stream in [("common_at_k", 0), ("common_at_k", 1),
                           ("private_at_k", 0), ("private_at_k", 1)]:
                lb = worst_case_rate_lb(b, channels, cfg, stream)
                sampled = sampled_worst_case(b, channels, cfg, stream, 5000, trial)
                assert lb <= sampled + 1e-9


class TestSampledWorstCase:
    def test_zero_radius_equals_nominal(self):
        cfg = SystemConfig(M=4, K=2, L=1000, epsilon=1e-5, P_max=100.0,
                           sigma2=0.05, delta=0.0)
        channels = sample_rayleigh(4, 2, 3, delta=0.0)
        b = random_design(cfg, channels, 1)
        a = sampled_worst_case(b, channels, cfg, ("private_at_k", 0), 10, 0)
        c = sampled_worst_case(b, channels, cfg, ("private_at_k", 0), 1000, 5)
        assert a == pytest.approx(c, abs=1e-12)

    def test_nonincreasing_in_nested_samples(self):
        cfg = SystemConfig(M=4, K=2, L=1000, epsilon=1e-5, P_max=100.0,
                           sigma2=0.05, delta=0.1)
        channels = sample_rayleigh(4, 2, 3, delta=0.1)
        b = random_design(cfg, channels, 2)
        from rsbeam.channels import perturbation_batch

        errors = perturbation_batch(0.1, 4, 2000, 9)
        h = channels.h_hat[0]
        d = q_inv(1e-5) / math.sqrt(1000)
        vals = []
        for n in [100, 500, 2000]:
            trials = h[None, :] + errors[:n]
            num = np.abs(trials.conj() @ b.w_k[0]) ** 2
            den = np.abs(trials.conj() @ b.w_k[1]) ** 2 + 0.05
            xi = num / den
            rates = np.log1p(xi) - d * np.sqrt(1 - (1 + xi) ** -2.0)
            vals.append(rates.min())
        assert vals[0] >= vals[1] >= vals[2]


class TestRunScheme:
    def small(self):
        cfg = SystemConfig(M=4, K=2, L=1000, epsilon=1e-5, P_max=100.0,
                           sigma2=0.05, delta=0.01)
        channels = sample_rayleigh(4, 2, 17, delta=cfg.delta)
        return cfg, channels

    def test_no_split_scheme_has_zero_common_rate(self):
        cfg, channels = self.small()
        out = run_scheme("RB-NoRS-FBL", cfg, channels, SETTINGS, seed=1)
        assert out.result.common_rate_sum == 0.0
        assert np.all(out.beamformers.c == 0)
        assert np.all(out.beamformers.w_c == 0)
        assert out.result.feasible

    def test_scheme_dominance_chain(self):
        cfg, channels = self.small()
        rs = run_scheme("RB-RS-FBL", cfg, channels, SETTINGS, seed=1).result
        nors = run_scheme("RB-NoRS-FBL", cfg, channels, SETTINGS, seed=1).result
        ifbl = run_scheme("RB-RS-IFBL", cfg, channels, SETTINGS, seed=1).result
        assert rs.min_rate >= nors.min_rate - 1e-6
        assert ifbl.min_rate >= rs.min_rate - 1e-6

    def test_min_rate_decomposition(self):
        cfg, channels = self.small()
        out = run_scheme("RB-RS-FBL", cfg, channels, SETTINGS, seed=2)
        d_c, d_p = scheme_penalties(cfg, SchemeId.RB_RS_FBL)
        recomputed = certified_min_rate(out.beamformers, channels, cfg, d_c, d_p)
        assert out.result.min_rate == pytest.approx(recomputed, abs=1e-6)

    def test_common_rate_certified_decodable(self):
        cfg, channels = self.small()
        out = run_scheme("RB-RS-FBL", cfg, channels, SETTINGS, seed=3)
        d_c, _ = scheme_penalties(cfg, SchemeId.RB_RS_FBL)
        room = decodable_common_rate(out.beamformers, channels, cfg, d_c)
        assert float(np.sum(out.beamformers.c)) <= room + 1e-9

    def test_ifbl_uses_shannon_penalties(self):
        d_c, d_p = scheme_penalties(
            SystemConfig(M=4, K=2, L=1000, epsilon=1e-5, P_max=1.0, sigma2=1.0, delta=0.0),
            SchemeId.RB_RS_IFBL,
        )
        assert np.all(d_c == 0) and np.all(d_p == 0)

    def test_non_robust_design_feasible_without_uncertainty(self):
        cfg = SystemConfig(M=4, K=2, L=1000, epsilon=1e-5, P_max=100.0,
                           sigma2=0.05, delta=0.0)
        channels = sample_rayleigh(4, 2, 23, delta=0.0)
        out = run_scheme("NoRB-RS-FBL", cfg, channels, SETTINGS, seed=1)
        assert out.result.feasible

    def test_warm_candidate_floors_result(self):
        cfg, channels = self.small()
        first = run_scheme("RB-RS-FBL", cfg, channels, SETTINGS, seed=4)
        again = run_scheme("RB-RS-FBL", cfg, channels, SETTINGS, seed=5,
                           warm=first.beamformers)
        assert again.result.min_rate >= first.result.min_rate - 1e-9

    def test_unknown_scheme_rejected(self):
        cfg, channels = self.small()
        with pytest.raises(ValueError):
            run_scheme("RB-XX-FBL", cfg, channels, SETTINGS, seed=1)


class TestFeasibilityCount:
    def test_zero_radius_all_feasible(self):
        cfg = SystemConfig(M=4, K=2, L=1000, epsilon=1e-5, P_max=100.0,
                           sigma2=0.05, delta=0.0)
        robust = feasibility_count("RB-RS-FBL", cfg, 3, seed=31, settings=SETTINGS)
        non_robust = feasibility_count("NoRB-RS-FBL", cfg, 3, seed=31, settings=SETTINGS)
        assert robust == (3, 3)
        assert non_robust == (3, 3)

    def test_input_validation(self):
        cfg = SystemConfig(M=4, K=2, L=1000, epsilon=1e-5, P_max=100.0,
                           sigma2=0.05, delta=0.0)
        with pytest.raises(ValueError):
            feasibility_count("RB-RS-FBL", cfg, 0, seed=1)
