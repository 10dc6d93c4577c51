import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spacenet.config import Family, PodConfig, PriorSet, parse_config
from spacenet.pod import (
    Cause,
    Classification,
    KernelRangeError,
    em_fit,
    gaussian_kernel_exact,
    gaussian_kernel_poly,
    next_state,
    pod_epoch,
    required_terms,
    sampling_weights,
    soft_trim,
    spatial_loss,
    temporal_loss,
)
from spacenet.pod.kernels import stirling_terms, taylor_term_magnitude
from spacenet.signal import Label, Position, StateSample, build_layout, generate_field


def sample(rid, x, value, t=0.0, y=0.0):
    return StateSample(rid, "S0", Position(x, y, 0.0), t, {"signal_dbm": value})


def one_param(**kw):
    base = {"params": ["signal_dbm"], "theta_r": {"signal_dbm": 1.0}}
    base.update(kw)
    return PodConfig(**base)


# --- kernels -------------------------------------------------------------------


class TestKernels:
    def test_exact_values(self):
        assert gaussian_kernel_exact(0.0, 2.0) == 1.0
        assert gaussian_kernel_exact(2.0, 2.0) == pytest.approx(math.exp(-0.5), abs=1e-12)
        assert gaussian_kernel_exact(6.0, 2.0) == pytest.approx(0.011109, abs=1e-6)

    @pytest.mark.parametrize("n", [1, 5, 20])
    def test_poly_at_zero(self, n):
        assert gaussian_kernel_poly(0.0, 1.0, n) == 1.0

    def test_poly_twenty_terms_at_three_sigma(self):
        assert abs(gaussian_kernel_poly(3.0, 1.0, 20) - math.exp(-4.5)) < 1e-5

    def test_nineteenth_term(self):
        # x^(2k) / (2^k k!) at x=3, k=19
        oracle = 3.0**38 / (2.0**19 * math.factorial(19))
        assert taylor_term_magnitude(3.0, 19) == pytest.approx(oracle, rel=1e-12)
        assert oracle > 1e-5
        assert oracle == pytest.approx(2.1e-5, rel=0.05)

    def test_alternating_tail_bound(self):
        x = np.linspace(0.0, 3.0, 10_000)
        for n in (5, 12, 20):
            err = np.abs(gaussian_kernel_poly(x, 1.0, n) - np.exp(-x * x / 2))
            bound = x ** (2 * n) / (2.0**n * math.factorial(n))
            assert np.all(err <= bound + 1e-15)

    def test_range_guard(self):
        with pytest.raises(KernelRangeError):
            gaussian_kernel_poly(3.5, 1.0, 20)

    def test_required_terms(self):
        assert required_terms(1e-5, 3.0) == 20
        assert required_terms(0.5, 0.0) == 1
        assert required_terms(1e-8, 3.0) >= required_terms(1e-5, 3.0)
        assert stirling_terms(1e-5, 3.0) == 20


# --- soft trimming ---------------------------------------------------------------


class TestSoftTrim:
    def test_values(self):
        assert soft_trim(0.0, 1.0) == 0.0
        assert soft_trim(1.0, 1.0) == 0.0
        assert soft_trim(0.5, 1.0) == pytest.approx(0.28125)
        assert soft_trim(5.0, 1.0) == 0.0

    @settings(max_examples=300)
    @given(st.floats(-1e3, 1e3), st.floats(1e-3, 1e3))
    def test_properties(self, x, r):
        assert soft_trim(-x, r) == -soft_trim(x, r)
        assert abs(soft_trim(x, r)) <= abs(x)
        assert soft_trim(r, r) == pytest.approx(0.0, abs=1e-12 * r)

    def test_continuity(self):
        steps = []
        for n in (1_000, 10_000, 100_000):
            g = np.linspace(-2, 2, n)
            steps.append(np.max(np.abs(np.diff(soft_trim(g, 1.0)))))
        assert steps[0] > steps[1] > steps[2]
        assert steps[2] < 1e-4

    def test_bad_radius(self):
        with pytest.raises(ValueError):
            soft_trim(1.0, 0.0)


# --- sampling weights -----------------------------------------------------------------


def density_oracle(points, sigma):
    k = [[math.exp(-(p.distance_to(q) ** 2) / (2 * sigma**2)) for q in points] for p in points]
    inv = [1 / sum(row) for row in k]
    s = sum(inv)
    return [v * len(inv) / s for v in inv]


class TestSamplingWeights:
    def test_identical_positions(self):
        psi = sampling_weights([Position(1, 2)] * 5, 100.0)
        assert np.allclose(psi, psi[0])

    def test_far_apart(self):
        psi = sampling_weights([Position(i * 1e6, 0) for i in range(6)], 10.0)
        assert np.allclose(psi, 1.0, atol=1e-6)

    def test_isolated_point_weighs_more(self):
        rng = np.random.default_rng(2)
        pts = [Position(float(x), float(y)) for x, y in rng.normal(0, 50, (10, 2))] + [Position(5000.0, 0.0)]
        psi = sampling_weights(pts, 500.0)
        assert np.allclose(psi, density_oracle(pts, 500.0), rtol=1e-10)
        assert np.all(psi[-1] > psi[:-1])


# --- spatial and temporal loss -------------------------------------------------------


def brute_spatial(samples, cfg):
    pts = [s.position for s in samples]
    psi = density_oracle(pts, cfg.sigma_alpha)
    out = []
    for i, s in enumerate(samples):
        num = den = 0.0
        for j, q in enumerate(samples):
            d = s.position.distance_to(q.position)
            if j == i or d > cfg.neighborhood_radius:
                continue
            w = math.exp(-(d * d) / (2 * cfg.sigma_alpha**2)) * psi[j]
            num += w * q.alpha["signal_dbm"]
            den += w
        dev = s.alpha["signal_dbm"] - num / den
        u = dev / cfg.theta_r["signal_dbm"]
        rho = dev * (1 - u * u) ** 2 if abs(u) <= 1 else 0.0
        out.append(cfg.gamma_s * abs(rho))
    return out


class TestSpatialLoss:
    def test_constant_field(self):
        cfg = one_param()
        res = spatial_loss([sample(f"R{i}", 100.0 * i, 7.0) for i in range(5)], cfg)
        assert all(v < 1e-12 for v in res.loss.values())

    def test_three_points_against_oracle(self):
        cfg = one_param(gamma_s=1.3)
        s = [sample("A", 0.0, 10.0), sample("B", 1000.0, 10.0), sample("C", 2000.0, 10.4)]
        res = spatial_loss(s, cfg)
        want = brute_spatial(s, cfg)
        assert [res.loss[r] for r in "ABC"] == pytest.approx(want, rel=1e-12)
        # C's neighbours all sit at 10, so its deviation is the whole offset
        assert res.loss["C"] == pytest.approx(1.3 * 0.4 * (1 - 0.16) ** 2)

    def test_outlier_trimmed_but_deviation_kept(self):
        cfg = one_param()
        rng = np.random.default_rng(0)
        s = [sample(f"R{i}", float(x), 5.0, y=float(y)) for i, (x, y) in enumerate(rng.uniform(-500, 500, (50, 2)))]
        s.append(sample("X", 0.0, 7.0))
        res = spatial_loss(s, cfg)
        assert res.loss["X"] == 0.0
        assert res.deviation["X"]["signal_dbm"] == pytest.approx(2.0)

    def test_isolated(self):
        cfg = one_param()
        res = spatial_loss([sample("A", 0.0, 1.0), sample("B", 10.0, 1.0), sample("Z", 1e6, 3.0)], cfg)
        assert res.isolated == {"Z"}
        assert "Z" not in res.loss

    @given(st.floats(-50, 50))
    @settings(max_examples=30)
    def test_translation_invariant(self, c):
        cfg = one_param()
        rng = np.random.default_rng(4)
        xs, vs = rng.uniform(0, 3000, 12), rng.normal(0, 0.3, 12)
        base = spatial_loss([sample(f"R{i}", x, v) for i, (x, v) in enumerate(zip(xs, vs))], cfg)
        moved = spatial_loss([sample(f"R{i}", x, v + c) for i, (x, v) in enumerate(zip(xs, vs))], cfg)
        for r in base.loss:
            assert moved.loss[r] == pytest.approx(base.loss[r], abs=1e-9)


class TestTemporalLoss:
    def test_values(self):
        cfg = one_param(gamma_t=1.0)
        assert temporal_loss(sample("A", 0, 3.0, t=1), sample("A", 0, 3.0, t=0), cfg) == 0.0
        assert temporal_loss(sample("A", 0, 3.5, t=1), sample("A", 0, 3.0, t=0), cfg) == pytest.approx(0.28125)
        assert temporal_loss(sample("A", 0, 8.0, t=1), sample("A", 0, 3.0, t=0), cfg) == 0.0

    def test_cold_start(self):
        assert temporal_loss(sample("A", 0, 3.0), None, one_param()) == 0.0


# --- EM -----------------------------------------------------------------------------


class TestEm:
    def test_single_gaussian_is_mle(self):
        x = np.random.default_rng(5).normal(2.0, 3.0, 2000)
        res = em_fit(list(x), PriorSet(n_clusters=1, component_families=[Family.GAUSSIAN]))
        p = res.components[0].params
        assert p["mu"] == pytest.approx(x.mean(), rel=0.05)
        assert p["var"] == pytest.approx(x.var(), rel=0.05)

    def test_offset_minority(self):
        rng = np.random.default_rng(6)
        x = np.concatenate([rng.normal(0, 1, 900), np.full(100, 10.0)])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            res = em_fit(list(x), PriorSet(), trim_radius=4.0)
        minority = 1 - res.valid_index
        assert np.all(res.responsibilities[900:, minority] >= 0.99)

    def test_log_likelihood_monotone(self):
        rng = np.random.default_rng(7)
        x = np.concatenate([rng.normal(0, 1, 500), rng.normal(6, 2, 80)])
        res = em_fit(list(x), PriorSet(), trim_radius=3.0, theta_eps=1e-12, max_iters=50)
        ll = np.array(res.log_likelihood)
        assert np.all(np.diff(ll) >= -1e-9 * np.abs(ll[:-1]))

    def test_ids_kept(self):
        res = em_fit([("a", 0.1), ("b", -0.2), ("c", 0.05)], PriorSet(n_clusters=1, component_families=[Family.GAUSSIAN]))
        assert res.ids == ["a", "b", "c"]

    def test_too_few(self):
        with pytest.raises(ValueError):
            em_fit([1.0], PriorSet())


# --- the epoch ----------------------------------------------------------------------


def field(**kw):
    cfg = parse_config(kw)
    return cfg, generate_field(cfg, 0.0, build_layout(cfg))


class TestPodEpoch:
    def test_exactly_consistent_field(self):
        _, s = field(n_receivers=80, geometry={"radius_m": 0.05, "field_sigma": 0.0, "temporal_sigma": 0.0})
        rep = pod_epoch(s, None, PodConfig())
        assert rep.total_loss < 1e-9
        assert rep.anomalous() == []

    def test_offset_receivers_flagged(self):
        cfg, s = field(seed=5, n_receivers=400, fraud_spec=[{"kind": "RFraud", "fraction": 0.1, "magnitude": 10.0}])
        rep = pod_epoch(s, None, cfg.pod_config)
        fraud = {x.receiver_id for x in s if x.honesty_label == Label.RFRAUD}
        assert set(rep.anomalous()) == fraud
        for x in s:
            if x.receiver_id not in fraud:
                got = rep.per_receiver[x.receiver_id].alpha_hat["signal_dbm"]
                assert abs(got - x.truth["signal_dbm"]) <= cfg.geometry.field_sigma
            else:
                assert rep.per_receiver[x.receiver_id].cause == Cause.FRAUD

    def test_warm_start_is_faster(self):
        cfg, s = field(seed=6, n_receivers=300, fraud_spec=[{"kind": "RFraud", "fraction": 0.1}])
        cold = pod_epoch(s, None, cfg.pod_config)
        warm = pod_epoch(s, next_state(cold, s), cfg.pod_config)
        assert warm.iterations_used <= cold.iterations_used / 2

    def test_deterministic(self):
        cfg, s = field(seed=7, n_receivers=150, fraud_spec=[{"kind": "RFraud", "fraction": 0.1}])
        assert pod_epoch(s, None, cfg.pod_config).to_json() == pod_epoch(s, None, cfg.pod_config).to_json()

    @pytest.mark.parametrize("c", [0.01, 3.0, 250.0])
    def test_classification_ignores_loss_scale(self, c):
        cfg, s = field(seed=8, n_receivers=200, fraud_spec=[{"kind": "RFraud", "fraction": 0.15}])
        base = pod_epoch(s, None, cfg.pod_config)
        scaled = cfg.pod_config.model_copy(update={"gamma_s": c * cfg.pod_config.gamma_s, "gamma_t": c * cfg.pod_config.gamma_t})
        assert pod_epoch(s, None, scaled).anomalous() == base.anomalous()

    def test_rain_is_objective(self):
        rain = {"center_x": 1000.0, "center_y": 0.0, "radius_m": 1500.0, "rate_db_per_km": 2.0}
        cfg, s = field(seed=15, n_receivers=200, fraud_spec=[{"kind": "ObjectiveFailure", "rain": rain}])
        rep = pod_epoch(s, None, cfg.pod_config)
        wet = [x.receiver_id for x in s if x.honesty_label == Label.OBJECTIVE]
        assert wet
        for r in wet:
            assert rep.per_receiver[r].classification == Classification.ANOMALOUS
            assert rep.per_receiver[r].cause == Cause.OBJECTIVE

    def test_report_round_trip(self):
        cfg, s = field(seed=9, n_receivers=60)
        rep = pod_epoch(s, None, cfg.pod_config, epoch_index=4)
        again = type(rep).from_json(rep.to_json())
        assert again.to_json() == rep.to_json()

    def test_empty(self):
        rep = pod_epoch([], None, PodConfig())
        assert rep.per_receiver == {} and rep.converged
