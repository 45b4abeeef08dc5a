import math
import random

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from trex import behavior as bh
from trex.incidents import Incident
from trex.netmodel import generate_grid
from trex.routing import cost_to_go

probs = st.floats(min_value=0.0, max_value=1.0)


class TestFTI:
    def test_first_broadcast(self):
        assert bh.p_fti(250, 100, [300], 0.7, 0.5) == pytest.approx(0.35)

    def test_second_broadcast(self):
        assert bh.p_fti(550, 100, [300, 600], 0.7, 0.5) == pytest.approx(0.175)

    def test_no_broadcast_during_traversal(self):
        assert bh.p_fti(310, 100, [300, 600], 0.7, 0.5) == 0.0

    def test_broadcast_schedule(self):
        assert bh.fti_broadcasts(1000, 2000, 300) == [1300, 1600, 1900]
        assert bh.fti_broadcasts(1000, 1200, 300) == []

    @given(st.floats(0, 5000), st.floats(0, 5000), probs, probs)
    def test_rho_nondecreasing(self, t1, t2, mu, on):
        b = bh.fti_broadcasts(0, 5000, 300)
        lo, hi = sorted((t1, t2))
        assert bh.rho_fti(lo, b, mu, on) <= bh.rho_fti(hi, b, mu, on) + 1e-12


class TestFPI:
    def test_no_sign(self):
        assert bh.p_fpi(0, 1000, 500, 2000, False, 600) == 0.0

    def test_before_activation(self):
        assert bh.p_fpi(0, 1000, 500, 2000, True, 1100) == 0.0

    def test_symmetry_point(self):
        assert bh.p_fpi(200, 1000, 500, 2000, True, 600, 200, 2) == pytest.approx(0.5)

    def test_hand_value(self):
        assert bh.p_fpi(400, 1000, 500, 2000, True, 600, 200, 2) == pytest.approx(0.2)

    def test_after_incident_distance_grows(self):
        during = bh.p_fpi(100, 1500, 500, 2000, True, 600, mean_speed=10)
        after = bh.p_fpi(100, 2100, 500, 2000, True, 600, mean_speed=10)
        # 100 s after clearance adds 1000 m of effective distance
        assert after == pytest.approx(1 / (1 + (1100 / 200) ** 2))
        assert after < during


class TestOS:
    def test_before_publication(self):
        assert bh.p_os(100, 50, 500) == 0.0

    def test_rho_at_sigma(self):
        assert bh.rho_os(1100, 500, 0.8, 600) == pytest.approx(0.8 * (1 - math.exp(-0.5)))
        assert bh.rho_os(1100, 500, 0.8, 600) == pytest.approx(0.3148, abs=1e-4)

    def test_asymptote(self):
        assert bh.rho_os(1e7, 0, 0.8, 600) == pytest.approx(0.8)


class TestOB:
    def test_below_threshold(self):
        assert bh.p_ob(100, 20, 120) == 0.0

    def test_hand_value(self):
        # delay beyond the threshold is one minute at 0.5 per minute
        assert bh.p_ob(20 + 120 + 60, 20, 120, 0.5 / 60) == pytest.approx(0.5)

    def test_clamped(self):
        assert bh.p_ob(1e6, 20) == 1.0

    def test_literal_form_can_be_negative(self):
        assert bh.p_ob(200, 20, 120, 0.5 / 60, literal=True) < 0


class TestAware:
    def test_zero(self):
        assert bh.p_aware([0, 0, 0, 0]) == 0.0

    def test_absorbing(self):
        assert bh.p_aware([0.2, 1.0, 0.3, 0.0]) == 1.0

    def test_hand_value(self):
        assert bh.p_aware([0.5, 0.5, 0, 0]) == pytest.approx(0.75)

    @given(st.lists(probs, min_size=4, max_size=4), st.integers(0, 3), probs)
    def test_monotone(self, comps, i, bump):
        higher = list(comps)
        higher[i] = max(comps[i], bump)
        assert bh.p_aware(higher) >= bh.p_aware(comps) - 1e-12


class TestRerouteDecision:
    def test_gain_identical(self):
        assert bh.expected_gain([0.3, 0.7], [0.3, 0.7]) == pytest.approx(0.0)

    def test_gain_orthogonal(self):
        assert bh.expected_gain([0, 1], [1, 0]) == pytest.approx(1.0)

    def test_gain_hand(self):
        assert bh.expected_gain([0.5, 0.5], [1, 0]) == pytest.approx(1 - math.sqrt(0.5))

    def test_gain_zero_vector(self):
        with pytest.raises(ValueError):
            bh.expected_gain([0, 0], [1, 0])

    def test_loss_identical(self):
        assert bh.avoided_loss([1, 0], [1, 0], [10, 20]) == 0.0

    def test_loss_hand(self):
        assert bh.avoided_loss([0, 1], [1, 0], [100, 50]) == pytest.approx(-0.5)

    def test_loss_uniform_w(self):
        assert bh.avoided_loss([0.2, 0.8], [1, 0], [40, 40]) == pytest.approx(0.0)

    def test_loss_zero_denominator(self):
        with pytest.raises(ValueError):
            bh.avoided_loss([0, 1], [1, 0], [0, 50])

    def test_kappa_defaults(self):
        assert bh.reroute_probability(0, 0) == pytest.approx(1 / (1 + math.exp(5)))
        assert bh.reroute_probability(0, 0) == pytest.approx(0.00669, abs=1e-5)
        assert bh.reroute_probability(1, 1) == pytest.approx(0.5)

    def test_kappa_limit(self):
        assert bh.reroute_probability(1, 1, beta_0=-1e6) == 0.0

    @given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0.01, 1))
    def test_kappa_increasing(self, dp, dw, step):
        assert bh.reroute_probability(dp + step, dw) > bh.reroute_probability(dp, dw) or bh.reroute_probability(dp, dw) == 1.0
        assert bh.reroute_probability(dp, dw + step) > bh.reroute_probability(dp, dw) or bh.reroute_probability(dp, dw) == 1.0


class TestCongestionFactors:
    def test_diamond_split(self):
        assert bh.congestion_probabilities([100, 50]) == pytest.approx([1 / 3, 2 / 3])

    def test_blocked_option_gets_zero(self):
        assert bh.congestion_probabilities([math.inf, 50]) == [0.0, 1.0]

    def test_transition_probs_sum_to_one(self):
        net = generate_grid(2, 2)
        costs = {e: 10.0 for e in net.edges}
        w = cost_to_go(net, costs, "n1_1-bottom1")
        tp = bh.transition_probs(net, w, "top0-n0_0", "n0_0-n1_0")
        assert sum(tp.actual) == pytest.approx(1.0)
        assert tp.typical.count(1.0) == 1 and sum(tp.typical) == 1.0

    def test_replan_avoids_blocked_next(self):
        net = generate_grid(2, 2)
        costs = {e: 14.4 for e in net.edges}
        costs["n0_0-n1_0"] = math.inf
        route = ["top0-n0_0", "n0_0-n1_0", "n1_0-n1_1", "n1_1-bottom1"]
        rng = np.random.default_rng(0)
        for _ in range(50):
            new = bh.replan_route(net, route, 0, costs, rng)
            assert new[1] != "n0_0-n1_0"
            assert new[0] == route[0] and new[-1] == route[-1]
            assert all(b in net.successors[a] for a, b in zip(new, new[1:]))

    def test_replan_on_last_edge(self):
        net = generate_grid(1, 1)
        assert bh.replan_route(net, ["top0-n0_0", "n0_0-bottom0"], 1, {e: 1.0 for e in net.edges}, np.random.default_rng(0)) is None


class TestSSD:
    @pytest.mark.parametrize("v,expected", [(0, 0.0), (50, 63.426), (100, 184.206)])
    def test_values(self, v, expected):
        assert bh.ssd(v) == pytest.approx(expected, abs=1e-3)

    @given(st.floats(0, 200), st.floats(0.01, 50))
    def test_strictly_increasing(self, v, dv):
        assert bh.ssd(v + dv) > bh.ssd(v)

    def test_cap_inside_ssd(self):
        cap, flag = bh.speed_adaptation(30.0, 10.0, False)
        assert flag and cap == pytest.approx(2.222, abs=1e-3)

    def test_no_cap_outside(self):
        assert bh.speed_adaptation(500.0, 10.0, False) == (None, False)

    def test_cap_latched_until_passed(self):
        assert bh.speed_adaptation(500.0, 1.0, True)[1]
        assert bh.speed_adaptation(-1.0, 1.0, True) == (None, False)


def test_channel_formulas_match_oracles():
    rng = random.Random(11)
    for _ in range(1000):
        mu, on = rng.random(), rng.random()
        t0 = rng.uniform(0, 2000)
        b = bh.fti_broadcasts(t0, t0 + rng.uniform(0, 3000), rng.choice([60.0, 300.0]))
        t, te = rng.uniform(0, 6000), rng.uniform(0, 600)
        assert abs(bh.p_fti(t, te, b, mu, on) - oracles.p_fti(t, te, b, mu, on)) <= 1e-9

        dist, ts = rng.uniform(0, 3000), rng.uniform(0, 3000)
        te_ = ts + rng.uniform(1, 3000)
        args = (dist, rng.uniform(0, 7000), ts, te_, rng.random() < 0.7, ts + 600, rng.uniform(50, 400), rng.uniform(0.5, 4), rng.uniform(5, 20))
        assert abs(bh.p_fpi(*args) - oracles.p_fpi(*args)) <= 1e-9

        args = (rng.uniform(0, 5000), rng.uniform(0, 800), rng.uniform(0, 3000), rng.random(), rng.uniform(10, 1200))
        assert abs(bh.p_os(*args) - oracles.p_os(*args)) <= 1e-9

        args = (rng.uniform(0, 900), rng.uniform(0, 60), rng.uniform(0, 300), rng.uniform(0, 0.05))
        assert abs(bh.p_ob(*args) - oracles.p_ob(*args)) <= 1e-9

        comps = [rng.random() for _ in range(4)]
        assert abs(bh.p_aware(comps) - oracles.p_aware(comps)) <= 1e-9

        n = rng.randint(1, 5)
        p = [rng.random() for _ in range(n)]
        q = [0.0] * n
        q[rng.randrange(n)] = 1.0
        w = [rng.uniform(1, 500) for _ in range(n)]
        assert abs(bh.expected_gain(p, q) - oracles.expected_gain(p, q)) <= 1e-9
        assert abs(bh.avoided_loss(p, q, w) - oracles.avoided_loss(p, q, w)) <= 1e-9
        dp, dw = rng.uniform(0, 2), rng.uniform(-1, 3)
        assert abs(bh.reroute_probability(dp, dw) - oracles.reroute_probability(dp, dw)) <= 1e-9

        v = rng.uniform(0, 150)
        assert abs(bh.ssd(v) - oracles.ssd(v)) <= 1e-9


class TestInfoEnvironment:
    def test_vms_coverage_and_determinism(self):
        net = generate_grid(2, 2)
        a = bh.vms_edges(net, 0.4, 5)
        assert len(a) == round(0.4 * len(net.edges))
        assert a == bh.vms_edges(net, 0.4, 5)

    def test_probabilities_in_unit_interval(self):
        net = generate_grid(2, 2)
        env = bh.InfoEnvironment(net, bh.ICMConfig(), 1)
        inc = [Incident("n0_0-n0_1", 50.0, (0,), 600.0, 1800.0), Incident("n1_1-n1_0", 30.0, (0, 1), 900.0, 600.0)]
        rng = random.Random(3)
        for _ in range(300):
            e = rng.choice(sorted(net.edges))
            t = rng.uniform(0, 3600)
            out = env.channel_probabilities(e, t, t + rng.uniform(5, 600), inc)
            assert set(out) == set(bh.CHANNELS)
            assert all(0.0 <= p <= 1.0 for p in out.values())

    def test_disabled_channels_are_zero(self):
        net = generate_grid(1, 1)
        cfg = bh.ICMConfig(fti=False, fpi=False, os=False, ob=False)
        env = bh.InfoEnvironment(net, cfg, 1)
        inc = [Incident("top0-n0_0", 50.0, (0,), 600.0, 1800.0)]
        assert all(p == 0.0 for p in env.channel_probabilities("top0-n0_0", 1000, 1500, inc).values())


def test_icm_config_validation():
    with pytest.raises(ValueError):
        bh.ICMConfig(mu_fti=1.5)
    with pytest.raises(ValueError):
        bh.ICMConfig.from_dict({"bogus": 1})
    cfg = bh.ICMConfig.from_dict({"routing": "astar"})
    assert bh.ICMConfig.from_dict(cfg.to_dict()) == cfg
