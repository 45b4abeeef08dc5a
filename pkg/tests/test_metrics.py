import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from trex.metrics import (
    MetricError,
    auc,
    convergence_index,
    cr,
    curve_report,
    episode_kpis,
    fpd,
    lsi,
    pdi,
    rauc,
    read_curve,
)
from trex.simcore import TripRecord


def trip(depart, arrival, waiting=0.0, freeflow=None, status="arrived", teleports=0, reroutes=0):
    ff = (arrival - depart) if freeflow is None and arrival is not None else (freeflow or 0.0)
    return TripRecord("v", "a", "b", "novice", depart, arrival, status, waiting, 0, 0.0, ff, reroutes, teleports, [])


curves = st.lists(st.floats(min_value=1.0, max_value=1e4, allow_nan=False), min_size=2, max_size=60)


class TestLSI:
    def test_constant(self):
        assert lsi([5.0] * 10) == 0.0

    def test_hand_example(self):
        assert lsi([100, 110, 100]) == pytest.approx(100.0)

    @given(curves, st.floats(min_value=0.1, max_value=10))
    def test_homogeneous_degree_two(self, c, k):
        assert lsi([k * x for x in c]) == pytest.approx(k * k * lsi(c), rel=1e-9)

    def test_order_matters(self):
        c = [1.0, 5.0, 2.0, 8.0, 3.0]
        assert lsi(c) != lsi(sorted(c))

    def test_too_short(self):
        with pytest.raises(MetricError):
            lsi([1.0])


class TestFPD:
    def test_final_is_best(self):
        assert fpd([120, 110, 100]) == 0.0

    def test_hand_example(self):
        assert fpd([130, 100, 110]) == pytest.approx(0.1)

    @given(curves)
    def test_nonnegative(self, c):
        assert fpd(c) >= 0

    def test_zero_best(self):
        with pytest.raises(MetricError):
            fpd([1.0, 0.0, 2.0])


class TestCR:
    def test_flat(self):
        assert cr([7.0] * 20) == 0.0

    def test_stabilises_at_fifty(self):
        c = [200.0 - t for t in range(50)] + [100.0] * 51
        assert convergence_index(c) == 50
        assert cr(c) == pytest.approx(0.02)

    def test_worsening_negative(self):
        assert cr([100.0 + t for t in range(30)]) < 0

    def test_band_is_relative(self):
        # 104 is within 5 % of 100, 106 is not
        assert convergence_index([106.0, 104.0, 100.0]) == 1
        assert convergence_index([90.0, 106.0, 100.0, 100.0], 0.05) == 2

    def test_epsilon_positive(self):
        with pytest.raises(MetricError):
            cr([1.0, 2.0], 0.0)


class TestAUC:
    def test_constant(self):
        assert auc([100.0] * 101) == pytest.approx(10_000.0)

    def test_zero(self):
        assert auc([0.0] * 5) == 0.0

    @given(curves, st.floats(min_value=0.1, max_value=10))
    def test_linear(self, c, k):
        assert auc([k * x for x in c]) == pytest.approx(k * auc(c), rel=1e-9)


class TestRAUCAndPDI:
    def test_identical(self):
        assert rauc([1, 2, 3], [1, 2, 3]) == 0.0

    def test_scaled(self):
        base = [100.0, 90.0, 80.0]
        assert rauc(base, [1.2 * x for x in base]) == pytest.approx(0.2)

    @given(curves, curves)
    def test_ratio_identity(self, a, b):
        assert rauc(a, b) == pytest.approx(-rauc(b, a) * auc(b) / auc(a), rel=1e-9, abs=1e-12)

    def test_zero_base(self):
        with pytest.raises(MetricError):
            rauc([0.0, 0.0], [1.0, 1.0])

    @pytest.mark.parametrize("a,b,expected", [(100, 100, 0.0), (100, 150, 0.5), (100, 80, -0.2)])
    def test_pdi(self, a, b, expected):
        assert pdi(a, b) == pytest.approx(expected)

    def test_pdi_zero(self):
        with pytest.raises(MetricError):
            pdi(0.0, 1.0)


def test_metrics_match_oracle_on_random_curves():
    rng = random.Random(7)
    for _ in range(1000):
        n = rng.randint(2, 80)
        c = [rng.uniform(10, 500) for _ in range(n)]
        d = [rng.uniform(10, 500) for _ in range(n)]
        eps = rng.choice([0.01, 0.05, 0.2])
        assert abs(lsi(c) - oracles.lsi(c)) <= 1e-9 * max(1, oracles.lsi(c))
        assert abs(fpd(c) - oracles.fpd(c)) <= 1e-9
        assert abs(cr(c, eps) - oracles.cr(c, eps)) <= 1e-9
        assert abs(auc(c) - oracles.auc(c)) <= 1e-9 * oracles.auc(c)
        assert abs(rauc(c, d) - oracles.rauc(c, d)) <= 1e-9
        assert abs(pdi(c[0], d[0]) - oracles.pdi(c[0], d[0])) <= 1e-9


def test_metrics_are_pure():
    c = [3.0, 2.0, 4.0, 1.0]
    assert [lsi(c), fpd(c), cr(c), auc(c)] == [lsi(c), fpd(c), cr(c), auc(c)]
    assert c == [3.0, 2.0, 4.0, 1.0]


class TestEpisodeKPIs:
    def test_free_flow_vehicle(self):
        s = episode_kpis([trip(200, 260)], horizon=3600)
        assert (s.avg_delay, s.avg_waiting, s.avg_travel_time) == (0.0, 0.0, 60.0)

    def test_red_light_lower_bound(self):
        s = episode_kpis([trip(200, 290, waiting=30, freeflow=60)], horizon=3600)
        assert s.avg_waiting >= 30 and s.avg_delay >= 30

    def test_scripted_three_vehicle_log(self):
        log = [
            trip(150, 250, waiting=10, freeflow=80),
            trip(300, 420, waiting=25, freeflow=90),
            trip(3500, None, waiting=40, freeflow=30, status="running"),
            trip(50, 120, waiting=0, freeflow=70),  # before warm-up
            trip(400, None, status="removed", teleports=1),
        ]
        s = episode_kpis(log, horizon=3600, warmup=100, avg_queue=0.5, seed=3, scenario="x")
        # kept: 100 s, 120 s and the censored 100 s
        assert s.vehicles == 3 and s.arrived == 2
        assert s.avg_travel_time == pytest.approx((100 + 120 + 100) / 3)
        assert s.avg_waiting == pytest.approx((10 + 25 + 40) / 3)
        assert s.avg_delay == pytest.approx((20 + 30 + 70) / 3)
        assert s.teleports == 1 and s.avg_queue == 0.5 and s.seed == 3

    def test_empty_log(self):
        with pytest.raises(MetricError):
            episode_kpis([], horizon=3600)


def test_curve_csv_roundtrip(tmp_path):
    p = tmp_path / "curve.csv"
    p.write_text("episode,indicator,phase\n0,10.5,train\n1,9.0,train\n")
    assert read_curve(p) == [10.5, 9.0]
    rep = curve_report([10.5, 9.0], baseline=[10.5, 9.0])
    assert rep["rauc"] == 0.0 and rep["points"] == 2


def test_read_curve_missing_column(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("episode,value\n0,1\n")
    with pytest.raises(MetricError):
        read_curve(p)
