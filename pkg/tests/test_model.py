import math
from dataclasses import asdict, replace

import numpy as np
import pytest

from qkdlink import model
from qkdlink import polstate as ps
from qkdlink.channel import ChannelConfig
from qkdlink.config import PolcompConfig, RunParams, ScenarioConfig
from qkdlink.presets import apply_overrides, spad_projection
from qkdlink.receiver import ReceiverConfig
from qkdlink.runner import run_scenario, seeded_components
from qkdlink.transmitter import TransmitterConfig

TX, CH, RX = TransmitterConfig(), ChannelConfig(), ReceiverConfig()


@pytest.fixture(scope="module")
def events_run():
    cfg = ScenarioConfig(polcomp=PolcompConfig(enabled=False), run=RunParams(duration_s=2.0))
    cfg = apply_overrides(cfg, loss_db=15.0, seed=5)
    return cfg, run_scenario(cfg, write=False)


class TestAgainstEvents:
    def test_sifted_counts(self, events_run):
        cfg, rep = events_run
        tx, ch, rx = seeded_components(cfg)
        expected = model.expected_counts(tx, ch, rx, cfg.duration_s).counts
        for name, observed in asdict(rep.counts).items():
            if name == "t":
                continue
            mean = expected[name]
            assert abs(observed - mean) <= 4 * math.sqrt(mean) + 2, name

    def test_qber(self, events_run):
        cfg, rep = events_run
        tx, ch, rx = seeded_components(cfg)
        q_z, _ = model.expected_qber(tx, ch, rx)
        assert rep.counts.q_z == pytest.approx(q_z, abs=4 * math.sqrt(q_z / rep.counts.n_z))
        assert rep.q_cross == pytest.approx(0.5, abs=0.01)


class TestExpectedCounts:
    def test_table_rounding_and_sampling(self):
        e = model.expected_counts(TX, CH, RX, 10.0)
        t = e.table()
        assert t.n_z_mu1 == round(e.counts["n_z_mu1"]) and t.t == 10.0
        s = e.table(np.random.default_rng(0))
        assert s.n_z_mu1 == pytest.approx(e.counts["n_z_mu1"], rel=0.01)

    def test_ideal_link_floor(self):
        tx = replace(TX, extinction_ratio_db=math.inf)
        rx = replace(RX, dark_hz=0.0)
        assert model.expected_qber(tx, CH, rx) == pytest.approx((0.0, 0.0), abs=1e-15)

    def test_scales_with_duration(self):
        a = model.expected_counts(TX, CH, RX, 1.0, key_fraction=1.0).counts
        b = model.expected_counts(TX, CH, RX, 4.0, key_fraction=1.0).counts
        assert b["n_z_mu1"] == pytest.approx(4 * a["n_z_mu1"])

    def test_single_click_probabilities(self):
        fire = np.array([[0.1, 0.2, 0.0, 0.5]])
        only = model.single_click_probs(fire)
        assert only[0] == pytest.approx(0.1 * 0.8 * 0.5)
        assert only[3] == pytest.approx(0.5 * 0.9 * 0.8)


class TestCurve:
    def test_rate_decreases_with_loss(self):
        rates = [model.skr_inf_exact(TX, CH, RX, loss) for loss in (10, 20, 30, 38)]
        assert all(a > b > 0 for a, b in zip(rates, rates[1:]))

    def test_cutoff_brackets(self):
        cut = model.skr_cutoff_db(TX, CH, RX)
        assert model.skr_inf_exact(TX, CH, RX, cut - 0.2) > 0
        assert model.skr_inf_exact(TX, CH, RX, cut + 0.2) == 0

    def test_curve_point_fields(self):
        p = model.curve_point(TX, CH, RX, 20.0, duration_s=10.0)
        assert p.loss_db == 20.0 and p.sifted_rate > 0 and 0 <= p.skr_fk <= p.skr_inf

    def test_dead_time_lowers_rate(self):
        cfg = spad_projection()
        tx, ch, rx = cfg.transmitter, cfg.channel, cfg.receiver
        with_dead = model.expected_counts(tx, ch, rx, 1.0).counts["n_z_mu1"]
        without = model.expected_counts(tx, ch, replace(rx, holdoff_ps=0.0), 1.0).counts["n_z_mu1"]
        assert with_dead < without
        assert model.dead_time_factor(tx, ch, replace(rx, holdoff_ps=0.0), ps.IDENTITY) is None


class TestIntervalRates:
    def test_sampling_means(self):
        r = model.interval_rates(TX, CH, RX, ps.IDENTITY, 1.0)
        draws = np.array([model.sample_interval(r, np.random.default_rng(i)) for i in range(200)])
        assert draws[:, 0].mean() == pytest.approx(r.n_comp, rel=0.02)
        assert np.all(draws[:, 1] <= draws[:, 0]) and np.all(draws[:, 3] <= draws[:, 2])
