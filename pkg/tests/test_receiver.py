import math

import numpy as np
import pytest

from qkdlink import polstate as ps
from qkdlink.polstate import Z
from qkdlink.receiver import (
    DETECTOR_NAMES,
    ReceiverConfig,
    TimeTags,
    apply_holdoff,
    balance_efficiencies,
    detect_slot,
    inject_dark_counts,
    read_timetags,
    write_timetags,
)

XP, XM = 2, 3


class TestDetectSlot:
    def test_no_photons_no_darks(self, rng):
        assert detect_slot(0, ps.STATE_L, 0.0, ReceiverConfig(), rng, dark_counts=False) == []

    def test_ideal_single_photon(self, rng):
        cfg = ReceiverConfig(eta={d: 1.0 for d in DETECTOR_NAMES}, jitter_ps=0.0)
        events = detect_slot(1, ps.STATE_L, 1234.0, cfg, rng, force_basis=Z, dark_counts=False)
        assert len(events) == 1 and events[0].detector == 0 and events[0].timetag_ps == 1234

    def test_x_arm_fraction(self):
        cfg = ReceiverConfig()
        rng = np.random.default_rng(11)
        n = 200_000
        x = sum(any(e.detector >= 2 for e in detect_slot(1, ps.STATE_PLUS, 0.0, cfg, rng, dark_counts=False)) for _ in range(n))
        p = 0.1 * cfg.eta["Xp"]
        assert abs(x / n - p) <= 3 * math.sqrt(p * (1 - p) / n)

    def test_one_event_per_detector(self, rng):
        cfg = ReceiverConfig(eta={d: 1.0 for d in DETECTOR_NAMES})
        for _ in range(200):
            dets = [e.detector for e in detect_slot(20, ps.STATE_H, 0.0, cfg, rng)]
            assert len(dets) == len(set(dets))


class TestDarks:
    def test_zero_rate(self, rng):
        assert len(inject_dark_counts(10.0, ReceiverConfig(dark_hz=0.0), rng)) == 0

    def test_single_detector_poisson(self):
        rng = np.random.default_rng(3)
        counts = [np.sum(inject_dark_counts(10.0, ReceiverConfig(), rng).detector == 0) for _ in range(100)]
        assert abs(np.mean(counts) - 2000) <= 3 * math.sqrt(2000 / 100)

    def test_four_detector_total(self):
        rng = np.random.default_rng(4)
        counts = [len(inject_dark_counts(1.0, ReceiverConfig(), rng)) for _ in range(200)]
        assert abs(np.mean(counts) - 800) <= 3 * math.sqrt(800 / 200)
        assert np.var(counts) == pytest.approx(800, rel=0.3)

    def test_sorted_and_in_window(self, rng):
        tags = inject_dark_counts(2.0, ReceiverConfig(dark_hz=5000.0), rng, start_ps=1e6)
        assert np.all(np.diff(tags.timetag_ps) >= 0)
        assert tags.timetag_ps.min() >= 1e6 and tags.timetag_ps.max() < 1e6 + 2e12


class TestBalance:
    def test_equal_efficiencies_keep_all(self, rng):
        cfg = ReceiverConfig(eta={d: 0.5 for d in DETECTOR_NAMES})
        assert np.all(cfg.keep_probs == 1.0)

    def test_keep_probabilities(self):
        keep = ReceiverConfig().keep_probs
        assert keep[XP] == pytest.approx(1 / 3) and keep[XM] == 1.0 and keep[0] == keep[1] == 1.0

    def test_binomial_survival(self):
        tags = TimeTags(np.arange(100_000), np.full(100_000, XP))
        kept = balance_efficiencies(tags, ReceiverConfig(), np.random.default_rng(6))
        sd = math.sqrt(1e5 * (1 / 3) * (2 / 3))
        assert abs(len(kept) - 33333.3) <= 3 * sd

    def test_balanced_x_ratio_for_circular_input(self):
        cfg = ReceiverConfig()
        rng = np.random.default_rng(10)
        n = 400_000
        # |L> is unbiased in X, so raw Xp:Xm is eta_Xp:eta_Xm = 3:1
        outcome = rng.random(n) < 0.5
        fired = np.where(outcome, rng.random(n) < cfg.eta["Xp"], rng.random(n) < cfg.eta["Xm"])
        det = np.where(outcome, XP, XM)[fired]
        kept = balance_efficiencies(TimeTags(np.zeros(det.size), det), cfg, rng)
        n_p, n_m = np.sum(kept.detector == XP), np.sum(kept.detector == XM)
        assert abs(n_p - n_m) <= 3 * math.sqrt(n_p + n_m)


class TestTimeTags:
    def test_sorted_merge(self):
        tags = TimeTags([5, 1, 3, 1], [0, 2, 1, 1]).sorted()
        assert tags.timetag_ps.tolist() == [1, 1, 3, 5] and tags.detector.tolist() == [1, 2, 1, 0]

    def test_events_roundtrip(self):
        tags = TimeTags([1, 2], [3, 0])
        again = TimeTags.from_events(tags.events())
        assert np.array_equal(again.timetag_ps, tags.timetag_ps)

    @pytest.mark.parametrize("binary", [False, True])
    def test_file_roundtrip(self, tmp_path, rng, binary):
        tags = inject_dark_counts(1.0, ReceiverConfig(dark_hz=100.0), rng)
        path = tmp_path / "tags.dat"
        write_timetags(tags, path, binary=binary)
        back = read_timetags(path, binary=binary)
        assert np.array_equal(back.timetag_ps, tags.timetag_ps) and np.array_equal(back.detector, tags.detector)

    def test_holdoff(self):
        tags = TimeTags([0, 10, 25, 30, 31], [0, 0, 0, 1, 1])
        out = apply_holdoff(tags, 20)
        assert out.timetag_ps.tolist() == [0, 25, 30]
