import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracle import H_011, PENALTY_90S, PENALTY_BITS, SKR_EXAMPLE, TAU0, TAU1, YieldModel, recompute
from qkdlink.keyrate import (
    CountsTable,
    DecoyBounds,
    KeyRateReport,
    Mode,
    SecurityParams,
    analyze,
    binary_entropy,
    cross_basis_qber,
    decoy_bounds,
    finite_key_penalty,
    skr_asymptotic,
    skr_finite,
    sift,
    tau,
    write_report_csv,
)
from qkdlink.polstate import X, Z
from qkdlink.transmitter import COMP, KEY, MU1, MU2, RECORD_DTYPE, TransmitterConfig

TX = TransmitterConfig()
SEC = SecurityParams()


def table_from_model(model: YieldModel, t=10.0, rounding=True) -> CountsTable:
    vals = {}
    for b in ("z", "x"):
        for k, name in enumerate(("mu1", "mu2")):
            n, m = model.counts(b, k)
            vals[f"n_{b}_{name}"] = int(round(n)) if rounding else n
            vals[f"m_{b}_{name}"] = int(round(m)) if rounding else m
    return CountsTable(t=t, **vals)


def records(basis, bit, intensity, role=KEY):
    r = np.zeros(len(basis), dtype=RECORD_DTYPE)
    r["basis"], r["bit"], r["intensity"], r["role"] = basis, bit, intensity, role
    return r


models = st.builds(
    YieldModel,
    eta=st.floats(1e-4, 0.05),
    y0=st.floats(0.0, 1e-5),
    e1=st.floats(0.0, 0.05),
    e1_x=st.floats(0.0, 0.05),
    n_pulses_z=st.just(4.5e8),
    n_pulses_x=st.just(0.5e8),
)


class TestFrozenValues:
    def test_oracle_reproducible(self):
        fresh = recompute()
        for name, value in (("TAU0", TAU0), ("TAU1", TAU1), ("H_011", H_011), ("PENALTY_BITS", PENALTY_BITS), ("SKR_EXAMPLE", SKR_EXAMPLE)):
            assert float(fresh[name]) == pytest.approx(value, rel=1e-15)

    def test_tau(self):
        assert tau(0, TX) == pytest.approx(TAU0, rel=1e-12)
        assert tau(1, TX) == pytest.approx(TAU1, rel=1e-12)
        assert round(tau(0, TX), 5) == 0.54127

    def test_entropy_at_011(self):
        assert binary_entropy(0.11) == pytest.approx(H_011, rel=1e-12)

    def test_penalty(self):
        assert finite_key_penalty(SEC) == pytest.approx(PENALTY_BITS, rel=1e-12)
        assert finite_key_penalty(SEC) / 90 == pytest.approx(PENALTY_90S, rel=1e-12)


class TestEntropy:
    @pytest.mark.parametrize("p, h", [(0.0, 0.0), (1.0, 0.0), (0.5, 1.0)])
    def test_examples(self, p, h):
        assert binary_entropy(p) == h

    @pytest.mark.parametrize("p", [-0.01, 1.01, math.nan])
    def test_out_of_range(self, p):
        with pytest.raises(ValueError):
            binary_entropy(p)

    @given(st.floats(0, 1))
    def test_symmetric(self, p):
        assert binary_entropy(p) == pytest.approx(binary_entropy(1 - p), abs=1e-12)

    def test_max_at_half(self):
        grid = np.linspace(0, 1, 1001)
        values = [binary_entropy(p) for p in grid]
        assert grid[int(np.argmax(values))] == 0.5
        assert np.all(np.diff(values[:501]) > 0)


class TestSift:
    def test_z_agreement(self):
        c = sift(records([Z], [0], [MU1]), [Z], [0], 1.0)
        assert (c.n_z_mu1, c.m_z_mu1, c.n_z) == (1, 0, 1)

    def test_basis_mismatch_discarded(self):
        c = sift(records([Z], [0], [MU1]), [X], [0], 1.0)
        assert c.n_z == c.n_x == 0

    def test_x_error_is_minus_detection(self):
        c = sift(records([X, X], [0, 0], [MU2, MU2]), [X, X], [0, 1], 1.0)
        assert (c.n_x_mu2, c.m_x_mu2) == (2, 1)

    def test_public_slots_excluded(self):
        c = sift(records([Z, Z], [0, 1], [MU1, MU1], role=[COMP, KEY]), [Z, Z], [1, 1], 1.0)
        assert (c.n_z, c.m_z) == (1, 0)

    def test_cross_basis(self):
        r = records([Z, Z, X, X], [0, 1, 0, 0], [MU1] * 4)
        assert cross_basis_qber(r, [X, X, Z, Z], [0, 0, 0, 1]) == 0.5


class TestCountsTable:
    def test_errors_bounded_by_detections(self):
        with pytest.raises(ValueError):
            CountsTable(n_z_mu1=1, m_z_mu1=2)

    def test_positive_time(self):
        with pytest.raises(ValueError):
            CountsTable(t=0.0)

    def test_addition(self):
        a = CountsTable(n_z_mu1=3, m_z_mu1=1, t=1.0)
        b = CountsTable(n_z_mu1=2, n_x_mu2=4, t=2.0)
        s = a + b
        assert (s.n_z_mu1, s.m_z_mu1, s.n_x_mu2, s.t) == (5, 1, 4, 3.0)


class TestBounds:
    @given(models)
    def test_asymptotic_bounds_below_truth(self, model):
        c = table_from_model(model, rounding=False)
        b = decoy_bounds(c, TX, SEC, Mode.ASYMPTOTIC)
        assert b.s_z0 <= model.true_contribution("z", 0) * (1 + 1e-9) + 1e-9
        assert b.s_z1 <= model.true_contribution("z", 1) * (1 + 1e-9) + 1e-9
        assert b.s_z0_upper >= model.true_contribution("z", 0) * (1 - 1e-9)
        assert b.phi_z >= min(model.e1_x, 0.5) - 1e-9

    @given(models)
    def test_finite_tighter_than_asymptotic(self, model):
        c = table_from_model(model)
        a = decoy_bounds(c, TX, SEC, Mode.ASYMPTOTIC)
        f = decoy_bounds(c, TX, SEC, Mode.FINITE)
        assert f.s_z0 <= a.s_z0 + 1e-9 and f.s_z1 <= a.s_z1 + 1e-9 and f.phi_z >= a.phi_z - 1e-12

    @given(models)
    def test_zero_deviation_reproduces_asymptotic(self, model):
        c = table_from_model(model)
        a = decoy_bounds(c, TX, SEC, Mode.ASYMPTOTIC)
        f = decoy_bounds(c, TX, SEC, Mode.FINITE, deviation_override=0.0)
        for name in ("s_z0", "s_z1", "phi_z", "s_x1", "v_x1", "s_z0_upper"):
            x, y = getattr(a, name), getattr(f, name)
            assert x == pytest.approx(y, rel=1e-9, abs=1e-12)

    def test_pure_single_photon_oracle(self):
        # every detection single-photon: vacuum bound clamps to 0, single-photon bound stays below the total
        n1 = 0.7 * 0.8 * math.exp(-0.8) * 1e6
        n2 = 0.3 * 0.28 * math.exp(-0.28) * 1e6
        c = CountsTable(n_z_mu1=int(n1), n_z_mu2=int(n2), n_x_mu1=int(n1 / 9), n_x_mu2=int(n2 / 9), t=1.0)
        b = decoy_bounds(c, TX, SEC)
        assert b.s_z0 == 0.0
        assert 0 < b.s_z1 <= c.n_z

    def test_degenerate_intensities(self):
        with pytest.raises(ValueError):
            TransmitterConfig(mu1=0.3, mu2=0.3)

    def test_no_x_data_gives_half(self):
        b = decoy_bounds(CountsTable(n_z_mu1=1000, n_z_mu2=300, t=1.0), TX)
        assert b.phi_z == 0.5


class TestRates:
    def test_perfect_single_photon_limit(self):
        c = CountsTable(n_z_mu1=10_000, t=1.0)
        assert skr_asymptotic(DecoyBounds(0.0, 10_000, 0.0), c) == pytest.approx(10_000)

    def test_half_phase_error_kills_single_photon_term(self):
        c = CountsTable(n_z_mu1=10_000, t=1.0)
        assert skr_asymptotic(DecoyBounds(50.0, 10_000, 0.5), c) == pytest.approx(50.0)

    def test_worked_example(self):
        c = CountsTable(n_z_mu1=10_000, m_z_mu1=50, t=10.0)
        assert skr_asymptotic(DecoyBounds(100.0, 5000.0, 0.02), c) == pytest.approx(SKR_EXAMPLE, rel=1e-12)

    def test_nonpositive_time(self):
        with pytest.raises(ValueError):
            skr_finite(1.0, 0.0)

    def test_penalty_limit_and_clamp(self):
        assert skr_finite(12.5, 1e15) == pytest.approx(12.5)
        assert skr_finite(0.0, 90.0) == 0.0
        assert skr_finite(100.0, 90.0) == pytest.approx(100.0 - PENALTY_90S, abs=1e-12)

    @given(models, st.floats(0.0, 0.2), st.floats(0.0, 0.2))
    def test_monotone_in_qber(self, model, q_a, q_b):
        c = table_from_model(model)
        b = decoy_bounds(c, TX, SEC)
        lo, hi = sorted((q_a, q_b))

        def rate(q):
            m = int(q * c.n_z_mu1)
            return skr_asymptotic(b, CountsTable(n_z_mu1=c.n_z_mu1, m_z_mu1=m, t=c.t))

        assert rate(hi) <= rate(lo) + 1e-9

    @given(models)
    def test_finite_not_above_asymptotic(self, model):
        rep = analyze(table_from_model(model), TX, SEC)
        assert rep.skr_fk <= rep.skr_inf
        if rep.skr_inf > 0:
            assert rep.skr_fk < rep.skr_inf


class TestReport:
    def test_row_and_csv(self, tmp_path):
        rep = KeyRateReport(1.0, 2.0, 0.1, 0.01, 0.02, 3.0, None, TAU0, TAU1)
        row = rep.as_row(40.0)
        assert row["skr_fk"] == "not computed"
        path = tmp_path / "k.csv"
        write_report_csv([dict(row, status="ok")], path)
        header, line = path.read_text().splitlines()
        assert header.startswith("loss_db,t_s,n_z") and header.endswith(",status")
        assert line.split(",")[0] == "40.0"
