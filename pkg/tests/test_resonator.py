import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spdcsim.errors import ConfigError, DomainError, NoPhaseMatchError
from spdcsim.resonator import (C_LIGHT, PUMP, ConstantIndex, CouplingState, ModeIndex, ResonatorSpec,
                               _split_residual, airy_zero, bandwidth_of, bandwidth_vs_gap,
                               bandwidth_vs_radius, default_table, evanescent_constant,
                               free_spectral_range, intrinsic_bandwidth, lithium_niobate_disk,
                               load_dispersion_table, loaded_bandwidth, mode_number_near,
                               phase_match_curve, phase_match_solve, q_absorption, q_coupling, q_total,
                               thermal_slope, triplet_thermal_slope, tune_to_pump, voltage_detune,
                               wgm_frequency)

LAM = 1064e-9


def toy(radius=1.9e-3, n=2.2, n_c=2.4, alpha=0.2):
    return ResonatorSpec(radius, alpha, ConstantIndex(n), ConstantIndex(n_c))


@pytest.fixture(scope="module")
def tuned():
    return tune_to_pump(lithium_niobate_disk())


class TestDispersion:
    def test_table_loads(self):
        t = default_table()
        ln = t["LiNbO3_congruent"]
        assert ln["ordinary"](LAM, 24.5) == pytest.approx(2.2322, abs=2e-4)
        assert ln["extraordinary"](532e-9, 24.5) == pytest.approx(2.2342, abs=2e-3)
        assert t["diamond"]["isotropic"](LAM) == pytest.approx(2.3914, abs=1e-3)

    def test_birefringence_sign(self):
        ln = default_table()["LiNbO3_congruent"]
        assert ln["extraordinary"](LAM, 24.5) < ln["ordinary"](LAM, 24.5)

    def test_normal_dispersion(self):
        n = default_table()["LiNbO3_congruent"]["ordinary"]
        lam = np.linspace(0.5e-6, 1.6e-6, 50)
        assert np.all(np.diff(n(lam, 24.5)) < 0)

    def test_out_of_range(self):
        n = default_table()["LiNbO3_congruent"]["ordinary"]
        with pytest.raises(DomainError):
            n(10e-6, 24.5)
        with pytest.raises(DomainError):
            n(LAM, 400.0)

    def test_custom_file(self, tmp_path):
        p = tmp_path / "d.yaml"
        p.write_text(
            "materials:\n  glass:\n    valid:\n      wavelength_um: [0.3, 2.0]\n"
            "      temperature_C: [0, 100]\n    isotropic:\n      form: sellmeier3\n"
            "      B: [1.0]\n      C: [0.0]\n")
        t = load_dispersion_table(p)
        assert t["glass"]["isotropic"](1e-6, 20.0) == pytest.approx(math.sqrt(2.0))
        assert t["glass"]["thermal_expansion"] == 0.0

    def test_malformed_file(self, tmp_path):
        p = tmp_path / "d.yaml"
        p.write_text("materials:\n  glass:\n    isotropic: {form: sellmeier3}\n")
        with pytest.raises(ConfigError):
            load_dispersion_table(p)


class TestQBudget:
    def test_absorption_q_closed_form(self):
        q = q_absorption(toy(), LAM)
        assert q == pytest.approx(2 * math.pi * 2.2 / (0.2 * LAM), rel=1e-12)

    def test_coupling_q_closed_form(self):
        n, nc, a, d = 2.2, 2.4, 1.9e-3, 50e-9
        kap = (2 * math.pi / LAM) * math.sqrt(n * n - 2)
        expected = (math.sqrt(2) * math.pi ** 2.5 * math.sqrt(n) * (n - 1) / math.sqrt(nc * nc - n * n)
                    * (a / LAM) ** 1.5 * math.exp(2 * kap * d))
        assert q_coupling(toy(), CouplingState(d, LAM)) == pytest.approx(expected, rel=1e-12)

    def test_kappa_variants(self):
        k = 2 * math.pi / LAM
        assert evanescent_constant(2.2, LAM) == pytest.approx(k * math.sqrt(2.84))
        assert evanescent_constant(2.2, LAM, "alternate") == pytest.approx(k * math.sqrt(3.84))
        with pytest.raises(DomainError):
            evanescent_constant(1.4, LAM)
        with pytest.raises(ConfigError):
            evanescent_constant(2.2, LAM, "other")

    def test_prism_must_exceed_resonator(self):
        with pytest.raises(DomainError):
            q_coupling(toy(n_c=2.1), CouplingState(0.0, LAM))

    def test_q_total(self):
        assert q_total([2e7, 2e7]) == pytest.approx(1e7)
        assert q_total([5e6]) == 5e6
        with pytest.raises(ConfigError):
            q_total([])
        with pytest.raises(DomainError):
            q_total([1e7, 0.0])

    def test_bandwidth_of(self):
        assert bandwidth_of(1e7, 2.8e14) == pytest.approx(2.8e7)
        with pytest.raises(DomainError):
            bandwidth_of(-1, 1e14)

    def test_gap_validation(self):
        with pytest.raises(ConfigError):
            CouplingState(-1e-9, LAM)

    def test_bandwidth_decreases_with_gap(self):
        gaps, bw = bandwidth_vs_gap(toy(), LAM, np.linspace(0, 300e-9, 61))
        assert np.all(np.diff(bw) < 0)

    @given(d=st.floats(0, 400e-9))
    def test_loaded_above_intrinsic(self, d):
        spec = toy()
        assert loaded_bandwidth(spec, LAM, d) > intrinsic_bandwidth(spec, LAM)

    def test_asymptote(self):
        # within 1 % of the absorption limit once Q_c >= 100 Q_a
        spec = toy()
        qa = q_absorption(spec, LAM)
        kap = evanescent_constant(2.2, LAM)
        q0 = q_coupling(spec, CouplingState(0.0, LAM))
        d = math.log(100 * qa / q0) / (2 * kap)
        for dd in (d, 1.2 * d, 2 * d):
            bw = loaded_bandwidth(spec, LAM, dd)
            assert bw == pytest.approx(intrinsic_bandwidth(spec, LAM), rel=0.01)

    def test_radius_ordering(self):
        radii, bw = bandwidth_vs_radius(toy(), LAM, [0.5e-3, 1e-3, 1.9e-3, 3e-3])
        assert np.all(np.diff(bw) < 0)

    def test_lithium_niobate_numbers(self):
        spec = lithium_niobate_disk()
        assert q_absorption(spec, LAM) == pytest.approx(6.59e7, rel=2e-3)
        assert intrinsic_bandwidth(spec, LAM) == pytest.approx(4.275e6, rel=2e-3)
        assert loaded_bandwidth(spec, LAM, 100e-9) == pytest.approx(13.42e6, rel=5e-3)

    def test_spec_validation(self):
        with pytest.raises(ConfigError):
            toy(radius=0)
        with pytest.raises(ConfigError):
            toy(alpha=-1)


class TestModes:
    def test_mode_index_validation(self):
        with pytest.raises(ConfigError):
            ModeIndex(0)
        with pytest.raises(ConfigError):
            ModeIndex(10, q=0)
        assert ModeIndex(5) < ModeIndex(6)

    def test_airy_zeros(self):
        assert airy_zero(1) == pytest.approx(2.338107410, rel=1e-9)
        assert airy_zero(2) == pytest.approx(4.087949444, rel=1e-9)

    def test_leading_order_closed_form(self):
        spec = toy()
        m = 24000
        nu = wgm_frequency(spec, ModeIndex(m), order="leading")
        assert nu == pytest.approx(C_LIGHT * m / (2 * math.pi * 1.9e-3 * 2.2), rel=1e-12)

    def test_full_expansion_small_correction(self):
        spec = toy()
        full = wgm_frequency(spec, ModeIndex(24000))
        lead = wgm_frequency(spec, ModeIndex(24000), order="leading")
        # dominated by the Airy term alpha_1 (m/2)^(1/3) / m
        m = 24000
        assert (full - lead) / lead == pytest.approx(airy_zero(1) * (m / 2) ** (1 / 3) / m, rel=0.05)

    @given(m=st.integers(9000, 60000))
    def test_frequency_increases_with_m(self, m):
        spec = lithium_niobate_disk()
        nus = wgm_frequency(spec, ModeIndex(np.array([m, m + 1])))
        assert nus[1] > nus[0]

    def test_higher_radial_order_is_higher(self):
        spec = lithium_niobate_disk()
        assert wgm_frequency(spec, ModeIndex(24000, 2)) > wgm_frequency(spec, ModeIndex(24000, 1))

    def test_fsr_matches_group_index(self):
        spec = lithium_niobate_disk()
        n = spec.index
        h = 1e-10
        ng = float(n(LAM, 24.5) - LAM * (n(LAM + h, 24.5) - n(LAM - h, 24.5)) / (2 * h))
        m = mode_number_near(spec, LAM)
        fsr = free_spectral_range(spec, ModeIndex(m))
        assert fsr == pytest.approx(C_LIGHT / (2 * math.pi * spec.radius * ng), rel=0.01)

    def test_mode_number_near(self):
        spec = lithium_niobate_disk()
        m = mode_number_near(spec, LAM)
        nus = wgm_frequency(spec, ModeIndex(np.array([m - 1, m, m + 1])))
        assert np.argmin(np.abs(nus - C_LIGHT / LAM)) == 1

    def test_array_temperature_broadcast(self):
        spec = lithium_niobate_disk()
        Ts = np.array([20.0, 30.0])
        nus = wgm_frequency(spec, ModeIndex(24000), Ts)
        assert nus.shape == (2,)
        assert nus[0] == pytest.approx(wgm_frequency(spec, ModeIndex(24000), 20.0), abs=1e3)

    def test_voltage(self):
        assert voltage_detune(4.0) == pytest.approx(150e6)
        assert voltage_detune(-2.0) == pytest.approx(-75e6)
        with pytest.raises(DomainError):
            voltage_detune(12.0)


class TestPhaseMatching:
    def test_tuned_to_532(self, tuned):
        spec, pump, T = tuned
        assert pump.m % 2 == 0
        assert abs(spec.radius - 1.9e-3) < 1e-6
        nu_p = wgm_frequency(spec, pump, T, PUMP, tol_hz=1.0)
        assert C_LIGHT / nu_p == pytest.approx(532e-9, rel=1e-9)

    def test_degenerate_solution(self, tuned):
        spec, pump, T = tuned
        pm = phase_match_solve(spec, T, pump)
        assert pm.signal_mode.m + pm.idler_mode.m == pump.m
        assert pm.nu_signal + pm.nu_idler == pytest.approx(pm.nu_pump, rel=1e-15)
        assert pm.lambda_signal == pytest.approx(1064e-9, rel=1e-6)
        assert abs(pm.residual_hz) <= pm.tolerance_hz

    def test_no_match_raises(self, tuned):
        spec, pump, T = tuned
        with pytest.raises(NoPhaseMatchError):
            phase_match_solve(spec, T - 2.0, pump, max_offset=50)

    def test_odd_pump_rejected(self, tuned):
        from spdcsim.resonator import degeneracy_temperature
        spec, pump, _ = tuned
        with pytest.raises(ConfigError):
            degeneracy_temperature(spec, ModeIndex(pump.m + 1))

    def test_curve_branches(self, tuned):
        spec, pump, T = tuned
        pts = phase_match_curve(spec, pump, T - 1.0, T + 1.0)
        assert len(pts) > 20
        temps = [p.temperature for p in pts]
        assert temps == sorted(temps)
        for p in pts:
            # conservation and the residual bound
            assert p.signal_mode.m + p.idler_mode.m == pump.m
            assert p.nu_signal + p.nu_idler == pytest.approx(p.nu_pump, rel=1e-15)
            assert abs(p.residual_hz) <= p.tolerance_hz
            # branches are mirror images in frequency about the degenerate point
            assert p.nu_signal - p.nu_pump / 2 == pytest.approx(p.nu_pump / 2 - p.nu_idler, abs=1.0)
        # splitting grows away from degeneracy
        far = max(pts, key=lambda p: abs(p.temperature - T))
        near = min(pts, key=lambda p: abs(p.temperature - T))
        assert far.splitting > near.splitting

    def test_curve_range_validation(self, tuned):
        spec, pump, T = tuned
        with pytest.raises(ConfigError):
            phase_match_curve(spec, pump, T, T)

    def test_smaller_disk_degenerates_colder(self, tuned):
        # with the residual negative below degeneracy for the 1.9 mm disk, a
        # positive residual at the coldest valid temperature puts the 0.5 mm
        # degeneracy point below it
        spec, pump, T = tuned
        T_min = spec.pump_index.temperature_range_C[0]
        assert _split_residual(spec, pump, 0, T_min) < 0
        small = lithium_niobate_disk(0.5e-3)
        m = mode_number_near(small, 532e-9, 24.5, PUMP)
        m += m % 2
        assert _split_residual(small, ModeIndex(m), 0, T_min) > 0

    def test_thermal_slopes(self, tuned):
        spec, pump, T = tuned
        pm = phase_match_solve(spec, T, pump)
        s_sig = thermal_slope(spec, pm.signal_mode, T)
        s_pump = thermal_slope(spec, pump, T, PUMP)
        assert s_sig < 0 and s_pump < 0
        # a 1 mK step moves a resonance by megahertz, i.e. within a few linewidths
        for s in (s_sig, s_pump):
            assert 1e6 < abs(s) * 1e-3 < 25e6
        assert triplet_thermal_slope(spec, pm) == pytest.approx(s_pump / 2, rel=0.05)
