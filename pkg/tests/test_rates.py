import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from peitsim.errors import DomainError, PoleError
from peitsim.rates import (AtomParams, LaserTone, RateReport, ac_stark_shift, approximate_limits,
                           driving_rabi_for_shift, dressed_state, inverse_sqrt_eta, multi_tone_heating,
                           optimal_probe_detuning, phonon_trajectory, rates, single_mode_tones,
                           sweep_mode_frequency, transition_amplitudes)
from peitsim.units import mhz

GAMMA = mhz(20.7)
DR = mhz(330.0)
DAC = mhz(2.0)


def drive():
    return LaserTone(driving_rabi_for_shift(DAC, DR), DR, (-1.0,))


def test_atom_defaults_split_evenly():
    a = AtomParams(2.0)
    assert a.gamma_g == a.gamma_r == 1.0
    assert AtomParams(2.0, gamma_r=0.5).gamma_g == 1.5
    with pytest.raises(ValueError):
        AtomParams(2.0, gamma_g=1.5, gamma_r=1.5)
    with pytest.raises(ValueError):
        AtomParams(-1.0)


def test_stark_shift_limits():
    assert ac_stark_shift(LaserTone(0.0, DR)).exact == 0.0
    s = ac_stark_shift(LaserTone(mhz(5), DR))
    assert s.approx == pytest.approx(s.exact, rel=2e-4)
    at_res = ac_stark_shift(LaserTone(mhz(4), 0.0))
    assert at_res.exact == pytest.approx(mhz(2))
    assert math.isnan(at_res.approx)


def test_required_driving_rabi():
    # 4 * 2 * 332 MHz^2 -> sqrt(2656) MHz
    assert driving_rabi_for_shift(DAC, DR) / mhz(1) == pytest.approx(math.sqrt(2656), rel=1e-14)
    with pytest.raises(DomainError):
        driving_rabi_for_shift(-1.0, DR)


@settings(max_examples=50, deadline=None)
@given(dac=st.floats(1e-3, 50.0), dr=st.floats(-3000.0, 3000.0))
def test_stark_inverse_roundtrip(dac, dr):
    om = driving_rabi_for_shift(dac, dr)
    assert ac_stark_shift(LaserTone(om, dr)).exact == pytest.approx(dac, rel=1e-9)


def test_dressed_state_energy_and_angle():
    d = dressed_state(drive(), GAMMA)
    assert d.energies[0] == pytest.approx(DAC, rel=1e-12)
    om = drive().rabi
    sin2 = 0.5 * (1 - DR / math.hypot(om, DR))
    assert d.sin2 == pytest.approx(sin2, rel=1e-12)
    assert d.effective_linewidth == pytest.approx(GAMMA * sin2, rel=1e-12)


def test_scattering_amplitude_vanishes_on_two_photon_resonance():
    probe = LaserTone(mhz(3), DR, (1.0,))
    amps = transition_amplitudes(DAC, probe, drive(), AtomParams(GAMMA), 0.1, 0.1)
    assert amps["Ts"] == 0


def test_eit_limit_matches_closed_form():
    # EIT point: Delta_gr = 0 and delta_ac = w; n_ss -> gamma^2/(16 Delta^2)
    probe = LaserTone(mhz(3), DR, (1.0,))
    r = rates(DAC, probe, drive(), AtomParams(GAMMA), 0.1, 0.1)
    n_eit = GAMMA**2 / (16 * DR**2)
    assert abs(r.n_ss - n_eit) / n_eit <= 0.25


def test_rate_bookkeeping():
    probe = LaserTone(mhz(3), optimal_probe_detuning(mhz(1.5), DAC, DR), (1.0,))
    r = rates(mhz(1.5), probe, drive(), AtomParams(GAMMA), 0.12, 0.12)
    assert r.w == pytest.approx(r.a_minus - r.a_plus, rel=1e-14)
    assert r.n_ss == pytest.approx(r.a_plus / r.w, rel=1e-14)
    assert not r.divergent and r.w > 0


def test_heating_configuration_flags_divergence():
    # tune the blue sideband onto the bright resonance: Delta_gr - delta_ac = +w
    w = mhz(1.5)
    probe = LaserTone(mhz(3), DR + DAC + w, (1.0,))
    r = rates(w, probe, drive(), AtomParams(GAMMA), 0.12, 0.12)
    assert r.divergent and r.w < 0 and math.isinf(r.n_ss)


def test_pole_raises():
    probe = LaserTone(mhz(1), DR, (1.0,))
    with pytest.raises(PoleError):
        rates(mhz(1), probe, LaserTone(0.0, DR), AtomParams(GAMMA), 0.1, 0.1)


def test_invalid_mode_frequency():
    with pytest.raises(DomainError):
        rates(0.0, LaserTone(1.0, DR), drive(), AtomParams(GAMMA), 0.1, 0.1)


def test_cooling_peak_at_resonance_condition():
    w = mhz(1.3)
    grid = DR + mhz(np.arange(-4.0, 4.0, 0.02))
    a_minus = [rates(w, LaserTone(mhz(3), g, (1.0,)), drive(), AtomParams(GAMMA), 0.1, 0.1).a_minus
               for g in grid]
    best = grid[int(np.argmax(a_minus))]
    assert abs(best - optimal_probe_detuning(w, DAC, DR)) <= mhz(0.02) + 1e-9


@settings(max_examples=40, deadline=None)
@given(eta=st.floats(0.01, 0.3), w_mhz=st.floats(0.5, 4.0))
def test_rates_scale_as_eta_squared(eta, w_mhz):
    w = mhz(w_mhz)
    probe = LaserTone(mhz(3), optimal_probe_detuning(w, DAC, DR), (1.0,))
    r1 = rates(w, probe, drive(), AtomParams(GAMMA), eta, eta)
    r2 = rates(w, probe, drive(), AtomParams(GAMMA), 2 * eta, 2 * eta)
    assert r2.a_minus == pytest.approx(4 * r1.a_minus, rel=1e-10)
    assert r2.n_ss == pytest.approx(r1.n_ss, rel=1e-10)


@settings(max_examples=40, deadline=None)
@given(w_mhz=st.floats(0.5, 4.0), og=st.floats(0.1, 5.0))
def test_rates_nonnegative(w_mhz, og):
    w = mhz(w_mhz)
    probe = LaserTone(mhz(og), optimal_probe_detuning(w, DAC, DR), (1.0,))
    r = rates(w, probe, drive(), AtomParams(GAMMA), 0.1, 0.1)
    assert r.a_plus >= 0 and r.a_minus >= 0


def test_approximate_limits():
    w = DAC
    probe = LaserTone(mhz(3), DR, (1.0,))
    lim = approximate_limits(w, probe, drive(), AtomParams(GAMMA), 0.1)
    assert lim.n_eit == pytest.approx(GAMMA**2 / (16 * DR**2))
    assert lim.ratio == pytest.approx(1.0)      # (1 - dac/w)^2 = 0 at the EIT point
    assert lim.regime_ok
    with pytest.raises(DomainError):
        approximate_limits(0.0, probe, drive(), AtomParams(GAMMA), 0.1)


def test_trajectory_endpoints():
    rep = RateReport(a_plus=0.01, a_minus=0.11, w=0.1, n_ss=0.1, divergent=False)
    tr = phonon_trajectory(5.0, rep, [0.0, 1e4])
    assert tr.values[0] == 5.0 and tr.values[1] == pytest.approx(0.1)
    assert not tr.heating
    flat = phonon_trajectory(1.0, RateReport(0.01, 0.01, 0.0, math.inf, True), [0.0, 2.0])
    assert flat.heating and flat.values[1] == pytest.approx(1.02)


def test_multi_tone_heating_sum_and_scaling():
    d = dressed_state(drive(), GAMMA)
    tones = [LaserTone(mhz(1), DR + mhz(1)), LaserTone(mhz(3), DR - mhz(8))]
    atom = AtomParams(GAMMA)
    total, per = multi_tone_heating(mhz(1), tones, d, atom, 0.1)
    assert total == pytest.approx(sum(per), rel=1e-15)
    total2, _ = multi_tone_heating(mhz(1), tones, d, atom, 0.2)
    assert total2 == pytest.approx(4 * total, rel=1e-12)
    zero, _ = multi_tone_heating(mhz(1), [LaserTone(0.0, DR)], d, atom, 0.1)
    assert zero == 0.0


def test_sweep_shapes():
    grid = mhz(np.linspace(1.0, 4.0, 31))
    res = sweep_mode_frequency(grid, DAC, DR, mhz(3), AtomParams(GAMMA))
    i = int(np.argmin(np.abs(grid - DAC)))
    # parallel-EIT and EIT coincide where w = delta_ac
    assert res.peit_n_ss[i] == pytest.approx(res.eit_n_ss[i], rel=1e-12)
    assert np.nanmax(res.peit_n_ss) / np.nanmin(res.peit_n_ss) <= 3
    assert abs(grid[int(np.nanargmin(res.eit_n_ss))] - DAC) <= grid[1] - grid[0] + 1e-12
    assert res.errors == ()


def test_sweep_reports_failures():
    res = sweep_mode_frequency(mhz(np.array([1.0, -1.0])), DAC, DR, mhz(3), AtomParams(GAMMA),
                               eta_rule=lambda w: 0.1)
    assert len(res.errors) == 1 and np.isnan(res.peit_n_ss[1])


def test_inverse_sqrt_eta():
    assert inverse_sqrt_eta(mhz(4.0)) == pytest.approx(0.145)
    p, d = single_mode_tones(mhz(1), mhz(3), DR, drive().rabi, DR)
    assert p.cos() == 1.0 and d.cos() == -1.0
