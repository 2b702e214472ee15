import csv

import numpy as np
import pytest

from qlconc.closed_form import TalentiBubble, critical_exponent, talenti_eval
from qlconc.energy import energy_Lm, pohozaev_residual
from qlconc.shooting import (BracketError, Outcome, ShootConfig, UndecidedError, classify,
                             find_ground_state, integrate_radial)
from qlconc.transform import STANDARD

from oracles import rk_trajectory_u

# frozen output of oracles.bisect_fast_decay_amplitude(5, 4.0, 1.0, 1.0, 3.0)
A_STAR_N5_P4 = 1.6317140388038


def test_config_validation():
    with pytest.raises(ValueError):
        ShootConfig(N=4, p=4.0)
    with pytest.raises(ValueError):
        ShootConfig(N=5, p=7.0)
    with pytest.raises(ValueError):
        ShootConfig(N=5, p=3.0)
    with pytest.raises(ValueError):
        ShootConfig(N=5, p=4.0, m=0.0)


@pytest.mark.parametrize("a", [1e3, 10.0])
def test_large_amplitude_crosses(a):
    cfg = ShootConfig(N=5, p=4.0)
    traj = integrate_radial(cfg, a)
    assert classify(traj) is Outcome.CROSSING
    oracle = rk_trajectory_u(5, 4.0, 1.0, a, 1.0, 1e3)
    assert oracle.status == 1
    assert traj.r_end == pytest.approx(oracle.t_events[0][0], rel=1e-6)
    r = np.linspace(traj.sol.t[0], traj.r_end * 0.999, 200)
    assert np.all(np.diff(traj.sol.sol(r)[0]) < 0)


@pytest.mark.parametrize("a", [1e-2, 1e-3])
def test_small_amplitude_slow_decay(a):
    cfg = ShootConfig(N=5, p=4.0)
    assert classify(integrate_radial(cfg, a)) is Outcome.SLOW_DECAY
    oracle = rk_trajectory_u(5, 4.0, 1.0, a, 1.0, 1e3)
    q = np.array([100.0, 1000.0]) ** 3 * STANDARD.G(oracle.sol(np.array([100.0, 1000.0]))[0])
    assert oracle.status == 0 and q[1] > 1.1 * q[0]


def test_short_horizon_is_undecided():
    cfg = ShootConfig(N=5, p=4.0, r_max=1e-4)
    with pytest.raises(UndecidedError):
        classify(integrate_radial(cfg, 1.0))


def test_ground_state_n5(ground_n5):
    res = ground_n5
    assert res.amplitude == pytest.approx(A_STAR_N5_P4, rel=1e-9)
    prof = res.profile
    assert np.all(prof.v > 0)
    assert np.all(np.diff(prof.v) < 0)
    assert abs(res.pohozaev_residual) <= 1e-6
    assert prof.tail_plateau_variation() < 0.01
    assert res.decay_c == pytest.approx(res.decay_c_derivative, rel=5e-3)
    assert res.classification_trace[-1][1] is Outcome.FAST_DECAY


def test_energy_consistency(ground_n5):
    prof = ground_n5.profile
    D = prof.dirichlet_energy()
    assert energy_Lm(prof, 1.0, 4.0, STANDARD) == pytest.approx(D / 5, rel=1e-5)


def test_uniqueness_proxy_different_brackets(ground_n5):
    other = find_ground_state(ShootConfig(N=5, p=4.0, scan_range=(1e-2, 1e2), scan_points=17))
    assert other.amplitude == pytest.approx(ground_n5.amplitude, rel=1e-6)


def test_scaled_profile_fails_pohozaev(ground_n5):
    prof = ground_n5.profile
    from dataclasses import replace

    scaled = replace(prof, v=1.1 * prof.v, dv=1.1 * prof.dv, decay_c=1.1 * prof.decay_c)
    assert abs(pohozaev_residual(scaled, 1.0, 4.0, STANDARD)) > 1e-3


def test_n6_ground_state_positive_level():
    res = find_ground_state(ShootConfig(N=6, p=4.0, m=2.0))
    assert abs(res.pohozaev_residual) <= 1e-6
    assert energy_Lm(res.profile, 2.0, 4.0, STANDARD) > 0


@pytest.mark.parametrize("N,m", [(5, 1.0), (5, 0.5), (6, 2.0)])
def test_critical_identity_transform_is_talenti(N, m):
    res = find_ground_state(ShootConfig(N=N, p=critical_exponent(N), m=m, zeta=0.0))
    prof = res.profile
    b = TalentiBubble.from_peak(N, m, prof.peak)
    err = np.max(np.abs(prof.v - talenti_eval(b, prof.r))) / prof.peak
    assert err <= 1e-6


def test_critical_scaling_in_m():
    # v_m(r) = m^{-(N-2)/4} v_1(r) at equal mu, so shooting from the scaled amplitude
    # must reproduce the scaled m=1 profile
    N, m = 5, 2.0
    p = critical_exponent(N)
    one = find_ground_state(ShootConfig(N=N, p=p, m=1.0, zeta=0.0)).profile
    s = m ** (-(N - 2) / 4)
    two = find_ground_state(ShootConfig(N=N, p=p, m=m, zeta=0.0, amplitude_hint=s)).profile
    r = np.geomspace(1e-3, 100, 50)
    assert np.max(np.abs(two(r) - s * one(r))) / two.peak <= 1e-6


def test_critical_quasilinear_has_no_fast_decay():
    with pytest.raises(BracketError) as info:
        find_ground_state(ShootConfig(N=5, p=critical_exponent(5), zeta=1.0))
    amps = [a for a, _ in info.value.scanned]
    assert min(amps) == pytest.approx(1e-4) and max(amps) == pytest.approx(1e4)


def test_profile_csv(tmp_path, ground_n5):
    path = tmp_path / "g.csv"
    ground_n5.profile.to_csv(path)
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["r", "v", "v_prime", "r_pow_N_minus_2_v"]
    assert len(rows) == ground_n5.profile.r.size + 1
    assert float(rows[1][1]) == ground_n5.amplitude
    again = tmp_path / "h.csv"
    ground_n5.profile.to_csv(again)
    assert path.read_bytes() == again.read_bytes()
