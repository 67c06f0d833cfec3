import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latticesr.dynamics import SimConfig, simulate_ensemble
from latticesr.errors import InvalidConfig, InvalidGrid, TooFewSamples
from latticesr.fields import DriveMode, ProbeDrive
from latticesr.lattice_params import RB85
from latticesr.observables import (DeltaPolicy, ModeAccumulator, SweepResult, copropagating_mode,
                                   delta_sweep, locate_peak, mode_spectrum, noise_sweep,
                                   parabola_vertex, point_seed, spectrum_from_stats, sr_prediction)


def synthetic_stream(lat, delta, rng, n, terms):
    """Rejection-sample (x, t) over one spatial and one temporal period from the
    density 1 + sum_j a_j cos(n_j k_x x - l_j delta t)."""
    out_x, out_t = [], []
    bound = 1 + sum(abs(a) for a, _, _ in terms)
    while sum(map(len, out_x)) < n:
        x = rng.uniform(0, lat.spatial_period, n)
        t = rng.uniform(0, 2 * math.pi / delta, n)
        dens = 1 + sum(a * np.cos(nn * lat.k_x * x - ll * delta * t) for a, nn, ll in terms)
        keep = rng.uniform(0, bound, n) < dens
        out_x.append(x[keep])
        out_t.append(t[keep])
    return np.concatenate(out_x)[:n], np.concatenate(out_t)[:n]


def brute_force_coefficient(amp, l, n, grid=512):
    """rho[l, n] of 1 + amp cos(phi_x - phi_t) by direct 2D quadrature over one period."""
    px = np.linspace(0, 2 * np.pi, grid, endpoint=False)[:, None]
    pt = np.linspace(0, 2 * np.pi, grid, endpoint=False)[None, :]
    dens = 1 + amp * np.cos(px - pt)
    w = np.exp(-1j * (n * px - l * pt))
    return (dens * w).sum() / dens.sum()


def test_synthetic_density_wave(transport_lattice):
    lat = transport_lattice
    delta = 0.9 * lat.Omega_X
    oracle = brute_force_coefficient(0.1, 1, 1)
    assert oracle == pytest.approx(0.05, abs=1e-12)
    rng = np.random.default_rng(0)
    x, t = synthetic_stream(lat, delta, rng, 400_000, [(0.1, 1, 1)])
    spec = mode_spectrum(x, t, lat, ProbeDrive(0.1, delta, DriveMode.TRAVELING_PLUS))
    assert spec[0, 0] == pytest.approx(1.0)
    noise = 5 / math.sqrt(spec.sample_count)
    assert abs(spec[1, 1] - oracle) < noise
    assert abs(spec[-1, -1] - np.conj(spec[1, 1])) < 1e-15
    for l in range(1, 4):
        for n in range(-3, 4):
            if (l, n) != (1, 1):
                assert abs(spec[l, n]) < noise


def test_estimator_linearity(transport_lattice):
    lat = transport_lattice
    delta = 11.0
    rng = np.random.default_rng(1)
    xa, ta = synthetic_stream(lat, delta, rng, 200_000, [(0.1, 1, 1)])
    xb, tb = synthetic_stream(lat, delta, rng, 200_000, [(0.06, 2, 1)])
    drive = ProbeDrive(0.1, delta, DriveMode.TRAVELING_PLUS)
    a = mode_spectrum(xa, ta, lat, drive)
    b = mode_spectrum(xb, tb, lat, drive)
    acc = ModeAccumulator(lat.k_x, delta)
    acc.add(xa, ta)
    acc.add(xb, tb)
    ab = acc.spectrum()
    np.testing.assert_allclose(ab.amplitudes, 0.5 * (a.amplitudes + b.amplitudes), atol=1e-12)
    noise = 5 / math.sqrt(ab.sample_count)
    assert abs(ab[1, 1] - 0.025) < noise
    assert abs(ab[1, 2] - 0.015) < noise


def test_mode_spectrum_preconditions(transport_lattice):
    with pytest.raises(TooFewSamples):
        mode_spectrum(np.zeros(999), np.zeros(999), transport_lattice, ProbeDrive(0.1, 1.0, DriveMode.STANDING))
    with pytest.raises(InvalidConfig):
        mode_spectrum(np.zeros(2000), np.zeros(2000), transport_lattice, ProbeDrive())


def test_unperturbed_modes_vanish(transport_lattice):
    lat = transport_lattice
    drive = ProbeDrive(0.0, 0.9 * lat.Omega_X, DriveMode.OFF)
    cfg = SimConfig.for_lattice(lat, None, n_traj=1024, measure_time=100.0, seed=1)
    spec = spectrum_from_stats(simulate_ensemble(cfg, lat, drive), drive)
    assert spec[0, 0] == pytest.approx(1.0)
    assert np.all(spec.magnitudes[1:] < 5 * spec.noise_floor)


def test_copropagating_mode_dominates_at_current_peak(transport_lattice):
    # evaluated at the simulated current maximum, which sits near 0.75 Omega_X;
    # by 0.9 Omega_X the counter-propagating partner has caught up within noise
    lat = transport_lattice
    drive = ProbeDrive(0.1, 0.75 * lat.Omega_X, DriveMode.TRAVELING_PLUS)
    cfg = SimConfig.for_lattice(lat, drive, n_traj=2048, measure_time=100.0, seed=2)
    spec = spectrum_from_stats(simulate_ensemble(cfg, lat, drive), drive)
    assert spec.dominant_propagating() == (1, 1)
    assert abs(copropagating_mode(spec, DriveMode.TRAVELING_PLUS)) == abs(spec[1, 1])
    assert abs(copropagating_mode(spec, DriveMode.TRAVELING_MINUS)) == abs(spec[1, -1])


# -- peak location -------------------------------------------------------------------

@settings(max_examples=300, deadline=None)
@given(st.floats(-50, 50), st.floats(0.1, 20), st.floats(-5, 5), st.floats(0.01, 5.0),
       st.floats(0.05, 3.0))
def test_parabola_vertex_exact(x0, a, c, h1, h2):
    xv = x0 + 0.3 * h1
    xs = (x0, x0 + h1, x0 + h1 + h2)
    ys = [-a * (x - xv) ** 2 + c for x in xs]
    vx, vy = parabola_vertex(xs[0], ys[0], xs[1], ys[1], xs[2], ys[2])
    scale = max(abs(xv), h1 + h2)
    assert abs(vx - xv) <= 1e-12 * scale * max(1.0, abs(c) / (a * (h1 + h2) ** 2) + 1.0) * 10
    assert vy == pytest.approx(c, rel=1e-9, abs=1e-9 * a * (h1 + h2) ** 2)


def test_locate_peak_parabola_relative_precision():
    x = np.linspace(1, 16, 10)
    y = -0.7 * (x - 6.3) ** 2 + 4.0
    p = locate_peak(x, y)
    assert abs(p.location - 6.3) / 6.3 < 1e-12
    assert p.bracketed and p.status == "ok" and not p.tie


def test_locate_peak_edges_and_ties():
    x = np.arange(6.0)
    edge = locate_peak(x, x.copy())
    assert not edge.bracketed and edge.status == "NotBracketed" and edge.location == 5.0
    y = np.array([0.0, 1.0, 0.2, 0.5, 1.05, 0.1])
    e = np.full(6, 0.1)
    p = locate_peak(x, y, e)
    assert p.tie and p.index == 1
    q = locate_peak(x, y, np.full(6, 0.01))
    assert not q.tie and q.index == 4
    with pytest.raises(InvalidGrid):
        locate_peak([0, 1], [1, 2])


def test_peak_uncertainty_shrinks_with_error():
    x = np.linspace(0, 4, 9)
    y = -(x - 2.2) ** 2
    big = locate_peak(x, y, np.full(9, 0.1)).uncertainty
    small = locate_peak(x, y, np.full(9, 0.01)).uncertainty
    assert 0 < small < big


# -- sweeps -------------------------------------------------------------------------

def _small_cfg(**kw):
    kw.setdefault("n_traj", 512)
    kw.setdefault("measure_time", 50.0)
    kw.setdefault("burn_in", 40.0)
    kw.setdefault("seed", 17)
    return SimConfig(**kw)


def test_delta_sweep_without_probe(transport_lattice):
    lat = transport_lattice
    grid = np.array([0.5, 0.9, 1.8]) * lat.Omega_X
    res = delta_sweep(_small_cfg(n_traj=1024), lat, 0.0, DriveMode.TRAVELING_PLUS, grid)
    assert res.status == ["ok"] * 3
    assert np.all(np.abs(res.mean_velocity) < 3 * res.stderr)


def test_delta_sweep_validation_and_output(transport_lattice):
    with pytest.raises(InvalidGrid):
        delta_sweep(_small_cfg(), transport_lattice, 0.1, DriveMode.TRAVELING_PLUS, [2.0, 1.0])
    with pytest.raises(InvalidGrid):
        delta_sweep(_small_cfg(), transport_lattice, 0.1, DriveMode.TRAVELING_PLUS, [-1.0, 1.0])
    res = delta_sweep(_small_cfg(n_traj=64, measure_time=20.0), transport_lattice, 0.1,
                      DriveMode.TRAVELING_PLUS, [10.0, 12.0, 14.0])
    lines = res.to_csv().split("\n")
    assert lines[0] == "axis_value,mean_velocity,stderr,mode11_magnitude,status"
    assert len(lines) == 5 and lines[-1] == ""
    s = res.summary()
    assert s["prediction"] == pytest.approx(transport_lattice.Omega_X)
    with pytest.raises(ValueError):
        SweepResult("x", np.zeros(2), np.zeros(3), np.zeros(2), np.zeros(2), [], None)


def test_sweep_order_independence(transport_lattice):
    cfg = _small_cfg(n_traj=64, measure_time=20.0)
    grid = [10.0, 12.0, 14.0]
    a = delta_sweep(cfg, transport_lattice, 0.1, DriveMode.TRAVELING_PLUS, grid, workers=1)
    b = delta_sweep(cfg, transport_lattice, 0.1, DriveMode.TRAVELING_PLUS, grid, workers=3)
    np.testing.assert_array_equal(a.mean_velocity, b.mean_velocity)
    np.testing.assert_array_equal(a.mode_11_magnitude, b.mode_11_magnitude)
    assert point_seed(5, 2) == point_seed(5, 2) != point_seed(5, 3)


def test_noise_sweep_mirror_parity():
    grid = [3.0, 6.0, 10.0]
    cfg = _small_cfg(n_traj=1024, measure_time=60.0)
    kw = dict(delta_policy=DeltaPolicy.FIXED_AT_OMEGA_X)
    plus = noise_sweep(cfg, RB85, 400.0, grid, 0.1, DriveMode.TRAVELING_PLUS, **kw)
    minus = noise_sweep(cfg, RB85, 400.0, grid, 0.1, DriveMode.TRAVELING_MINUS, **kw)
    comb = np.hypot(plus.stderr, minus.stderr)
    assert np.all(np.abs(plus.mean_velocity + minus.mean_velocity) < 3 * comb)
    # |rho| noise scale: one over sqrt of the number of independent trajectories
    assert np.all(np.abs(plus.mode_11_magnitude - minus.mode_11_magnitude) < 3 * math.sqrt(2 / 1024))
    np.testing.assert_allclose(plus.delta_values, minus.delta_values)
    assert plus.prediction == pytest.approx(sr_prediction(400.0))
    assert plus.prediction == pytest.approx(6.99, abs=5e-3)


def test_noise_sweep_peak_policy_picks_delta_in_scan_range():
    res = noise_sweep(_small_cfg(n_traj=256, measure_time=30.0), RB85, 400.0, [4.0, 8.0], 0.1)
    from latticesr.lattice_params import lattice_for_targets
    ox = lattice_for_targets(400.0, 4.0).Omega_X
    assert np.all(res.delta_values >= 0.55 * ox - 1e-9) and np.all(res.delta_values <= 1.15 * ox + 1e-9)
    with pytest.raises(InvalidGrid):
        noise_sweep(_small_cfg(), RB85, 400.0, [0.0, 1.0], 0.1)
