import math
from dataclasses import replace

import numpy as np
import pytest
from statsmodels.sandbox.stats.runs import runstest_1samp

from conftest import SPECTRUM_GRID_KHZ, random_fit_draw
from latticesr.errors import EmptyFile, InvalidGrid, MalformedRow, TooFewPoints
from latticesr.specfit import (FitModel, SpectrumData, eval_fit_model, fit_spectrum, load_spectrum_csv,
                               model_jacobian, pack, param_names, unpack)

ZERO = FitModel(A_Z1=0, A_Z2=0, A_B1=0, A_B2=0, Omega_Z1=170, Omega_Z2=-170, Omega_B1=60,
                Omega_B2=-60, sigma_Z1=20, sigma_Z2=20, sigma_B1=8, a1=1.0, a2=0, a3=0, a4=0,
                x0=0, gamma_width=5)


def noisy(m, rng, grid=SPECTRUM_GRID_KHZ, rel=0.02):
    y = eval_fit_model(m, grid)
    return SpectrumData(grid, y * (1 + rel * rng.standard_normal(len(grid))), unit="khz")


def test_model_trivial_values():
    d = np.linspace(-300, 300, 7)
    np.testing.assert_allclose(eval_fit_model(ZERO, d), 1.0)
    z = replace(ZERO, a1=0.0, A_Z1=0.7)
    assert eval_fit_model(z, 170.0) == pytest.approx(0.7)
    disp = replace(ZERO, a1=0.0, a4=2.0, x0=3.0)
    u = np.linspace(0.1, 50, 40)
    np.testing.assert_allclose(eval_fit_model(disp, -3.0 + u), -eval_fit_model(disp, -3.0 - u), rtol=1e-14)
    lor = replace(ZERO, a1=0.0, a3=10.0, x0=-2.0)
    assert eval_fit_model(lor, 2.0) == pytest.approx(10.0 / 25.0)


def test_shared_and_separate_brillouin_width():
    sep = replace(ZERO, sigma_B2=3.0)
    assert not ZERO.separate_sigma_B2 and ZERO.effective_sigma_B2 == ZERO.sigma_B1
    assert sep.separate_sigma_B2 and sep.effective_sigma_B2 == 3.0
    assert len(param_names(True)) == len(param_names(False)) + 1
    assert FitModel.from_dict(sep.to_dict()) == sep
    assert FitModel.from_dict(ZERO.to_dict()) == ZERO


def test_jacobian_matches_finite_differences():
    rng = np.random.default_rng(3)
    worst = 0.0
    for k in range(100):
        _, m = random_fit_draw(rng)
        sep = bool(k % 2)
        if sep:
            m = replace(m, sigma_B2=m.sigma_B1 * 1.1)
        th = pack(m)
        d = rng.uniform(-300, 300, 50)
        J = model_jacobian(th, d, sep)
        fd = np.empty_like(J)
        for i in range(len(th)):
            h = 1e-6 * max(1.0, abs(th[i]))
            tp, tm = th.copy(), th.copy()
            tp[i] += h
            tm[i] -= h
            fd[:, i] = (eval_fit_model(unpack(tp, sep), d) - eval_fit_model(unpack(tm, sep), d)) / (2 * h)
        col = np.maximum(np.abs(J).max(axis=0), 1e-300)
        worst = max(worst, float((np.abs(fd - J).max(axis=0) / col).max()))
    assert worst < 1e-6


def test_round_trip_recovers_parameters():
    rng = np.random.default_rng(11)
    for _ in range(10):
        lat, m = random_fit_draw(rng)
        res = fit_spectrum(noisy(m, rng), lat=lat)
        p = res.params
        assert res.converged and res.status == "Converged"
        assert abs(p.A_B1 - m.A_B1) < 0.05 * abs(m.A_B1)
        for c in ("Omega_Z1", "Omega_Z2", "Omega_B1", "Omega_B2"):
            assert abs(getattr(p, c) - getattr(m, c)) < 0.02 * abs(getattr(m, c))


def test_absent_brillouin_feature():
    rng = np.random.default_rng(5)
    lat, m = random_fit_draw(rng)
    m = replace(m, A_B1=0.0, A_B2=0.0)
    res = fit_spectrum(noisy(m, rng), lat=lat)
    assert abs(res.params.A_B1) < 3 * res.stderr["A_B1"]


def test_spectrum_with_lattice_scale_features(spectrum_lattice):
    rng = np.random.default_rng(8)
    m = FitModel(A_Z1=0.6, A_Z2=-0.6, A_B1=0.4, A_B2=-0.4, Omega_Z1=170, Omega_Z2=-170,
                 Omega_B1=60, Omega_B2=-60, sigma_Z1=22, sigma_Z2=22, sigma_B1=8,
                 a1=1.0, a2=0.0, a3=8.0, a4=0.5, x0=0.0, gamma_width=5.0)
    res = fit_spectrum(noisy(m, rng), lat=spectrum_lattice)
    p = res.params
    assert res.converged
    assert p.Omega_Z1 == pytest.approx(170, rel=0.1) and p.Omega_Z2 == pytest.approx(-170, rel=0.1)
    assert p.Omega_B1 == pytest.approx(60, rel=0.1) and p.Omega_B2 == pytest.approx(-60, rel=0.1)
    d = res.to_dict()
    assert d["A"] == p.A_B1 and d["A_abs"] == abs(p.A_B1) and d["A_negative_side"] == p.A_B2


def test_amplitudes_scale_with_transmission():
    rng = np.random.default_rng(21)
    lat, m = random_fit_draw(rng)
    data = noisy(m, rng)
    base = fit_spectrum(data, lat=lat)
    c = 2.5
    init = replace(base.params, **{k: c * getattr(base.params, k)
                                   for k in ("A_Z1", "A_Z2", "A_B1", "A_B2", "a1", "a2", "a3", "a4")})
    scaled = fit_spectrum(data.scaled(c), init=init)
    for k in ("A_Z1", "A_Z2", "A_B1", "A_B2", "a1", "a3", "a4"):
        assert getattr(scaled.params, k) == pytest.approx(c * getattr(base.params, k), rel=1e-6)
    for k in ("Omega_Z1", "Omega_Z2", "Omega_B1", "Omega_B2", "sigma_Z1", "sigma_Z2", "sigma_B1",
              "gamma_width"):
        assert getattr(scaled.params, k) == pytest.approx(getattr(base.params, k), rel=1e-6)
    assert scaled.residual_rms == pytest.approx(c * base.residual_rms, rel=1e-6)


def test_mirror_equivariance():
    rng = np.random.default_rng(4)
    lat, m = random_fit_draw(rng)
    data = noisy(m, rng)
    a = fit_spectrum(data, lat=lat)
    b = fit_spectrum(data.mirrored(), init=a.params.mirrored())
    assert abs(a.residual_rms - b.residual_rms) < 1e-9
    assert b.params.A_B1 == pytest.approx(a.params.A_B2, rel=1e-6)
    assert b.params.a4 == pytest.approx(-a.params.a4, rel=1e-6)


def test_residuals_have_no_structure():
    rng = np.random.default_rng(9)
    lat, m = random_fit_draw(rng)
    data = noisy(m, rng)
    res = fit_spectrum(data, lat=lat)
    r = data.transmission - eval_fit_model(res.params, data.detuning)
    _, p = runstest_1samp(r, cutoff=0.0)
    assert p > 0.01


def test_separate_width_fit_recovers_it():
    rng = np.random.default_rng(12)
    lat, m = random_fit_draw(rng)
    m = replace(m, sigma_B2=m.sigma_B1 * 1.5)
    res = fit_spectrum(noisy(m, rng), lat=lat, separate_sigma_B2=True)
    assert res.params.separate_sigma_B2
    assert res.params.sigma_B2 == pytest.approx(m.sigma_B2, rel=0.1)


def test_spectrum_data_validation():
    d = np.linspace(0, 1, 30)
    with pytest.raises(TooFewPoints):
        SpectrumData(d[:19], d[:19], unit="khz")
    with pytest.raises(InvalidGrid):
        SpectrumData(np.r_[d[:10], d[:20]], np.ones(30), unit="khz")
    with pytest.raises(InvalidGrid):
        SpectrumData(d, d[:25], unit="khz")
    with pytest.raises(InvalidGrid):
        SpectrumData(d, np.r_[np.nan, d[1:]], unit="khz")


def test_csv_loader(tmp_path):
    rng = np.random.default_rng(2)
    d = rng.permutation(np.linspace(-300, 300, 100))
    f = tmp_path / "scan.csv"
    f.write_text("delta,transmission\n" + "".join(f"{float(a)!r},{float(1 + a / 1e3)!r}\n" for a in d) + "\n")
    data = load_spectrum_csv(f, "khz")
    assert len(data) == 100 and np.all(np.diff(data.detuning) > 0)
    np.testing.assert_allclose(data.transmission, 1 + data.detuning / 1e3)
    bad = tmp_path / "bad.csv"
    bad.write_text("delta,transmission\n1.0,2.0\nabc,1.0\n")
    with pytest.raises(MalformedRow) as exc:
        load_spectrum_csv(bad)
    assert exc.value.line_number == 3
    empty = tmp_path / "empty.csv"
    empty.write_text("delta,transmission\n\n")
    with pytest.raises(EmptyFile):
        load_spectrum_csv(empty)
