"""Density-wave mode spectra, detuning and noise sweeps, resonance location."""
from __future__ import annotations

import csv
import enum
import io
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .dynamics import EnsembleStats, SimConfig, simulate_ensemble
from .errors import InvalidConfig, InvalidGrid, LatticeSRError, TooFewSamples
from .fields import DriveMode, ProbeDrive
from .lattice_params import RB85, AtomicSpecies, DerivedLattice, Geometry, lattice_for_targets

log = logging.getLogger(__name__)

MIN_MODE_SAMPLES = 1000


@dataclass
class ModeSpectrum:
    """Fourier amplitudes rho[l, n] of the atomic density, for l = 0..L_max and
    n = -N_max..N_max (stored at column n + N_max).

    rho[l, n] = <exp(-i (n k_x x - l delta t))> over the samples; the entries with
    l < 0 follow from rho[-l, -n] = conj(rho[l, n]).
    """

    amplitudes: np.ndarray
    delta: float
    sample_count: int
    stderr: np.ndarray | None = None

    @property
    def L_max(self) -> int:
        return self.amplitudes.shape[0] - 1

    @property
    def N_max(self) -> int:
        return (self.amplitudes.shape[1] - 1) // 2

    def __getitem__(self, ln) -> complex:
        l, n = ln
        if l < 0:
            return complex(np.conj(self.amplitudes[-l, -n + self.N_max]))
        return complex(self.amplitudes[l, n + self.N_max])

    @property
    def magnitudes(self) -> np.ndarray:
        return np.abs(self.amplitudes)

    @property
    def phases(self) -> np.ndarray:
        return np.angle(self.amplitudes)

    @property
    def noise_floor(self) -> float:
        """Scale of estimator noise, 1/sqrt(M) for M independent samples."""
        return 1.0 / math.sqrt(self.effective_sample_count)

    @property
    def effective_sample_count(self) -> float:
        """Samples along one trajectory are correlated; when per-trajectory
        standard errors are known, M is the number of independent samples implied
        by the largest of them over the modes with l >= 1, otherwise the raw count."""
        if self.stderr is None or self.L_max < 1:
            return float(self.sample_count)
        err = float(np.max(self.stderr[1:]))
        return float(self.sample_count) if not err > 0 else min(float(self.sample_count), 1.0 / err**2)

    def dominant_propagating(self) -> tuple[int, int]:
        """(l, n) of the largest-magnitude mode with l >= 1."""
        mags = self.magnitudes[1:]
        l, j = np.unravel_index(int(np.argmax(mags)), mags.shape)
        return int(l) + 1, int(j) - self.N_max

    def to_dict(self) -> dict:
        rows = []
        for l in range(self.L_max + 1):
            for n in range(-self.N_max, self.N_max + 1):
                a = self[l, n]
                rows.append({"l": l, "n": n, "re": a.real, "im": a.imag, "abs": abs(a),
                             "phase": math.atan2(a.imag, a.real)})
        if self.stderr is not None:
            for r in rows:
                r["stderr"] = float(self.stderr[r["l"], r["n"] + self.N_max])
        return {"delta": self.delta, "sample_count": self.sample_count,
                "effective_sample_count": self.effective_sample_count, "modes": rows}


class ModeAccumulator:
    """Streaming version of `mode_spectrum`: feed chunks of (x, t) samples."""

    def __init__(self, k_x: float, delta: float, L_max: int = 3, N_max: int = 3):
        self.k_x = k_x
        self.delta = delta
        self.L_max = L_max
        self.N_max = N_max
        self.sums = np.zeros((L_max + 1, 2 * N_max + 1), dtype=complex)
        self.count = 0

    def add(self, x, t) -> None:
        x = np.ravel(np.asarray(x, dtype=float))
        t = np.broadcast_to(np.asarray(t, dtype=float), x.shape).ravel()
        ls = np.arange(self.L_max + 1)[:, None, None]
        ns = np.arange(-self.N_max, self.N_max + 1)[None, :, None]
        phase = ns * (self.k_x * x)[None, None, :] - ls * (self.delta * t)[None, None, :]
        self.sums += np.exp(-1j * phase).sum(axis=2)
        self.count += x.size

    def spectrum(self) -> ModeSpectrum:
        if self.count < MIN_MODE_SAMPLES:
            raise TooFewSamples(f"{self.count} samples < {MIN_MODE_SAMPLES}")
        return ModeSpectrum(self.sums / self.count, self.delta, self.count)


def mode_spectrum(x, t, lat: DerivedLattice, drive: ProbeDrive, L_max: int = 3,
                  N_max: int = 3) -> ModeSpectrum:
    """Direct (unbinned) estimate of rho[l, n] from position samples x taken at times t."""
    if L_max > 0 and not drive.delta > 0:
        raise InvalidConfig("temporal harmonics need a positive probe detuning")
    acc = ModeAccumulator(lat.k_x, drive.delta, L_max, N_max)
    acc.add(x, t)
    return acc.spectrum()


def spectrum_from_stats(stats: EnsembleStats, drive: ProbeDrive) -> ModeSpectrum:
    """Mode spectrum streamed by the ensemble kernel during the measurement window."""
    if stats.n_mode_samples < MIN_MODE_SAMPLES:
        raise TooFewSamples(f"{stats.n_mode_samples} samples < {MIN_MODE_SAMPLES}")
    return ModeSpectrum(stats.mode_sums / stats.n_mode_samples, drive.delta, stats.n_mode_samples,
                        stats.mode_stderr)


@dataclass
class Peak:
    location: float
    uncertainty: float
    value: float
    index: int
    bracketed: bool = True
    tie: bool = False

    @property
    def status(self) -> str:
        return "ok" if self.bracketed else "NotBracketed"


def parabola_vertex(x0, y0, x1, y1, x2, y2) -> tuple[float, float]:
    """Vertex (x, y) of the parabola through three points."""
    d0, d2 = x1 - x0, x1 - x2
    num = d0 * d0 * (y1 - y2) - d2 * d2 * (y1 - y0)
    den = d0 * (y1 - y2) - d2 * (y1 - y0)
    if den == 0:
        return x1, y1
    xv = x1 - 0.5 * num / den
    # y at the vertex from the Lagrange form
    l0 = (xv - x1) * (xv - x2) / ((x0 - x1) * (x0 - x2))
    l1 = (xv - x0) * (xv - x2) / ((x1 - x0) * (x1 - x2))
    l2 = (xv - x0) * (xv - x1) / ((x2 - x0) * (x2 - x1))
    return xv, l0 * y0 + l1 * y1 + l2 * y2


def local_maxima(y) -> list[int]:
    y = np.asarray(y, dtype=float)
    return [i for i in range(1, y.size - 1) if y[i] > y[i - 1] and y[i] >= y[i + 1]]


def locate_peak(x, y, yerr=None, n_boot: int = 400, seed: int = 0) -> Peak:
    """Peak of sampled data by quadratic interpolation through the highest grid
    point and its two neighbours.

    When another local maximum lies within the combined standard error of the
    highest point, the one at the lower axis value is used and ``tie`` is set.
    The uncertainty is the spread of the vertex under Gaussian resampling of
    the three ordinates with their standard errors.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    err = np.zeros_like(y) if yerr is None else np.asarray(yerr, dtype=float)
    ok = np.isfinite(y)
    if ok.sum() < 3:
        raise InvalidGrid("need at least three finite points to locate a peak")
    xs, ys, es = x[ok], y[ok], err[ok]
    i = int(np.argmax(ys))
    tie = False
    for j in local_maxima(ys):
        if j < i and ys[j] >= ys[i] - math.hypot(es[i], es[j]):
            i, tie = j, True
            break
    if i == 0 or i == ys.size - 1:
        return Peak(float(xs[i]), float("nan"), float(ys[i]), i, bracketed=False, tie=tie)
    sl = slice(i - 1, i + 2)
    xv, yv = parabola_vertex(xs[i - 1], ys[i - 1], xs[i], ys[i], xs[i + 1], ys[i + 1])
    unc = 0.0
    if np.any(es[sl] > 0):
        rng = np.random.default_rng(seed)
        draws = ys[sl][None, :] + rng.standard_normal((n_boot, 3)) * es[sl][None, :]
        verts = np.array([parabola_vertex(xs[i - 1], a, xs[i], b, xs[i + 1], c)[0]
                          for a, b, c in draws])
        verts = np.clip(verts, xs[i - 1], xs[i + 1])
        unc = float(np.std(verts, ddof=1))
    return Peak(float(xv), unc, float(yv), i, bracketed=True, tie=tie)


class DeltaPolicy(str, enum.Enum):
    FIXED_AT_OMEGA_X = "FixedAtOmegaX"
    PEAK_OF_DELTA_SWEEP = "PeakOfDeltaSweep"


@dataclass
class SweepResult:
    """Per-point current, its standard error and the co-propagating |rho[1, +-1]|.

    ``peak`` is located on the current along the drive direction (``-<v>`` for
    TravelingMinus) and ``mode_11_peak`` on the mode magnitude.
    """

    axis_name: str
    axis_values: np.ndarray
    mean_velocity: np.ndarray
    stderr: np.ndarray
    mode_11_magnitude: np.ndarray
    status: list[str]
    peak: Peak | None
    mode_11_peak: Peak | None = None
    delta_values: np.ndarray | None = None
    prediction: float | None = None
    prediction_name: str = ""
    spectra: list = field(default_factory=list, repr=False)
    eps_p: float = 0.0
    mode: str = ""

    def __post_init__(self):
        n = len(self.axis_values)
        for f in ("mean_velocity", "stderr", "mode_11_magnitude"):
            if len(getattr(self, f)) != n:
                raise ValueError("sweep arrays must have equal length")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["axis_value", "mean_velocity", "stderr", "mode11_magnitude", "status"])
        for row in zip(self.axis_values, self.mean_velocity, self.stderr, self.mode_11_magnitude,
                       self.status):
            w.writerow([repr(float(v)) for v in row[:4]] + [row[4]])
        return buf.getvalue()

    def summary(self) -> dict:
        def pk(p):
            if p is None:
                return None
            return {"location": p.location, "uncertainty": p.uncertainty, "value": p.value,
                    "status": p.status, "tie": p.tie}
        return {
            "axis": self.axis_name,
            "peak_location": None if self.peak is None else self.peak.location,
            "peak_uncertainty": None if self.peak is None else self.peak.uncertainty,
            "peak": pk(self.peak),
            "mode_11_peak": pk(self.mode_11_peak),
            "prediction": self.prediction,
            "prediction_name": self.prediction_name,
            "eps_p": self.eps_p,
            "mode": self.mode,
            "delta_values": None if self.delta_values is None else list(map(float, self.delta_values)),
        }


def point_seed(master_seed: int, index: int) -> int:
    """Deterministic per-grid-point seed derived from (master seed, point index)."""
    return int(np.random.SeedSequence(master_seed, spawn_key=(index,)).generate_state(1, np.uint64)[0])


def point_config(template: SimConfig, lat: DerivedLattice, drive: ProbeDrive, seed: int) -> SimConfig:
    """Adapt a template config to one grid point.

    The template's dt is an upper bound and its burn-in a lower bound; both are
    tightened to satisfy the resolution invariants for this lattice and drive.
    """
    auto = SimConfig.for_lattice(lat, drive)
    return replace(template, dt=min(template.dt, auto.dt), burn_in=max(template.burn_in, auto.burn_in),
                   seed=seed)


def copropagating_mode(spec: ModeSpectrum, mode: DriveMode) -> complex:
    """rho[1, +1] for drives moving towards +x (and standing drives), rho[1, -1]
    for TravelingMinus, so that mirrored runs report the same quantity."""
    if spec.L_max < 1 or spec.N_max < 1:
        return complex("nan")
    return spec[1, -1] if DriveMode(mode) is DriveMode.TRAVELING_MINUS else spec[1, 1]


def _run_point(cfg, lat, drive):
    st = simulate_ensemble(cfg, lat, drive)
    spec = spectrum_from_stats(st, drive)
    return st, spec, abs(copropagating_mode(spec, drive.mode))


def _map(fn, items, workers):
    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(fn, items))
    return [fn(it) for it in items]


def delta_sweep(cfg: SimConfig, lat: DerivedLattice, eps_p: float, mode: DriveMode,
                delta_grid, workers: int = 1) -> SweepResult:
    """Current and |rho[1,1]| as a function of probe detuning."""
    grid = np.asarray(delta_grid, dtype=float)
    if grid.ndim != 1 or grid.size < 1 or np.any(grid <= 0) or np.any(np.diff(grid) <= 0):
        raise InvalidGrid("delta_grid must be positive and strictly increasing")

    def one(k):
        drive = ProbeDrive(eps_p, float(grid[k]), mode)
        try:
            st, spec, m11 = _run_point(point_config(cfg, lat, drive, point_seed(cfg.seed, k)), lat, drive)
            return st.mean_velocity, st.stderr, m11, "ok", spec
        except LatticeSRError as exc:
            log.warning("delta point %d failed: %s", k, exc)
            return math.nan, math.nan, math.nan, f"error: {exc}", None

    res = _map(one, range(grid.size), workers)
    v, e, m, status, spectra = (list(c) for c in zip(*res))
    v, e, m = np.array(v), np.array(e), np.array(m)
    return SweepResult(
        axis_name="delta", axis_values=grid, mean_velocity=v, stderr=e, mode_11_magnitude=m,
        status=status, peak=_safe_peak(grid, drive_direction(mode) * v, e),
        mode_11_peak=_safe_peak(grid, m, None), delta_values=grid.copy(), prediction=lat.Omega_X, prediction_name="Omega_X", spectra=spectra,
        eps_p=eps_p, mode=DriveMode(mode).value)


def drive_direction(mode: DriveMode) -> float:
    """Sign of the transport direction favoured by the drive (peaks are located on
    direction * <v>)."""
    return -1.0 if DriveMode(mode) is DriveMode.TRAVELING_MINUS else 1.0


def _safe_peak(x, y, e):
    try:
        return locate_peak(x, y, e)
    except InvalidGrid:
        return None


COARSE_DELTA_FRACTIONS = np.linspace(0.55, 1.15, 7)


def noise_sweep(cfg: SimConfig, species: AtomicSpecies, target_U0: float, gamma_s_grid,
                eps_p: float, mode: DriveMode = DriveMode.TRAVELING_PLUS,
                delta_policy: DeltaPolicy = DeltaPolicy.PEAK_OF_DELTA_SWEEP,
                theta_x: float = math.radians(25.0), coarse_fraction: float = 0.25,
                workers: int = 1) -> SweepResult:
    """Current versus photon scattering rate at fixed well depth.

    For every Gamma_S the beam parameters are re-derived so that U0 (hence
    Omega_X) stays fixed.  With ``PeakOfDeltaSweep`` a coarse 7-point detuning
    scan (``coarse_fraction`` of the trajectories) over 0.55..1.15 Omega_X locates
    the best detuning, which is then simulated with the full ensemble.
    """
    grid = np.asarray(gamma_s_grid, dtype=float)
    if grid.ndim != 1 or grid.size < 1 or np.any(grid <= 0) or np.any(np.diff(grid) <= 0):
        raise InvalidGrid("gamma_s_grid must be positive and strictly increasing")
    policy = DeltaPolicy(delta_policy)

    def one(k):
        seed = point_seed(cfg.seed, k)
        try:
            lat = lattice_for_targets(target_U0, float(grid[k]), theta_x, species=species,
                                      geometry=Geometry.THREE_D)
            if policy is DeltaPolicy.FIXED_AT_OMEGA_X:
                delta = lat.Omega_X
            else:
                coarse = replace(cfg, n_traj=max(64, int(cfg.n_traj * coarse_fraction)))
                dgrid = COARSE_DELTA_FRACTIONS * lat.Omega_X
                cs = delta_sweep(replace(coarse, seed=seed), lat, eps_p, mode, dgrid)
                delta = cs.peak.location if cs.peak is not None else lat.Omega_X
                delta = float(np.clip(delta, dgrid[0], dgrid[-1]))
            drive = ProbeDrive(eps_p, delta, mode)
            st, spec, m11 = _run_point(point_config(cfg, lat, drive, seed ^ 0x5DEECE66D), lat, drive)
            return st.mean_velocity, st.stderr, m11, "ok", spec, delta, lat.Gamma_S_SR
        except LatticeSRError as exc:
            log.warning("noise point %d failed: %s", k, exc)
            return math.nan, math.nan, math.nan, f"error: {exc}", None, math.nan, math.nan

    res = _map(one, range(grid.size), workers)
    v, e, m, status, spectra, deltas, preds = (list(c) for c in zip(*res))
    v, e, m = np.array(v), np.array(e), np.array(m)
    pred = float(np.nanmean(preds)) if np.any(np.isfinite(preds)) else None
    return SweepResult(
        axis_name="Gamma_S", axis_values=grid, mean_velocity=v, stderr=e, mode_11_magnitude=m,
        status=status, peak=_safe_peak(grid, drive_direction(mode) * v, e),
        mode_11_peak=_safe_peak(grid, m, None), delta_values=np.array(deltas), prediction=pred, prediction_name="Gamma_S_SR",
        spectra=spectra, eps_p=eps_p, mode=DriveMode(mode).value)


def sr_prediction(target_U0: float, theta_x: float = math.radians(25.0)) -> float:
    """Resonant scattering rate (6/pi) sin(theta_x) sqrt(|Delta0'|) at fixed U0."""
    return (6.0 / math.pi) * math.sin(theta_x) * math.sqrt(3.0 * target_U0 / 16.0)
