"""Semiclassical trajectory ensembles on the spin-dependent x-lattice.

Each atom moves on U_spin(x) + probe term (velocity Verlet), switches spin as an
inhomogeneous Poisson process with rate gamma_spin(x) (thinning against the bound
16*Gamma_S/9), and receives recoil kicks of +-k_x at every spin flip and at
optional spin-preserving scattering events.

Randomness inside the kernel comes from one SplitMix64 stream per trajectory,
keyed by `numpy.random.SeedSequence`, so results do not depend on how the
trajectories are scheduled across threads.
"""
from __future__ import annotations

import enum
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace

import numba as nb
import numpy as np

from .errors import InvalidConfig
from .fields import ProbeDrive, force_scalar, potential_scalar, rate_scalar
from .lattice_params import MASS, DerivedLattice, Geometry

# Rate of spin-preserving scattering in units of Gamma_S.  8 is the rate for an
# atom at the bottom of its well, where the light is purely circular.
DEFAULT_ELASTIC_FRACTION = 8.0


class Spin(enum.IntEnum):
    MINUS = -1
    PLUS = 1


@dataclass(frozen=True)
class AtomState:
    x: float
    p: float
    spin: Spin
    t: float = 0.0


@dataclass
class Ensemble:
    """Struct-of-arrays view of many `AtomState`s."""

    x: np.ndarray
    p: np.ndarray
    spin: np.ndarray
    t: float = 0.0

    def __len__(self):
        return self.x.size

    def __getitem__(self, i) -> AtomState:
        return AtomState(float(self.x[i]), float(self.p[i]), Spin(int(self.spin[i])), self.t)

    def __iter__(self):
        return (self[i] for i in range(len(self)))


@dataclass(frozen=True)
class SimConfig:
    n_traj: int = 4096
    dt: float = 0.005
    burn_in: float = 100.0
    measure_time: float = 200.0
    init_temperature: float | None = None  # hbar*omega_r; None means U0/10
    recoil_kicks_per_jump: int = 2
    elastic_scatter_fraction: float = DEFAULT_ELASTIC_FRACTION
    seed: int = 0
    sample_interval: float = 0.05
    L_max: int = 3
    N_max: int = 3
    hist_bins: int = 32
    record_traj: int = 0
    record_interval: float = 1.0

    UNITS = {"dt": "1/omega_r", "burn_in": "1/omega_r", "measure_time": "1/omega_r",
             "init_temperature": "hbar*omega_r", "sample_interval": "1/omega_r",
             "record_interval": "1/omega_r"}

    @classmethod
    def for_lattice(cls, lat: DerivedLattice, drive: ProbeDrive | None = None, **kw) -> "SimConfig":
        """Config whose step and burn-in satisfy the resolution invariants for ``lat``.

        The step resolves one oscillation with 60 steps and keeps
        dt*gamma_max at 0.08; burn-in covers 20 probe periods and at least 120
        mean Sisyphus relaxation times (~1/Gamma_S each).
        """
        dt = min(2 * math.pi / lat.Omega_X / 60.0, 0.08 / lat.gamma_max)
        burn = max(60.0, 120.0 / lat.Gamma_S)
        if drive is not None and drive.is_on and drive.delta > 0:
            burn = max(burn, 20.5 * 2 * math.pi / drive.delta)
        kw.setdefault("dt", dt)
        kw.setdefault("burn_in", burn)
        return cls(**kw)

    def temperature(self, lat: DerivedLattice) -> float:
        return lat.U0 / 10.0 if self.init_temperature is None else self.init_temperature

    def validate(self, lat: DerivedLattice, drive: ProbeDrive) -> None:
        if lat.geometry is not Geometry.THREE_D:
            raise InvalidConfig("dynamics run on the x-section of the tetrahedral lattice")
        if self.n_traj < 1:
            raise InvalidConfig(f"n_traj must be >= 1, got {self.n_traj}")
        if not self.dt > 0:
            raise InvalidConfig("dt must be > 0")
        if self.dt > (2 * math.pi / lat.Omega_X) / 50 * (1 + 1e-12):
            raise InvalidConfig(f"dt = {self.dt} does not resolve the oscillation period "
                                f"(max {(2 * math.pi / lat.Omega_X) / 50:.4g})")
        if self.dt * lat.gamma_max > 0.1 * (1 + 1e-12):
            raise InvalidConfig(f"dt*gamma_max = {self.dt * lat.gamma_max:.3g} > 0.1")
        if drive.is_on and drive.delta > 0 and self.burn_in < 20 * 2 * math.pi / drive.delta:
            raise InvalidConfig("burn_in shorter than 20 probe periods")
        if self.burn_in < 0 or not self.measure_time > 0:
            raise InvalidConfig("burn_in must be >= 0 and measure_time > 0")
        if self.recoil_kicks_per_jump < 0 or self.elastic_scatter_fraction < 0:
            raise InvalidConfig("recoil parameters must be non-negative")
        if self.temperature(lat) < 0:
            raise InvalidConfig("init_temperature must be >= 0")
        if self.L_max < 0 or self.N_max < 0 or self.hist_bins < 1:
            raise InvalidConfig("mode window and histogram size must be non-negative")
        if not 0 <= self.seed < 2**64:
            raise InvalidConfig("seed must be an unsigned 64-bit integer")

    def steps(self) -> tuple[int, int, int, int]:
        """(burn-in steps, measurement steps, sample stride, record stride)."""
        n_burn = int(round(self.burn_in / self.dt))
        n_meas = max(1, int(round(self.measure_time / self.dt)))
        stride = max(1, int(round(self.sample_interval / self.dt)))
        rstride = max(1, int(round(self.record_interval / self.dt)))
        return n_burn, n_meas, stride, rstride

    def to_dict(self) -> dict:
        return {**asdict(self), "units": dict(self.UNITS)}

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        return cls(**{f.name: d[f.name] for f in fields(cls) if f.name in d})


@dataclass
class EnsembleStats:
    mean_velocity: float
    stderr: float
    realized_jump_rate: float
    position_weighted_rate: float
    kinetic_temperature: float
    n_traj: int
    measure_time: float
    velocities: np.ndarray = field(repr=False)
    mode_sums: np.ndarray = field(repr=False)
    n_mode_samples: int = 0
    # standard error of each rho[l, n], from the spread of per-trajectory means
    mode_stderr: np.ndarray | None = field(default=None, repr=False)
    jump_histogram: np.ndarray = field(default=None, repr=False)
    final: Ensemble | None = field(default=None, repr=False)
    trajectories: np.ndarray | None = field(default=None, repr=False)
    wall_time: float = 0.0

    def summary(self) -> dict:
        return {"mean_velocity": self.mean_velocity, "stderr": self.stderr,
                "realized_jump_rate": self.realized_jump_rate, "n_traj": self.n_traj,
                "wall_time": self.wall_time}


def _streams(seed: int):
    """Independent child seed sequences for initialization and for the kernel."""
    return np.random.SeedSequence(seed).spawn(2)


def init_ensemble(cfg: SimConfig, lat: DerivedLattice) -> Ensemble:
    """Uniform positions over one period, Maxwell momenta at the configured
    temperature, equiprobable spins; deterministic in ``cfg.seed``."""
    rng = np.random.default_rng(_streams(cfg.seed)[0])
    n = cfg.n_traj
    x = rng.uniform(0.0, lat.spatial_period, n)
    p = rng.normal(0.0, math.sqrt(MASS * cfg.temperature(lat)), n)
    spin = np.where(rng.random(n) < 0.5, -1.0, 1.0)
    return Ensemble(x, p, spin, 0.0)


def _drive_args(lat: DerivedLattice, drive: ProbeDrive):
    return lat.U0 * drive.effective_eps, drive.mode.code, drive.delta


def step(state: AtomState, lat: DerivedLattice, drive: ProbeDrive, dt: float,
         rng: np.random.Generator, recoil_kicks: int = 2, elastic_fraction: float = 0.0) -> AtomState:
    """Advance one atom by one time step.

    Velocity Verlet under U_spin plus the probe term (forces at t and t + dt),
    then a thinning trial at the new position: a candidate fires with
    probability 1 - exp(-gamma_max dt) and is accepted with probability
    gamma_spin(x)/gamma_max.  An accepted candidate flips the spin and applies
    ``recoil_kicks`` kicks of random sign and size k_x.
    """
    amp, mode, delta = _drive_args(lat, drive)
    kx, s, t = lat.k_x, float(state.spin), state.t
    f0 = force_scalar(state.x, s, lat.U0, kx, amp, mode, math.cos(delta * t), math.sin(delta * t))
    p = state.p + 0.5 * dt * f0
    x = state.x + dt * p / MASS
    t1 = t + dt
    c1, s1 = math.cos(delta * t1), math.sin(delta * t1)
    p += 0.5 * dt * force_scalar(x, s, lat.U0, kx, amp, mode, c1, s1)
    gmax = lat.gamma_max
    if rng.random() < -math.expm1(-gmax * dt):
        if rng.random() * gmax < rate_scalar(x, s, lat.Gamma_S, kx):
            s = -s
            p += kx * float(np.sum(rng.choice((-1.0, 1.0), recoil_kicks)))
    if elastic_fraction > 0 and rng.random() < -math.expm1(-elastic_fraction * lat.Gamma_S * dt):
        p += kx * float(np.sum(rng.choice((-1.0, 1.0), recoil_kicks)))
    return AtomState(x, p, Spin(int(s)), t1)


_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_INV53 = 1.0 / 9007199254740992.0


@nb.njit(cache=True, inline="always")
def _next_uniform(state):
    """SplitMix64 step; returns (new state, uniform in (0, 1])."""
    state = state + _GOLDEN
    z = state
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    z = z ^ (z >> np.uint64(31))
    return state, (float(z >> np.uint64(11)) + 1.0) * _INV53


@nb.njit(cache=True, inline="always")
def _geometric(state, log_q):
    """Number of failed Bernoulli trials before the next success (log_q = log(1 - p))."""
    state, r = _next_uniform(state)
    return state, np.int64(math.floor(math.log(r) / log_q))


@nb.njit(cache=True, inline="always")
def _kicks(state, n, kx):
    dp = 0.0
    for _ in range(n):
        state, r = _next_uniform(state)
        dp += kx if r < 0.5 else -kx
    return state, dp


@nb.njit(cache=True, parallel=True)
def _ensemble_kernel(x0, p0, s0, keys, U0, kx, gamma_s, amp, mode, delta, dt, n_burn, n_meas,
                     stride, L, N, nbins, nkicks, elastic_rate, n_rec, rstride):
    n = x0.size
    nsteps = n_burn + n_meas
    ph = delta * dt * np.arange(nsteps + 1)
    cph = np.cos(ph)
    sph = np.sin(ph)
    gmax = 16.0 * gamma_s / 9.0
    log_q = -gmax * dt
    log_qe = -elastic_rate * dt
    period = 2.0 * math.pi / kx
    n_samp = n_meas // stride
    n_rsamp = n_meas // rstride + 1

    disp = np.empty(n)
    jumps = np.zeros(n, dtype=np.int64)
    modes = np.zeros((n, L + 1, 2 * N + 1), dtype=np.complex128)
    rate_sum = np.zeros(n)
    p2_sum = np.zeros(n)
    hist = np.zeros((n, 4, nbins), dtype=np.int64)
    xf = np.empty(n)
    pf = np.empty(n)
    sf = np.empty(n)
    rec = np.zeros((max(n_rec, 1), n_rsamp, 4))

    for i in nb.prange(n):
        st = keys[i]
        x = x0[i]
        p = p0[i]
        s = s0[i]
        st, wait = _geometric(st, log_q)
        ewait = np.int64(-1)
        if elastic_rate > 0.0:
            st, ewait = _geometric(st, log_qe)
        f = force_scalar(x, s, U0, kx, amp, mode, cph[0], sph[0])
        x_start = x
        nj = 0
        if n_burn == 0 and i < n_rec:
            rec[i, 0, 0] = 0.0
            rec[i, 0, 1] = x
            rec[i, 0, 2] = p
            rec[i, 0, 3] = s
        for k in range(nsteps):
            p += 0.5 * dt * f
            x += dt * p / MASS
            f = force_scalar(x, s, U0, kx, amp, mode, cph[k + 1], sph[k + 1])
            p += 0.5 * dt * f
            measuring = k >= n_burn
            if wait == 0:
                st, wait = _geometric(st, log_q)
                g = rate_scalar(x, s, gamma_s, kx)
                st, r = _next_uniform(st)
                b = int(((x % period) / period) * nbins) % nbins
                sidx = 0 if s > 0 else 2
                if measuring:
                    hist[i, sidx, b] += 1
                if r * gmax < g:
                    s = -s
                    st, dp = _kicks(st, nkicks, kx)
                    p += dp
                    f = force_scalar(x, s, U0, kx, amp, mode, cph[k + 1], sph[k + 1])
                    if measuring:
                        nj += 1
                        hist[i, sidx + 1, b] += 1
            else:
                wait -= 1
            if ewait == 0:
                st, ewait = _geometric(st, log_qe)
                st, dp = _kicks(st, nkicks, kx)
                p += dp
            elif ewait > 0:
                ewait -= 1
            kk = k + 1
            if kk == n_burn:
                x_start = x
            if kk > n_burn:
                m = kk - n_burn
                if m % stride == 0 and m // stride <= n_samp:
                    # accumulate exp(-i(n k_x x - l delta t)) for l = 0..L, n = -N..N
                    u = kx * x
                    eu = complex(math.cos(u), -math.sin(u))
                    et = complex(cph[kk], sph[kk])
                    el = 1.0 + 0.0j
                    for l in range(L + 1):
                        modes[i, l, N] += el
                        ep = el
                        em = el
                        for q in range(1, N + 1):
                            ep = ep * eu
                            em = em * eu.conjugate()
                            modes[i, l, N + q] += ep
                            modes[i, l, N - q] += em
                        el = el * et
                    rate_sum[i] += rate_scalar(x, s, gamma_s, kx)
                    p2_sum[i] += p * p
                if i < n_rec and (m % rstride == 0):
                    rec[i, m // rstride, 0] = kk * dt
                    rec[i, m // rstride, 1] = x
                    rec[i, m // rstride, 2] = p
                    rec[i, m // rstride, 3] = s
            if kk == n_burn and i < n_rec:
                rec[i, 0, 0] = kk * dt
                rec[i, 0, 1] = x
                rec[i, 0, 2] = p
                rec[i, 0, 3] = s
        disp[i] = x - x_start
        jumps[i] = nj
        xf[i] = x
        pf[i] = p
        sf[i] = s
    return disp, jumps, modes, rate_sum, p2_sum, hist, xf, pf, sf, rec, n_samp


def simulate_ensemble(cfg: SimConfig, lat: DerivedLattice, drive: ProbeDrive) -> EnsembleStats:
    """Run burn-in then measurement for every trajectory and reduce the results."""
    cfg.validate(lat, drive)
    ens = init_ensemble(cfg, lat)
    keys = _streams(cfg.seed)[1].generate_state(cfg.n_traj, np.uint64)
    n_burn, n_meas, stride, rstride = cfg.steps()
    amp, mode, delta = _drive_args(lat, drive)
    elastic_rate = cfg.elastic_scatter_fraction * lat.Gamma_S
    t0 = time.perf_counter()
    (disp, jumps, modes, rate_sum, p2_sum, hist, xf, pf, sf, rec, n_samp) = _ensemble_kernel(
        ens.x, ens.p, ens.spin, keys, lat.U0, lat.k_x, lat.Gamma_S, amp, mode, delta, cfg.dt,
        n_burn, n_meas, stride, cfg.L_max, cfg.N_max, cfg.hist_bins, cfg.recoil_kicks_per_jump,
        elastic_rate, cfg.record_traj, rstride)
    wall = time.perf_counter() - t0
    if not (np.all(np.isfinite(xf)) and np.all(np.isfinite(pf))):
        raise FloatingPointError("non-finite atom state produced by the integrator")
    t_meas = n_meas * cfg.dt
    v = disp / t_meas
    n = cfg.n_traj
    n_total = n * n_samp
    mode_err = None
    if n > 1 and n_samp > 0:
        per_traj = modes / n_samp
        mode_err = np.sqrt((per_traj.real.var(axis=0, ddof=1) + per_traj.imag.var(axis=0, ddof=1)) / n)
    return EnsembleStats(
        mean_velocity=float(v.mean()),
        stderr=float(v.std(ddof=1) / math.sqrt(n)) if n > 1 else float("nan"),
        realized_jump_rate=float(jumps.sum() / (n * t_meas)),
        position_weighted_rate=float(rate_sum.sum() / n_total) if n_total else float("nan"),
        kinetic_temperature=float(p2_sum.sum() / n_total / MASS) if n_total else float("nan"),
        n_traj=n,
        measure_time=t_meas,
        velocities=v,
        mode_sums=modes.sum(axis=0),
        n_mode_samples=n_total,
        mode_stderr=mode_err,
        jump_histogram=hist.sum(axis=0),
        final=Ensemble(xf, pf, sf, (n_burn + n_meas) * cfg.dt),
        trajectories=rec[: cfg.record_traj] if cfg.record_traj else None,
        wall_time=wall,
    )


@nb.njit(cache=True)
def _hamiltonian_kernel(x, p, s, U0, kx, amp, mode, delta, dt, n_steps, t0, every):
    out = np.empty((n_steps // every + 1, 3))
    t = t0
    f = force_scalar(x, s, U0, kx, amp, mode, math.cos(delta * t), math.sin(delta * t))
    out[0, 0] = x
    out[0, 1] = p
    out[0, 2] = p * p / (2 * MASS) + potential_scalar(x, s, U0, kx, amp, mode, math.cos(delta * t),
                                                      math.sin(delta * t))
    j = 1
    for k in range(n_steps):
        p += 0.5 * dt * f
        x += dt * p / MASS
        t = t0 + (k + 1) * dt
        c = math.cos(delta * t)
        sn = math.sin(delta * t)
        f = force_scalar(x, s, U0, kx, amp, mode, c, sn)
        p += 0.5 * dt * f
        if (k + 1) % every == 0:
            out[j, 0] = x
            out[j, 1] = p
            out[j, 2] = p * p / (2 * MASS) + potential_scalar(x, s, U0, kx, amp, mode, c, sn)
            j += 1
    return out


def integrate_hamiltonian(state: AtomState, lat: DerivedLattice, drive: ProbeDrive, dt: float,
                          n_steps: int, every: int = 1) -> np.ndarray:
    """Jump-free Verlet trajectory; rows of (x, p, energy) every ``every`` steps."""
    amp, mode, delta = _drive_args(lat, drive)
    return _hamiltonian_kernel(float(state.x), float(state.p), float(state.spin), lat.U0, lat.k_x,
                               amp, mode, delta, dt, int(n_steps), float(state.t), int(every))


def with_seed(cfg: SimConfig, seed: int) -> SimConfig:
    return replace(cfg, seed=int(seed))
