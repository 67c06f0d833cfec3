"""Optical bipotential, forces, pumping rates and probe perturbations.

The x-geometry model (used by the dynamics) is

    U_s(x)     = U0/4 * (-3 - cos 2u + 2 s cos u),           u = k_x x, s = +-1
    gamma_s(x) = 2 Gamma_S/9 * (3 + cos 2u + 4 s cos u)       rate of leaving s

plus a probe term that depends on the drive mode (the same for both spins):

    Standing        -2 U0 eps cos(u) cos(delta t)
    TravelingPlus   -U0 eps cos(u - delta t)
    TravelingMinus  -U0 eps cos(u + delta t)

The pumping rates are not modulated by the probe in this model.
"""
from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass

import numba as nb
import numpy as np

from .errors import AmplitudeTooLarge, StrongProbeWarning
from .lattice_params import DerivedLattice


class DriveMode(str, enum.Enum):
    OFF = "Off"
    STANDING = "Standing"
    TRAVELING_PLUS = "TravelingPlus"
    TRAVELING_MINUS = "TravelingMinus"

    @property
    def code(self) -> int:
        return _MODE_CODES[self]


_MODE_CODES = {DriveMode.OFF: 0, DriveMode.STANDING: 1, DriveMode.TRAVELING_PLUS: 2,
               DriveMode.TRAVELING_MINUS: 3}


@dataclass(frozen=True)
class ProbeDrive:
    eps_p: float = 0.0
    delta: float = 0.0
    mode: DriveMode = DriveMode.OFF

    def __post_init__(self):
        object.__setattr__(self, "mode", DriveMode(self.mode))
        if self.eps_p < 0:
            raise ValueError(f"eps_p must be >= 0, got {self.eps_p}")
        if self.eps_p > 0.3:
            warnings.warn(f"eps_p = {self.eps_p} is not a weak probe", StrongProbeWarning,
                          stacklevel=3)

    @property
    def is_on(self) -> bool:
        return self.mode is not DriveMode.OFF and self.eps_p > 0

    @property
    def effective_eps(self) -> float:
        return self.eps_p if self.mode is not DriveMode.OFF else 0.0

    def to_dict(self) -> dict:
        return {"eps_p": self.eps_p, "delta": self.delta, "mode": self.mode.value,
                "units": {"eps_p": "1", "delta": "omega_r"}}

    @classmethod
    def from_dict(cls, d: dict) -> "ProbeDrive":
        return cls(float(d.get("eps_p", 0.0)), float(d.get("delta", 0.0)),
                   DriveMode(d.get("mode", "Off")))


@dataclass(frozen=True)
class FieldSample:
    U_plus: np.ndarray | float
    U_minus: np.ndarray | float
    F_plus: np.ndarray | float
    F_minus: np.ndarray | float
    gamma_plus: np.ndarray | float
    gamma_minus: np.ndarray | float


def probe_potential(lat: DerivedLattice, drive: ProbeDrive, x, t):
    """Probe contribution to both potentials and its force -d/dx."""
    u = lat.k_x * np.asarray(x, dtype=float)
    ph = drive.delta * np.asarray(t, dtype=float)
    a = lat.U0 * drive.effective_eps
    mode = drive.mode
    if mode is DriveMode.STANDING:
        return -2 * a * np.cos(u) * np.cos(ph), -2 * a * lat.k_x * np.sin(u) * np.cos(ph)
    if mode is DriveMode.TRAVELING_PLUS:
        return -a * np.cos(u - ph), -a * lat.k_x * np.sin(u - ph)
    if mode is DriveMode.TRAVELING_MINUS:
        return -a * np.cos(u + ph), -a * lat.k_x * np.sin(u + ph)
    z = np.zeros(np.broadcast(u, ph).shape)
    return z, z


def pumping_rates(lat: DerivedLattice, x):
    """(gamma_plus, gamma_minus) at x; always >= 0 since 3 + cos2u +- 4cos u = 2(cos u +- 1)^2."""
    c = np.cos(lat.k_x * np.asarray(x, dtype=float))
    pref = 4.0 * lat.Gamma_S / 9.0
    return pref * (c + 1.0) ** 2, pref * (c - 1.0) ** 2


def eval_fields(lat: DerivedLattice, drive: ProbeDrive, x, t) -> FieldSample:
    x = np.asarray(x, dtype=float)
    u = lat.k_x * x
    base = lat.U0 / 4.0 * (-3.0 - np.cos(2 * u))
    alt = lat.U0 / 2.0 * np.cos(u)
    fbase = -lat.U0 / 2.0 * lat.k_x * np.sin(2 * u)
    falt = lat.U0 / 2.0 * lat.k_x * np.sin(u)
    pu, pf = probe_potential(lat, drive, x, t)
    gp, gm = pumping_rates(lat, x)
    return FieldSample(
        U_plus=base + alt + pu,
        U_minus=base - alt + pu,
        F_plus=fbase + falt + pf,
        F_minus=fbase - falt + pf,
        gamma_plus=gp,
        gamma_minus=gm,
    )


# Scalar kernels shared with the ensemble integrator.  `cph`, `sph` are the cosine
# and sine of the probe phase delta*t.

@nb.njit(cache=True, inline="always")
def force_scalar(x, spin, U0, kx, amp, mode, cph, sph):
    u = kx * x
    su = math.sin(u)
    cu = math.cos(u)
    f = -0.5 * U0 * kx * su * (2.0 * cu - spin)
    if mode == 1:
        f -= 2.0 * amp * kx * su * cph
    elif mode == 2:
        f -= amp * kx * (su * cph - cu * sph)
    elif mode == 3:
        f -= amp * kx * (su * cph + cu * sph)
    return f


@nb.njit(cache=True, inline="always")
def potential_scalar(x, spin, U0, kx, amp, mode, cph, sph):
    u = kx * x
    cu = math.cos(u)
    v = 0.25 * U0 * (-3.0 - math.cos(2.0 * u) + 2.0 * spin * cu)
    if mode == 1:
        v -= 2.0 * amp * cu * cph
    elif mode == 2:
        v -= amp * (cu * cph + math.sin(u) * sph)
    elif mode == 3:
        v -= amp * (cu * cph - math.sin(u) * sph)
    return v


@nb.njit(cache=True, inline="always")
def rate_scalar(x, spin, gamma_s, kx):
    c = math.cos(kx * x) + spin
    return 4.0 * gamma_s / 9.0 * c * c


@dataclass(frozen=True)
class SnapshotTable:
    z: np.ndarray
    U_plus: np.ndarray
    U_minus: np.ndarray
    dRho_plus: np.ndarray
    dRho_minus: np.ndarray
    phase: float

    def rows(self):
        return zip(self.z / (2 * math.pi), self.U_plus, self.U_minus, self.dRho_plus,
                   self.dRho_minus)


def snapshot_z_geometry(U0: float, amp_ratio: float, phase: float, grid) -> SnapshotTable:
    """Probe-modified 1D lin-perp-lin potentials along z and the probe-induced change
    of the steady-state ground populations, at probe phase ``delta*t = phase``.

    ``amp_ratio`` is the raw field ratio E_p/E_0 entering both expressions; the
    population change carries its own factor 1/2.  ``grid`` holds k_L*z values.
    """
    if abs(amp_ratio) >= 1:
        raise AmplitudeTooLarge(f"|amp_ratio| must be < 1, got {amp_ratio}")
    z = np.asarray(grid, dtype=float)
    arg = 2 * z - phase
    unpert_p = -2 + np.cos(2 * z)
    unpert_m = -2 - np.cos(2 * z)
    U_plus = U0 / 2 * (unpert_p + amp_ratio * (-2 * np.cos(arg) + np.cos(phase)))
    U_minus = U0 / 2 * (unpert_m + amp_ratio * (-2 * np.cos(arg) - np.cos(phase)))
    d = amp_ratio / 2 * np.sin(2 * z) * np.sin(arg) / (1 + amp_ratio * np.cos(arg))
    return SnapshotTable(z, U_plus, U_minus, -d, d.copy(), float(phase))


SNAPSHOT_PHASES = tuple(k * math.pi / 4 for k in range(9))
