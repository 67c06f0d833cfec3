"""Beam parameters to lattice quantities, and back.

Everything returned here is expressed in recoil units: hbar = k_L = omega_r = 1,
so the atomic mass is 1/2, energies are in hbar*omega_r, times in 1/omega_r and
momenta in hbar*k_L.  Only `AtomicSpecies` and `LatticeConfig` carry SI
quantities (intensities in mW/cm^2).
"""
from __future__ import annotations

import enum
import math
import warnings
from dataclasses import asdict, dataclass, fields

from .errors import (
    InfeasibleTarget,
    InvalidLatticeConfig,
    NonPositiveIntensity,
    NonRedDetuned,
    WeakExcitationViolated,
)

MASS = 0.5  # atomic mass in recoil units
WEAK_EXCITATION_LIMIT = 0.1


class Geometry(str, enum.Enum):
    ONE_D = "OneD_linperplin"
    THREE_D = "ThreeD_tetrahedral"


@dataclass(frozen=True)
class AtomicSpecies:
    natural_linewidth_Gamma: float  # rad/s
    recoil_frequency_omega_r: float  # rad/s
    saturation_intensity_Isat: float  # mW/cm^2
    wavenumber_kL: float  # 1/m

    UNITS = {
        "natural_linewidth_Gamma": "rad/s",
        "recoil_frequency_omega_r": "rad/s",
        "saturation_intensity_Isat": "mW/cm^2",
        "wavenumber_kL": "1/m",
    }

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (math.isfinite(v) and v > 0):
                raise InvalidLatticeConfig(f"{f.name} must be positive, got {v}")

    @property
    def gamma_over_omega_r(self) -> float:
        return self.natural_linewidth_Gamma / self.recoil_frequency_omega_r

    def to_dict(self) -> dict:
        return {**asdict(self), "units": dict(self.UNITS)}

    @classmethod
    def from_dict(cls, d: dict) -> "AtomicSpecies":
        return cls(**{f.name: float(d[f.name]) for f in fields(cls)})


RB85 = AtomicSpecies(
    natural_linewidth_Gamma=2 * math.pi * 6.07e6,
    recoil_frequency_omega_r=2 * math.pi * 3.86e3,
    saturation_intensity_Isat=1.64,
    wavenumber_kL=2 * math.pi / 780.241e-9,
)


@dataclass(frozen=True)
class LatticeConfig:
    intensity_per_beam_I: float  # mW/cm^2
    detuning_Delta: float  # rad/s, negative
    theta_x: float = math.radians(25.0)
    theta_y: float = math.radians(25.0)
    geometry: Geometry = Geometry.THREE_D

    UNITS = {
        "intensity_per_beam_I": "mW/cm^2",
        "detuning_Delta": "rad/s",
        "theta_x": "rad",
        "theta_y": "rad",
    }

    def __post_init__(self):
        object.__setattr__(self, "geometry", Geometry(self.geometry))
        if not self.intensity_per_beam_I > 0:
            raise NonPositiveIntensity(f"I must be > 0, got {self.intensity_per_beam_I}")
        if not self.detuning_Delta < 0:
            raise NonRedDetuned(f"Delta must be < 0 (red detuning), got {self.detuning_Delta}")
        for name in ("theta_x", "theta_y"):
            th = getattr(self, name)
            if not 0 < th < math.pi / 2:
                raise InvalidLatticeConfig(f"{name} must lie in (0, pi/2), got {th}")

    @classmethod
    def from_gamma_units(cls, intensity, detuning_in_gamma, species=RB85, theta_x_deg=25.0,
                         theta_y_deg=25.0, geometry=Geometry.THREE_D) -> "LatticeConfig":
        """Build a config with the detuning given in units of the natural linewidth."""
        return cls(intensity, detuning_in_gamma * species.natural_linewidth_Gamma,
                   math.radians(theta_x_deg), math.radians(theta_y_deg), geometry)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["geometry"] = self.geometry.value
        d["units"] = dict(self.UNITS)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LatticeConfig":
        return cls(float(d["intensity_per_beam_I"]), float(d["detuning_Delta"]),
                   float(d["theta_x"]), float(d["theta_y"]), Geometry(d["geometry"]))


@dataclass(frozen=True)
class DerivedLattice:
    """All derived lattice quantities, in recoil units.

    ``Omega_X/Y/Z`` follow the tetrahedral-lattice formulas for either geometry
    (they depend only on the light shift and the beam angles); ``Omega_V_1D``
    is the vibrational frequency of the one-dimensional lin-perp-lin lattice
    built from the same light shift.
    """

    s0: float
    light_shift_Delta0p: float
    light_shift_Deltap: float
    Gamma_S: float
    U0: float
    Omega_X: float
    Omega_Y: float
    Omega_Z: float
    Omega_V_1D: float
    gamma0: float
    Gamma_S_SR: float
    k_x: float
    k_y: float
    k_z: float
    theta_x: float
    theta_y: float
    geometry: Geometry = Geometry.THREE_D
    recoil_frequency_omega_r: float = RB85.recoil_frequency_omega_r
    weak_excitation_violated: bool = False

    UNITS = {
        "s0": "1",
        "light_shift_Delta0p": "omega_r",
        "light_shift_Deltap": "omega_r",
        "Gamma_S": "omega_r",
        "U0": "hbar*omega_r",
        "Omega_X": "omega_r",
        "Omega_Y": "omega_r",
        "Omega_Z": "omega_r",
        "Omega_V_1D": "omega_r",
        "gamma0": "omega_r",
        "Gamma_S_SR": "omega_r",
        "k_x": "k_L",
        "k_y": "k_L",
        "k_z": "k_L",
        "theta_x": "rad",
        "theta_y": "rad",
        "recoil_frequency_omega_r": "rad/s",
    }

    @property
    def gamma_max(self) -> float:
        """Upper bound of both pumping rates, 16*Gamma_S/9."""
        return 16.0 * self.Gamma_S / 9.0

    @property
    def spatial_period(self) -> float:
        return 2 * math.pi / self.k_x

    def to_khz(self, omega: float) -> float:
        """Convert an angular frequency in recoil units to a frequency in kHz."""
        return omega * self.recoil_frequency_omega_r / (2 * math.pi) / 1e3

    def from_khz(self, f_khz: float) -> float:
        return f_khz * 1e3 * 2 * math.pi / self.recoil_frequency_omega_r

    def to_dict(self) -> dict:
        d = asdict(self)
        d["geometry"] = self.geometry.value
        d["units"] = dict(self.UNITS)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DerivedLattice":
        kw = {f.name: d[f.name] for f in fields(cls) if f.name in d}
        kw["geometry"] = Geometry(kw.get("geometry", Geometry.THREE_D))
        return cls(**kw)


def _well_depth(delta0p_abs: float, geometry: Geometry) -> float:
    if geometry is Geometry.THREE_D:
        return 16.0 * delta0p_abs / 3.0
    return 4.0 * delta0p_abs / 3.0


def _light_shift_from_depth(U0: float, geometry: Geometry) -> float:
    """|Delta0'| implied by a well depth (inverse of `_well_depth`)."""
    if geometry is Geometry.THREE_D:
        return 3.0 * U0 / 16.0
    return 3.0 * U0 / 4.0


def _from_light_shift(delta0p: float, gamma_s: float, s0: float, theta_x: float,
                      theta_y: float, geometry: Geometry, omega_r_si: float) -> DerivedLattice:
    a = abs(delta0p)
    sx, sy = math.sin(theta_x), math.sin(theta_y)
    cx, cy = math.cos(theta_x), math.cos(theta_y)
    U0 = _well_depth(a, geometry)
    return DerivedLattice(
        s0=s0,
        light_shift_Delta0p=delta0p,
        light_shift_Deltap=8.0 * delta0p,
        Gamma_S=gamma_s,
        U0=U0,
        Omega_X=4.0 * sx * math.sqrt(a),
        Omega_Y=4.0 * sy * math.sqrt(a),
        Omega_Z=(cx + cy) * math.sqrt(8.0 * a),
        Omega_V_1D=2.0 * math.sqrt(4.0 * a / 3.0),
        gamma0=2.0 * gamma_s / 3.0,
        Gamma_S_SR=(6.0 / math.pi) * sx * math.sqrt(a),
        k_x=sx,
        k_y=sy,
        k_z=cx + cy,
        theta_x=theta_x,
        theta_y=theta_y,
        geometry=geometry,
        recoil_frequency_omega_r=omega_r_si,
        weak_excitation_violated=s0 > WEAK_EXCITATION_LIMIT,
    )


def derive_lattice(species: AtomicSpecies, cfg: LatticeConfig) -> DerivedLattice:
    """Compute every derived lattice quantity from beam parameters.

    Warns with `WeakExcitationViolated` (and sets the flag on the result) when
    the saturation parameter exceeds 0.1.
    """
    g = species.gamma_over_omega_r
    delta = cfg.detuning_Delta / species.recoil_frequency_omega_r
    s0 = (cfg.intensity_per_beam_I / species.saturation_intensity_Isat) / (
        1.0 + 4.0 * (cfg.detuning_Delta / species.natural_linewidth_Gamma) ** 2)
    lat = _from_light_shift(delta * s0 / 2.0, g * s0 / 2.0, s0, cfg.theta_x, cfg.theta_y,
                            cfg.geometry, species.recoil_frequency_omega_r)
    if lat.weak_excitation_violated:
        warnings.warn(f"s0 = {s0:.3g} exceeds {WEAK_EXCITATION_LIMIT}", WeakExcitationViolated,
                      stacklevel=2)
    return lat


def invert_to_beam_params(species: AtomicSpecies, target_U0: float, target_Gamma_S: float,
                          geometry: Geometry = Geometry.THREE_D) -> tuple[float, float]:
    """Return (I [mW/cm^2], Delta [rad/s]) realizing the requested well depth and
    scattering rate (both in recoil units).

    The inversion is closed-form: Delta0'/Gamma_S = Delta/Gamma fixes the detuning,
    and Gamma_S = Gamma*s0/2 then fixes the intensity.
    """
    if not target_U0 > 0:
        raise InvalidLatticeConfig(f"target_U0 must be > 0, got {target_U0}")
    if not target_Gamma_S > 0:
        raise InvalidLatticeConfig(f"target_Gamma_S must be > 0, got {target_Gamma_S}")
    geometry = Geometry(geometry)
    g = species.gamma_over_omega_r
    delta0p = -_light_shift_from_depth(target_U0, geometry)
    detuning = species.natural_linewidth_Gamma * delta0p / target_Gamma_S
    s0 = 2.0 * target_Gamma_S / g
    intensity = species.saturation_intensity_Isat * s0 * (
        1.0 + 4.0 * (detuning / species.natural_linewidth_Gamma) ** 2)
    if s0 > WEAK_EXCITATION_LIMIT:
        warnings.warn(f"targets imply s0 = {s0:.3g} > {WEAK_EXCITATION_LIMIT}", InfeasibleTarget,
                      stacklevel=2)
    return intensity, detuning


def lattice_for_targets(target_U0: float, target_Gamma_S: float, theta_x: float = math.radians(25.0),
                        theta_y: float | None = None, species: AtomicSpecies = RB85,
                        geometry: Geometry = Geometry.THREE_D) -> DerivedLattice:
    """Lattice with a prescribed well depth and scattering rate (constant-U0 noise tuning)."""
    intensity, detuning = invert_to_beam_params(species, target_U0, target_Gamma_S, geometry)
    cfg = LatticeConfig(intensity, detuning, theta_x, theta_x if theta_y is None else theta_y,
                        geometry)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", WeakExcitationViolated)
        return derive_lattice(species, cfg)


def modulation_strength(eps_p: float) -> float:
    """Probe-to-lattice intensity ratio I_p/4I for a probe amplitude eps_p = E_p/(4 E_0)."""
    if eps_p < 0:
        raise ValueError(f"eps_p must be >= 0, got {eps_p}")
    return 4.0 * eps_p * eps_p


def eps_from_modulation_strength(ratio: float) -> float:
    """Inverse of `modulation_strength`."""
    if ratio < 0:
        raise ValueError(f"ratio must be >= 0, got {ratio}")
    return math.sqrt(ratio / 4.0)
