"""Composite-line fits of probe transmission spectra.

The model is a sum of four Gaussians (vibrational peak/dip at +-Omega_Z and
Brillouin peak/dip at +-Omega_B), a linear background and a Lorentzian plus
dispersive pair for the central Rayleigh feature:

    I(d) = sum_j A_j exp(-(d - Omega_j)^2 / (2 sigma_j^2))
           + a1 + a2 d + (a3 + a4 (d + x0)) / ((d + x0)^2 + gamma^2)

Both Brillouin Gaussians share one width unless ``separate_sigma_B2`` is set.
Widths and gamma are fitted through their logarithms so they stay positive.
"""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.optimize import least_squares

from .errors import EmptyFile, InvalidGrid, MalformedRow, TooFewPoints
from .lattice_params import DerivedLattice

MIN_POINTS = 20
MAX_ITERATIONS = 500
FTOL = 1e-9
GTOL = 1e-8
XTOL = 1e-12

UNITS = ("khz", "omegar")


@dataclass(frozen=True)
class SpectrumData:
    detuning: np.ndarray
    transmission: np.ndarray
    unit: str = "khz"
    source: str = ""

    def __post_init__(self):
        d = np.asarray(self.detuning, dtype=float)
        y = np.asarray(self.transmission, dtype=float)
        object.__setattr__(self, "detuning", d)
        object.__setattr__(self, "transmission", y)
        if self.unit not in UNITS:
            raise ValueError(f"unit must be one of {UNITS}, got {self.unit!r}")
        if d.ndim != 1 or d.shape != y.shape:
            raise InvalidGrid("detuning and transmission must be 1D arrays of equal length")
        if len(d) < MIN_POINTS:
            raise TooFewPoints(f"need at least {MIN_POINTS} points, got {len(d)}")
        steps = np.diff(d)
        if not (np.all(steps > 0) or np.all(steps < 0)):
            raise InvalidGrid("detuning must be strictly monotonic")
        if not (np.all(np.isfinite(d)) and np.all(np.isfinite(y))):
            raise InvalidGrid("non-finite values in spectrum")

    def __len__(self):
        return len(self.detuning)

    def scaled(self, c: float) -> "SpectrumData":
        return replace(self, transmission=c * self.transmission)

    def mirrored(self) -> "SpectrumData":
        return replace(self, detuning=-self.detuning[::-1], transmission=self.transmission[::-1])


@dataclass(frozen=True)
class FitModel:
    A_Z1: float = 0.0
    A_Z2: float = 0.0
    A_B1: float = 0.0
    A_B2: float = 0.0
    Omega_Z1: float = 1.0
    Omega_Z2: float = -1.0
    Omega_B1: float = 1.0
    Omega_B2: float = -1.0
    sigma_Z1: float = 1.0
    sigma_Z2: float = 1.0
    sigma_B1: float = 1.0
    a1: float = 0.0
    a2: float = 0.0
    a3: float = 0.0
    a4: float = 0.0
    x0: float = 0.0
    gamma_width: float = 1.0
    sigma_B2: float | None = None  # only used when the fit frees the second Brillouin width

    def __post_init__(self):
        widths = [self.sigma_Z1, self.sigma_Z2, self.sigma_B1, self.gamma_width]
        if self.sigma_B2 is not None:
            widths.append(self.sigma_B2)
        if not all(w > 0 and math.isfinite(w) for w in widths):
            raise ValueError("widths and gamma_width must be positive")

    @property
    def separate_sigma_B2(self) -> bool:
        return self.sigma_B2 is not None

    @property
    def effective_sigma_B2(self) -> float:
        return self.sigma_B1 if self.sigma_B2 is None else self.sigma_B2

    def mirrored(self) -> "FitModel":
        """Model of the spectrum reflected through zero detuning."""
        return FitModel(
            A_Z1=self.A_Z2, A_Z2=self.A_Z1, A_B1=self.A_B2, A_B2=self.A_B1,
            Omega_Z1=-self.Omega_Z2, Omega_Z2=-self.Omega_Z1,
            Omega_B1=-self.Omega_B2, Omega_B2=-self.Omega_B1,
            sigma_Z1=self.sigma_Z2, sigma_Z2=self.sigma_Z1,
            sigma_B1=self.effective_sigma_B2 if self.separate_sigma_B2 else self.sigma_B1,
            sigma_B2=self.sigma_B1 if self.separate_sigma_B2 else None,
            a1=self.a1, a2=-self.a2, a3=self.a3, a4=-self.a4, x0=-self.x0,
            gamma_width=self.gamma_width,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "FitModel":
        return cls(**d)


# Internal parameter vector layout.  Log-parameterized entries are marked.
_BASE_NAMES = ["A_Z1", "A_Z2", "A_B1", "A_B2", "Omega_Z1", "Omega_Z2", "Omega_B1", "Omega_B2",
               "sigma_Z1", "sigma_Z2", "sigma_B1"]
_TAIL_NAMES = ["a1", "a2", "a3", "a4", "x0", "gamma_width"]
_LOG_NAMES = {"sigma_Z1", "sigma_Z2", "sigma_B1", "sigma_B2", "gamma_width"}


def param_names(separate_sigma_B2: bool = False) -> list[str]:
    return _BASE_NAMES + (["sigma_B2"] if separate_sigma_B2 else []) + _TAIL_NAMES


def pack(m: FitModel) -> np.ndarray:
    names = param_names(m.separate_sigma_B2)
    return np.array([math.log(getattr(m, n)) if n in _LOG_NAMES else getattr(m, n)
                     for n in names])


def unpack(theta, separate_sigma_B2: bool = False) -> FitModel:
    names = param_names(separate_sigma_B2)
    vals = {n: (math.exp(v) if n in _LOG_NAMES else float(v)) for n, v in zip(names, theta)}
    return FitModel(**vals)


def _gaussians(m: FitModel, d):
    amps = (m.A_Z1, m.A_Z2, m.A_B1, m.A_B2)
    centers = (m.Omega_Z1, m.Omega_Z2, m.Omega_B1, m.Omega_B2)
    sigmas = (m.sigma_Z1, m.sigma_Z2, m.sigma_B1, m.effective_sigma_B2)
    return [(a, c, s, np.exp(-((d - c) ** 2) / (2 * s * s))) for a, c, s in zip(amps, centers, sigmas)]


def eval_fit_model(m: FitModel, delta):
    d = np.asarray(delta, dtype=float)
    out = sum(a * g for a, _, _, g in _gaussians(m, d))
    w = d + m.x0
    den = w * w + m.gamma_width ** 2
    return out + m.a1 + m.a2 * d + m.a3 / den + m.a4 * w / den


def model_jacobian(theta, delta, separate_sigma_B2: bool = False) -> np.ndarray:
    """d(model)/d(theta) for the internal (log-width) parameter vector."""
    m = unpack(theta, separate_sigma_B2)
    d = np.asarray(delta, dtype=float)
    J = np.empty((d.size, len(theta)))
    gs = _gaussians(m, d)
    col = 0
    for a, _, _, g in gs:
        J[:, col] = g
        col += 1
    for a, c, s, g in gs:
        J[:, col] = a * g * (d - c) / (s * s)
        col += 1
    # d/dlog(sigma) of a*exp(-r^2/2s^2) = a*g*r^2/s^2
    dlogs = [a * g * (d - c) ** 2 / (s * s) for a, c, s, g in gs]
    J[:, col] = dlogs[0]
    J[:, col + 1] = dlogs[1]
    if separate_sigma_B2:
        J[:, col + 2] = dlogs[2]
        J[:, col + 3] = dlogs[3]
        col += 4
    else:
        J[:, col + 2] = dlogs[2] + dlogs[3]
        col += 3
    w = d + m.x0
    g2 = m.gamma_width ** 2
    den = w * w + g2
    J[:, col] = 1.0
    J[:, col + 1] = d
    J[:, col + 2] = 1.0 / den
    J[:, col + 3] = w / den
    J[:, col + 4] = -2 * m.a3 * w / den**2 + m.a4 * (g2 - w * w) / den**2
    J[:, col + 5] = (-m.a3 - m.a4 * w) * 2 * g2 / den**2
    return J


@dataclass
class FitResult:
    params: FitModel
    covariance_diag: np.ndarray
    residual_rms: float
    converged: bool
    n_iterations: int
    status: str
    message: str = ""
    stderr: dict = field(default_factory=dict)

    @property
    def brillouin_amplitude_A(self) -> float:
        return self.params.A_B1

    @property
    def brillouin_amplitude_abs(self) -> float:
        return abs(self.params.A_B1)

    @property
    def brillouin_amplitude_negative_side(self) -> float:
        return self.params.A_B2

    def to_dict(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "covariance_diag": [float(v) for v in self.covariance_diag],
            "stderr": {k: float(v) for k, v in self.stderr.items()},
            "residual_rms": self.residual_rms,
            "converged": self.converged,
            "n_iterations": self.n_iterations,
            "status": self.status,
            "message": self.message,
            "A": self.brillouin_amplitude_A,
            "A_abs": self.brillouin_amplitude_abs,
            "A_negative_side": self.brillouin_amplitude_negative_side,
        }


def _edge_background(d, y, frac=0.1):
    n = max(3, int(len(d) * frac))
    lo, hi = np.median(y[:n]), np.median(y[-n:])
    dl, dh = np.median(d[:n]), np.median(d[-n:])
    slope = (hi - lo) / (dh - dl) if dh != dl else 0.0
    return lo - slope * dl, slope


def _local_extremum(d, resid, center, half_width, exclude=0.0):
    """(location, value) of the largest |resid| within half_width of center."""
    win = (np.abs(d - center) <= half_width) & (np.abs(d) >= exclude)
    if not np.any(win):
        i = int(np.argmin(np.abs(d - center)))
        return float(d[i]), float(resid[i])
    idx = np.flatnonzero(win)
    i = idx[np.argmax(np.abs(resid[idx]))]
    return float(d[i]), float(resid[i])


def initial_model(data: SpectrumData, lat: DerivedLattice, separate_sigma_B2: bool = False) -> FitModel:
    """Physics-based starting point.

    Centers start from the extremum of the background-subtracted data closest to
    +-Omega_Z and +-Omega_X (searched within 40% of each), widths at 0.2x the
    lattice frequencies, background from the edge medians.
    """
    conv = lat.to_khz if data.unit == "khz" else (lambda w: w)
    oz, ox = conv(lat.Omega_Z), conv(lat.Omega_X)
    order = np.argsort(data.detuning)
    d, y = data.detuning[order], data.transmission[order]
    a1, a2 = _edge_background(d, y)
    resid = y - (a1 + a2 * d)
    sz, sb = 0.2 * oz, 0.2 * ox
    gam = 0.1 * ox
    _, central = _local_extremum(d, resid, 0.0, gam)
    cut = 0.3 * ox
    z1, az1 = _local_extremum(d, resid, oz, 0.4 * oz, cut)
    z2, az2 = _local_extremum(d, resid, -oz, 0.4 * oz, cut)
    b1, ab1 = _local_extremum(d, resid, ox, 0.4 * ox, cut)
    b2, ab2 = _local_extremum(d, resid, -ox, 0.4 * ox, cut)
    return FitModel(
        A_Z1=az1, A_Z2=az2, A_B1=ab1, A_B2=ab2,
        Omega_Z1=z1, Omega_Z2=z2, Omega_B1=b1, Omega_B2=b2,
        sigma_Z1=sz, sigma_Z2=sz, sigma_B1=sb, sigma_B2=sb if separate_sigma_B2 else None,
        a1=a1, a2=a2, a3=central * gam * gam, a4=0.0, x0=0.0, gamma_width=gam,
    )


def _covariance_diag(J, resid, theta, names):
    n, p = J.shape
    dof = max(n - p, 1)
    s2 = float(resid @ resid) / dof
    jtj = J.T @ J
    try:
        if not np.all(np.isfinite(jtj)) or np.linalg.cond(jtj) > 1e15:
            raise np.linalg.LinAlgError("ill-conditioned normal matrix")
        cov = np.linalg.inv(jtj) * s2
    except np.linalg.LinAlgError:
        return None
    var = np.diag(cov).copy()
    # delta method for the log-parameterized widths
    for i, nm in enumerate(names):
        if nm in _LOG_NAMES:
            var[i] *= math.exp(theta[i]) ** 2
    return var


def fit_spectrum(data: SpectrumData, init: FitModel | None = None, lat: DerivedLattice | None = None,
                 separate_sigma_B2: bool = False) -> FitResult:
    if init is None:
        if lat is None:
            raise ValueError("either init or lat is required")
        init = initial_model(data, lat, separate_sigma_B2)
    elif init.separate_sigma_B2 != separate_sigma_B2:
        init = replace(init, sigma_B2=init.sigma_B1 if separate_sigma_B2 else None)
    if len(data) < MIN_POINTS:
        raise TooFewPoints(f"need at least {MIN_POINTS} points")
    d, y = data.detuning, data.transmission
    names = param_names(separate_sigma_B2)
    if len(d) <= len(names):
        raise TooFewPoints(f"{len(d)} points cannot constrain {len(names)} parameters")

    def resid(th):
        return eval_fit_model(unpack(th, separate_sigma_B2), d) - y

    def jac(th):
        return model_jacobian(th, d, separate_sigma_B2)

    sol = least_squares(resid, pack(init), jac=jac, method="lm", x_scale="jac",
                        ftol=FTOL, gtol=GTOL, xtol=XTOL, max_nfev=MAX_ITERATIONS)
    theta = sol.x
    params = unpack(theta, separate_sigma_B2)
    r = sol.fun
    rms = float(np.sqrt(np.mean(r * r)))
    converged = bool(sol.status > 0) and math.isfinite(rms)
    var = _covariance_diag(sol.jac, r, theta, names)
    status = "Converged" if converged else "NotConverged"
    if var is None:
        status = "SingularNormalMatrix"
        var = np.full(len(names), np.nan)
    return FitResult(
        params=params, covariance_diag=var, residual_rms=rms, converged=converged,
        n_iterations=int(sol.nfev), status=status, message=str(sol.message),
        stderr={nm: math.sqrt(v) if v >= 0 else math.nan for nm, v in zip(names, var)},
    )


def load_spectrum_csv(path, unit_flag: str = "khz") -> SpectrumData:
    path = Path(path)
    rows: list[tuple[float, float]] = []
    with path.open(newline="", encoding="utf-8") as fh:
        for lineno, rec in enumerate(csv.reader(fh), start=1):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != 2:
                raise MalformedRow(lineno, ",".join(rec))
            a, b = (c.strip() for c in rec)
            if lineno == 1 and not rows and (a.lower(), b.lower()) == ("delta", "transmission"):
                continue
            try:
                rows.append((float(a), float(b)))
            except ValueError:
                raise MalformedRow(lineno, ",".join(rec)) from None
    if not rows:
        raise EmptyFile(f"{path} contains no data rows")
    arr = np.array(sorted(rows))
    return SpectrumData(arr[:, 0], arr[:, 1], unit=unit_flag, source=str(path))
