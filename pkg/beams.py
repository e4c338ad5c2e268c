"""
Beams module contains Laguerre-Gaussian mode superpositions, their
intensities and 1D marginals, and Gaussian-beam propagation.

All lengths are in micrometers. Intensities are normalized so that
the whole transverse plane carries unit power.
"""
import logging
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import integrate, special

from util import Fiber, NumericalFailure, ValidationError

logger = logging.getLogger(__name__)

MAX_RADIAL_INDEX = 4
WEIGHT_TOLERANCE = 1e-9
QUAD_EPSREL = 1e-8
# Intensities further than this many w from the beam center are zero
# for every supported mode (L_4(u)^2 e^-u is below 1e-70 at u = 200).
SUPPORT_RADII = 10.0
U_MAX = 2 * SUPPORT_RADII ** 2


@dataclass(frozen=True)
class LGMode:
    l: int = 0  # noqa: E741
    p: int = 0
    weight: float = 1.0

    def __post_init__(self):
        if self.p < 0:
            raise ValidationError(f"radial index p must be >= 0, got {self.p}")
        if self.l != 0:
            raise ValidationError(
                f"only l = 0 modes are supported, got l = {self.l}")
        if self.p > MAX_RADIAL_INDEX:
            raise ValidationError(
                f"radial index p must be <= {MAX_RADIAL_INDEX}, got {self.p}")
        if not 0.0 <= self.weight <= 1.0:
            raise ValidationError(f"mode weight must be in [0, 1], got {self.weight}")

    def as_dict(self):
        return {"l": self.l, "p": self.p, "weight": self.weight}


@dataclass(frozen=True)
class ModeSpec:
    """
    Incoherent superposition of LG modes sharing one waist.

    mfd: mode-field diameter (2w, w the 1/e^2 intensity radius)
    center_x, center_y: beam center
    wavelength: vacuum wavelength
    """
    modes: tuple
    mfd: float
    center_x: float = 0.0
    center_y: float = 0.0
    wavelength: float = 1.55

    def __post_init__(self):
        # Accept any iterable of modes, store an immutable tuple.
        object.__setattr__(self, "modes", tuple(self.modes))
        if not self.modes:
            raise ValidationError("a mode spec needs at least one mode")
        if not self.mfd > 0:
            raise ValidationError(f"mfd must be > 0, got {self.mfd}")
        if not self.wavelength > 0:
            raise ValidationError(f"wavelength must be > 0, got {self.wavelength}")
        radial_indices = [mode.p for mode in self.modes]
        if len(set(radial_indices)) != len(radial_indices):
            raise ValidationError(f"duplicate radial indices in {radial_indices}")
        total = math.fsum(mode.weight for mode in self.modes)
        if abs(total - 1.0) > WEIGHT_TOLERANCE:
            raise ValidationError(f"mode weights must sum to 1, got {total!r}")

    @property
    def w(self):
        return self.mfd / 2

    @classmethod
    def gaussian(cls, mfd, wavelength=1.55, center_x=0.0, center_y=0.0):
        """
        Return the pure fundamental (l = p = 0) mode.
        """
        return cls((LGMode(0, 0, 1.0),), mfd, center_x, center_y, wavelength)

    @classmethod
    def from_fiber(cls, fiber, center_x=0.0, center_y=0.0):
        """
        Return the fundamental mode of a fiber preset at its specified MFD.
        """
        if not isinstance(fiber, Fiber):
            fiber = Fiber(fiber)
        return cls.gaussian(fiber.mfd, fiber.wavelength, center_x, center_y)

    @classmethod
    def from_weights(cls, weights, mfd, wavelength=1.55, center_x=0.0, center_y=0.0):
        """
        Build a spec from a list of power weights indexed by p.
        Modes with zero weight are kept so the radial order is explicit.
        """
        modes = [LGMode(0, p, float(weight)) for p, weight in enumerate(weights)]
        return cls(modes, mfd, center_x, center_y, wavelength)

    def shifted(self, dx=0.0, dy=0.0):
        return replace(self, center_x=self.center_x + dx, center_y=self.center_y + dy)

    def as_dict(self):
        """
        Return the spec as a dictionary in the JSON interchange layout.
        """
        return {
            "mfd_um": self.mfd,
            "wavelength_um": self.wavelength,
            "center_um": [self.center_x, self.center_y],
            "modes": [mode.as_dict() for mode in self.modes],
        }

    @classmethod
    def from_dict(cls, description):
        """
        Return spec from JSON data.
        """
        try:
            center_x, center_y = description.get("center_um", [0.0, 0.0])
            modes = [
                LGMode(int(mode.get("l", 0)), int(mode["p"]), float(mode["weight"]))
                for mode in description["modes"]
            ]
            return cls(
                modes,
                float(description["mfd_um"]),
                float(center_x),
                float(center_y),
                float(description.get("wavelength_um", 1.55)),
            )
        except (KeyError, TypeError, ValueError, AttributeError) as error:
            if isinstance(error, ValidationError):
                raise
            raise ValidationError(f"malformed mode spec: {error!r}") from error


@dataclass(frozen=True)
class BeamPropagation:
    w0: float
    z_R: float
    z: float = 0.0

    def __post_init__(self):
        if not (self.w0 > 0 and self.z_R > 0):
            raise ValidationError("waist radius and Rayleigh range must be > 0")

    @classmethod
    def from_mfd(cls, mfd, wavelength, z=0.0):
        return cls(mfd / 2, rayleigh_range(mfd, wavelength), z)

    @property
    def beam_radius(self):
        return beam_radius_at(self.w0, self.z_R, self.z)


@dataclass(frozen=True)
class DivergenceReport:
    fiber_mfd: float
    fiber_sigma: float
    fit_mfd: float
    fit_sigma: float
    diverged: bool
    path_um: float
    path_range_um: tuple

    def as_dict(self):
        return {
            "fiber_mfd_um": self.fiber_mfd,
            "fiber_sigma_um": self.fiber_sigma,
            "fit_mfd_um": self.fit_mfd,
            "fit_sigma_um": self.fit_sigma,
            "diverged": self.diverged,
            "path_um": self.path_um,
            "path_range_um": list(self.path_range_um),
        }


def radial_density(p, u):
    """
    Return L_p(u)^2 exp(-u), the power density of LG_p^0 in u = 2r^2/w^2.

    It integrates to 1 over u in [0, inf) for every p (Laguerre orthonormality).
    """
    return special.eval_genlaguerre(p, 0, u) ** 2 * np.exp(-u)


def intensity_2d(spec, x, y):
    """
    Return the intensity density (1/um^2) of the spec at the waist plane.

    Modes add in power, without cross terms. x and y may be arrays.
    """
    w = spec.w
    u = 2 * ((np.asarray(x) - spec.center_x) ** 2 + (np.asarray(y) - spec.center_y) ** 2) / w ** 2
    total = sum(mode.weight * radial_density(mode.p, u) for mode in spec.modes)
    return 2 / (math.pi * w ** 2) * total


def _gaussian_band(dx, y_low, y_high, w):
    """
    Integral over y in [y_low, y_high] of the normalized fundamental mode,
    all coordinates relative to the beam center.
    """
    root2 = math.sqrt(2)
    profile = math.sqrt(2 / math.pi) / w * np.exp(-2 * dx ** 2 / w ** 2)
    return profile * 0.5 * (special.erf(root2 * y_high / w) - special.erf(root2 * y_low / w))


def _quadrature_band(p, dx, y_low, y_high, w):
    """
    Same as _gaussian_band but for any radial index, by adaptive quadrature.

    The y range of every x is mapped onto t in [0, 1] so all x are
    integrated in one vectorized call.
    """
    support = SUPPORT_RADII * w
    low = np.clip(y_low, -support, support)
    high = np.clip(y_high, -support, support)
    span = np.clip(high - low, 0.0, None)

    def integrand(t):
        dy = low + span * t
        return radial_density(p, 2 * (dx ** 2 + dy ** 2) / w ** 2) * span

    result, error, info = integrate.quad_vec(
        integrand, 0.0, 1.0, epsabs=1e-15, epsrel=QUAD_EPSREL, norm="max", full_output=True)
    if info.status != 0:
        raise NumericalFailure(
            f"marginal quadrature for p={p} did not converge "
            f"(status {info.status}, error estimate {error:.3g})")
    return 2 / (math.pi * w ** 2) * result


def truncated_marginal(spec, x, y_low=-np.inf, y_high=np.inf, method="auto"):
    """
    Return the intensity integrated over y in [y_low, y_high], per unit x.

    x, y_low and y_high are broadcast together. With the default infinite
    limits this is the 1D marginal profile the detector columns record.
    method: "auto" uses the closed form for p = 0 and quadrature otherwise,
    "quad" forces quadrature for every mode (used to cross-check).
    """
    dx, low, high = np.broadcast_arrays(
        np.atleast_1d(np.asarray(x, dtype=float)) - spec.center_x,
        np.atleast_1d(np.asarray(y_low, dtype=float)) - spec.center_y,
        np.atleast_1d(np.asarray(y_high, dtype=float)) - spec.center_y,
    )
    shape = dx.shape
    dx, low, high = dx.ravel(), low.ravel(), high.ravel()
    total = np.zeros(dx.size)
    for mode in spec.modes:
        if mode.weight == 0:
            continue
        if mode.p == 0 and method == "auto":
            band = _gaussian_band(dx, low, high, spec.w)
        else:
            band = _quadrature_band(mode.p, dx, low, high, spec.w)
        total += mode.weight * band
    total = total.reshape(shape)
    if np.ndim(x) == 0 and np.ndim(y_low) == 0 and np.ndim(y_high) == 0:
        return float(total[0])
    return total


def marginal_1d(spec, x, method="auto"):
    """
    Return the 1D marginal density (1/um) of the spec along x.
    """
    return truncated_marginal(spec, x, method=method)


def radial_expectation(spec, fraction, breakpoints=()):
    """
    Return the power-weighted average of fraction(r) over the beam.

    fraction: function of distance r from the beam center (array-safe),
        typically the part of the circle of radius r inside some region.
    breakpoints: radii where fraction has kinks, passed to the quadrature.

    The angular part of a 2D overlap integral is analytic for these
    rotationally symmetric modes, which leaves this 1D radial integral.
    """
    w = spec.w
    points = sorted({2 * (r / w) ** 2 for r in breakpoints if 0 < 2 * (r / w) ** 2 < U_MAX})
    total = 0.0
    for mode in spec.modes:
        if mode.weight == 0:
            continue

        def integrand(u, p=mode.p):
            return radial_density(p, u) * fraction(w * math.sqrt(u / 2))

        value, error = integrate.quad(
            integrand, 0.0, U_MAX, points=points or None,
            epsabs=1e-13, epsrel=1e-10, limit=500)
        if not math.isfinite(value):
            raise NumericalFailure(f"radial quadrature failed for p={mode.p}")
        total += mode.weight * value
    return total


def band_power(spec, half_width):
    """
    Return the fraction of power with |x - center_x| <= half_width.
    """
    if half_width < 0:
        raise ValidationError(f"half width must be >= 0, got {half_width}")
    if all(mode.p == 0 or mode.weight == 0 for mode in spec.modes):
        return float(special.erf(math.sqrt(2) * half_width / spec.w))

    def inside(r):
        if r <= half_width:
            return 1.0
        return 2 / math.pi * math.asin(half_width / r)

    return min(radial_expectation(spec, inside, [half_width]), 1.0)


def rayleigh_range(mfd, wavelength):
    """
    Return the vacuum Rayleigh range pi w0^2 / lambda of a beam with given MFD.
    """
    if not (mfd > 0 and wavelength > 0):
        raise ValidationError(
            f"mfd and wavelength must be > 0, got {mfd} and {wavelength}")
    return math.pi * (mfd / 2) ** 2 / wavelength


def beam_radius_at(w0, z_R, z):
    """
    Return the 1/e^2 radius after propagating z from the waist.
    """
    if not (w0 > 0 and z_R > 0):
        raise ValidationError(f"w0 and z_R must be > 0, got {w0} and {z_R}")
    return w0 * math.sqrt(1 + (z / z_R) ** 2)


def infer_path_length(mfd_initial, mfd_final, wavelength):
    """
    Return the vacuum propagation distance that expands mfd_initial to mfd_final.

    Exact inverse of beam_radius_at. Raise ValidationError if the beam
    would have to shrink.
    """
    z_R = rayleigh_range(mfd_initial, wavelength)
    if mfd_final < mfd_initial:
        raise ValidationError(
            f"final MFD {mfd_final} is smaller than initial {mfd_initial}: "
            "a diverging beam cannot shrink")
    ratio = mfd_final / mfd_initial
    # (r - 1)(r + 1) keeps precision when the expansion is tiny.
    return z_R * math.sqrt((ratio - 1) * (ratio + 1))


def divergence_report(fiber_mfd, fiber_sigma, fit_mfd, fit_sigma, wavelength=1.55):
    """
    Compare a fitted MFD with the fiber's specified one.

    The beam counts as diverged only when the whole fit interval lies
    above the whole specification interval. The path range is spanned by
    the most and least favourable pairs of interval ends.
    """
    diverged = fit_mfd - fit_sigma > fiber_mfd + fiber_sigma
    path = infer_path_length(fiber_mfd, fit_mfd, wavelength) if fit_mfd > fiber_mfd else 0.0
    smallest_start = max(fiber_mfd + fiber_sigma, 1e-12)
    smallest_end = max(fit_mfd - fit_sigma, smallest_start)
    largest_start = max(fiber_mfd - fiber_sigma, 1e-12)
    largest_end = max(fit_mfd + fit_sigma, largest_start)
    path_range = (
        infer_path_length(smallest_start, smallest_end, wavelength),
        infer_path_length(largest_start, largest_end, wavelength),
    )
    logger.info("fit MFD %.3f vs fiber %.3f: diverged=%s, path %.3f um",
                fit_mfd, fiber_mfd, diverged, path)
    return DivergenceReport(fiber_mfd, fiber_sigma, fit_mfd, fit_sigma,
                            diverged, path, path_range)
