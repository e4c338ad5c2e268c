"""
Stack module contains the transfer-matrix model of the dielectric stack
that surrounds the absorbing film, at normal incidence.

Thicknesses and wavelengths are in nanometers. Complex indices follow
the n + ik convention (k >= 0 absorbs).
"""
import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from util import DbrOrdering, NumericalFailure, ValidationError

logger = logging.getLogger(__name__)

WAVELENGTH_NM = 1550.0
N_SIO2 = 1.453
N_ASI = 2.735
SIO2_NM = 266.7
ASI_NM = 141.7
DBR_LAYER_COUNT = 13
MOSI_NM = 4.1
CAP_NM = 2.0
# Anti-reflective coating in deposition order (bottom to top).
AR_COATING = (("aSi", 78.5, N_ASI), ("SiO2", 122.4, N_SIO2), ("aSi", 66.7, N_ASI))
# Not stated in the recipe: crystalline silicon wafer at 1550 nm,
# light arriving from the vacuum gap in front of the fiber tip.
SUBSTRATE_N = 3.476
AMBIENT_N = 1.0
ENERGY_TOLERANCE = 1e-9


@dataclass(frozen=True)
class Layer:
    thickness: float
    n: float
    k: float = 0.0
    name: str = ""

    def __post_init__(self):
        if not self.thickness > 0:
            raise ValidationError(f"layer thickness must be > 0, got {self.thickness}")
        if not self.n > 0:
            raise ValidationError(f"refractive index must be > 0, got {self.n}")
        if self.k < 0:
            raise ValidationError(f"extinction coefficient must be >= 0, got {self.k}")

    @property
    def index(self):
        return complex(self.n, self.k)

    def as_dict(self):
        description = {"thickness_nm": self.thickness, "n": self.n, "k": self.k}
        if self.name:
            description["name"] = self.name
        return description


@dataclass(frozen=True)
class StackSpec:
    """
    Ordered layers between an ambient half-space and a substrate.
    Light enters layers[0] first.
    """
    layers: tuple
    wavelength: float = WAVELENGTH_NM
    ambient_n: float = AMBIENT_N
    substrate_n: float = SUBSTRATE_N

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.layers:
            raise ValidationError("a stack needs at least one layer")
        if not (self.ambient_n > 0 and self.substrate_n > 0):
            raise ValidationError("ambient and substrate indices must be > 0")
        if not self.wavelength > 0:
            raise ValidationError(f"wavelength must be > 0, got {self.wavelength}")

    @property
    def total_thickness(self):
        return math.fsum(layer.thickness for layer in self.layers)

    def reversed(self):
        """
        Return the same stack seen from the substrate side.
        """
        return StackSpec(self.layers[::-1], self.wavelength,
                         self.substrate_n, self.ambient_n)

    def as_dict(self):
        return {
            "wavelength_nm": self.wavelength,
            "ambient_n": self.ambient_n,
            "substrate_n": self.substrate_n,
            "layers": [layer.as_dict() for layer in self.layers],
        }

    @classmethod
    def from_dict(cls, description):
        try:
            layers = [
                Layer(float(layer["thickness_nm"]), float(layer["n"]),
                      float(layer.get("k", 0.0)), layer.get("name", ""))
                for layer in description["layers"]
            ]
            return cls(layers, float(description["wavelength_nm"]),
                       float(description["ambient_n"]), float(description["substrate_n"]))
        except (KeyError, TypeError, ValueError, AttributeError) as error:
            if isinstance(error, ValidationError):
                raise
            raise ValidationError(f"malformed stack spec: {error!r}") from error


@dataclass(frozen=True)
class StackResponse:
    R: float
    T: float
    A: float
    per_layer_absorption: tuple

    def as_dict(self):
        return {
            "R": self.R,
            "T": self.T,
            "A": self.A,
            "per_layer_absorption": list(self.per_layer_absorption),
        }


def _interface(n_i, n_f):
    """
    Return Fresnel amplitude coefficients (r, t) at normal incidence.
    """
    return (n_i - n_f) / (n_i + n_f), 2 * n_i / (n_i + n_f)


def tmm_response(stack):
    """
    Return reflectance, transmittance and absorptance of a coherent stack.

    Standard 2x2 transfer matrices; per-layer absorption is the drop of
    the Poynting flux between the two faces of each layer.
    More about the method and its conventions: https://arxiv.org/abs/1603.02720
    """
    n_list = np.array([stack.ambient_n] + [layer.index for layer in stack.layers]
                      + [stack.substrate_n], dtype=complex)
    d_list = np.array([0.0] + [layer.thickness for layer in stack.layers] + [0.0])
    delta = 2 * np.pi * n_list * d_list / stack.wavelength
    count = n_list.size

    matrices = np.zeros((count, 2, 2), dtype=complex)
    for i in range(1, count - 1):
        r, t = _interface(n_list[i], n_list[i + 1])
        propagation = np.array([[np.exp(-1j * delta[i]), 0], [0, np.exp(1j * delta[i])]])
        matrices[i] = propagation @ np.array([[1, r], [r, 1]]) / t
    r01, t01 = _interface(n_list[0], n_list[1])
    total = np.array([[1, r01], [r01, 1]]) / t01
    for i in range(1, count - 1):
        total = total @ matrices[i]

    if not np.all(np.isfinite(total)) or abs(total[0, 0]) == 0:
        raise NumericalFailure("singular transfer matrix")
    r = total[1, 0] / total[0, 0]
    t = 1 / total[0, 0]
    reflectance = abs(r) ** 2
    transmittance = abs(t) ** 2 * n_list[-1].real / n_list[0].real

    # Forward and backward amplitudes at the entry face of every layer,
    # walking back from the substrate where nothing returns.
    amplitudes = np.zeros((count, 2), dtype=complex)
    amplitudes[-1] = (t, 0)
    for i in range(count - 2, 0, -1):
        amplitudes[i] = matrices[i] @ amplitudes[i + 1]

    def flux(n, forward, backward):
        return (n * np.conj(forward + backward) * (forward - backward)).real / n_list[0].real

    per_layer = []
    for i in range(1, count - 1):
        forward, backward = amplitudes[i]
        entering = flux(n_list[i], forward, backward)
        leaving = flux(n_list[i], forward * np.exp(1j * delta[i]),
                       backward * np.exp(-1j * delta[i]))
        per_layer.append(float(entering - leaving))

    absorptance = 1.0 - reflectance - transmittance
    if absorptance < -ENERGY_TOLERANCE or abs(math.fsum(per_layer) - absorptance) > 1e-6:
        raise NumericalFailure(
            f"energy balance violated: R={reflectance!r} T={transmittance!r} "
            f"layer sum={math.fsum(per_layer)!r}")
    # rounding can leave a lossless stack a hair below zero
    absorptance = max(absorptance, 0.0)
    return StackResponse(float(reflectance), float(transmittance),
                         float(absorptance), tuple(per_layer))


def reflectance_spectrum(stack, wavelengths):
    """
    Return the stack response at each wavelength, indices held fixed.
    """
    return [tmm_response(replace(stack, wavelength=float(wavelength)))
            for wavelength in wavelengths]


def dbr_layers(ordering=DbrOrdering.HIGH_INDEX_FIRST):
    """
    Return the 13 quarter-wave mirror layers, first layer on the light side.
    """
    silica = Layer(SIO2_NM, N_SIO2, 0.0, "SiO2")
    silicon = Layer(ASI_NM, N_ASI, 0.0, "aSi")
    if DbrOrdering(ordering) == DbrOrdering.HIGH_INDEX_FIRST:
        pair = (silicon, silica)
    else:
        pair = (silica, silicon)
    return [pair[i % 2] for i in range(DBR_LAYER_COUNT)]


def dbr_mirror_stack(ordering=DbrOrdering.HIGH_INDEX_FIRST, ambient_n=N_SIO2,
                    substrate_n=SUBSTRATE_N, wavelength=WAVELENGTH_NM):
    """
    Return the mirror alone, lit from a silica-like medium.
    """
    return StackSpec(dbr_layers(ordering), wavelength, ambient_n, substrate_n)


def builtin_detector_stack(*, mosi_n, mosi_k, ordering=DbrOrdering.HIGH_INDEX_FIRST,
                        ambient_n=AMBIENT_N, substrate_n=SUBSTRATE_N,
                        wavelength=WAVELENGTH_NM):
    """
    Return the full detector stack, top (fiber side) first.

    The MoSi optical constants are not part of the recipe and must be
    supplied by the caller.

    Layers from the light side: AR coating (reverse of its deposition
    order), the aSi cap, the MoSi film, then the mirror.
    13 + 1 + 1 + 3 = 18 layers.
    """
    ar_coating = [Layer(thickness, n, 0.0, name) for name, thickness, n in reversed(AR_COATING)]
    cap = Layer(CAP_NM, N_ASI, 0.0, "aSi cap")
    absorber = Layer(MOSI_NM, mosi_n, mosi_k, "MoSi")
    layers = ar_coating + [cap, absorber] + dbr_layers(ordering)
    stack = StackSpec(layers, wavelength, ambient_n, substrate_n)
    logger.debug("detector stack: %d layers, %.1f nm total", len(layers), stack.total_thickness)
    return stack


def single_pass_absorption(layer, wavelength):
    """
    Return the Beer-Lambert absorption of one pass through a film.
    """
    return 1.0 - math.exp(-4 * math.pi * layer.k * layer.thickness / wavelength)


def multipass_path_length(per_pass_absorption, single_pass_path):
    """
    Return the expected accumulated path of a photon bouncing through the stack.

    Each pass is absorbed with probability a, so the number of passes is
    geometric with mean 1/a.
    """
    if not 0 < per_pass_absorption <= 1:
        raise ValidationError(
            f"per-pass absorption must be in (0, 1], got {per_pass_absorption}")
    if not single_pass_path > 0:
        raise ValidationError(f"single-pass path must be > 0, got {single_pass_path}")
    return single_pass_path / per_pass_absorption
