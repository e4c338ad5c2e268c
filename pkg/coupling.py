"""
Coupling module computes how much of a (possibly misaligned) mode a
circular active area captures, and the misalignment tolerance curves.

The active disk is centred at the origin; the beam sits at
(center_x + offset, center_y).
"""
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from beams import SUPPORT_RADII, radial_expectation
from util import NoToleranceError, NumericalFailure, ValidationError

logger = logging.getLogger(__name__)

OFFSET_XTOL = 1e-3
MONOTONICITY_TOLERANCE = 1e-9


@dataclass(frozen=True)
class CouplingQuery:
    spec: object
    active_diameter: float
    offset: float = 0.0

    def __post_init__(self):
        if not self.active_diameter > 0:
            raise ValidationError(f"active diameter must be > 0, got {self.active_diameter}")
        if self.offset < 0:
            raise ValidationError(f"offset must be >= 0, got {self.offset}")

    @property
    def distance(self):
        """Distance between the beam center and the disk center."""
        return math.hypot(self.spec.center_x + self.offset, self.spec.center_y)


@dataclass(frozen=True)
class ToleranceCurve:
    """
    loss[i, j] belongs to diameters[i] and offsets[j].
    """
    diameters: np.ndarray
    offsets: np.ndarray
    loss: np.ndarray

    @property
    def efficiency(self):
        return 1.0 - self.loss


def _arc_inside(radius, distance):
    """
    Return the function giving, for a circle of radius r around the beam
    center, the fraction of its circumference inside the disk.
    """
    def fraction(r):
        if r <= radius - distance:
            return 1.0
        if r >= radius + distance or r <= distance - radius:
            return 0.0
        cosine = (r * r + distance * distance - radius * radius) / (2 * r * distance)
        return math.acos(min(max(cosine, -1.0), 1.0)) / math.pi

    return fraction


def coupling_efficiency(query):
    """
    Return the fraction of the beam's power falling on the active disk.
    """
    radius = query.active_diameter / 2
    distance = query.distance
    if distance == 0:
        breakpoints = [radius]
    else:
        breakpoints = [abs(radius - distance), radius + distance]
    value = radial_expectation(query.spec, _arc_inside(radius, distance), breakpoints)
    return min(max(value, 0.0), 1.0)


def _loss(spec, active_diameter, offset):
    return 1.0 - coupling_efficiency(CouplingQuery(spec, active_diameter, offset))


def max_tolerable_offset(spec, active_diameter, loss_budget):
    """
    Return the largest misalignment keeping the loss within loss_budget.

    Loss grows monotonically with the offset, so bisection finds the
    single crossing.
    """
    if not 0 < loss_budget < 1:
        raise ValidationError(f"loss budget must be in (0, 1), got {loss_budget}")
    aligned = _loss(spec, active_diameter, 0.0)
    if aligned > loss_budget:
        raise NoToleranceError(
            f"aligned loss {aligned:.6g} already exceeds the budget {loss_budget}")
    if aligned == loss_budget:
        return 0.0
    far = active_diameter / 2 + SUPPORT_RADII * spec.w + math.hypot(spec.center_x, spec.center_y)
    offset = optimize.bisect(
        lambda d: _loss(spec, active_diameter, d) - loss_budget, 0.0, far, xtol=OFFSET_XTOL)
    logger.info("D=%.3f um tolerates %.3f um at loss %.4g", active_diameter, offset, loss_budget)
    return float(offset)


def min_diameter_for_efficiency(spec, efficiency, offset=0.0):
    """
    Return the smallest active diameter capturing the requested fraction.
    """
    if not 0 < efficiency < 1:
        raise ValidationError(f"efficiency must be in (0, 1), got {efficiency}")
    far = 2 * (offset + SUPPORT_RADII * spec.w + math.hypot(spec.center_x, spec.center_y))
    diameter = optimize.bisect(
        lambda d: coupling_efficiency(CouplingQuery(spec, d, offset)) - efficiency,
        1e-6, far, xtol=OFFSET_XTOL)
    return float(diameter)


def _check_monotone(values, axis, increasing, coordinates):
    steps = np.diff(values, axis=axis)
    bad = steps < -MONOTONICITY_TOLERANCE if increasing else steps > MONOTONICITY_TOLERANCE
    if np.any(bad):
        i, j = np.argwhere(bad)[0]
        raise NumericalFailure(
            "tolerance curve not monotone near D={}, offset={}".format(*coordinates(i, j)))


def tolerance_curve(spec, diameters, offsets):
    """
    Return the loss over the grid of diameters x offsets.

    Loss must not grow with the diameter nor shrink with the offset;
    a violation is a numerical failure.
    """
    diameters = np.asarray(diameters, dtype=float)
    offsets = np.asarray(offsets, dtype=float)
    if diameters.size == 0 or offsets.size == 0:
        raise ValidationError("tolerance curve needs nonempty diameter and offset grids")
    loss = np.empty((diameters.size, offsets.size))
    for i, diameter in enumerate(diameters):
        for j, offset in enumerate(offsets):
            try:
                loss[i, j] = _loss(spec, diameter, offset)
            except NumericalFailure as error:
                raise NumericalFailure(f"at D={diameter}, offset={offset}: {error}") from error

    by_diameter = np.argsort(diameters, kind="stable")
    by_offset = np.argsort(offsets, kind="stable")
    ordered = loss[np.ix_(by_diameter, by_offset)]

    def coordinates(i, j):
        return diameters[by_diameter[i]], offsets[by_offset[j]]

    _check_monotone(ordered, 0, False, coordinates)
    _check_monotone(ordered, 1, True, coordinates)
    return ToleranceCurve(diameters, offsets, loss)
