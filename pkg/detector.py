"""
Detector module simulates the differential-readout imaging detector.

Photons are drawn from a mode spec and kept only when they land on a
current-carrying wire inside the active disk (the others are redrawn).
Each kept photon becomes a pair of time tags at the two readout terminals;
their difference encodes the column.
"""
import logging
import math
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import integrate

from beams import U_MAX, radial_density, truncated_marginal
from util import SPEED_OF_LIGHT_UM_PER_PS, ConfigurationError, ValidationError, worker_count

logger = logging.getLogger(__name__)

COLUMN_PITCH_UM = 2.08
WIRE_WIDTH_UM = 0.12
# Assumed, not published: enough columns and active area to span the
# widest fiber mode (30 um MFD).
N_COLUMNS = 17
ACTIVE_DIAMETER_UM = 35.0
# Back-calculated from the 215 ps column spacing at 0.003c (2 ds = v * 215 ps).
PATH_INCREMENT_UM = 96.75
PULSE_VELOCITY = 0.003
# Assumed, not published.
JITTER_SIGMA_PS = 10.0

CHUNK_SIZE = 1 << 16
MAX_BATCH = 1 << 22
PILOT_PROPOSALS = 1 << 23
MIN_ACCEPTANCE = 1e-6
EPOCH_RANGE_PS = 1e5
STRIPE_NODES = 3


@dataclass(frozen=True)
class DetectorGeometry:
    column_pitch: float = COLUMN_PITCH_UM
    wire_width: float = WIRE_WIDTH_UM
    n_columns: int = N_COLUMNS
    path_increment: float = PATH_INCREMENT_UM
    pulse_velocity: float = PULSE_VELOCITY
    jitter_sigma: float = JITTER_SIGMA_PS
    active_diameter: float = ACTIVE_DIAMETER_UM
    channel_skew: float = 0.0

    def __post_init__(self):
        if not self.column_pitch > self.wire_width > 0:
            raise ValidationError(
                f"need column_pitch > wire_width > 0, got {self.column_pitch} "
                f"and {self.wire_width}")
        if self.n_columns < 1 or self.n_columns % 2 == 0:
            raise ValidationError(f"n_columns must be odd and positive, got {self.n_columns}")
        if not 0 < self.pulse_velocity < 1:
            raise ValidationError(
                f"pulse velocity must be a fraction of c in (0, 1), got {self.pulse_velocity}")
        if not self.path_increment > 0:
            raise ValidationError(f"path increment must be > 0, got {self.path_increment}")
        if self.jitter_sigma < 0:
            raise ValidationError(f"jitter must be >= 0, got {self.jitter_sigma}")
        if not self.active_diameter > 0:
            raise ValidationError(f"active diameter must be > 0, got {self.active_diameter}")
        if self.n_columns * self.column_pitch < self.active_diameter:
            raise ValidationError(
                f"{self.n_columns} columns at {self.column_pitch} um do not span "
                f"the {self.active_diameter} um active area")

    @property
    def half_span(self):
        """
        Index of the outermost column; columns run from -half_span to half_span.
        """
        return (self.n_columns - 1) // 2

    @property
    def column_indices(self):
        return np.arange(-self.half_span, self.half_span + 1)

    @property
    def column_x(self):
        return self.column_indices * self.column_pitch

    @property
    def pulse_speed(self):
        """Pulse speed on the nanowire in um/ps."""
        return self.pulse_velocity * SPEED_OF_LIGHT_UM_PER_PS

    @property
    def pitch_dt(self):
        """Change of t_pos - t_neg from one column to the next, in ps."""
        return 2 * self.path_increment / self.pulse_speed

    @property
    def transit(self):
        """Travel time from the central column to either terminal, in ps."""
        return self.half_span * self.path_increment / self.pulse_speed

    def as_dict(self):
        return {
            "column_pitch_um": self.column_pitch,
            "wire_width_um": self.wire_width,
            "n_columns": self.n_columns,
            "path_increment_um": self.path_increment,
            "pulse_velocity_c": self.pulse_velocity,
            "jitter_sigma_ps": self.jitter_sigma,
            "active_diameter_um": self.active_diameter,
            "channel_skew_ps": self.channel_skew,
        }

    @classmethod
    def from_dict(cls, description):
        """
        Return geometry from JSON data. Missing fields take the defaults.
        """
        defaults = cls()
        try:
            return cls(
                float(description.get("column_pitch_um", defaults.column_pitch)),
                float(description.get("wire_width_um", defaults.wire_width)),
                int(description.get("n_columns", defaults.n_columns)),
                float(description.get("path_increment_um", defaults.path_increment)),
                float(description.get("pulse_velocity_c", defaults.pulse_velocity)),
                float(description.get("jitter_sigma_ps", defaults.jitter_sigma)),
                float(description.get("active_diameter_um", defaults.active_diameter)),
                float(description.get("channel_skew_ps", defaults.channel_skew)),
            )
        except (TypeError, ValueError, AttributeError) as error:
            if isinstance(error, ValidationError):
                raise
            raise ValidationError(f"malformed geometry: {error!r}") from error


@dataclass(frozen=True)
class TimeTagPair:
    t_pos: float
    t_neg: float

    @property
    def dt(self):
        return self.t_pos - self.t_neg


@dataclass(frozen=True)
class EventRecord:
    true_column: int
    true_x: float
    true_y: float
    tags: TimeTagPair


class EventBatch(Sequence):
    """
    Read-only columnar list of events.

    Indexing gives EventRecord objects, slicing gives a smaller batch;
    the arrays stay available for vectorized analysis.
    """
    def __init__(self, columns, x, y, t_pos, t_neg, acceptance_rate=math.nan):
        arrays = [np.asarray(columns, dtype=np.int64)] + [
            np.asarray(values, dtype=float) for values in (x, y, t_pos, t_neg)]
        if len({array.shape for array in arrays}) != 1:
            raise ValidationError("event columns have different lengths")
        for array in arrays:
            array.flags.writeable = False
        self.columns, self.x, self.y, self.t_pos, self.t_neg = arrays
        self.acceptance_rate = acceptance_rate

    def __len__(self):
        return self.columns.size

    def __getitem__(self, index):
        if isinstance(index, slice):
            return EventBatch(self.columns[index], self.x[index], self.y[index],
                              self.t_pos[index], self.t_neg[index], self.acceptance_rate)
        return EventRecord(int(self.columns[index]), float(self.x[index]),
                           float(self.y[index]),
                           TimeTagPair(float(self.t_pos[index]), float(self.t_neg[index])))

    def __repr__(self):
        return "<EventBatch {} events, acceptance {:.4g}>".format(len(self), self.acceptance_rate)

    @property
    def dt(self):
        return self.t_pos - self.t_neg

    def column_counts(self, geom):
        """
        Return ground-truth counts per column, ordered like geom.column_indices.
        """
        return np.bincount(self.columns + geom.half_span, minlength=geom.n_columns)


def _tag_times(columns, geom, rng, epoch):
    """
    Return arrival times at both terminals for detections on the given columns.
    """
    one_way = columns * geom.path_increment / geom.pulse_speed
    t_pos = epoch + geom.transit + one_way + geom.channel_skew
    t_neg = epoch + geom.transit - one_way
    t_pos = t_pos + rng.normal(0.0, geom.jitter_sigma, size=np.shape(columns))
    t_neg = t_neg + rng.normal(0.0, geom.jitter_sigma, size=np.shape(columns))
    return t_pos, t_neg


def column_to_tags(column, geom, rng, epoch=0.0):
    """
    Return the time tags of one detection on the given column.

    rng: a numpy Generator, advanced by two normal draws.
    epoch: common time origin of the run.
    """
    if not -geom.half_span <= column <= geom.half_span:
        raise ValidationError(
            f"column {column} outside [-{geom.half_span}, {geom.half_span}]")
    t_pos, t_neg = _tag_times(np.array([column]), geom, rng, epoch)
    return TimeTagPair(float(t_pos[0]), float(t_neg[0]))


@lru_cache(maxsize=None)
def _radial_quantiles(p):
    """
    Tabulated inverse CDF of the radial density of LG_p^0 in u = 2r^2/w^2.
    """
    u = np.linspace(0.0, U_MAX, 200001)
    cdf = integrate.cumulative_trapezoid(radial_density(p, u), u, initial=0.0)
    return u, cdf / cdf[-1]


def _draw_positions(spec, size, rng):
    """
    Draw photon positions from the incoherent mode mixture.
    """
    weights = np.array([mode.weight for mode in spec.modes])
    which = rng.choice(weights.size, size=size, p=weights / weights.sum())
    uniform = rng.random(size)
    u = np.empty(size)
    for index, mode in enumerate(spec.modes):
        chosen = which == index
        if mode.p == 0:
            # exp(-u) has a closed-form inverse CDF
            u[chosen] = -np.log1p(-uniform[chosen])
        else:
            grid, cdf = _radial_quantiles(mode.p)
            u[chosen] = np.interp(uniform[chosen], cdf, grid)
    r = spec.w * np.sqrt(u / 2)
    theta = rng.uniform(0.0, 2 * np.pi, size)
    return spec.center_x + r * np.cos(theta), spec.center_y + r * np.sin(theta)


def _on_wires(x, y, geom):
    """
    Return (mask of photons on a wire inside the active disk, their column).
    """
    columns = np.rint(x / geom.column_pitch)
    on_wire = np.abs(x - columns * geom.column_pitch) <= geom.wire_width / 2
    in_range = np.abs(columns) <= geom.half_span
    in_disk = x ** 2 + y ** 2 <= (geom.active_diameter / 2) ** 2
    return on_wire & in_range & in_disk, columns.astype(np.int64)


def _simulate_chunk(spec, geom, seed, chunk_index, size, epoch):
    """
    Simulate one chunk of accepted events from its own random stream.

    Every chunk owns a Philox stream keyed by (seed, chunk_index), so the
    result does not depend on which worker runs it.
    """
    rng = np.random.Generator(np.random.Philox(
        np.random.SeedSequence(seed, spawn_key=(chunk_index,))))
    kept_x, kept_y, kept_columns = [], [], []
    proposals = accepted = 0
    batch = max(4 * size, 4096)
    while accepted < size:
        x, y = _draw_positions(spec, batch, rng)
        mask, columns = _on_wires(x, y, geom)
        proposals += batch
        accepted += int(mask.sum())
        kept_x.append(x[mask])
        kept_y.append(y[mask])
        kept_columns.append(columns[mask])
        if proposals >= PILOT_PROPOSALS and accepted < MIN_ACCEPTANCE * proposals:
            raise ConfigurationError(
                f"only {accepted} of {proposals} photons hit a wire; the mode "
                "is too misaligned with the active area")
        rate = max(accepted / proposals, MIN_ACCEPTANCE)
        batch = int(min(max(1.2 * (size - accepted) / rate, 4096), MAX_BATCH))

    x = np.concatenate(kept_x)[:size]
    y = np.concatenate(kept_y)[:size]
    columns = np.concatenate(kept_columns)[:size]
    t_pos, t_neg = _tag_times(columns, geom, rng, epoch)
    return columns, x, y, t_pos, t_neg, proposals, accepted


def sample_events(spec, geom, n, seed, workers=None):
    """
    Return n simulated detection events as an EventBatch.

    Deterministic for a fixed seed, whatever the number of workers.
    workers: thread count, capped by the TOFBEAM_THREADS variable.
    """
    if n < 1:
        raise ValidationError("n_events must be ≥ 1")
    if seed < 0:
        raise ValidationError(f"seed must be >= 0, got {seed}")
    epoch = np.random.default_rng(seed).uniform(0.0, EPOCH_RANGE_PS)
    sizes = [CHUNK_SIZE] * (n // CHUNK_SIZE)
    if n % CHUNK_SIZE:
        sizes.append(n % CHUNK_SIZE)

    def run(item):
        chunk_index, size = item
        return _simulate_chunk(spec, geom, seed, chunk_index, size, epoch)

    count = worker_count(workers)
    logger.debug("simulating %d events in %d chunks on %d workers", n, len(sizes), count)
    with ThreadPoolExecutor(max_workers=count) as pool:
        results = list(pool.map(run, enumerate(sizes)))

    columns, x, y, t_pos, t_neg, proposals, accepted = zip(*results)
    rate = sum(accepted) / sum(proposals)
    logger.info("simulated %d events, acceptance rate %.4g", n, rate)
    return EventBatch(np.concatenate(columns), np.concatenate(x), np.concatenate(y),
                      np.concatenate(t_pos), np.concatenate(t_neg), rate)


def column_stripe_masses(spec, geom):
    """
    Return the power landing on each wire stripe inside the active disk.

    Ordered like geom.column_indices. Gauss-Legendre nodes across the
    stripe, exact y limits of the disk at every node.
    """
    nodes, node_weights = leggauss(STRIPE_NODES)
    half_width = geom.wire_width / 2
    x = geom.column_x[:, np.newaxis] + half_width * nodes[np.newaxis, :]
    radius = geom.active_diameter / 2
    half_height = np.sqrt(np.clip(radius ** 2 - x ** 2, 0.0, None))
    density = truncated_marginal(spec, x, -half_height, half_height)
    return half_width * density @ node_weights


def expected_acceptance(spec, geom):
    """
    Return the probability that a photon of the spec is detected at all.
    """
    return float(column_stripe_masses(spec, geom).sum())


def expected_column_fractions(spec, geom):
    """
    Return the probability of each column given a detection.
    """
    masses = column_stripe_masses(spec, geom)
    total = masses.sum()
    if not total > 0:
        raise ConfigurationError("the mode does not illuminate any wire")
    return masses / total
