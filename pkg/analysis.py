"""
Analysis module turns time-tag pairs back into a spatial profile and
fits Laguerre-Gaussian mode decompositions to it.

The chain: delta times -> histogram -> comb lock -> columns -> profile
-> mode fit -> tail power.
"""
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize, stats

from beams import LGMode, ModeSpec, band_power
from detector import EventBatch, column_stripe_masses
from util import FitError, ValidationError

logger = logging.getLogger(__name__)

PITCH_SEARCH_SPAN = 0.10
PITCH_GRID_STEP = 0.1
PHASE_BINS = 360
REFINE_ROUNDS = 3
MIN_OCCUPIED_COLUMNS = 5
# Stop adding radial modes when chi^2/dof improves by less than this.
MODEL_SELECTION_THRESHOLD = 2.0
MIN_WAIST = 1e-3
DIFF_STEP = 1e-5
MAX_EVALUATIONS = 500
# Histograms needing more bins are refused.
MAX_HISTOGRAM_BINS = 10_000_000


@dataclass(frozen=True)
class DtHistogram:
    bin_width: float
    bin_edges: np.ndarray
    counts: np.ndarray

    @property
    def centers(self):
        return (self.bin_edges[:-1] + self.bin_edges[1:]) / 2

    @property
    def total(self):
        return int(self.counts.sum())


@dataclass(frozen=True)
class CombLock:
    """
    Timing comb: tooth k sits at offset + k * pitch.
    low_confidence: only one tooth was occupied, pitch is the prior.
    """
    pitch: float
    offset: float
    low_confidence: bool = False

    def as_dict(self):
        return {"pitch_ps": self.pitch, "offset_ps": self.offset,
                "low_confidence": self.low_confidence}


@dataclass(frozen=True)
class ColumnProfile:
    x_positions: np.ndarray
    counts: np.ndarray
    total: int
    rejected: int = 0

    def __post_init__(self):
        x = np.asarray(self.x_positions, dtype=float)
        counts = np.asarray(self.counts)
        object.__setattr__(self, "x_positions", x)
        object.__setattr__(self, "counts", counts)
        if x.shape != counts.shape or x.ndim != 1:
            raise ValidationError(
                f"{x.size} column positions do not match {counts.size} counts")
        if np.any(counts < 0):
            raise ValidationError("column counts must be nonnegative")
        if x.size > 1:
            steps = np.diff(x)
            if not (np.all(steps > 0) and np.allclose(steps, steps[0], rtol=1e-9, atol=1e-9)):
                raise ValidationError("column positions must increase with uniform spacing")

    @property
    def pitch(self):
        return float(self.x_positions[1] - self.x_positions[0])

    @property
    def occupied_columns(self):
        return int(np.count_nonzero(self.counts))

    @property
    def mean(self):
        return float(np.average(self.x_positions, weights=self.counts))

    @property
    def std(self):
        return float(math.sqrt(np.average((self.x_positions - self.mean) ** 2, weights=self.counts)))


@dataclass(frozen=True)
class ModeFitResult:
    """
    Best mode decomposition of a profile; weights[p] belongs to LG_p^0.
    Uncertainties are 1 sigma.
    """
    mfd: float
    mfd_uncertainty: float
    center_x: float
    center_x_uncertainty: float
    weights: tuple
    weight_uncertainties: tuple
    chi_square_per_dof: float

    @property
    def max_p(self):
        return len(self.weights) - 1

    def as_mode_spec(self, wavelength=1.55):
        return ModeSpec.from_weights(self.weights, self.mfd, wavelength, self.center_x)

    def as_dict(self):
        return {
            "mfd_um": self.mfd,
            "mfd_sigma_um": self.mfd_uncertainty,
            "center_x_um": self.center_x,
            "center_x_sigma_um": self.center_x_uncertainty,
            "weights": [
                {"p": p, "weight": weight, "sigma": sigma}
                for p, (weight, sigma) in enumerate(zip(self.weights, self.weight_uncertainties))
            ],
            "chi2_per_dof": self.chi_square_per_dof,
        }

    @classmethod
    def from_dict(cls, description):
        try:
            entries = sorted(description["weights"], key=lambda entry: entry["p"])
            return cls(
                float(description["mfd_um"]),
                float(description["mfd_sigma_um"]),
                float(description["center_x_um"]),
                float(description.get("center_x_sigma_um", 0.0)),
                tuple(float(entry["weight"]) for entry in entries),
                tuple(float(entry["sigma"]) for entry in entries),
                float(description["chi2_per_dof"]),
            )
        except (KeyError, TypeError) as error:
            raise ValidationError(f"malformed fit result: {error!r}") from error


def delta_times(pairs):
    """
    Return t_pos - t_neg for an EventBatch or any iterable of
    TimeTagPair / EventRecord.
    """
    if isinstance(pairs, EventBatch):
        return pairs.dt
    values = []
    for item in pairs:
        tags = getattr(item, "tags", item)
        values.append(tags.t_pos - tags.t_neg)
    return np.array(values, dtype=float)


def build_histogram(pairs, bin_width):
    """
    Histogram the delta times over their whole observed range.

    Bins are centred on multiples of bin_width, so a noiseless comb puts
    each tooth in the bin containing it.
    """
    if not bin_width > 0:
        raise ValidationError(f"bin width must be > 0, got {bin_width}")
    dt = delta_times(pairs)
    if dt.size == 0:
        raise ValidationError("no time-tag pairs to histogram")
    if (dt.max() - dt.min()) / bin_width + 2 > MAX_HISTOGRAM_BINS:
        raise ValidationError(
            f"delta times span {dt.min():.6g} to {dt.max():.6g} ps, more than "
            f"{MAX_HISTOGRAM_BINS} bins of {bin_width} ps: outlier event?")
    bins = np.floor(dt / bin_width + 0.5).astype(np.int64)
    first, last = int(bins.min()), int(bins.max())
    counts = np.bincount(bins - first, minlength=last - first + 1)
    edges = (np.arange(first, last + 2) - 0.5) * bin_width
    return DtHistogram(float(bin_width), edges, counts)


def _window_scores(centers, masses, pitch):
    """
    Return, for each phase bin, the mass within pitch/4 of that phase.
    """
    phase = np.mod(centers, pitch) / pitch
    index = np.floor(phase * PHASE_BINS).astype(np.int64) % PHASE_BINS
    ring = np.bincount(index, weights=masses, minlength=PHASE_BINS)
    half = PHASE_BINS // 4
    extended = np.concatenate([ring[-half:], ring, ring[:half + 1]])
    cumulative = np.concatenate([[0.0], np.cumsum(extended)])
    start = np.arange(PHASE_BINS)
    return cumulative[start + 2 * half + 1] - cumulative[start]


def _tooth_centroids(centers, masses, pitch, offset):
    """
    Return (tooth indices, count-weighted centroids, tooth masses).
    """
    teeth = np.rint((centers - offset) / pitch).astype(np.int64)
    labels, inverse = np.unique(teeth, return_inverse=True)
    tooth_mass = np.bincount(inverse, weights=masses)
    centroid = np.bincount(inverse, weights=masses * centers) / tooth_mass
    return labels, centroid, tooth_mass


def _normalized_offset(offset, pitch):
    """
    Return the offset moved into [-pitch/2, pitch/2).
    """
    return float(np.mod(offset + pitch / 2, pitch) - pitch / 2)


def lock_comb(hist, expected_pitch):
    """
    Find the timing comb (pitch, offset) that best explains the histogram.

    Grid search over pitch within +-10 % of the prior and over offset,
    maximizing the counts inside windows of half-width pitch/4 around each
    tooth. The winner is refined by a weighted line fit through per-tooth
    centroids.
    """
    if not expected_pitch > 0:
        raise ValidationError(f"expected pitch must be > 0, got {expected_pitch}")
    occupied = hist.counts > 0
    centers = hist.centers[occupied]
    masses = hist.counts[occupied].astype(float)
    if centers.size == 0:
        raise ValidationError("cannot lock onto an empty histogram")

    pitches = np.arange((1 - PITCH_SEARCH_SPAN) * expected_pitch,
                        (1 + PITCH_SEARCH_SPAN) * expected_pitch + PITCH_GRID_STEP / 2,
                        PITCH_GRID_STEP)
    best_score, pitch, offset = -1.0, expected_pitch, 0.0
    for candidate in pitches:
        scores = _window_scores(centers, masses, candidate)
        phase_bin = int(np.argmax(scores))
        if scores[phase_bin] > best_score:
            best_score = scores[phase_bin]
            pitch = float(candidate)
            offset = (phase_bin + 0.5) / PHASE_BINS * candidate

    labels, centroid, tooth_mass = _tooth_centroids(centers, masses, pitch, offset)
    if labels.size < 2:
        offset = _normalized_offset(float(np.average(centers, weights=masses)), expected_pitch)
        logger.warning("only one comb tooth occupied; keeping prior pitch %.3f ps", expected_pitch)
        return CombLock(float(expected_pitch), offset, True)

    for _ in range(REFINE_ROUNDS):
        slope, intercept = np.polyfit(labels, centroid, 1, w=np.sqrt(tooth_mass))
        pitch, offset = float(slope), float(intercept)
        labels, centroid, tooth_mass = _tooth_centroids(centers, masses, pitch, offset)

    lock = CombLock(pitch, _normalized_offset(offset, pitch))
    logger.info("comb locked: pitch %.4f ps, offset %.4f ps, %d teeth",
                lock.pitch, lock.offset, labels.size)
    return lock


def assign_columns(pairs, comb, geom, guard=0.0):
    """
    Return (column of every event, mask of accepted events).

    An event belongs to its nearest comb tooth. It is rejected when it lies
    farther than pitch/2 * (1 - guard) from that tooth or when the tooth
    is not a column of the device. Rejected events get column 0.
    """
    if not 0 <= guard < 1:
        raise ValidationError(f"guard must be in [0, 1), got {guard}")
    position = (delta_times(pairs) - comb.offset) / comb.pitch
    columns = np.rint(position)
    accepted = np.abs(columns) <= geom.half_span
    if guard > 0:
        accepted &= np.abs(position - columns) <= 0.5 * (1 - guard)
    return np.where(accepted, columns, 0).astype(np.int64), accepted


def bin_to_columns(pairs, comb, geom, guard=0.0):
    """
    Return the ColumnProfile of the events, in the beam frame.
    """
    columns, accepted = assign_columns(pairs, comb, geom, guard)
    counts = np.bincount(columns[accepted] + geom.half_span, minlength=geom.n_columns)
    rejected = int(accepted.size - accepted.sum())
    if rejected:
        logger.info("rejected %d of %d events", rejected, accepted.size)
    return ColumnProfile(geom.column_x, counts, int(counts.sum()), rejected)


def expected_misassignment(pitch, jitter_sigma):
    """
    Return the probability that jitter pushes an event past the midpoint
    to a neighbouring tooth: 2 Q(pitch / (2 sigma sqrt 2)).
    """
    if jitter_sigma == 0:
        return 0.0
    return float(2 * stats.norm.sf(pitch / (2 * jitter_sigma * math.sqrt(2))))


def _mixture_weights(free_weights):
    """
    Return all weights from the free ones; weight of p = 0 is the remainder.
    """
    weights = np.concatenate([[1.0 - np.sum(free_weights)], free_weights])
    weights = np.clip(weights, 0.0, None)
    return weights / weights.sum()


def _mode_masses(max_p, w, center, geom):
    """
    Return per-column stripe masses of each single mode, shape (max_p + 1, n_columns).
    """
    return np.array([
        column_stripe_masses(ModeSpec((LGMode(0, p, 1.0),), 2 * w, center), geom)
        for p in range(max_p + 1)
    ])


def _expected_counts(params, max_p, total, geom):
    center, w = params[0], params[1]
    weights = _mixture_weights(params[2:])
    masses = weights @ _mode_masses(max_p, w, center, geom)
    return total * masses / masses.sum()


def _fit_single(profile, geom, max_p, start):
    """
    Fit one model with radial modes 0..max_p. Return (ModeFitResult, chi^2/dof).
    """
    observed = profile.counts.astype(float)
    sigma = np.sqrt(np.maximum(observed, 1.0))
    dof = observed.size - (2 + max_p) - 1
    if dof < 1:
        raise FitError(f"{observed.size} columns are too few for max_p = {max_p}")

    def residuals(params):
        return (observed - _expected_counts(params, max_p, profile.total, geom)) / sigma

    span = profile.x_positions
    lower = [span[0] - profile.pitch, MIN_WAIST] + [0.0] * max_p
    upper = [span[-1] + profile.pitch, np.inf] + [1.0] * max_p
    initial = np.clip(np.concatenate([start, np.full(max_p, 0.0)]), lower, upper)
    result = optimize.least_squares(
        residuals, initial, bounds=(lower, upper), method="trf",
        diff_step=DIFF_STEP, max_nfev=MAX_EVALUATIONS)
    if result.status <= 0:
        raise FitError(f"mode fit with max_p = {max_p} did not converge: {result.message}")

    chi_square = float(np.sum(result.fun ** 2))
    covariance = np.linalg.pinv(result.jac.T @ result.jac)
    variances = np.clip(np.diag(covariance), 0.0, None)
    free = covariance[2:, 2:]
    weight_variances = np.concatenate([[max(float(free.sum()), 0.0)], variances[2:]])
    weights = _mixture_weights(result.x[2:])

    fit = ModeFitResult(
        mfd=float(2 * result.x[1]),
        mfd_uncertainty=float(2 * math.sqrt(variances[1])),
        center_x=float(result.x[0]),
        center_x_uncertainty=float(math.sqrt(variances[0])),
        weights=tuple(float(weight) for weight in weights),
        weight_uncertainties=tuple(float(math.sqrt(v)) for v in weight_variances),
        chi_square_per_dof=chi_square / dof,
    )
    logger.debug("max_p=%d: mfd %.4f, weights %s, chi2/dof %.4g",
                 max_p, fit.mfd, fit.weights, fit.chi_square_per_dof)
    return fit


def fit_modes(profile, geom, max_p=1):
    """
    Fit LG_p^0 mode mixtures of growing order and return the selected one.

    Models with p = 0..m are fitted for m = 0, 1, ..., max_p. A mode is
    added only while it lowers chi^2/dof by at least 2. If order m is the
    first to fall short, the returned fit is the p = 0..m-1 model.

    Expected counts are the stripe-integrated beam inside the active disk,
    normalized over the columns; the beam is assumed centred in y.
    """
    if not 0 <= max_p <= 4:
        raise ValidationError(f"max_p must be in [0, 4], got {max_p}")
    if profile.occupied_columns < MIN_OCCUPIED_COLUMNS:
        raise FitError(
            f"only {profile.occupied_columns} occupied columns, need {MIN_OCCUPIED_COLUMNS}")
    if profile.std < profile.pitch / 2:
        raise FitError(
            f"profile width {profile.std:.3f} um is below one column spacing: unresolvable")

    start = np.array([profile.mean, 2 * profile.std])
    selected = _fit_single(profile, geom, 0, start)
    for order in range(1, max_p + 1):
        candidate = _fit_single(profile, geom, order, np.array([selected.center_x, selected.mfd / 2]))
        improvement = selected.chi_square_per_dof - candidate.chi_square_per_dof
        if improvement < MODEL_SELECTION_THRESHOLD:
            logger.info("p = %d improves chi2/dof by %.3g only; keeping max_p = %d",
                        order, improvement, order - 1)
            break
        selected = candidate
    logger.info("selected fit: mfd %.4f +- %.4f um, max_p %d",
                selected.mfd, selected.mfd_uncertainty, selected.max_p)
    return selected


def tail_power(fit_or_profile, x_abs, center=None):
    """
    Return the fraction of power farther than x_abs from the center along x.

    For a fit this is the model's power outside the band; for a profile,
    the fraction of counts in columns with |x_k - center| > x_abs, the
    center defaulting to the count-weighted mean.
    """
    if x_abs < 0:
        raise ValidationError(f"x_abs must be >= 0, got {x_abs}")
    if isinstance(fit_or_profile, ModeFitResult):
        return max(1.0 - band_power(fit_or_profile.as_mode_spec(), x_abs), 0.0)
    profile = fit_or_profile
    if center is None:
        center = profile.mean
    outside = np.abs(profile.x_positions - center) > x_abs
    return float(profile.counts[outside].sum() / profile.counts.sum())


def tail_power_curve(fit_or_profile, x_values, center=None):
    return np.array([tail_power(fit_or_profile, x, center) for x in x_values])
