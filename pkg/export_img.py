"""
Export figures of the analysis results in SVG format.

Plotting is optional: nothing here feeds back into the numbers.
The Agg backend needs no display, so it works on servers and in tests.
"""
import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from detector import expected_column_fractions  # noqa: E402

logger = logging.getLogger(__name__)

# Fixed hash salt and no date: the same data gives the same file.
plt.rcParams["svg.hashsalt"] = "tofbeam"
SVG_METADATA = {"Date": None}


def save_svg(fig, path):
    """
    Save the figure as SVG, creating the parent directory, and close it.
    """
    path = Path(path)
    path.parent.mkdir(exist_ok=True, parents=True)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata=SVG_METADATA)
    plt.close(fig)
    logger.debug("saved %s", path)
    return path


def export_histogram(path, hist, comb=None):
    """
    Plot the delta-time histogram; with a comb, mark the column teeth.
    """
    fig, ax = plt.subplots(figsize=(8, 5))
    ax.stairs(hist.counts, hist.bin_edges, fill=True)
    if comb is not None:
        low, high = hist.bin_edges[0], hist.bin_edges[-1]
        first = int((low - comb.offset) // comb.pitch)
        last = int((high - comb.offset) // comb.pitch) + 1
        for tooth in range(first, last + 1):
            ax.axvspan(comb.offset + (tooth - 0.25) * comb.pitch,
                       comb.offset + (tooth + 0.25) * comb.pitch, alpha=0.15, color="tab:orange")
    ax.set_xlim(hist.bin_edges[0], hist.bin_edges[-1])
    ax.set_xlabel("t+ - t- (ps)")
    ax.set_ylabel("counts")
    ax.grid(True)
    return save_svg(fig, path)


def export_profile(path, profile, fit, geom):
    """
    Plot the measured column fractions with the fitted model on top.
    """
    fig, ax = plt.subplots(figsize=(8, 5))
    measured = profile.counts / profile.total
    ax.plot(profile.x_positions, measured, "o", label="measured")
    model = expected_column_fractions(fit.as_mode_spec(), geom)
    ax.plot(profile.x_positions, model, "-",
            label="fit, MFD {:.2f} ± {:.2f} µm".format(fit.mfd, fit.mfd_uncertainty))
    ax.set_yscale("log")
    ax.set_xlabel("x (µm)")
    ax.set_ylabel("fraction of detections")
    ax.grid(True)
    ax.legend()
    return save_svg(fig, path)


def export_tail_power(path, x_values, measured, fitted):
    """
    Plot the fraction of power outside |x| for the profile and for the fit.
    """
    fig, ax = plt.subplots(figsize=(8, 5))
    ax.plot(x_values, measured, "o-", label="measured")
    ax.plot(x_values, fitted, "-", label="fit")
    ax.set_yscale("log")
    ax.set_xlabel("|x| (µm)")
    ax.set_ylabel("fractional power outside |x|")
    ax.grid(True)
    ax.legend()
    return save_svg(fig, path)


def export_coupling(path, curve):
    """
    Plot coupling loss against active-area diameter, one line per offset.
    """
    fig, ax = plt.subplots(figsize=(8, 5))
    order = curve.diameters.argsort()
    for j, offset in enumerate(curve.offsets):
        ax.plot(curve.diameters[order], curve.loss[order, j], label=f"offset {offset:g} µm")
    ax.set_yscale("log")
    ax.set_xlabel("active area diameter (µm)")
    ax.set_ylabel("coupling loss")
    ax.grid(True)
    ax.legend()
    return save_svg(fig, path)


def export_stack_spectrum(path, wavelengths, responses):
    """
    Plot reflectance, transmittance and absorptance over a wavelength sweep.
    """
    fig, ax = plt.subplots(figsize=(8, 5))
    ax.plot(wavelengths, [response.R for response in responses], label="R")
    ax.plot(wavelengths, [response.T for response in responses], label="T")
    ax.plot(wavelengths, [response.A for response in responses], label="A")
    ax.set_xlabel("wavelength (nm)")
    ax.set_ylabel("fraction")
    ax.set_ylim(0, 1)
    ax.grid(True)
    ax.legend()
    return save_svg(fig, path)
