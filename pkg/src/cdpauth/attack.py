"""Template estimation from printed originals and reprinting of the estimates."""

from __future__ import annotations

import configparser
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy import ndimage

from cdpauth.channel import PrinterProfile, attacker_view, derive_seed, reprint
from cdpauth.errors import ConfigError, DegenerateImageError
from cdpauth.types import CdpTuple, Kind, PrintedCode

METHODS = ("otsu", "fixed", "wiener")
HIST_BINS = 256


@dataclass(frozen=True)
class EstimatorSpec:
    """How the attacker binarizes a scanned original.

    ``method`` is ``"otsu"`` (global Otsu), ``"fixed"`` (threshold at ``level``)
    or ``"wiener"`` (Wiener deconvolution with a Gaussian PSF of ``psf_sigma``
    and noise-to-signal ratio ``noise_ratio``, then Otsu). ``sharpen`` applies
    an unsharp mask before thresholding.
    """

    method: str = "otsu"
    level: float = 0.5
    psf_sigma: float = 0.6
    noise_ratio: float = 0.01
    sharpen: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown estimator {self.method!r}; choose from {METHODS}")
        if not 0.0 < self.level < 1.0:
            raise ConfigError(f"fixed threshold level must lie in (0, 1), got {self.level}")
        if self.psf_sigma < 0:
            raise ConfigError("estimator psf_sigma must be >= 0")
        if self.noise_ratio <= 0:
            raise ConfigError("estimator noise_ratio must be > 0")

    def summary(self) -> str:
        parts = [self.method]
        if self.method == "fixed":
            parts.append(f"level={self.level}")
        if self.method == "wiener":
            parts.append(f"psf_sigma={self.psf_sigma},noise_ratio={self.noise_ratio}")
        if self.sharpen:
            parts.append("sharpen")
        return ":".join(parts)


def estimator_from_parser(parser: configparser.ConfigParser) -> EstimatorSpec:
    if not parser.has_section("estimator"):
        return EstimatorSpec()
    sec = parser["estimator"]
    try:
        return EstimatorSpec(
            method=sec.get("method", "otsu"),
            level=sec.getfloat("level", 0.5),
            psf_sigma=sec.getfloat("psf_sigma", 0.6),
            noise_ratio=sec.getfloat("noise_ratio", 0.01),
            sharpen=sec.getboolean("sharpen", False),
        )
    except ValueError as exc:
        raise ConfigError(f"[estimator]: {exc}") from None


def parse_estimator(text: str) -> EstimatorSpec:
    """Parse the CLI form ``otsu``, ``fixed:0.45``, ``wiener:0.6:0.01``, optionally ``+sharpen``."""
    sharpen = text.endswith("+sharpen")
    head = text.removesuffix("+sharpen")
    method, *args = head.split(":")
    try:
        values = [float(a) for a in args]
    except ValueError:
        raise ConfigError(f"bad estimator {text!r}") from None
    if method == "fixed":
        return EstimatorSpec("fixed", level=values[0] if values else 0.5, sharpen=sharpen)
    if method == "wiener":
        psf, ratio = (values + [0.6, 0.01][len(values):])[:2]
        return EstimatorSpec("wiener", psf_sigma=psf, noise_ratio=ratio, sharpen=sharpen)
    if args:
        raise ConfigError(f"estimator {method!r} takes no parameters")
    return EstimatorSpec(method, sharpen=sharpen)


def otsu_threshold(image: np.ndarray, bins: int = HIST_BINS) -> float:
    """Threshold maximizing between-class variance of a ``bins``-bin histogram over the data range.

    Pixels strictly above the returned value form the bright class. When the
    maximum is a plateau, the middle of the plateau is returned.
    """
    image = np.asarray(image, dtype=np.float64)
    lo, hi = float(image.min()), float(image.max())
    if hi <= lo:
        raise DegenerateImageError("constant-intensity image: no threshold separates two classes")
    hist, edges = np.histogram(image, bins=bins, range=(lo, hi))
    centers = 0.5 * (edges[:-1] + edges[1:])
    p = hist / hist.sum()
    w0 = np.cumsum(p)
    m = np.cumsum(p * centers)
    w1 = 1.0 - w0
    with np.errstate(divide="ignore", invalid="ignore"):
        between = (m[-1] * w0 - m) ** 2 / (w0 * w1)
    between[~np.isfinite(between)] = -1.0
    # split after bin k; a flat maximum (empty bins between classes) resolves to its middle
    best = between.max()
    tol = 1e-12 * max(best, 1.0)
    first = last = int(np.argmax(between >= best - tol))
    while last + 1 < len(between) and between[last + 1] >= best - tol:
        last += 1
    return float(0.5 * (edges[first + 1] + edges[last + 1]))


def gaussian_otf(shape: tuple[int, int], sigma: float) -> np.ndarray:
    """Transfer function of a sampled, normalized Gaussian PSF centred at the origin."""
    h, w = shape
    y = np.fft.fftfreq(h) * h
    x = np.fft.fftfreq(w) * w
    kernel = np.exp(-(y[:, None] ** 2 + x[None, :] ** 2) / (2.0 * sigma ** 2))
    kernel /= kernel.sum()
    return np.fft.fft2(kernel)


def wiener_deconvolve(image: np.ndarray, psf_sigma: float, noise_ratio: float) -> np.ndarray:
    """Frequency-domain Wiener filter ``conj(H) / (|H|^2 + K)`` for a Gaussian blur.

    The image is reflect-padded by the PSF support to limit wrap-around.
    """
    image = np.asarray(image, dtype=np.float64)
    if psf_sigma == 0:
        return image.copy()
    pad = int(np.ceil(4 * psf_sigma)) + 1
    padded = np.pad(image, pad, mode="symmetric")
    mean = padded.mean()
    otf = gaussian_otf(padded.shape, psf_sigma)
    spectrum = np.fft.fft2(padded - mean)
    restored = np.fft.ifft2(np.conj(otf) * spectrum / (np.abs(otf) ** 2 + noise_ratio)).real
    return restored[pad:-pad, pad:-pad] + mean


def estimate_template(original: PrintedCode, spec: EstimatorSpec) -> np.ndarray:
    """Binary estimate ``t_hat`` of the template behind a scanned original."""
    if original.kind is not Kind.ORIGINAL:
        raise ValueError("templates are estimated from originals only")
    img = original.pixels
    if np.ptp(img) == 0:
        raise DegenerateImageError("constant-intensity input: no threshold separates classes")
    if spec.method == "wiener":
        img = wiener_deconvolve(img, spec.psf_sigma, spec.noise_ratio)
    if spec.sharpen:
        img = img + (img - ndimage.gaussian_filter(img, 1.0, mode="reflect"))
    level = spec.level if spec.method == "fixed" else otsu_threshold(img)
    return (img > level).astype(np.uint8)


def fabricate_fakes(tuple_in: CdpTuple, spec: EstimatorSpec,
                    attacker_profiles: Sequence[PrinterProfile], seed: int,
                    defender_profiles: Mapping[str, PrinterProfile] | None = None) -> CdpTuple:
    """Produce ``f^{a/d}`` for every attacker profile ``a`` and every original ``x^d``.

    ``defender_profiles`` is only needed for the resolution-advantage override:
    when the profile of ``d`` sets ``attack_noise_scale``, the estimate is made
    from the attacker's own re-acquisition of the print instead of ``x^d``.
    """
    if not tuple_in.originals:
        raise ValueError(f"tuple {tuple_in.id} has no originals to attack")
    if not attacker_profiles:
        raise ValueError("at least one attacker profile is required")
    defender_profiles = defender_profiles or {}
    fakes = {}
    for d, original in sorted(tuple_in.originals.items()):
        source = original
        dprof = defender_profiles.get(d)
        if dprof is not None and dprof.attack_noise_scale is not None:
            scan_seed = derive_seed(seed, tuple_in.id, dprof.seed_salt, f"scan:{d}")
            source = attacker_view(tuple_in.template, dprof, scan_seed)
        try:
            estimate = estimate_template(source, spec)
        except DegenerateImageError as exc:
            raise DegenerateImageError(f"tuple {tuple_in.id}, original {d}: {exc}") from exc
        for prof in attacker_profiles:
            print_seed = derive_seed(seed, tuple_in.id, prof.seed_salt, f"fake:{prof.id}/{d}")
            fakes[prof.id, d] = reprint(estimate, prof, print_seed, (prof.id, d), tuple_in.id)
    return tuple_in.with_fakes(fakes)
