"""Virtual print-and-scan channel.

A binary image goes through four fixed stages: ink placement with dot-gain
spread, Gaussian point-spread blur, additive Gaussian noise followed by a clamp
to [0, 1], and a power-law scanner response.
"""

from __future__ import annotations

import configparser
import zlib
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
from scipy import ndimage

from cdpauth.errors import ConfigError
from cdpauth.types import DigitalTemplate, Kind, PrintedCode

# truncation of the PSF kernel, in standard deviations
PSF_TRUNCATE = 4.0


@dataclass(frozen=True)
class PrinterProfile:
    """Parameters of one printing + acquisition process.

    ``attack_noise_scale`` is the optional resolution-advantage override: when
    set, an attacker estimating templates from prints of this process sees a
    re-acquisition whose noise is scaled by this factor (a higher resolution
    scan has less noise). ``None`` means the attacker works on the published
    scan itself.
    """

    id: str
    dot_gain: float = 0.0
    psf_sigma: float = 0.0
    noise_sigma: float = 0.0
    scan_gamma: float = 1.0
    seed_salt: int = 0
    attack_noise_scale: float | None = None

    def __post_init__(self):
        if not self.id:
            raise ConfigError("printer profile needs a non-empty id")
        for name in ("dot_gain", "psf_sigma", "noise_sigma"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0:
                raise ConfigError(f"profile {self.id!r}: {name} must be >= 0, got {value}")
        if not 0.1 <= self.scan_gamma <= 10.0:
            raise ConfigError(f"profile {self.id!r}: scan_gamma must lie in [0.1, 10], "
                              f"got {self.scan_gamma}")
        if self.attack_noise_scale is not None and self.attack_noise_scale < 0:
            raise ConfigError(f"profile {self.id!r}: attack_noise_scale must be >= 0")

    @property
    def is_identity(self) -> bool:
        return (self.dot_gain == 0 and self.psf_sigma == 0 and self.noise_sigma == 0
                and self.scan_gamma == 1.0)


IDENTITY = PrinterProfile("identity")

DEFAULT_PROFILES = {
    "vpA": PrinterProfile("vpA", dot_gain=0.7, psf_sigma=0.6, noise_sigma=0.04,
                          scan_gamma=1.0, seed_salt=1),
    "vpB": PrinterProfile("vpB", dot_gain=1.1, psf_sigma=0.9, noise_sigma=0.05,
                          scan_gamma=0.9, seed_salt=2),
}


def load_profiles(path: str | Path) -> dict[str, PrinterProfile]:
    """Read printer profiles from an INI file, one ``[printer:<id>]`` section each.

    Missing keys take the dataclass defaults. Other sections are ignored so the
    same file can also carry estimator and training settings.
    """
    parser = configparser.ConfigParser()
    parser.optionxform = str
    if not parser.read(path):
        raise ConfigError(f"cannot read profile configuration {path}")
    return profiles_from_parser(parser)


def profiles_from_parser(parser: configparser.ConfigParser) -> dict[str, PrinterProfile]:
    known = {f.name: f for f in fields(PrinterProfile)}
    profiles = {}
    for section in parser.sections():
        if not section.startswith("printer:"):
            continue
        pid = section.split(":", 1)[1].strip()
        kwargs = {}
        for key, raw in parser[section].items():
            if key not in known or key == "id":
                raise ConfigError(f"[{section}]: unknown key {key!r}")
            try:
                kwargs[key] = int(raw) if key == "seed_salt" else float(raw)
            except ValueError as exc:
                raise ConfigError(f"[{section}] {key}: {exc}") from None
        if pid in profiles:
            raise ConfigError(f"duplicate printer id {pid!r}")
        profiles[pid] = PrinterProfile(pid, **kwargs)
    return profiles


def derive_seed(global_seed: int, tuple_id: int, salt: int, role: str) -> int:
    """Per-print seed from (run seed, tuple id, profile salt, role); independent of execution order."""
    ss = np.random.SeedSequence([int(global_seed), int(tuple_id), int(salt),
                                 zlib.crc32(role.encode())])
    return int(ss.generate_state(1, np.uint64)[0])


def _disc_offsets(radius: float):
    r = int(np.floor(radius))
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            dist = float(np.hypot(dy, dx))
            if dist <= radius:
                yield dy, dx, 1.0 - dist / (2.0 * radius + 1.0)


def dot_gain_spread(ink: np.ndarray, radius: float) -> np.ndarray:
    """Spread ink to neighbours within Euclidean ``radius``.

    A neighbour at distance ``r`` receives weight ``1 - r / (2 * radius + 1)``:
    linear decay that keeps every pixel inside the disc more than half inked,
    so the spread shows up in coverage (pixels below 0.5). Contributions
    combine by elementwise max.
    """
    ink = np.asarray(ink)
    if not np.isin(ink, (0, 1)).all():
        raise ValueError("ink map must be binary")
    if radius < 0:
        raise ValueError(f"dot-gain radius must be >= 0, got {radius}")
    ink = ink.astype(np.float64)
    if radius == 0:
        return ink
    h, w = ink.shape
    out = np.zeros_like(ink)
    for dy, dx, weight in _disc_offsets(radius):
        shifted = np.zeros_like(ink)
        ys, yd = (slice(0, h - dy), slice(dy, h)) if dy >= 0 else (slice(-dy, h), slice(0, h + dy))
        xs, xd = (slice(0, w - dx), slice(dx, w)) if dx >= 0 else (slice(-dx, w), slice(0, w + dx))
        shifted[yd, xd] = ink[ys, xs]
        np.maximum(out, weight * shifted, out=out)
    return out


def channel_stages(binary: np.ndarray, profile: PrinterProfile, print_seed: int,
                   noise_sigma: float | None = None) -> dict[str, np.ndarray]:
    """Run the channel and return every intermediate image (instrumented mode).

    Keys in pipeline order: ``ink``, ``spread``, ``blurred`` (intensity before
    noise), ``noisy``, ``clamped``, ``scanned``.
    """
    binary = np.asarray(binary)
    if not np.isin(binary, (0, 1)).all():
        raise ValueError("channel input must be binary")
    sigma = profile.noise_sigma if noise_sigma is None else noise_sigma
    ink = (binary == 0).astype(np.float64)
    spread = dot_gain_spread(ink, profile.dot_gain)
    intensity = 1.0 - spread
    if profile.psf_sigma > 0:
        blurred = ndimage.gaussian_filter(intensity, profile.psf_sigma, mode="reflect",
                                          truncate=PSF_TRUNCATE)
    else:
        blurred = intensity
    if sigma > 0:
        rng = np.random.default_rng(print_seed)
        noisy = blurred + rng.normal(0.0, sigma, size=blurred.shape)
    else:
        noisy = blurred
    clamped = np.clip(noisy, 0.0, 1.0)
    scanned = clamped if profile.scan_gamma == 1.0 else clamped ** profile.scan_gamma
    return {"ink": ink, "spread": spread, "blurred": blurred, "noisy": noisy,
            "clamped": clamped, "scanned": scanned}


def print_and_scan(template: DigitalTemplate, profile: PrinterProfile,
                   print_seed: int) -> PrintedCode:
    """Print a template on the defender process ``profile`` and scan it: an original."""
    scanned = channel_stages(template.pixels, profile, print_seed)["scanned"]
    return PrintedCode(scanned, template.id, Kind.ORIGINAL, profile.id)


def reprint(estimate: np.ndarray, profile: PrinterProfile, print_seed: int,
            provenance: tuple[str, str], template_id: int) -> PrintedCode:
    """Print an attacker's template estimate; ``provenance`` is ``(a, d)``."""
    estimate = np.asarray(estimate)
    if not np.isin(estimate, (0, 1)).all():
        raise ValueError("template estimate must be binary")
    a, d = provenance
    scanned = channel_stages(estimate, profile, print_seed)["scanned"]
    return PrintedCode(scanned, template_id, Kind.FAKE, d, a)


def attacker_view(template: DigitalTemplate, profile: PrinterProfile, print_seed: int) -> PrintedCode:
    """The attacker's own acquisition of the original printed with ``print_seed``.

    Only used with the resolution override: the same physical print is
    re-acquired with the noise scaled by ``attack_noise_scale``.
    """
    scale = 1.0 if profile.attack_noise_scale is None else profile.attack_noise_scale
    scanned = channel_stages(template.pixels, profile, print_seed,
                             noise_sigma=profile.noise_sigma * scale)["scanned"]
    return PrintedCode(scanned, template.id, Kind.ORIGINAL, profile.id)

