"""Domain types and reference-free similarity metrics.

Intensity convention everywhere: 0 is full ink (black), 1 is bare substrate
(white). A template pixel equal to 1 is left ink-free by the printer.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from cdpauth.errors import DegenerateImageError

MIN_SIDE = 8


class Kind(str, enum.Enum):
    ORIGINAL = "original"
    FAKE = "fake"


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class DigitalTemplate:
    """Binary reference image ``t_i`` held by the defender."""

    pixels: np.ndarray
    id: int

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2:
            raise ValueError(f"template must be 2-D, got shape {px.shape}")
        if min(px.shape) < MIN_SIDE:
            raise ValueError(f"template sides must be >= {MIN_SIDE}, got {px.shape}")
        if not np.isin(px, (0, 1)).all():
            raise ValueError("template pixels must be exactly 0 or 1")
        object.__setattr__(self, "pixels", _frozen(px.astype(np.uint8)))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape

    def __eq__(self, other):
        if not isinstance(other, DigitalTemplate):
            return NotImplemented
        return self.id == other.id and np.array_equal(self.pixels, other.pixels)


@dataclass(frozen=True, eq=False)
class PrintedCode:
    """A scanned print: an original ``x_i^d`` or a fake ``f_i^{a/d}``."""

    pixels: np.ndarray
    template_id: int
    kind: Kind
    defender_printer: str
    attacker_printer: str | None = None

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 2:
            raise ValueError(f"printed code must be 2-D, got shape {px.shape}")
        if not np.isfinite(px).all() or px.min() < 0.0 or px.max() > 1.0:
            raise ValueError("printed code pixels must lie in [0, 1]")
        kind = Kind(self.kind)
        if kind is Kind.ORIGINAL and self.attacker_printer is not None:
            raise ValueError("an original cannot carry an attacker printer")
        if kind is Kind.FAKE and self.attacker_printer is None:
            raise ValueError("a fake must carry an attacker printer")
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "pixels", _frozen(px))

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def with_pixels(self, pixels: np.ndarray) -> PrintedCode:
        return PrintedCode(pixels, self.template_id, self.kind,
                           self.defender_printer, self.attacker_printer)


@dataclass(frozen=True)
class CdpTuple:
    """One dataset row: a template, its originals keyed by ``d`` and fakes keyed by ``(a, d)``."""

    template: DigitalTemplate
    originals: Mapping[str, PrintedCode] = field(default_factory=dict)
    fakes: Mapping[tuple[str, str], PrintedCode] = field(default_factory=dict)

    def __post_init__(self):
        for d, x in self.originals.items():
            self._check_member(x, Kind.ORIGINAL)
            if x.defender_printer != d:
                raise ValueError(f"original keyed {d!r} was printed on {x.defender_printer!r}")
        for (a, d), f in self.fakes.items():
            self._check_member(f, Kind.FAKE)
            if (f.attacker_printer, f.defender_printer) != (a, d):
                raise ValueError(f"fake keyed {(a, d)!r} has provenance "
                                 f"{(f.attacker_printer, f.defender_printer)!r}")
        if self.fakes:
            attackers = {a for a, _ in self.fakes}
            defenders = {d for _, d in self.fakes}
            if len(self.fakes) != len(attackers) * len(defenders):
                raise ValueError("fake keys must form a full attacker x defender product")
        object.__setattr__(self, "originals", dict(self.originals))
        object.__setattr__(self, "fakes", dict(self.fakes))

    def _check_member(self, code: PrintedCode, kind: Kind) -> None:
        if code.kind is not kind:
            raise ValueError(f"expected a {kind.value}, got {code.kind.value}")
        if code.template_id != self.template.id:
            raise ValueError(f"member of tuple {self.template.id} references "
                             f"template {code.template_id}")
        if code.shape != self.template.shape:
            raise ValueError(f"member shape {code.shape} differs from template "
                             f"{self.template.shape}")

    @property
    def id(self) -> int:
        return self.template.id

    @property
    def defenders(self) -> list[str]:
        return sorted(self.originals)

    @property
    def attackers(self) -> list[str]:
        return sorted({a for a, _ in self.fakes})

    def members(self) -> list[PrintedCode]:
        return [*self.originals.values(), *self.fakes.values()]

    def with_fakes(self, fakes: Mapping[tuple[str, str], PrintedCode]) -> CdpTuple:
        return CdpTuple(self.template, self.originals, {**self.fakes, **fakes})

    def __eq__(self, other):
        if not isinstance(other, CdpTuple):
            return NotImplemented
        if self.template != other.template:
            return False
        if self.originals.keys() != other.originals.keys() or self.fakes.keys() != other.fakes.keys():
            return False
        pairs = [(self.originals[k], other.originals[k]) for k in self.originals]
        pairs += [(self.fakes[k], other.fakes[k]) for k in self.fakes]
        return all(np.array_equal(p.pixels, q.pixels) for p, q in pairs)


def random_template(size: int | tuple[int, int], density: float, rng: np.random.Generator,
                    id: int = 1) -> DigitalTemplate:
    """Draw a 1x1-symbol template whose white (value 1) pixels occur with probability ``density``."""
    shape = (size, size) if np.isscalar(size) else tuple(size)
    if not 0.0 < density < 1.0:
        raise ValueError(f"density must lie in (0, 1), got {density}")
    return DigitalTemplate((rng.random(shape) < density).astype(np.uint8), id=id)


def _pixels(a) -> np.ndarray:
    if isinstance(a, (DigitalTemplate, PrintedCode)):
        return a.pixels
    return np.asarray(a)


def normalized_correlation(a, b) -> float:
    """Pearson correlation of two equally sized images, flattened."""
    a = _pixels(a).astype(np.float64)
    b = _pixels(b).astype(np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        raise DegenerateImageError("degenerate constant image: correlation undefined")
    a = a.ravel() - a.mean()
    b = b.ravel() - b.mean()
    na = np.sqrt(a @ a)
    nb = np.sqrt(b @ b)
    return float(np.clip((a @ b) / (na * nb), -1.0, 1.0))


def hamming_distance(a, b) -> int:
    a = _pixels(a)
    b = _pixels(b)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    if not (np.isin(a, (0, 1)).all() and np.isin(b, (0, 1)).all()):
        raise ValueError("hamming distance needs binary inputs")
    return int(np.count_nonzero(a != b))
